#!/usr/bin/env python3
"""
refrec - Recurrent referring-expression segmentation
CLI entry point for generating data, training, evaluating and predicting.

Usage:
    refrec gen-data --seed 0 --count 20 --side 64 --out data/train
    refrec train --config cfg.json --data data/train --out runs/lang
    refrec eval --checkpoint runs/lang/final.ckpt --data data --pairing ordered --dump preds.h5
    refrec predict --checkpoint runs/lang/final.ckpt --image img.ppm --phrases phrases.json --out pred/
    refrec sweep --config cfg.json --data data/train --val data/val --out runs/sweep
    refrec consistency --checkpoint runs/lang/final.ckpt --data data/val
    refrec validate dump --h5 preds.h5
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from refrec.config import USER_KEYS, get_default_path

logger = logging.getLogger("refrec")

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(out_dir: Optional[Path] = None, verbose: bool = False):
    """Log to stderr, and to <out_dir>/refrec.log when the command owns an output directory."""
    handlers = [logging.StreamHandler()]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(out_dir / "refrec.log"))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT,
                        handlers=handlers, force=True)


def resolve_path(value: Optional[str], key: str, flag: str) -> Path:
    """CLI flag first, then the user default saved under key."""
    if value:
        return Path(value)
    default = get_default_path(key)
    if default is None:
        raise ValueError(f"{flag} is required (or set a default with `refrec config set {key} PATH`)")
    return default


def create_parser():
    """Create the main argument parser with subcommands"""
    parser = argparse.ArgumentParser(
        prog="refrec",
        description="Recurrent referring-expression segmentation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Synthetic data: a training set and the four named splits
  refrec gen-data --seed 0 --count 20 --side 64 --out data/train
  refrec gen-data --seed 0 --count 100 --split testB --out data/testB

  # Train and evaluate
  refrec train --config cfg.json --data data/train --out runs/lang
  refrec eval --checkpoint runs/lang/final.ckpt --data data --pairing ordered

  # Check an evaluation dump
  refrec validate dump --h5 preds.h5
        """
    )
    parser.add_argument('--verbose', action='store_true', help='Debug logging')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    subparsers.required = True

    # gen-data
    gen_parser = subparsers.add_parser('gen-data', help='Generate synthetic shape episodes')
    gen_parser.add_argument('--seed', type=int, default=0, help='First episode seed')
    gen_parser.add_argument('--count', type=int, required=True, help='Number of episodes')
    gen_parser.add_argument('--side', type=int, default=64, help='Image side in pixels')
    gen_parser.add_argument('--min-radius', type=int, help='Smallest shape radius (default: side // 12)')
    gen_parser.add_argument('--max-radius', type=int, help='Largest shape radius (default: side // 6)')
    gen_parser.add_argument('--split', choices=['train', 'val', 'testA', 'testB'],
                            help='Draw seeds from a named split interval')
    gen_parser.add_argument('--out', help='Output directory (default: config default_data)')

    # train
    train_parser = subparsers.add_parser('train', help='Train a model')
    train_parser.add_argument('--config', required=True, help='TrainConfig JSON file')
    train_parser.add_argument('--data', help='Training episodes (default: config default_data)')
    train_parser.add_argument('--out', help='Run directory (default: config default_output)')

    # eval
    eval_parser = subparsers.add_parser('eval', help='Evaluate a checkpoint on every split under --data')
    eval_parser.add_argument('--checkpoint', required=True, help='Checkpoint file')
    eval_parser.add_argument('--data', help='Episodes or a directory of split subdirectories')
    eval_parser.add_argument('--pairing', choices=['ordered', 'hungarian'],
                             help='Prediction/ground-truth pairing (default: ordered for language models)')
    eval_parser.add_argument('--threshold', type=float, default=0.5, help='Binarization threshold')
    eval_parser.add_argument('--dump', help='Write predictions and counts to this HDF5 file')
    eval_parser.add_argument('--output', help='Save metrics to JSON file')

    # predict
    predict_parser = subparsers.add_parser('predict', help='Segment one image')
    predict_parser.add_argument('--checkpoint', required=True, help='Checkpoint file')
    predict_parser.add_argument('--image', required=True, help='PPM image')
    predict_parser.add_argument('--phrases', help='JSON array of phrases (language models)')
    predict_parser.add_argument('--out', required=True, help='Output directory for mask_<i>.pgm / prob_<i>.pgm')

    # sweep
    sweep_parser = subparsers.add_parser('sweep', help='Order policy x batch size x language grid')
    sweep_parser.add_argument('--config', required=True, help='Base TrainConfig JSON file')
    sweep_parser.add_argument('--data', required=True, help='Training episodes')
    sweep_parser.add_argument('--val', required=True, help='Validation episodes')
    sweep_parser.add_argument('--out', required=True, help='Sweep directory')
    sweep_parser.add_argument('--policies', nargs='+', default=['area', 'random'], choices=['area', 'random'])
    sweep_parser.add_argument('--batch-sizes', nargs='+', type=int, default=[32, 16])
    sweep_parser.add_argument('--languages', nargs='+', default=['off', 'on'], choices=['off', 'on'])

    # consistency
    cons_parser = subparsers.add_parser('consistency', help='Phrase-order reversal test on two-referent episodes')
    cons_parser.add_argument('--checkpoint', required=True, help='Checkpoint file')
    cons_parser.add_argument('--data', required=True, help='Episodes to test')

    # Config subcommands
    config_parser = subparsers.add_parser('config', help='User defaults')
    config_subparsers = config_parser.add_subparsers(dest='subcommand', help='Config commands')
    config_subparsers.required = True
    config_set_parser = config_subparsers.add_parser('set', help='Set configuration value')
    config_set_parser.add_argument('key', choices=list(USER_KEYS), help='Configuration key')
    config_set_parser.add_argument('value', help='Configuration value (path)')
    config_get_parser = config_subparsers.add_parser('get', help='Get configuration value')
    config_get_parser.add_argument('key', choices=list(USER_KEYS), help='Configuration key')
    config_subparsers.add_parser('show', help='Show all configuration')

    # Validate subcommands
    validate_parser = subparsers.add_parser('validate', help='Validation commands')
    validate_subparsers = validate_parser.add_subparsers(dest='subcommand', help='Validation subcommands')
    validate_subparsers.required = True
    dump_parser = validate_subparsers.add_parser('dump', help='Check a prediction dump and recompute its metrics')
    dump_parser.add_argument('--h5', required=True, help='Path to H5 dump')
    dump_parser.add_argument('--show-all', action='store_true', help='List passing checks too')

    return parser


def handle_gen_data(args):
    from refrec.synthdata import SynthConfig, generate_dataset
    out = resolve_path(args.out, 'default_data', '--out')
    setup_logging(None, args.verbose)
    config = SynthConfig.for_side(args.side, min_radius=args.min_radius, max_radius=args.max_radius)
    paths = generate_dataset(out, args.seed, args.count, config.validate(), args.split)
    print(f"[OK] Wrote {len(paths)} episodes to {out}")
    return 0


def handle_train(args):
    from refrec.config import TrainConfig
    from refrec.trainer import train
    config = TrainConfig.from_json(args.config)
    data = resolve_path(args.data, 'default_data', '--data')
    out = resolve_path(args.out, 'default_output', '--out')
    setup_logging(out, args.verbose)
    report = train(config, data, out)
    final = report.final.get('train', {})
    print(f"[OK] Trained {report.steps} steps; train instance IoU {final.get('instance_iou', 0.0):.4f}")
    print(f"     Checkpoint: {out / 'final.ckpt'}")
    return 0


def handle_eval(args):
    from refrec.trainer import evaluate
    data = resolve_path(args.data, 'default_data', '--data')
    setup_logging(None, args.verbose)
    results = evaluate(args.checkpoint, data, args.pairing, args.threshold, args.dump)
    for split, r in results.items():
        print(f"{split}: instance IoU {r['instance_iou']:.4f}  overall IoU {r['overall_iou']:.4f}  "
              f"({r['pairs']} expressions)")
    if args.output:
        with open(args.output, 'w') as f:
            json.dump(results, f, indent=2)
        print(f"[OK] Metrics saved to {args.output}")
    return 0


def handle_predict(args):
    from refrec.trainer import predict
    out = Path(args.out)
    setup_logging(None, args.verbose)
    written = predict(args.checkpoint, args.image, args.phrases, out)
    print(f"[OK] Wrote {len(written) // 2} masks to {out}")
    return 0


def handle_sweep(args):
    from refrec.config import TrainConfig
    from refrec.progress import print_section_header
    from refrec.trainer import sweep
    base = TrainConfig.from_json(args.config)
    out = Path(args.out)
    setup_logging(out, args.verbose)
    rows = sweep(base, args.data, args.val, out, args.policies, args.batch_sizes,
                 [lang == 'on' for lang in args.languages])
    print_section_header("sweep results")
    print(f"{'run':<24} {'instance':>9} {'overall':>9}")
    for row in rows:
        print(f"{row['run']:<24} {row['instance_iou']:>9.4f} {row['overall_iou']:>9.4f}")
    print(f"[OK] Results in {out / 'results.csv'}")
    return 0


def handle_consistency(args):
    from refrec.synthdata import load_dataset
    from refrec.trainer import load_model, order_consistency
    setup_logging(None, args.verbose)
    result = order_consistency(load_model(args.checkpoint), list(load_dataset(args.data)))
    print(f"Reversal followed in {result['reversed']}/{result['episodes']} episodes ({result['fraction']:.1%})")
    return 0


def handle_config(args):
    from refrec.config import get_config, load_config, set_config
    if args.subcommand == 'set':
        set_config(args.key, args.value)
        print(f"[OK] Set {args.key} to: {args.value}")
    elif args.subcommand == 'get':
        value = get_config(args.key)
        print(value if value else f"No value set for {args.key}")
    else:
        config = load_config()
        if config:
            print("Current configuration:")
            for key, value in config.items():
                print(f"  {key}: {value}")
        else:
            print("No configuration set")
    return 0


def handle_validate_dump(args):
    from validation.validators.validate_dump_schema import print_results, validate_dump_schema
    passed, results = validate_dump_schema(Path(args.h5))
    print_results(results, args.show_all)
    return 0 if passed else 1


def main(argv=None):
    """Main entry point"""
    parser = create_parser()
    args = parser.parse_args(argv)

    handlers = {
        ('gen-data', None): handle_gen_data,
        ('train', None): handle_train,
        ('eval', None): handle_eval,
        ('predict', None): handle_predict,
        ('sweep', None): handle_sweep,
        ('consistency', None): handle_consistency,
        ('config', 'set'): handle_config,
        ('config', 'get'): handle_config,
        ('config', 'show'): handle_config,
        ('validate', 'dump'): handle_validate_dump,
    }

    handler = handlers.get((args.command, getattr(args, 'subcommand', None)))
    if handler is None:
        parser.print_help()
        return 1
    try:
        return handler(args)
    except (ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"ERROR: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
