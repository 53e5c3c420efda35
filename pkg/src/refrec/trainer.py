"""
trainer.py - Training, evaluation and prediction for the recurrent segmenter

Training unit is the episode: the image is encoded once and the decoder is
rolled over the ordered expressions (language model) or over t_max blank
steps (language-free baseline). Gradients are accumulated episode by
episode within a batch, weighted so the batch loss is the mean over all
expressions in the batch, then one Adam step is taken.

The reference path is single-threaded and deterministic given the seed.
"""

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, check_architecture
from .decoder import SegmenterParams, build_model, forward_blank, forward_sequence
from .export import PredictionDump
from .language import PcaModel, PhraseEmbedder
from .netpbm import image_to_chw, probability_to_gray, read_ppm, write_mask, write_pgm
from .objective import (
    DEFAULT_THRESHOLD,
    IoUParts,
    baseline_loss,
    cost_matrix,
    hard_iou,
    hungarian_assign,
    pair_counts,
    sequence_loss,
)
from .optim import Adam
from .progress import ColoredProgress
from .synthdata import Episode, OrderPolicy, find_splits, load_dataset, order_referents
from .tensor import Tensor, scale

logger = logging.getLogger(__name__)

PAIRINGS = ("ordered", "hungarian")


@dataclass
class SegmenterModel:
    """Network parameters plus the frozen phrase embedder and the config they were built from."""
    params: SegmenterParams
    config: TrainConfig
    embedder: Optional[PhraseEmbedder] = None
    step: int = 0

    @property
    def language(self) -> bool:
        return self.config.language

    def predict(self, image: np.ndarray, phrases: Optional[Sequence[str]] = None) -> List[Tensor]:
        """Mask probabilities for one image: one per phrase, or t_max for the baseline."""
        x = Tensor(image)
        if self.language:
            if not phrases:
                raise ValueError("A language model needs at least one phrase")
            return forward_sequence(self.params, x, self.embedder.embed_all(phrases))
        return forward_blank(self.params, x, self.config.t_max)


@dataclass
class TrainReport:
    steps: int
    losses: List[float] = field(default_factory=list)
    evaluations: List[Dict] = field(default_factory=list)
    objective_calls: Dict[str, int] = field(default_factory=lambda: {"ordered": 0, "hungarian": 0})
    final: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "steps": self.steps,
            "losses": self.losses,
            "evaluations": self.evaluations,
            "objective_calls": self.objective_calls,
            "final": self.final,
        }


# ----------------------------------------------------------------------
# Model construction and checkpoints
# ----------------------------------------------------------------------
def make_embedder(config: TrainConfig) -> PhraseEmbedder:
    if config.embedding_file:
        return PhraseEmbedder.from_file(config.embedding_file, embed_dim=config.embed_dim)
    return PhraseEmbedder(raw_dim=config.raw_dim, embed_dim=config.embed_dim)


def init_model(config: TrainConfig, train_episodes: Sequence[Episode]) -> SegmenterModel:
    """Fresh parameters; the phrase PCA is fit on the training expressions."""
    params = build_model(config.backbone(), config.decoder(), config.seed)
    embedder = None
    if config.language:
        embedder = make_embedder(config)
        embedder.fit([p for ep in train_episodes for p in ep.phrases])
    return SegmenterModel(params=params, config=config, embedder=embedder)


def model_to_checkpoint(model: SegmenterModel) -> Checkpoint:
    arrays = {name: t.data for name, t in model.params.parameters().items()}
    if model.embedder is not None and model.embedder.pca is not None:
        pca = model.embedder.pca
        arrays["pca.mean"] = pca.mean
        arrays["pca.components"] = pca.components
        arrays["pca.explained_variance"] = pca.explained_variance
    return Checkpoint(arrays=arrays, config=model.config.to_dict(), step=model.step)


def model_from_checkpoint(ckpt: Checkpoint, expected: Optional[TrainConfig] = None) -> SegmenterModel:
    """Rebuild a model; shapes must match the config echo exactly."""
    config = TrainConfig.from_dict(dict(ckpt.config))
    if expected is not None:
        check_architecture(ckpt.config, expected)
    params = build_model(config.backbone(), config.decoder(), config.seed)
    for name, tensor in params.parameters().items():
        if name not in ckpt.arrays:
            raise ValueError(f"Checkpoint is missing parameter {name}")
        arr = ckpt.arrays[name]
        if arr.shape != tensor.shape:
            raise ValueError(f"Checkpoint parameter {name} has shape {arr.shape}, model expects {tensor.shape}")
        tensor.data = np.array(arr)
    extra = set(ckpt.arrays) - set(params.parameters()) - {"pca.mean", "pca.components", "pca.explained_variance"}
    if extra:
        raise ValueError(f"Checkpoint has unexpected arrays: {sorted(extra)}")

    embedder = None
    if config.language:
        if "pca.components" not in ckpt.arrays:
            raise ValueError("Language checkpoint has no phrase PCA")
        embedder = make_embedder(config)
        embedder.pca = PcaModel(mean=ckpt.arrays["pca.mean"], components=ckpt.arrays["pca.components"],
                                explained_variance=ckpt.arrays["pca.explained_variance"])
        if embedder.pca.k != config.embed_dim:
            raise ValueError(f"Checkpoint PCA has {embedder.pca.k} components, config says {config.embed_dim}")
    return SegmenterModel(params=params, config=config, embedder=embedder, step=ckpt.step)


def load_model(path: Union[str, Path], expected: Optional[TrainConfig] = None) -> SegmenterModel:
    return model_from_checkpoint(load_checkpoint(path), expected)


def save_model(model: SegmenterModel, path: Union[str, Path]):
    save_checkpoint(path, model_to_checkpoint(model))


# ----------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------
def episode_loss(model: SegmenterModel, ep: Episode, report: Optional[TrainReport] = None) -> Tensor:
    """Mean per-expression loss for one episode under the model's objective."""
    if model.language:
        masks = model.predict(ep.image, ep.phrases)
        if report is not None:
            report.objective_calls["ordered"] += 1
        return sequence_loss(masks, ep.masks)
    if model.config.t_max < len(ep.referents):
        raise ValueError(f"t_max={model.config.t_max} is smaller than {len(ep.referents)} referents (seed {ep.seed})")
    masks = model.predict(ep.image)
    if report is not None:
        report.objective_calls["hungarian"] += 1
    loss, _ = baseline_loss(masks, ep.masks)
    return loss


def policy_for(config: TrainConfig, step: int, ep: Episode) -> OrderPolicy:
    if config.order_policy == "area":
        return OrderPolicy("area")
    state = np.random.SeedSequence([config.seed, step, ep.seed]).generate_state(1)[0]
    return OrderPolicy("random", int(state))


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------
def resolve_t_max(config: TrainConfig, episodes: Sequence[Episode]) -> TrainConfig:
    if config.language:
        return config
    most = max(len(ep.referents) for ep in episodes)
    if config.t_max is None:
        return replace(config, t_max=most + 2)
    if config.t_max < most:
        raise ValueError(f"t_max={config.t_max} is smaller than the largest episode ({most} referents)")
    return config


def train(config: TrainConfig, data_dir: Union[str, Path], out_dir: Union[str, Path],
          episodes: Optional[List[Episode]] = None) -> TrainReport:
    """
    Train a model and write checkpoints plus report.json to out_dir.

    Args:
        config: validated training config
        data_dir: directory of episode subdirectories
        out_dir: destination for checkpoints and reports
        episodes: preloaded episodes (skips reading data_dir)
    """
    config.validate()
    out_dir = Path(out_dir)
    if episodes is None:
        episodes = list(load_dataset(data_dir))
    if not episodes:
        raise ValueError(f"No training episodes in {data_dir}")
    config = resolve_t_max(config, episodes)
    val_episodes = list(load_dataset(config.val_data)) if config.val_data else None

    out_dir.mkdir(parents=True, exist_ok=True)
    model = init_model(config, episodes)
    params = model.params.parameters()
    optimizer = Adam(params, lr=config.lr)
    report = TrainReport(steps=config.max_steps)
    logger.info(
        f"Training {'language' if config.language else 'baseline'} model on {len(episodes)} episodes, "
        f"{sum(p.size for p in params.values())} parameters, {config.max_steps} steps"
    )

    rng = np.random.default_rng(config.seed)
    queue: List[int] = []
    progress = ColoredProgress(config.max_steps, label="train")
    for step in range(config.max_steps):
        batch = []
        while len(batch) < config.batch_size:
            if not queue:
                queue = [int(i) for i in rng.permutation(len(episodes))]
            batch.append(episodes[queue.pop(0)])

        ordered = [order_referents(ep, policy_for(config, step, ep)) for ep in batch]
        total_terms = sum(len(ep.referents) for ep in ordered)
        optimizer.zero_grad()
        batch_loss = 0.0
        for ep in ordered:
            weight = len(ep.referents) / total_terms
            loss = scale(episode_loss(model, ep, report), weight)
            loss.backward()
            batch_loss += loss.item()
        optimizer.step()
        model.step = step + 1
        report.losses.append(batch_loss)

        if (step + 1) % config.log_every == 0:
            logger.info(f"step {step + 1}/{config.max_steps} loss {batch_loss:.4f}")
        progress.update(1, f"loss {batch_loss:.4f}")

        if (step + 1) % config.eval_interval == 0 and step + 1 < config.max_steps:
            _checkpoint_and_eval(model, episodes, val_episodes, out_dir, report)
    progress.finish()

    report.final = _checkpoint_and_eval(model, episodes, val_episodes, out_dir, report, final=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    return report


def _checkpoint_and_eval(model: SegmenterModel, train_eps: Sequence[Episode], val_eps: Optional[Sequence[Episode]],
                         out_dir: Path, report: TrainReport, final: bool = False) -> Dict:
    name = "final.ckpt" if final else f"step_{model.step:06d}.ckpt"
    save_model(model, out_dir / name)
    pairing = default_pairing(model)
    entry = {"step": model.step, "checkpoint": name}
    for split, eps in (("train", train_eps), ("val", val_eps)):
        if not eps:
            continue
        parts = evaluate_episodes(model, eps, pairing)
        entry[split] = {"instance_iou": parts.instance_iou, "overall_iou": parts.overall_iou, "pairs": parts.pairs}
        logger.info(f"step {model.step} {split}: instance IoU {parts.instance_iou:.4f}, "
                    f"overall IoU {parts.overall_iou:.4f}")
    report.evaluations.append(entry)
    return entry


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------
def default_pairing(model: SegmenterModel) -> str:
    return "ordered" if model.language else "hungarian"


def pair_predictions(model: SegmenterModel, ep: Episode, pairing: str) -> Tuple[List[Tensor], List[int]]:
    """Predictions for an episode and, per ground truth, the index of its paired prediction."""
    if pairing not in PAIRINGS:
        raise ValueError(f"Pairing must be one of {PAIRINGS}, got {pairing!r}")
    if pairing == "ordered" and not model.language:
        raise ValueError("Ordered pairing needs a language model; use hungarian for the baseline")
    masks = model.predict(ep.image, ep.phrases if model.language else None)
    if pairing == "ordered":
        return masks, list(range(len(ep.referents)))
    assignment = hungarian_assign(cost_matrix(masks, ep.masks))
    return masks, [assignment.mapping[g] for g in range(len(ep.referents))]


def evaluate_episodes(model: SegmenterModel, episodes: Sequence[Episode], pairing: str,
                      threshold: float = DEFAULT_THRESHOLD, dump: Optional[PredictionDump] = None) -> IoUParts:
    parts = IoUParts()
    for ep in episodes:
        masks, match = pair_predictions(model, ep, pairing)
        inters, unions = [], []
        for g, p in enumerate(match):
            inter, union = pair_counts(masks[p].data, ep.masks[g], threshold)
            parts.add(inter, union)
            inters.append(inter)
            unions.append(union)
        if dump is not None:
            dump.add_episode(f"ep_{ep.seed:07d}", ep.seed, ep.phrases,
                             np.stack([m.data[0] for m in masks]), ep.masks, match, inters, unions)
    return parts


def evaluate(checkpoint: Union[str, Path], data_dir: Union[str, Path], pairing: Optional[str] = None,
             threshold: float = DEFAULT_THRESHOLD, dump_path: Optional[Union[str, Path]] = None,
             expected: Optional[TrainConfig] = None) -> Dict[str, Dict]:
    """
    Instance and Overall IoU for every split found under data_dir.

    Returns:
        {split: {"instance_iou", "overall_iou", "pairs", "inter_sum", "union_sum"}}
    """
    model = load_model(checkpoint, expected)
    pairing = pairing or default_pairing(model)
    splits = find_splits(data_dir)
    results = {}
    for split, directory in splits.items():
        episodes = list(load_dataset(directory))
        if dump_path is not None:
            path = Path(dump_path)
            if len(splits) > 1:
                path = path.with_name(f"{path.stem}_{split}{path.suffix}")
            with PredictionDump(path, pairing, threshold, model.step) as dump:
                parts = evaluate_episodes(model, episodes, pairing, threshold, dump)
                dump.write_summary(parts)
        else:
            parts = evaluate_episodes(model, episodes, pairing, threshold)
        results[split] = {
            "instance_iou": parts.instance_iou,
            "overall_iou": parts.overall_iou,
            "pairs": parts.pairs,
            "inter_sum": parts.inter_sum,
            "union_sum": parts.union_sum,
        }
        logger.info(f"{split}: instance IoU {parts.instance_iou:.4f}, overall IoU {parts.overall_iou:.4f} "
                    f"({parts.pairs} expressions, {pairing} pairing)")
    return results


# ----------------------------------------------------------------------
# Prediction
# ----------------------------------------------------------------------
def read_phrases(path: Union[str, Path]) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Phrases file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            phrases = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in {path}: {e}")
    if not isinstance(phrases, list) or not phrases or not all(isinstance(p, str) and p.strip() for p in phrases):
        raise ValueError(f"{path} must hold a non-empty array of non-empty strings")
    return phrases


def predict(checkpoint: Union[str, Path], image_path: Union[str, Path],
            phrases_path: Optional[Union[str, Path]], out_dir: Union[str, Path],
            threshold: float = DEFAULT_THRESHOLD) -> List[Path]:
    """Write mask_<idx>.pgm (0/255) and prob_<idx>.pgm (0-255) per output index."""
    model = load_model(checkpoint)
    image = read_ppm(image_path)
    side = model.config.side
    if image.shape != (side, side, 3):
        raise ValueError(f"{image_path} is {image.shape[1]}x{image.shape[0]}, model expects {side}x{side}")
    phrases = None
    if model.language:
        if phrases_path is None:
            raise ValueError("A language model needs a phrases file")
        phrases = read_phrases(phrases_path)
    elif phrases_path is not None:
        logger.warning(f"Baseline model ignores phrases in {phrases_path}")

    masks = model.predict(image_to_chw(image), phrases)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for idx, mask in enumerate(masks):
        prob = mask.data[0]
        write_mask(out_dir / f"mask_{idx}.pgm", prob >= threshold)
        write_pgm(out_dir / f"prob_{idx}.pgm", probability_to_gray(prob))
        written += [out_dir / f"mask_{idx}.pgm", out_dir / f"prob_{idx}.pgm"]
    logger.info(f"Wrote {len(masks)} masks to {out_dir}")
    return written


# ----------------------------------------------------------------------
# Experiments
# ----------------------------------------------------------------------
def best_matches(masks: Sequence[Tensor], gts: Sequence[np.ndarray]) -> List[int]:
    """Ground-truth index with the highest hard IoU for each output index."""
    return [int(np.argmax([hard_iou(m.data, g) for g in gts])) for m in masks]


def order_consistency(model: SegmenterModel, episodes: Sequence[Episode]) -> Dict:
    """
    Fraction of two-referent episodes where reversing the phrase order
    reverses which object each output index segments.
    """
    if not model.language:
        raise ValueError("Order consistency needs a language model")
    checked = swapped = 0
    for ep in episodes:
        if len(ep.referents) != 2:
            continue
        forward = best_matches(model.predict(ep.image, ep.phrases), ep.masks)
        backward = best_matches(model.predict(ep.image, ep.phrases[::-1]), ep.masks)
        checked += 1
        if forward[0] != forward[1] and backward == forward[::-1]:
            swapped += 1
    fraction = swapped / checked if checked else 0.0
    logger.info(f"Order reversal followed in {swapped}/{checked} two-referent episodes")
    return {"episodes": checked, "reversed": swapped, "fraction": fraction}


def sweep(base: TrainConfig, data_dir: Union[str, Path], val_dir: Union[str, Path], out_dir: Union[str, Path],
          policies: Sequence[str] = ("area", "random"), batch_sizes: Sequence[int] = (32, 16),
          languages: Sequence[bool] = (False, True)) -> List[Dict]:
    """
    Train every (order policy, batch size, language) combination from scratch
    and tabulate validation Instance / Overall IoU.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_eps = list(load_dataset(data_dir))
    val_eps = list(load_dataset(val_dir))
    if not train_eps or not val_eps:
        raise ValueError(f"Sweep needs episodes in both {data_dir} and {val_dir}")

    rows = []
    for policy in policies:
        for batch_size in batch_sizes:
            for language in languages:
                cfg = replace(base, order_policy=policy, batch_size=batch_size, language=language,
                              t_max=None if language else base.t_max, val_data=None).validate()
                run = f"{policy}_b{batch_size}_{'lang' if language else 'nolang'}"
                logger.info(f"Sweep run {run}")
                report = train(cfg, data_dir, out_dir / run, episodes=train_eps)
                model = load_model(out_dir / run / "final.ckpt")
                parts = evaluate_episodes(model, val_eps, default_pairing(model))
                rows.append({
                    "run": run,
                    "order_policy": policy,
                    "batch_size": batch_size,
                    "language": language,
                    "final_loss": report.losses[-1] if report.losses else None,
                    "instance_iou": parts.instance_iou,
                    "overall_iou": parts.overall_iou,
                })

    with open(out_dir / "results.json", "w") as f:
        json.dump(rows, f, indent=2)
    with open(out_dir / "results.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return rows
