import json
from dataclasses import replace

import numpy as np
import pytest

from refrec.checkpoint import load_checkpoint, save_checkpoint
from refrec.config import TrainConfig
from refrec.netpbm import chw_to_image, read_mask, read_pgm, write_ppm
from refrec.synthdata import SynthConfig, generate_dataset, generate_episode, load_dataset
from refrec.tensor import Tensor
from refrec.trainer import (
    evaluate,
    evaluate_episodes,
    init_model,
    load_model,
    model_from_checkpoint,
    model_to_checkpoint,
    order_consistency,
    policy_for,
    predict,
    read_phrases,
    sweep,
    train,
)
from validation.validators.validate_dump_schema import validate_dump_schema


@pytest.fixture
def trained(tmp_path, tiny_train_config, tiny_data_dir):
    out = tmp_path / "run"
    report = train(tiny_train_config, tiny_data_dir, out)
    return out, report


@pytest.fixture
def trained_baseline(tmp_path, tiny_train_config, tiny_data_dir):
    out = tmp_path / "baseline"
    report = train(replace(tiny_train_config, language=False), tiny_data_dir, out)
    return out, report


def write_inputs(tmp_path, ep):
    image = tmp_path / "image.ppm"
    phrases = tmp_path / "phrases.json"
    write_ppm(image, chw_to_image(ep.image))
    phrases.write_text(json.dumps(ep.phrases))
    return image, phrases


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------
def test_training_writes_checkpoints_and_report(trained):
    out, report = trained
    assert (out / "step_000002.ckpt").exists()
    assert (out / "final.ckpt").exists()
    assert len(report.losses) == 3
    assert all(0.0 <= loss <= 1.0 for loss in report.losses)
    assert [e["step"] for e in report.evaluations] == [2, 3]
    saved = json.loads((out / "report.json").read_text())
    assert saved["final"]["checkpoint"] == "final.ckpt"
    assert 0.0 <= saved["final"]["train"]["instance_iou"] <= 1.0


def test_training_is_deterministic(tmp_path, tiny_train_config, tiny_data_dir):
    a = train(tiny_train_config, tiny_data_dir, tmp_path / "a")
    b = train(tiny_train_config, tiny_data_dir, tmp_path / "b")
    assert a.losses == b.losses
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_training_changes_parameters(trained, tiny_train_config, tiny_episodes):
    out, _ = trained
    fresh = init_model(tiny_train_config, tiny_episodes)
    loaded = load_model(out / "final.ckpt")
    assert loaded.step == 3
    changed = [name for name, t in loaded.params.parameters().items()
               if not np.array_equal(t.data, fresh.params.parameters()[name].data)]
    assert changed


def test_language_run_uses_only_ordered_loss(trained):
    _, report = trained
    assert report.objective_calls == {"ordered": 6, "hungarian": 0}


def test_baseline_run_uses_only_hungarian_loss(trained_baseline, tiny_data_dir):
    out, report = trained_baseline
    assert report.objective_calls == {"ordered": 0, "hungarian": 6}
    most = max(len(ep.referents) for ep in load_dataset(tiny_data_dir))
    model = load_model(out / "final.ckpt")
    assert model.config.t_max == most + 2
    assert model.embedder is None


def test_baseline_t_max_too_small(tmp_path, tiny_train_config, tiny_data_dir):
    with pytest.raises(ValueError, match="t_max"):
        train(replace(tiny_train_config, language=False, t_max=1), tiny_data_dir, tmp_path / "out")


def test_empty_dataset(tmp_path, tiny_train_config):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError, match="No training episodes"):
        train(tiny_train_config, tmp_path / "empty", tmp_path / "out")


def test_random_policy_is_reproducible(tiny_train_config):
    ep = generate_episode(4)
    assert policy_for(tiny_train_config, 5, ep) == policy_for(tiny_train_config, 5, ep)
    assert policy_for(replace(tiny_train_config, order_policy="area"), 5, ep).kind == "area"


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------
def test_model_checkpoint_round_trip(trained, tmp_path):
    out, _ = trained
    model = load_model(out / "final.ckpt")
    save_checkpoint(tmp_path / "again.ckpt", model_to_checkpoint(model))
    assert (tmp_path / "again.ckpt").read_bytes() == (out / "final.ckpt").read_bytes()


def test_checkpoint_with_wrong_shape_rejected(trained):
    out, _ = trained
    ckpt = load_checkpoint(out / "final.ckpt")
    name = next(n for n in ckpt.arrays if not n.startswith("pca."))
    ckpt.arrays[name] = np.zeros((1, 1))
    with pytest.raises(ValueError, match="shape"):
        model_from_checkpoint(ckpt)


def test_checkpoint_with_extra_array_rejected(trained):
    out, _ = trained
    ckpt = load_checkpoint(out / "final.ckpt")
    ckpt.arrays["decoder.extra"] = np.zeros(3)
    with pytest.raises(ValueError, match="unexpected"):
        model_from_checkpoint(ckpt)


def test_config_echo_mismatch(trained, tiny_data_dir, tiny_train_config):
    out, _ = trained
    with pytest.raises(ValueError, match="architecture mismatch"):
        evaluate(out / "final.ckpt", tiny_data_dir, expected=replace(tiny_train_config, hidden=[5, 3]))


# ----------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------
def test_evaluate_single_split_with_dump(trained, tiny_data_dir, tmp_path):
    out, _ = trained
    results = evaluate(out / "final.ckpt", tiny_data_dir, dump_path=tmp_path / "dump.h5")
    assert list(results) == ["data"]
    total = sum(len(ep.referents) for ep in load_dataset(tiny_data_dir))
    assert results["data"]["pairs"] == total
    assert 0.0 <= results["data"]["instance_iou"] <= 1.0
    passed, details = validate_dump_schema(tmp_path / "dump.h5")
    assert passed, [r.message for r in details if not r.passed]


def test_evaluate_finds_every_split(trained, tmp_path, tiny_synth):
    out, _ = trained
    root = tmp_path / "splits"
    generate_dataset(root / "val", seed=0, count=2, config=tiny_synth, split="val")
    generate_dataset(root / "testA", seed=0, count=2, config=tiny_synth, split="testA")
    results = evaluate(out / "final.ckpt", root, dump_path=tmp_path / "d.h5")
    assert sorted(results) == ["testA", "val"]
    assert (tmp_path / "d_val.h5").exists() and (tmp_path / "d_testA.h5").exists()


def test_evaluation_is_deterministic(trained, tiny_data_dir):
    out, _ = trained
    assert evaluate(out / "final.ckpt", tiny_data_dir) == evaluate(out / "final.ckpt", tiny_data_dir)


def test_hungarian_pairing_on_language_model(trained, tiny_data_dir):
    out, _ = trained
    results = evaluate(out / "final.ckpt", tiny_data_dir, pairing="hungarian")
    assert results["data"]["pairs"] == sum(len(ep.referents) for ep in load_dataset(tiny_data_dir))


def test_ordered_pairing_needs_language(trained_baseline, tiny_data_dir):
    out, _ = trained_baseline
    with pytest.raises(ValueError, match="language"):
        evaluate(out / "final.ckpt", tiny_data_dir, pairing="ordered")


def test_unknown_pairing(trained, tiny_episodes):
    out, _ = trained
    with pytest.raises(ValueError):
        evaluate_episodes(load_model(out / "final.ckpt"), tiny_episodes, "greedy")


def ground_truth_predictor(episodes, shuffle=False):
    """predict() stand-in that returns each episode's true masks, optionally reversed plus one empty mask."""
    by_image = {ep.image.tobytes(): ep for ep in episodes}

    def predict(image, phrases=None):
        masks = [m[None].astype(np.float64) for m in by_image[np.asarray(image).tobytes()].masks]
        if shuffle:
            masks = masks[::-1] + [np.zeros_like(masks[0])]
        return [Tensor(m) for m in masks]
    return predict


@pytest.mark.parametrize("pairing,shuffle", [("ordered", False), ("hungarian", False), ("hungarian", True)])
def test_perfect_predictions_score_one(monkeypatch, tiny_train_config, tiny_episodes, pairing, shuffle):
    model = init_model(tiny_train_config, tiny_episodes)
    monkeypatch.setattr(model, "predict", ground_truth_predictor(tiny_episodes, shuffle))
    parts = evaluate_episodes(model, tiny_episodes, pairing)
    assert parts.pairs == sum(len(ep.referents) for ep in tiny_episodes)
    assert parts.instance_iou == 1.0
    assert parts.overall_iou == 1.0


# ----------------------------------------------------------------------
# Prediction
# ----------------------------------------------------------------------
def test_predict_writes_one_mask_per_phrase(trained, tmp_path, tiny_episodes):
    out, _ = trained
    ep = tiny_episodes[0]
    image, phrases = write_inputs(tmp_path, ep)
    written = predict(out / "final.ckpt", image, phrases, tmp_path / "pred")
    k = len(ep.phrases)
    assert len(written) == 2 * k
    for idx in range(k):
        mask = read_mask(tmp_path / "pred" / f"mask_{idx}.pgm")
        assert mask.shape == (32, 32)
        assert read_pgm(tmp_path / "pred" / f"prob_{idx}.pgm").dtype == np.uint8


def test_predict_is_reproducible(trained, tmp_path, tiny_episodes):
    out, _ = trained
    image, phrases = write_inputs(tmp_path, tiny_episodes[1])
    predict(out / "final.ckpt", image, phrases, tmp_path / "a")
    predict(out / "final.ckpt", image, phrases, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_predict_prefix_is_stable(trained, tmp_path, tiny_episodes):
    out, _ = trained
    ep = tiny_episodes[0]
    first, second = ep.phrases[0], ep.phrases[1]
    image, _ = write_inputs(tmp_path, ep)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps([first, second, first]))
    b.write_text(json.dumps([first, first, second]))
    predict(out / "final.ckpt", image, a, tmp_path / "a")
    predict(out / "final.ckpt", image, b, tmp_path / "b")
    assert (tmp_path / "a" / "prob_0.pgm").read_bytes() == (tmp_path / "b" / "prob_0.pgm").read_bytes()


def test_predict_baseline_ignores_phrases(trained_baseline, tmp_path, tiny_episodes):
    out, _ = trained_baseline
    image, phrases = write_inputs(tmp_path, tiny_episodes[0])
    written = predict(out / "final.ckpt", image, phrases, tmp_path / "pred")
    assert len(written) == 2 * load_model(out / "final.ckpt").config.t_max


def test_predict_rejects_wrong_image_size(trained, tmp_path):
    out, _ = trained
    big = generate_episode(0, SynthConfig(side=64))
    image, phrases = write_inputs(tmp_path, big)
    with pytest.raises(ValueError, match="expects 32x32"):
        predict(out / "final.ckpt", image, phrases, tmp_path / "pred")


def test_language_model_needs_phrases(trained, tmp_path, tiny_episodes):
    out, _ = trained
    image, _ = write_inputs(tmp_path, tiny_episodes[0])
    with pytest.raises(ValueError, match="phrases"):
        predict(out / "final.ckpt", image, None, tmp_path / "pred")


def test_read_phrases_validation(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(["red circle", ""]))
    with pytest.raises(ValueError):
        read_phrases(path)
    path.write_text(json.dumps({"a": 1}))
    with pytest.raises(ValueError):
        read_phrases(path)
    with pytest.raises(FileNotFoundError):
        read_phrases(tmp_path / "missing.json")


# ----------------------------------------------------------------------
# Experiments
# ----------------------------------------------------------------------
def test_order_consistency_counts_two_referent_episodes(trained, tiny_episodes):
    out, _ = trained
    result = order_consistency(load_model(out / "final.ckpt"), tiny_episodes)
    assert result["episodes"] == sum(1 for ep in tiny_episodes if len(ep.referents) == 2)
    assert 0 <= result["reversed"] <= result["episodes"]


def test_order_consistency_needs_language(trained_baseline, tiny_episodes):
    out, _ = trained_baseline
    with pytest.raises(ValueError):
        order_consistency(load_model(out / "final.ckpt"), tiny_episodes)


def test_small_sweep(tmp_path, tiny_train_config, tiny_data_dir, tiny_synth):
    val = tmp_path / "val"
    generate_dataset(val, seed=0, count=2, config=tiny_synth, split="val")
    base = replace(tiny_train_config, max_steps=1)
    rows = sweep(base, tiny_data_dir, val, tmp_path / "sweep", policies=("area",), batch_sizes=(1,))
    assert [r["run"] for r in rows] == ["area_b1_nolang", "area_b1_lang"]
    assert (tmp_path / "sweep" / "area_b1_lang" / "final.ckpt").exists()
    assert (tmp_path / "sweep" / "results.csv").read_text().startswith("run,order_policy")
    assert len(json.loads((tmp_path / "sweep" / "results.json").read_text())) == 2


# ----------------------------------------------------------------------
# Long training experiments
# ----------------------------------------------------------------------
@pytest.mark.slow
def test_overfit_twenty_episodes(tmp_path):
    episodes = [generate_episode(seed) for seed in range(20)]
    report = train(TrainConfig(max_steps=3000, eval_interval=3000, log_every=100), None, tmp_path, episodes=episodes)
    assert report.final["train"]["instance_iou"] >= 0.8
    assert np.mean(report.losses[-20:]) < 0.5 * np.mean(report.losses[:20])


@pytest.mark.slow
def test_language_beats_baseline_and_orders_follow_phrases(tmp_path):
    generate_dataset(tmp_path / "train", seed=0, count=500, split="train")
    generate_dataset(tmp_path / "val", seed=0, count=100, split="val")
    config = TrainConfig(max_steps=3000, eval_interval=3000, log_every=100)
    train(config, tmp_path / "train", tmp_path / "lang")
    train(replace(config, language=False), tmp_path / "train", tmp_path / "base")
    lang = evaluate(tmp_path / "lang" / "final.ckpt", tmp_path / "val")["val"]
    base = evaluate(tmp_path / "base" / "final.ckpt", tmp_path / "val")["val"]
    assert lang["instance_iou"] >= base["instance_iou"] + 0.10

    held_out = [generate_episode(s) for s in range(2 * 10 ** 6, 2 * 10 ** 6 + 400)]
    pairs = [ep for ep in held_out if len(ep.referents) == 2][:50]
    result = order_consistency(load_model(tmp_path / "lang" / "final.ckpt"), pairs)
    assert result["episodes"] == 50
    assert result["fraction"] >= 0.9


@pytest.mark.slow
def test_random_order_not_worse_than_area(tmp_path):
    generate_dataset(tmp_path / "train", seed=0, count=500, split="train")
    generate_dataset(tmp_path / "val", seed=0, count=100, split="val")
    base = TrainConfig(max_steps=3000, eval_interval=3000, log_every=100)
    rows = sweep(base, tmp_path / "train", tmp_path / "val", tmp_path / "sweep",
                 policies=("area", "random"), batch_sizes=(16,), languages=(True,))
    by_policy = {r["order_policy"]: r["instance_iou"] for r in rows}
    assert by_policy["random"] >= by_policy["area"] - 0.01
