import h5py
import numpy as np
import pytest

from refrec.export import PredictionDump
from refrec.objective import IoUParts, pair_counts
from validation.validators.validate_dump_schema import main as validate_main
from validation.validators.validate_dump_schema import validate_dump_schema


def write_dump(path, rng, episodes=2):
    parts = IoUParts()
    with PredictionDump(path, pairing="ordered", threshold=0.5, step=3) as dump:
        for e in range(episodes):
            probs = rng.random((3, 8, 8))
            gts = [rng.random((8, 8)) < 0.4 for _ in range(2)]
            match = [1, 0]
            counts = [pair_counts(probs[m], g) for m, g in zip(match, gts)]
            for i, u in counts:
                parts.add(i, u)
            dump.add_episode(f"ep_{e:07d}", e, ["red circle", "blue square"], probs, gts, match,
                             [c[0] for c in counts], [c[1] for c in counts])
        dump.write_summary(parts)
    return parts


def test_dump_layout(tmp_path, rng):
    parts = write_dump(tmp_path / "d.h5", rng)
    with h5py.File(tmp_path / "d.h5", "r") as f:
        assert sorted(f["episodes"].keys()) == ["ep_0000000", "ep_0000001"]
        assert f.attrs["pairing"] == "ordered"
        assert f["episodes/ep_0000000/probs"].shape == (3, 8, 8)
        assert f["episodes/ep_0000000/gt"].dtype == np.uint8
        assert f["summary"].attrs["pairs"] == 4
        assert f["summary"].attrs["overall_iou"] == pytest.approx(parts.overall_iou)


def test_valid_dump_passes(tmp_path, rng):
    write_dump(tmp_path / "d.h5", rng)
    passed, results = validate_dump_schema(tmp_path / "d.h5")
    assert passed, [r.message for r in results if not r.passed]


def test_tampered_count_fails(tmp_path, rng):
    write_dump(tmp_path / "d.h5", rng)
    with h5py.File(tmp_path / "d.h5", "a") as f:
        f["episodes/ep_0000001/inter"][0] += 1
    passed, results = validate_dump_schema(tmp_path / "d.h5")
    assert not passed
    assert any("recomputed" in r.message for r in results if not r.passed)


def test_tampered_summary_fails(tmp_path, rng):
    write_dump(tmp_path / "d.h5", rng)
    with h5py.File(tmp_path / "d.h5", "a") as f:
        f["summary"].attrs["instance_iou"] = 0.0
    passed, _ = validate_dump_schema(tmp_path / "d.h5")
    assert not passed


def test_non_injective_match_fails(tmp_path, rng):
    write_dump(tmp_path / "d.h5", rng)
    with h5py.File(tmp_path / "d.h5", "a") as f:
        f["episodes/ep_0000000/match"][:] = [0, 0]
    passed, results = validate_dump_schema(tmp_path / "d.h5")
    assert not passed
    assert any("injective" in r.message for r in results)


def test_missing_dataset_fails(tmp_path, rng):
    write_dump(tmp_path / "d.h5", rng)
    with h5py.File(tmp_path / "d.h5", "a") as f:
        del f["episodes/ep_0000000/union"]
    passed, results = validate_dump_schema(tmp_path / "d.h5")
    assert not passed
    assert any("union" in r.field for r in results if not r.passed)


def test_missing_file(tmp_path):
    passed, results = validate_dump_schema(tmp_path / "none.h5")
    assert not passed and "not found" in results[0].message


def test_main_exit_codes(tmp_path, rng, capsys):
    write_dump(tmp_path / "d.h5", rng)
    assert validate_main([str(tmp_path / "d.h5")]) == 0
    assert "PASSED" in capsys.readouterr().out
    assert validate_main([str(tmp_path / "none.h5")]) == 1
