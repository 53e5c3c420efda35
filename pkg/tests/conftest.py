"""Shared fixtures for the refrec test suite."""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from refrec.config import TrainConfig  # noqa: E402
from refrec.decoder import DecoderConfig, build_model  # noqa: E402
from refrec.encoder import BackboneConfig  # noqa: E402
from refrec.synthdata import SynthConfig, generate_dataset, generate_episode  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run long training experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiments (run with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """Keep user defaults out of the real home directory."""
    monkeypatch.setenv("REFREC_HOME", str(tmp_path / "refrec_home"))


@pytest.fixture(autouse=True)
def restore_logging():
    """CLI handlers reconfigure the root logger; undo that after each test."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers = handlers
    root.setLevel(level)


TINY_SIDE = 32


@pytest.fixture
def tiny_backbone():
    return BackboneConfig(levels=2, channels=[4, 6], side=TINY_SIDE)


@pytest.fixture
def tiny_decoder():
    return DecoderConfig(hidden=[4, 3], embed_dim=4, kernel=3, side=TINY_SIDE, head_kernel=3)


@pytest.fixture
def tiny_model(tiny_backbone, tiny_decoder):
    return build_model(tiny_backbone, tiny_decoder, seed=7)


@pytest.fixture
def tiny_synth():
    return SynthConfig(side=TINY_SIDE, min_referents=2, max_referents=3, min_radius=3, max_radius=5)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(batch_size=2, lr=1e-2, max_steps=3, seed=0, eval_interval=2, log_every=1,
                       side=TINY_SIDE, raw_dim=8, embed_dim=4, levels=2, channels=[4, 6],
                       hidden=[4, 3], kernel=3, head_kernel=3)


@pytest.fixture
def tiny_episodes(tiny_synth):
    return [generate_episode(seed, tiny_synth) for seed in range(6)]


@pytest.fixture
def tiny_data_dir(tmp_path, tiny_synth):
    out = tmp_path / "data"
    generate_dataset(out, seed=0, count=6, config=tiny_synth)
    return out
