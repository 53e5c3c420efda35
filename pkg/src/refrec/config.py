"""
Configuration management for refrec.

Two layers:
    - user defaults saved to ~/.refrec/config.json (REFREC_HOME overrides the directory)
    - TrainConfig, the JSON document that drives a training run
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from .decoder import DecoderConfig
from .encoder import BackboneConfig

USER_KEYS = ("default_data", "default_output")

# Fields that change parameter shapes; a checkpoint only loads under the same values
ARCHITECTURE_KEYS = ("side", "levels", "channels", "hidden", "kernel", "head_kernel",
                     "language", "embed_dim", "raw_dim")


def config_dir() -> Path:
    return Path(os.environ.get("REFREC_HOME") or (Path.home() / ".refrec"))


def config_file() -> Path:
    return config_dir() / "config.json"


def load_config() -> Dict:
    """Load user defaults; a missing or unreadable file yields {}"""
    path = config_file()
    if not path.exists():
        return {}
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (json.JSONDecodeError, IOError):
        return {}


def save_config(config: Dict):
    config_dir().mkdir(parents=True, exist_ok=True)
    with open(config_file(), "w") as f:
        json.dump(config, f, indent=2)


def get_config(key: str, default: Optional[str] = None) -> Optional[str]:
    return load_config().get(key, default)


def set_config(key: str, value: str):
    if key not in USER_KEYS:
        raise ValueError(f"Unknown config key {key!r}; expected one of {USER_KEYS}")
    config = load_config()
    config[key] = value
    save_config(config)


def get_default_path(key: str) -> Optional[Path]:
    value = get_config(key)
    return Path(value) if value else None


@dataclass
class TrainConfig:
    """
    Everything a training run needs. Exactly one objective is active:
    language=True trains with ordered soft-IoU supervision, language=False
    trains the language-free baseline with Hungarian-matched loss over
    t_max blank steps.
    """
    batch_size: int = 16
    lr: float = 1e-3
    max_steps: int = 3000
    seed: int = 0
    order_policy: str = "random"
    language: bool = True
    t_max: Optional[int] = None
    eval_interval: int = 500
    log_every: int = 10
    side: int = 64
    raw_dim: int = 32
    embed_dim: int = 16
    levels: int = 4
    channels: List[int] = field(default_factory=lambda: [16, 32, 64, 64])
    hidden: List[int] = field(default_factory=lambda: [32, 32, 16, 16])
    kernel: int = 3
    head_kernel: int = 3
    carry_state: bool = True
    embedding_file: Optional[str] = None
    val_data: Optional[str] = None

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.eval_interval < 1:
            raise ValueError(f"eval_interval must be >= 1, got {self.eval_interval}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.order_policy not in ("random", "area"):
            raise ValueError(f"order_policy must be 'random' or 'area', got {self.order_policy!r}")
        if self.t_max is not None and self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.language and self.embed_dim < 1:
            raise ValueError("A language model needs embed_dim >= 1")
        if self.language and self.raw_dim < self.embed_dim and self.embedding_file is None:
            raise ValueError(f"raw_dim {self.raw_dim} is smaller than embed_dim {self.embed_dim}")
        self.backbone().validate()
        self.decoder().validate(self.backbone())
        return self

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(levels=self.levels, channels=list(self.channels), side=self.side)

    def decoder(self) -> DecoderConfig:
        return DecoderConfig(hidden=list(self.hidden), embed_dim=self.embed_dim if self.language else 0,
                             kernel=self.kernel, side=self.side, head_kernel=self.head_kernel,
                             carry_state=self.carry_state)

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ValueError("Train config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown train config keys: {', '.join(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in {path}: {e}")
        return cls.from_dict(data)


def check_architecture(echo: Dict, config: TrainConfig):
    """Fail when a checkpoint's config echo disagrees with config on any shape-defining field."""
    current = config.to_dict()
    diffs = [k for k in ARCHITECTURE_KEYS if echo.get(k) != current.get(k)]
    if diffs:
        detail = ", ".join(f"{k}: checkpoint={echo.get(k)!r} config={current.get(k)!r}" for k in diffs)
        raise ValueError(f"Checkpoint architecture mismatch ({detail})")
