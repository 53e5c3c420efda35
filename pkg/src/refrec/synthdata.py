"""
synthdata.py - Synthetic referring-shapes episodes

An episode is one image of 2-5 non-overlapping colored shapes (circle,
square, triangle), one referring expression per shape and the exact
binary masks. Expressions follow the grammar

    [position] color shape      position in {left, right, top, bottom}

where the position word is used only when color + shape alone would be
ambiguous. Positions compare the mask centroid with the image center.

On disk an episode is a directory:

    image.ppm          binary P6, 8-bit
    masks/<idx>.pgm    binary P5, 0 or 255, idx follows phrase order
    phrases.json       ordered list of strings
    meta.json          {"seed": ..., "side": ..., "policy": ...}
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .netpbm import chw_to_image, image_to_chw, read_mask, read_ppm, write_mask, write_ppm
from .progress import ColoredProgress

logger = logging.getLogger(__name__)

PALETTE: Dict[str, Tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "white": (255, 255, 255),
    "orange": (255, 128, 0),
}
SHAPES = ("circle", "square", "triangle")
POSITIONS = ("left", "right", "top", "bottom")

# Disjoint seed intervals per split
SPLIT_SIZE = 1_000_000
SPLITS = {"train": 0, "val": 1, "testA": 2, "testB": 3}
# testA / testB mirror the two test splits of the benchmark with easy / crowded scenes
SPLIT_REFERENTS = {"testA": (2, 3), "testB": (4, 5)}


@dataclass
class SynthConfig:
    side: int = 64
    min_referents: int = 2
    max_referents: int = 5
    min_radius: int = 5
    max_radius: int = 10
    colors: Tuple[str, ...] = tuple(PALETTE)
    shapes: Tuple[str, ...] = SHAPES
    max_retries: int = 200

    @classmethod
    def for_side(cls, side: int, **overrides) -> "SynthConfig":
        """Config whose radius range is 5-10px at 64px and scales linearly with the side."""
        min_radius = max(1, side // 12)
        fields = {"side": side, "min_radius": min_radius, "max_radius": max(min_radius, side // 6)}
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)

    def validate(self) -> "SynthConfig":
        if not 1 <= self.min_referents <= self.max_referents:
            raise ValueError(f"Invalid referent range {self.min_referents}-{self.max_referents}")
        if not 1 <= self.min_radius <= self.max_radius:
            raise ValueError(f"Invalid radius range {self.min_radius}-{self.max_radius}")
        if 2 * self.max_radius + 1 > self.side:
            raise ValueError(f"Shapes of radius {self.max_radius} do not fit a {self.side}px canvas")
        unknown = [c for c in self.colors if c not in PALETTE]
        if unknown or not self.colors:
            raise ValueError(f"Unknown palette colors: {unknown}")
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise ValueError(f"Unknown shapes: {self.shapes}")
        return self


@dataclass
class Referent:
    phrase: str
    mask: np.ndarray  # (S, S) bool


@dataclass
class Episode:
    image: np.ndarray  # (3, S, S) float64 in [0, 1], multiples of 1/255
    referents: List[Referent]
    seed: int
    policy: str = "generated"

    @property
    def side(self) -> int:
        return int(self.image.shape[1])

    @property
    def phrases(self) -> List[str]:
        return [r.phrase for r in self.referents]

    @property
    def masks(self) -> List[np.ndarray]:
        return [r.mask for r in self.referents]


@dataclass(frozen=True)
class OrderPolicy:
    """Referent ordering: 'area' (largest first) or 'random' (seeded shuffle)."""
    kind: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("area", "random"):
            raise ValueError(f"Order policy must be 'area' or 'random', got {self.kind!r}")

    def describe(self) -> str:
        return "area" if self.kind == "area" else f"random:{self.seed}"


# ----------------------------------------------------------------------
# Geometry
# ----------------------------------------------------------------------
def rasterize(kind: str, cy: int, cx: int, r: int, side: int) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side]
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "triangle":
        # Apex up, base of width 2r+1 on row cy + r
        return (dy >= -r) & (dy <= r) & (2 * np.abs(dx) <= dy + r)
    raise ValueError(f"Unknown shape: {kind}")


def centroid(mask: np.ndarray) -> Tuple[float, float]:
    rows, cols = np.nonzero(mask)
    return float(rows.mean()), float(cols.mean())


def position_matches(word: str, mask: np.ndarray) -> bool:
    row, col = centroid(mask)
    center = (mask.shape[0] - 1) / 2.0
    return {
        "left": col < center,
        "right": col > center,
        "top": row < center,
        "bottom": row > center,
    }[word]


# ----------------------------------------------------------------------
# Grammar
# ----------------------------------------------------------------------
def parse_phrase(phrase: str) -> Tuple[Optional[str], str, str]:
    tokens = phrase.split()
    if len(tokens) == 2:
        position, (color, shape) = None, tokens
    elif len(tokens) == 3:
        position, color, shape = tokens
    else:
        raise ValueError(f"Phrase does not match '[position] color shape': {phrase!r}")
    if position is not None and position not in POSITIONS:
        raise ValueError(f"Unknown position word {position!r} in {phrase!r}")
    if color not in PALETTE:
        raise ValueError(f"Unknown color {color!r} in {phrase!r}")
    if shape not in SHAPES:
        raise ValueError(f"Unknown shape {shape!r} in {phrase!r}")
    return position, color, shape


def resolve_phrase(phrase: str, objects: List[Tuple[str, str, np.ndarray]]) -> List[int]:
    """
    Rule-based referent resolver.

    Args:
        phrase: expression to resolve
        objects: (color, shape, mask) per object in the scene

    Returns:
        indices of every object the phrase describes
    """
    position, color, shape = parse_phrase(phrase)
    hits = []
    for i, (c, s, mask) in enumerate(objects):
        if c == color and s == shape and (position is None or position_matches(position, mask)):
            hits.append(i)
    return hits


def describe(objects: List[Tuple[str, str, np.ndarray]]) -> Optional[List[str]]:
    """Minimal unambiguous phrase for each object, or None if some object cannot be singled out."""
    phrases = []
    for i, (color, shape, mask) in enumerate(objects):
        group = [j for j, (c, s, _) in enumerate(objects) if c == color and s == shape]
        if len(group) == 1:
            phrases.append(f"{color} {shape}")
            continue
        for word in POSITIONS:
            matching = [j for j in group if position_matches(word, objects[j][2])]
            if matching == [i]:
                phrases.append(f"{word} {color} {shape}")
                break
        else:
            return None
    return phrases


# ----------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------
def generate_episode(seed: int, config: Optional[SynthConfig] = None) -> Episode:
    """Deterministic episode for a seed; raises ValueError when shapes cannot be placed."""
    config = config or SynthConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    side = config.side
    n = int(rng.integers(config.min_referents, config.max_referents + 1))

    objects: List[Tuple[str, str, np.ndarray]] = []
    occupied = np.zeros((side, side), dtype=bool)
    phrases: List[str] = []
    for _ in range(n):
        for _ in range(config.max_retries):
            kind = config.shapes[int(rng.integers(len(config.shapes)))]
            color = config.colors[int(rng.integers(len(config.colors)))]
            r = int(rng.integers(config.min_radius, config.max_radius + 1))
            cy = int(rng.integers(r, side - r))
            cx = int(rng.integers(r, side - r))
            mask = rasterize(kind, cy, cx, r, side)
            # One pixel gap between shapes
            if (ndimage.binary_dilation(mask) & occupied).any():
                continue
            candidate = objects + [(color, kind, mask)]
            described = describe(candidate)
            if described is None:
                continue
            objects, phrases = candidate, described
            occupied |= mask
            break
        else:
            raise ValueError(
                f"Could not place {n} shapes on a {side}px canvas for seed {seed} "
                f"after {config.max_retries} retries"
            )

    canvas = np.zeros((side, side, 3), dtype=np.uint8)
    for color, _, mask in objects:
        canvas[mask] = PALETTE[color]
    referents = [Referent(p, m) for p, (_, _, m) in zip(phrases, objects)]
    return Episode(image=image_to_chw(canvas), referents=referents, seed=seed)


def split_seed(split: str, offset: int) -> int:
    if split not in SPLITS:
        raise ValueError(f"Unknown split {split!r}; expected one of {sorted(SPLITS)}")
    if not 0 <= offset < SPLIT_SIZE:
        raise ValueError(f"Seed offset {offset} outside split range [0, {SPLIT_SIZE})")
    return SPLITS[split] * SPLIT_SIZE + offset


def split_config(split: Optional[str], config: SynthConfig) -> SynthConfig:
    if split in SPLIT_REFERENTS:
        lo, hi = SPLIT_REFERENTS[split]
        return replace(config, min_referents=lo, max_referents=hi)
    return config


def order_referents(ep: Episode, policy: OrderPolicy) -> Episode:
    """Reorder referents; image and masks are untouched."""
    if policy.kind == "area":
        def key(i):
            mask = ep.referents[i].mask
            row, col = centroid(mask)
            return (-int(mask.sum()), row, col)
        order = sorted(range(len(ep.referents)), key=key)
    else:
        order = [int(i) for i in np.random.default_rng(policy.seed).permutation(len(ep.referents))]
    return replace(ep, referents=[ep.referents[i] for i in order], policy=policy.describe())


# ----------------------------------------------------------------------
# Storage
# ----------------------------------------------------------------------
def _read_json(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"Missing episode file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"Corrupt JSON in {path}: {e}")


def write_episode(ep: Episode, directory: Union[str, Path]):
    directory = Path(directory)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    write_ppm(directory / "image.ppm", chw_to_image(ep.image))
    for idx, ref in enumerate(ep.referents):
        write_mask(directory / "masks" / f"{idx}.pgm", ref.mask)
    with open(directory / "phrases.json", "w", encoding="utf-8") as f:
        json.dump(ep.phrases, f, indent=2)
    with open(directory / "meta.json", "w", encoding="utf-8") as f:
        json.dump({"seed": ep.seed, "side": ep.side, "policy": ep.policy}, f, indent=2)


def read_episode(directory: Union[str, Path]) -> Episode:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Episode directory not found: {directory}")
    phrases = _read_json(directory / "phrases.json")
    if not isinstance(phrases, list) or not all(isinstance(p, str) for p in phrases):
        raise ValueError(f"{directory / 'phrases.json'} must hold an array of strings")
    meta = _read_json(directory / "meta.json")
    if not isinstance(meta, dict) or "seed" not in meta or "side" not in meta:
        raise ValueError(f"{directory / 'meta.json'} must hold seed and side")

    image = read_ppm(directory / "image.ppm")
    side = int(meta["side"])
    if image.shape != (side, side, 3):
        raise ValueError(f"{directory / 'image.ppm'} is {image.shape[1]}x{image.shape[0]}, meta says {side}")

    referents = []
    for idx, phrase in enumerate(phrases):
        mask_path = directory / "masks" / f"{idx}.pgm"
        mask = read_mask(mask_path)
        if mask.shape != (side, side):
            raise ValueError(f"{mask_path} has shape {mask.shape}, expected {(side, side)}")
        referents.append(Referent(phrase, mask))
    return Episode(image=image_to_chw(image), referents=referents,
                   seed=int(meta["seed"]), policy=str(meta.get("policy", "generated")))


def episode_dirs(root: Union[str, Path]) -> List[Path]:
    """Episode directories directly under root, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Data directory not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "phrases.json").exists())


def find_splits(root: Union[str, Path]) -> Dict[str, Path]:
    """
    Map split name -> directory. A root holding episodes is a single split
    named after itself; otherwise every subdirectory with episodes is a split.
    """
    root = Path(root)
    if episode_dirs(root):
        return {root.name: root}
    splits = {p.name: p for p in sorted(root.iterdir()) if p.is_dir() and episode_dirs(p)}
    if not splits:
        raise ValueError(f"No episodes found under {root}")
    return splits


def load_dataset(root: Union[str, Path]) -> Iterator[Episode]:
    for d in episode_dirs(root):
        yield read_episode(d)


def generate_dataset(out_dir: Union[str, Path], seed: int, count: int,
                     config: Optional[SynthConfig] = None, split: Optional[str] = None) -> List[Path]:
    """
    Write `count` episodes for seeds seed..seed+count-1 (offset into the
    split's seed interval when a split is named).
    """
    if count < 1:
        raise ValueError(f"Episode count must be positive, got {count}")
    config = split_config(split, config or SynthConfig())
    out_dir = Path(out_dir)
    written = []
    progress = ColoredProgress(count, label=split or "episodes")
    for offset in range(seed, seed + count):
        actual = split_seed(split, offset) if split else offset
        ep = generate_episode(actual, config)
        path = out_dir / f"ep_{actual:07d}"
        write_episode(ep, path)
        written.append(path)
        progress.update(1)
    progress.finish()
    logger.info(f"Wrote {len(written)} episodes to {out_dir}")
    return written
