"""
netpbm.py - Binary PPM (P6) and PGM (P5) images, 8-bit only
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np

PathLike = Union[str, Path]


def _read_header(buf: bytes, path: Path) -> Tuple[str, int, int, int, int]:
    """Parse magic, width, height, maxval; returns them plus the pixel data offset."""
    fields = []
    pos = 0
    while len(fields) < 4:
        # Skip whitespace and comments
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"Truncated image header: {path}")
        fields.append(buf[start:pos].decode("ascii", errors="replace"))
    # Exactly one whitespace byte separates the header from the raster
    pos += 1
    magic = fields[0]
    try:
        width, height, maxval = (int(v) for v in fields[1:])
    except ValueError:
        raise ValueError(f"Malformed image header in {path}: {fields}")
    if width < 1 or height < 1:
        raise ValueError(f"Invalid image size {width}x{height} in {path}")
    if maxval != 255:
        raise ValueError(f"Only 8-bit images are supported, {path} has maxval {maxval}")
    return magic, width, height, maxval, pos


def _read(path: PathLike, magic: str, channels: int) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")
    buf = path.read_bytes()
    found, width, height, _, offset = _read_header(buf, path)
    if found != magic:
        raise ValueError(f"Expected {magic} image, {path} is {found!r}")
    expected = width * height * channels
    data = buf[offset:offset + expected]
    if len(data) != expected:
        raise ValueError(f"Truncated pixel data in {path}: {len(data)} of {expected} bytes")
    img = np.frombuffer(data, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return img.reshape(shape).copy()


def _write(path: PathLike, magic: str, img: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{magic}\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    """(H, W, 3) uint8 array from a binary P6 file."""
    return _read(path, "P6", 3)


def write_ppm(path: PathLike, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"PPM needs an (H, W, 3) uint8 array, got {img.shape} {img.dtype}")
    _write(path, "P6", img)


def read_pgm(path: PathLike) -> np.ndarray:
    """(H, W) uint8 array from a binary P5 file."""
    return _read(path, "P5", 1)


def write_pgm(path: PathLike, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"PGM needs an (H, W) uint8 array, got {img.shape} {img.dtype}")
    _write(path, "P5", img)


def read_mask(path: PathLike) -> np.ndarray:
    """Binary mask stored as 0/255 PGM -> bool array."""
    raw = read_pgm(path)
    bad = (raw != 0) & (raw != 255)
    if bad.any():
        raise ValueError(f"Mask file {path} has pixel values other than 0 and 255")
    return raw == 255


def write_mask(path: PathLike, mask: np.ndarray):
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def image_to_chw(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float64 in [0, 1]."""
    return img.transpose(2, 0, 1).astype(np.float64) / 255.0


def chw_to_image(x: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    return np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def probability_to_gray(prob: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(prob) * 255.0), 0, 255).astype(np.uint8)
