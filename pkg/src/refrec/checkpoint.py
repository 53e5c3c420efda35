"""
checkpoint.py - Single-file model checkpoints

Layout:
    8 bytes   magic b"REFRECK1"
    8 bytes   little-endian uint64 manifest length N
    N bytes   UTF-8 JSON manifest (sorted keys)
    rest      contiguous little-endian float64 blob

The manifest lists every array with name, shape, byte offset and element
count, echoes the training config and records the step count. Offsets
tile the blob exactly; load(save(x)) reproduces every array bit for bit.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np

MAGIC = b"REFRECK1"
FORMAT_VERSION = 1
MANIFEST_KEYS = ("step", "config", "tensors", "blob_bytes")


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    config: dict
    step: int


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in ckpt.arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "count": int(data.size)})
        chunks.append(data.tobytes())
        offset += data.nbytes
    manifest = {
        "format": FORMAT_VERSION,
        "step": int(ckpt.step),
        "config": ckpt.config,
        "tensors": entries,
        "blob_bytes": offset,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if raw[:8] != MAGIC:
        raise ValueError(f"{source} is not a refrec checkpoint")
    if len(raw) < 16:
        raise ValueError(f"{source}: truncated checkpoint header")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{source}: corrupt checkpoint manifest ({e})")
    if not isinstance(manifest, dict):
        raise ValueError(f"{source}: checkpoint manifest is not a JSON object")
    if manifest.get("format") != FORMAT_VERSION:
        raise ValueError(f"{source}: unsupported checkpoint format {manifest.get('format')}")
    missing = [key for key in MANIFEST_KEYS if key not in manifest]
    if missing:
        raise ValueError(f"{source}: checkpoint manifest lacks {', '.join(missing)}")

    blob = raw[16 + n:]
    if len(blob) != manifest["blob_bytes"]:
        raise ValueError(f"{source}: blob has {len(blob)} bytes, manifest says {manifest['blob_bytes']}")

    arrays = {}
    expected_offset = 0
    try:
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            if entry["offset"] != expected_offset or entry["count"] != count:
                raise ValueError(f"{source}: manifest entry {entry['name']!r} does not tile the blob")
            chunk = blob[expected_offset:expected_offset + 8 * count]
            arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
            expected_offset += 8 * count
        step = int(manifest["step"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"{source}: malformed checkpoint manifest ({e!r})")
    if expected_offset != len(blob):
        raise ValueError(f"{source}: {len(blob) - expected_offset} trailing blob bytes")
    if not isinstance(manifest["config"], dict):
        raise ValueError(f"{source}: checkpoint config echo is not a JSON object")
    return Checkpoint(arrays=arrays, config=manifest["config"], step=step)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))
