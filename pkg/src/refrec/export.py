"""
export.py - HDF5 dumps of evaluation predictions

Layout of a dump file:

    /                       attrs: pairing, threshold, step, created
    /episodes/<name>/probs  (T, S, S) float64 predicted probabilities
    /episodes/<name>/gt     (N, S, S) uint8 ground-truth masks (0/1)
    /episodes/<name>/match  (N,) int64 prediction index paired with each gt
    /episodes/<name>/inter  (N,) int64 hard intersection per pair
    /episodes/<name>/union  (N,) int64 hard union per pair
                            attrs: seed, phrases (JSON array)
    /summary                attrs: instance_iou, overall_iou, inter_sum, union_sum, pairs
"""

import json
from datetime import datetime
from pathlib import Path
from typing import Sequence, Union

import h5py
import numpy as np

from .objective import IoUParts


class PredictionDump:
    """Context manager writing one HDF5 dump."""

    def __init__(self, path: Union[str, Path], pairing: str, threshold: float, step: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.pairing, self.threshold, self.step = pairing, threshold, step
        self.file = None

    def __enter__(self) -> "PredictionDump":
        self.file = h5py.File(self.path, "w")
        self.file.attrs["pairing"] = self.pairing
        self.file.attrs["threshold"] = self.threshold
        self.file.attrs["step"] = self.step
        self.file.attrs["created"] = datetime.now().isoformat()
        self.file.create_group("episodes")
        return self

    def add_episode(self, name: str, seed: int, phrases: Sequence[str], probs: np.ndarray,
                    gts: Sequence[np.ndarray], match: Sequence[int],
                    inter: Sequence[int], union: Sequence[int]):
        grp = self.file["episodes"].create_group(name)
        grp.create_dataset("probs", data=np.asarray(probs, dtype=np.float64), compression="gzip")
        grp.create_dataset("gt", data=np.asarray(gts, dtype=np.uint8), compression="gzip")
        grp.create_dataset("match", data=np.asarray(match, dtype=np.int64))
        grp.create_dataset("inter", data=np.asarray(inter, dtype=np.int64))
        grp.create_dataset("union", data=np.asarray(union, dtype=np.int64))
        grp.attrs["seed"] = seed
        grp.attrs["phrases"] = json.dumps(list(phrases))

    def write_summary(self, parts: IoUParts):
        grp = self.file.create_group("summary")
        grp.attrs["instance_iou"] = parts.instance_iou
        grp.attrs["overall_iou"] = parts.overall_iou
        grp.attrs["inter_sum"] = parts.inter_sum
        grp.attrs["union_sum"] = parts.union_sum
        grp.attrs["pairs"] = parts.pairs

    def __exit__(self, exc_type, exc, tb):
        if self.file is not None:
            self.file.close()
            self.file = None
        return False
