"""
objective.py - Soft-IoU losses, Hungarian matching and IoU metrics

Language model: predictions and ground truths are paired by position
(mask t answers expression t).

Language-free baseline: a fixed-length prediction sequence, longer than
the number of referents, is matched to the ground truths by minimum-cost
assignment on 1 - softIoU; unmatched predictions cost nothing.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tensor import ShapeError, Tensor, div, mul, reduce, scale, shift, stack_scalars, sub, add

SOFT_IOU_EPS = 1e-6
DEFAULT_THRESHOLD = 0.5


@dataclass
class Assignment:
    """Injective ground-truth -> prediction map and its total cost."""
    mapping: Dict[int, int]
    total_cost: float

    def pairs(self) -> List[Tuple[int, int]]:
        """(gt, pred) pairs in ground-truth order."""
        return sorted(self.mapping.items())


@dataclass
class IoUParts:
    """Running sums for Instance IoU (mean of per-pair IoU) and Overall IoU."""
    iou_sum: float = 0.0
    pairs: int = 0
    inter_sum: float = 0.0
    union_sum: float = 0.0

    def add(self, inter: float, union: float):
        self.iou_sum += hard_iou_from_counts(inter, union)
        self.pairs += 1
        self.inter_sum += inter
        self.union_sum += union

    def merge(self, other: "IoUParts") -> "IoUParts":
        return IoUParts(self.iou_sum + other.iou_sum, self.pairs + other.pairs,
                        self.inter_sum + other.inter_sum, self.union_sum + other.union_sum)

    @property
    def instance_iou(self) -> float:
        return self.iou_sum / self.pairs if self.pairs else 0.0

    @property
    def overall_iou(self) -> float:
        return self.inter_sum / self.union_sum if self.union_sum > 0 else 1.0


def _gt_tensor(pred: Tensor, gt) -> Tensor:
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if g.shape != pred.shape:
        if g.size == pred.size and g.ndim == pred.data.ndim - 1:
            g = g.reshape(pred.shape)
        else:
            raise ShapeError(f"soft_iou: prediction shape {pred.shape} vs ground truth {g.shape}")
    return Tensor(g)


def soft_iou(pred: Tensor, gt) -> Tensor:
    """
    Differentiable IoU of a probability mask against a binary mask:
        sum(p*g) / (sum(p) + sum(g) - sum(p*g) + eps)
    """
    g = _gt_tensor(pred, gt)
    inter = reduce(mul(pred, g), "sum")
    union = shift(sub(add(reduce(pred, "sum"), reduce(g, "sum")), inter), SOFT_IOU_EPS)
    return div(inter, union)


def soft_iou_value(pred: np.ndarray, gt: np.ndarray) -> float:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if p.shape != g.shape:
        raise ShapeError(f"soft_iou: prediction size {p.shape} vs ground truth {g.shape}")
    inter = float((p * g).sum())
    return inter / (float(p.sum()) + float(g.sum()) - inter + SOFT_IOU_EPS)


def _one_minus(x: Tensor) -> Tensor:
    return shift(scale(x, -1.0), 1.0)


def sequence_loss(preds: Sequence[Tensor], gts: Sequence[np.ndarray]) -> Tensor:
    """Mean over timesteps of 1 - softIoU(pred_t, gt_t)."""
    if len(preds) != len(gts):
        raise ValueError(f"sequence_loss: {len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ValueError("sequence_loss needs at least one timestep")
    terms = [_one_minus(soft_iou(p, g)) for p, g in zip(preds, gts)]
    return scale(stack_scalars(terms), 1.0 / len(terms))


def hungarian_assign(cost: np.ndarray) -> Assignment:
    """
    Minimum-cost injective assignment of ground truths (columns) to predictions (rows).

    Args:
        cost: (n_pred, n_gt) matrix, n_pred >= n_gt, finite entries
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"Cost matrix must be 2-D, got shape {cost.shape}")
    n_pred, n_gt = cost.shape
    if n_pred < n_gt:
        raise ValueError(f"Need at least as many predictions as ground truths, got {n_pred} < {n_gt}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("Cost matrix contains non-finite entries")
    if n_gt == 0:
        return Assignment(mapping={}, total_cost=0.0)

    gt_idx, pred_idx = linear_sum_assignment(cost.T)
    mapping = {int(g): int(p) for g, p in zip(gt_idx, pred_idx)}
    total = float(sum(cost[p, g] for g, p in sorted(mapping.items())))
    return Assignment(mapping=mapping, total_cost=total)


def cost_matrix(preds: Sequence[Tensor], gts: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([[1.0 - soft_iou_value(p.data, g) for g in gts] for p in preds]).reshape(len(preds), len(gts))


def baseline_loss(preds: Sequence[Tensor], gts: Sequence[np.ndarray]) -> Tuple[Tensor, Assignment]:
    """
    Hungarian-matched loss for the language-free baseline.

    Returns:
        (mean over matched pairs of 1 - softIoU, the assignment used)
    """
    if len(preds) < len(gts):
        raise ValueError(f"baseline_loss: {len(preds)} predictions cannot cover {len(gts)} ground truths")
    if not gts:
        raise ValueError("baseline_loss needs at least one ground truth")
    assignment = hungarian_assign(cost_matrix(preds, gts))
    terms = [_one_minus(soft_iou(preds[p], gts[g])) for g, p in assignment.pairs()]
    return scale(stack_scalars(terms), 1.0 / len(terms)), assignment


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------
def binarize(pred: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    return np.asarray(pred) >= threshold


def hard_iou_from_counts(inter: float, union: float) -> float:
    # Empty prediction against empty ground truth counts as a perfect match
    return inter / union if union > 0 else 1.0


def pair_counts(pred: np.ndarray, gt: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> Tuple[int, int]:
    p = binarize(np.asarray(pred).reshape(-1), threshold)
    g = np.asarray(gt).reshape(-1) > 0
    if p.shape != g.shape:
        raise ShapeError(f"metrics: prediction size {p.shape} vs ground truth {g.shape}")
    return int(np.count_nonzero(p & g)), int(np.count_nonzero(p | g))


def hard_iou(pred: np.ndarray, gt: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> float:
    return hard_iou_from_counts(*pair_counts(pred, gt, threshold))


def metrics(preds: Sequence, gts: Sequence[np.ndarray], threshold: float = DEFAULT_THRESHOLD) -> IoUParts:
    """
    Hard IoU statistics over already-paired predictions.

    The caller decides the pairing (ordered for the language model,
    Hungarian for the baseline) and passes aligned sequences.
    """
    if len(preds) != len(gts):
        raise ValueError(f"metrics: {len(preds)} predictions for {len(gts)} ground truths")
    parts = IoUParts()
    for pred, gt in zip(preds, gts):
        data = pred.data if isinstance(pred, Tensor) else pred
        parts.add(*pair_counts(data, gt, threshold))
    return parts
