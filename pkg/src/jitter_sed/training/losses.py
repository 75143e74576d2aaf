"""Reconstruction, JiTTER and semi-supervised SED objectives."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import numerics as nx
from ..errors import ContractError
from ..numerics import Tensor

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
clamp_warnings = 0


def _tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def rec_loss(pred, target) -> Tensor:
    """Sum over frames of the squared L2 distance between prediction and target."""
    pred = _tensor(pred)
    target = _tensor(target, pred)
    if pred.shape != target.shape:
        raise ContractError(f"rec_loss: prediction {pred.shape} and target {target.shape} differ")
    return nx.sum_sq(pred - target.detach())


def normalized_rec_loss(pred, target) -> float:
    """rec_loss divided by T * D (and averaged over a leading batch axis)."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    diff = p.astype(np.float64) - t
    return float(np.mean(diff * diff))


def jitter_loss(x_block, x_frame, x, net: Callable[[Tensor], Tensor]) -> Tensor:
    """rec(net(x_block), x) + rec(net(x_frame), x); a ``None`` input drops its term."""
    terms = [rec_loss(net(_tensor(xp)), x) for xp in (x_block, x_frame) if xp is not None]
    if not terms:
        raise ContractError("jitter_loss needs at least one perturbed sequence")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def mean_bce(p: Tensor, y) -> Tensor:
    global clamp_warnings
    outside = int(np.count_nonzero((p.data <= 0.0) | (p.data >= 1.0)))
    if outside:
        clamp_warnings += outside
        logger.debug("clamped %d probabilities outside (0, 1)", outside)
    return nx.mean(nx.bce(p, y, PROB_EPS))


def mse(a: Tensor, b) -> Tensor:
    b = _tensor(b, a).detach()
    return nx.mean(nx.mul(a - b, a - b))


def _count(index, n: int) -> int:
    return int(np.arange(n)[index].size)


@dataclass
class LossWeights:
    weak: float = 0.5
    consistency: float = 2.0
    rampup_fraction: float = 0.2

    def consistency_at(self, step: int, total_steps: int) -> float:
        """Linear ramp from 0 to ``consistency`` over the first ``rampup_fraction`` of the steps."""
        horizon = self.rampup_fraction * total_steps
        if horizon <= 0:
            return self.consistency
        return self.consistency * min(1.0, step / horizon)


def sed_loss(strong_p: Tensor, weak_p: Tensor, strong_labels, weak_labels,
             strong_idx, weak_idx, teacher_strong=None, teacher_weak=None,
             w_weak: float = 0.5, w_cons: float = 0.0) -> tuple[Tensor, dict[str, float]]:
    """Strong BCE on ``strong_idx`` + w_weak * weak BCE on ``weak_idx`` + w_cons * teacher MSE on all clips.

    Teacher outputs are treated as constants.
    """
    parts: dict[str, float] = {}
    total = None
    if _count(strong_idx, strong_p.shape[0]):
        ls = mean_bce(strong_p[strong_idx], np.asarray(strong_labels)[strong_idx])
        parts["strong"] = float(ls.data)
        total = ls
    if _count(weak_idx, weak_p.shape[0]):
        lw = mean_bce(weak_p[weak_idx], np.asarray(weak_labels)[weak_idx])
        parts["weak"] = float(lw.data)
        total = lw * w_weak if total is None else total + lw * w_weak
    if teacher_strong is not None and w_cons > 0:
        ts = teacher_strong.data if isinstance(teacher_strong, Tensor) else teacher_strong
        tw = teacher_weak.data if isinstance(teacher_weak, Tensor) else teacher_weak
        lc = mse(strong_p, ts) + mse(weak_p, tw)
        parts["consistency"] = float(lc.data)
        total = lc * w_cons if total is None else total + lc * w_cons
    if total is None:
        total = Tensor(np.zeros((), dtype=strong_p.dtype))
    parts["total"] = float(total.data)
    return total, parts
