"""
Intersection-based matching and the polyphonic sound detection score.

A detection is valid when the fraction of its duration covered by the union
of same-class ground truths reaches ``dtc``; a ground truth counts as detected
when the union of valid same-class detections covers at least ``gtc`` of it.
Invalid detections are false positives (no cross-trigger term).

The score sweeps thresholds, builds one ROC per class (TPR against false
positives per hour), takes the running-maximum envelope of each, combines
classes as mean - alpha_st * std at every eFPR, and integrates that step
curve over [0, e_max], normalised by e_max.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import DataError, UndefinedScoreError
from .events import CLIP_DURATION, Event, EventList, validate_event
from .postprocess import decode, median_filter


@dataclass(frozen=True)
class PSDSParams:
    dtc: float = 0.7
    gtc: float = 0.7
    alpha_st: float = 1.0
    e_max: float = 100.0

    def __post_init__(self):
        if not (0 < self.dtc <= 1 and 0 < self.gtc <= 1):
            raise DataError(f"dtc/gtc must lie in (0, 1], got {self.dtc}, {self.gtc}")
        if self.e_max <= 0:
            raise DataError(f"e_max must be positive, got {self.e_max}")


def default_thresholds(n: int = 50) -> np.ndarray:
    """n evenly spaced thresholds strictly inside (0, 1)."""
    return np.arange(1, n + 1) / (n + 1)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    n_gt: int = 0


@dataclass
class MatchResult:
    tp: int
    fp: int
    per_class: dict[str, ClassCounts] = field(default_factory=dict)


def merge_intervals(iv: np.ndarray) -> np.ndarray:
    """Union of (n, 2) intervals as sorted disjoint intervals."""
    if len(iv) == 0:
        return np.zeros((0, 2))
    iv = iv[np.argsort(iv[:, 0], kind="stable")]
    out = [list(iv[0])]
    for on, off in iv[1:]:
        if on <= out[-1][1]:
            out[-1][1] = max(out[-1][1], off)
        else:
            out.append([on, off])
    return np.asarray(out, dtype=np.float64)


def overlap_with(iv: np.ndarray, disjoint: np.ndarray) -> np.ndarray:
    """Length of each interval in ``iv`` covered by the disjoint set ``disjoint``."""
    if len(iv) == 0 or len(disjoint) == 0:
        return np.zeros(len(iv))
    lo = np.maximum(iv[:, None, 0], disjoint[None, :, 0])
    hi = np.minimum(iv[:, None, 1], disjoint[None, :, 1])
    return np.clip(hi - lo, 0.0, None).sum(axis=1)


def _as_array(events: Sequence[Event]) -> np.ndarray:
    return np.asarray([(e.onset, e.offset) for e in events], dtype=np.float64).reshape(-1, 2)


def intersection_match(dets: EventList, gts: EventList, params: PSDSParams = PSDSParams(),
                       classes: Sequence[str] | None = None) -> MatchResult:
    for ev in list(dets) + list(gts):
        validate_event(ev)
    if classes is None:
        classes = sorted(dets.labels() | gts.labels())
    unknown = (dets.labels() | gts.labels()) - set(classes)
    if unknown:
        raise DataError(f"events with classes outside the class universe: {sorted(unknown)}")
    per_class = {}
    tp = fp = 0
    for label in classes:
        d = _as_array(dets.of_class(label))
        g = _as_array(gts.of_class(label))
        counts = ClassCounts(n_gt=len(g))
        if len(d):
            ratio = overlap_with(d, merge_intervals(g)) / (d[:, 1] - d[:, 0])
            valid = ratio >= params.dtc - 1e-12
            counts.fp = int(np.count_nonzero(~valid))
            if len(g) and valid.any():
                cover = overlap_with(g, merge_intervals(d[valid])) / (g[:, 1] - g[:, 0])
                counts.tp = int(np.count_nonzero(cover >= params.gtc - 1e-12))
        per_class[label] = counts
        tp += counts.tp
        fp += counts.fp
    return MatchResult(tp, fp, per_class)


@dataclass
class OperatingPoint:
    threshold: float
    tpr: dict[str, float]
    fpr: dict[str, float]   # false positives per hour


@dataclass
class PSDSResult:
    psds: float
    operating_points: list[OperatingPoint]
    curve: list[tuple[float, float]]   # (eFPR, eTPR) breakpoints of the step curve
    classes: list[str]

    def to_json(self) -> dict:
        return {
            "psds": self.psds,
            "classes": self.classes,
            "curve": [[e, t] for e, t in self.curve],
            "operating_points": [
                {"threshold": op.threshold, "tpr": op.tpr, "fpr_per_hour": op.fpr}
                for op in self.operating_points
            ],
        }


def operating_point(threshold: float, dets: Mapping[str, EventList], gts: Mapping[str, EventList],
                    classes: Sequence[str], hours: float, params: PSDSParams) -> OperatingPoint:
    tp = dict.fromkeys(classes, 0)
    fp = dict.fromkeys(classes, 0)
    n_gt = dict.fromkeys(classes, 0)
    for cid in set(gts) | set(dets):
        res = intersection_match(dets.get(cid, EventList(cid)), gts.get(cid, EventList(cid)), params, classes)
        for label, cc in res.per_class.items():
            tp[label] += cc.tp
            fp[label] += cc.fp
            n_gt[label] += cc.n_gt
    tpr = {c: (tp[c] / n_gt[c] if n_gt[c] else float("nan")) for c in classes}
    fpr = {c: fp[c] / hours for c in classes}
    return OperatingPoint(float(threshold), tpr, fpr)


def psds_from_operating_points(points: Sequence[OperatingPoint], classes: Sequence[str],
                               params: PSDSParams = PSDSParams()) -> PSDSResult:
    scored = [c for c in classes if points and not np.isnan(points[0].tpr[c])]
    if not scored:
        raise UndefinedScoreError("no ground-truth events: PSDS is undefined")
    fprs = np.array([[op.fpr[c] for c in scored] for op in points])   # (P, C)
    tprs = np.array([[op.tpr[c] for c in scored] for op in points])
    grid = np.unique(np.concatenate([[0.0], fprs.ravel()]))
    grid = grid[grid < params.e_max]
    # envelope[i, c] = best TPR of class c with FPR <= grid[i]
    reach = fprs[None, :, :] <= grid[:, None, None]
    env = np.where(reach, tprs[None, :, :], 0.0).max(axis=1)
    etpr = np.clip(env.mean(axis=1) - params.alpha_st * env.std(axis=1), 0.0, None)
    widths = np.diff(np.append(grid, params.e_max))
    score = float((etpr * widths).sum() / params.e_max)
    curve = [(float(e), float(t)) for e, t in zip(grid, etpr)]
    return PSDSResult(score, list(points), curve, list(scored))


def psds_from_detections(detections: Sequence[tuple[float, Mapping[str, EventList]]],
                         ground_truth: Mapping[str, EventList], classes: Sequence[str],
                         audio_seconds: float, params: PSDSParams = PSDSParams()) -> PSDSResult:
    """PSDS from already-decoded detections, one mapping clip -> EventList per threshold."""
    if not any(len(el) for el in ground_truth.values()):
        raise UndefinedScoreError("no ground-truth events: PSDS is undefined")
    hours = audio_seconds / 3600.0
    points = [operating_point(t, dets, ground_truth, classes, hours, params) for t, dets in detections]
    return psds_from_operating_points(points, classes, params)


def psds(probabilities: Mapping[str, np.ndarray], ground_truth: Mapping[str, EventList],
         classes: Sequence[str], params: PSDSParams = PSDSParams(), n_thresholds: int = 50,
         clip_seconds: float = CLIP_DURATION, binary_windows=None) -> PSDSResult:
    """PSDS of post-processed (T, C) frame probabilities per clip.

    With ``binary_windows`` set, the median filter runs on the thresholded
    decisions at each operating point instead of on probabilities.
    """
    audio = clip_seconds * len(probabilities)
    sweep = []
    for tau in default_thresholds(n_thresholds):
        dets = {}
        for cid, p in probabilities.items():
            if binary_windows is not None:
                p = median_filter((p >= tau).astype(np.float64), binary_windows)
                dets[cid] = decode(p, 0.5, classes, cid)
            else:
                dets[cid] = decode(p, tau, classes, cid)
        sweep.append((float(tau), dets))
    return psds_from_detections(sweep, ground_truth, classes, audio, params)
