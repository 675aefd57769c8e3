"""Detection matching, ROC curves truncated at U false positives per image, AROC."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .raster import Label

DEFAULT_U = 30.0
TRACKING_RADIUS = 5.0
CRITERIA = ("cueing", "tracking", "counting")

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class GroundTruth:
    """Label mask plus object instances (8-connected Object components)."""

    mask: np.ndarray
    instances: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False)  # (n, 2) as (x, y)

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        self.instances, n = ndimage.label(self.mask == Label.OBJECT, structure=_EIGHT)
        if n:
            c = ndimage.center_of_mass(np.ones(self.mask.shape), self.instances,
                                       np.arange(1, n + 1))
            self.centroids = np.array([(x, y) for y, x in c], dtype=np.float64)
        else:
            self.centroids = np.zeros((0, 2))

    @property
    def n_objects(self) -> int:
        return len(self.centroids)

    @property
    def diagonal(self) -> float:
        h, w = self.mask.shape
        return math.hypot(h, w)


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int

    def __add__(self, other):
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _pixel(d, shape):
    h, w = shape
    return min(max(int(round(d.y)), 0), h - 1), min(max(int(round(d.x)), 0), w - 1)


def match_cueing(dets, gt: GroundTruth) -> MatchResult:
    """Objects hit by at least one detection are TPs; extra hits are free.

    Detections on Background are FPs, detections on Confuser pixels are ignored.
    """
    hit = set()
    fp = 0
    for d in dets:
        y, x = _pixel(d, gt.mask.shape)
        inst = gt.instances[y, x]
        if inst:
            hit.add(int(inst))
        elif gt.mask[y, x] != Label.CONFUSER:
            fp += 1
    return MatchResult(len(hit), fp, gt.n_objects - len(hit))


def nn_pairs(dets, centroids, r: float) -> list[tuple[int, int]]:
    """Greedy globally-closest matching; ties go to the lower detection, then object index."""
    if not r > 0:
        raise ValueError(f"matching radius must be positive, got {r}")
    dets_xy = np.array([(d[0], d[1]) for d in dets], dtype=np.float64).reshape(-1, 2)
    objs = np.asarray(centroids, dtype=np.float64).reshape(-1, 2)
    if len(dets_xy) == 0 or len(objs) == 0:
        return []
    dist = np.hypot(dets_xy[:, None, 0] - objs[None, :, 0], dets_xy[:, None, 1] - objs[None, :, 1])
    di, oi = np.nonzero(dist <= r)
    order = np.lexsort((oi, di, dist[di, oi]))
    used_d, used_o, pairs = set(), set(), []
    for k in order:
        i, j = int(di[k]), int(oi[k])
        if i in used_d or j in used_o:
            continue
        used_d.add(i)
        used_o.add(j)
        pairs.append((i, j))
    return pairs


def match_nn(dets, centroids, r: float) -> MatchResult:
    n_obj = len(np.asarray(centroids).reshape(-1, 2))
    tp = len(nn_pairs(dets, centroids, r))
    return MatchResult(tp, len(dets) - tp, n_obj - tp)


def match_counting(dets, centroids, r_large: float | None = None,
                   shape: tuple | None = None) -> MatchResult:
    """Nearest-neighbour matching with a radius that never binds (image diagonal by default)."""
    if r_large is None:
        r_large = math.hypot(*shape) if shape is not None else math.inf
    return match_nn(dets, centroids, r_large)


Criterion = Callable[[list, GroundTruth], MatchResult]


def make_criterion(name: str, radius: float | None = None) -> Criterion:
    if name == "cueing":
        return match_cueing
    if name == "tracking":
        r = TRACKING_RADIUS if radius is None else radius
        return lambda dets, gt: match_nn(dets, gt.centroids, r)
    if name == "counting":
        return lambda dets, gt: match_nn(dets, gt.centroids,
                                         gt.diagonal if radius is None else radius)
    raise ValueError(f"unknown criterion {name!r}")


@dataclass
class RocCurve:
    thresholds: np.ndarray  # +inf for the origin
    fp_per_image: np.ndarray
    tp_rate: np.ndarray
    U: float

    def points(self):
        return list(zip(self.fp_per_image.tolist(), self.tp_rate.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["threshold", "fp_per_image", "tp_rate"])
            for row in zip(self.thresholds, self.fp_per_image, self.tp_rate):
                wr.writerow([repr(float(v)) for v in row])


def build_roc(dets_per_image, gts, criterion, U: float = DEFAULT_U) -> RocCurve:
    """Sweep every distinct confidence (descending), keeping detections ``>=`` it.

    Each point is (mean FP per image, matched objects / all objects); points
    beyond ``U`` FP per image are dropped.  The curve starts at the origin.
    Lowering the threshold only adds detections, and for every criterion here
    an added detection raises TP by at most one, so FP is non-decreasing.
    """
    if not U > 0:
        raise ValueError("U must be positive")
    if len(dets_per_image) != len(gts):
        raise ValueError("one detection list per ground truth is required")
    if isinstance(criterion, str):
        criterion = make_criterion(criterion)
    total = sum(g.n_objects for g in gts)
    if total == 0:
        raise ValueError("empty ground truth: no objects to detect")
    n_img = len(gts)
    confs = np.unique(np.concatenate([[d.confidence for d in ds] for ds in dets_per_image]
                                     + [np.zeros(0)]))[::-1]
    ranked = [sorted(ds, key=lambda d: -d.confidence) for ds in dets_per_image]
    # only images whose retained set grows at a threshold are re-matched
    kept = [0] * n_img
    per_image = [MatchResult(0, 0, g.n_objects) for g in gts]
    th, fps, tps = [math.inf], [0.0], [0.0]
    for c in confs:
        for i, (ds, g) in enumerate(zip(ranked, gts)):
            k = kept[i]
            while k < len(ds) and ds[k].confidence >= c:
                k += 1
            if k != kept[i]:
                kept[i] = k
                per_image[i] = criterion(ds[:k], g)
        res = sum(per_image, MatchResult(0, 0, 0))
        fpi = res.fp / n_img
        if fpi > U:
            # FP counts never fall as the threshold drops, so nothing later fits
            break
        th.append(float(c))
        fps.append(fpi)
        tps.append(res.tp / total)
    return RocCurve(np.array(th), np.array(fps), np.array(tps), float(U))


def aroc(curve: RocCurve, U: float | None = None) -> float:
    """Trapezoidal area up to ``U`` (last point held flat), divided by ``U``."""
    U = curve.U if U is None else U
    keep = curve.fp_per_image <= U
    x = curve.fp_per_image[keep]
    y = curve.tp_rate[keep]
    if x.size == 0:
        return 0.0
    area = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))
    area += float((U - x[-1]) * y[-1])
    return float(area / U)
