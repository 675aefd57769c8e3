"""Turn a confidence image into a ranked list of point detections.

Three detectors are provided: connected components of the positive
region (CC), large local maxima (LLM) and modes of a confidence-weighted
kernel density estimate over those maxima (KDE).  Coordinates are
``(x, y)`` = (column, row).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np
from scipy import ndimage

from .raster import disk

MEAN_SHIFT_TOL = 1e-3
MEAN_SHIFT_MAX_ITER = 100
MODE_MERGE_DIST = 0.5

_EIGHT = np.ones((3, 3), dtype=bool)
_RING = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=bool)


class Detection(NamedTuple):
    x: float
    y: float
    confidence: float


def _ranked(dets):
    # stable: equal confidences keep their raster order
    return sorted(dets, key=lambda d: -d.confidence)


def cc_detect(conf: np.ndarray, sigma: float) -> list[Detection]:
    """One detection per 8-connected blob of ``conf > 0`` after dilation by ``round(sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma_cc must be positive, got {sigma}")
    conf = np.asarray(conf, dtype=np.float64)
    mask = conf > 0
    radius = int(round(sigma))
    if radius >= 1:
        mask = ndimage.binary_dilation(mask, structure=disk(radius))
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    cents = ndimage.center_of_mass(mask, labels, idx)
    peaks = ndimage.maximum(conf, labels, idx)
    return _ranked(Detection(float(cx), float(cy), float(c))
                   for (cy, cx), c in zip(cents, np.atleast_1d(peaks)))


def smooth(conf: np.ndarray, sigma: float) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    if sigma < 0:
        raise ValueError(f"sigma_llm must be >= 0, got {sigma}")
    if sigma == 0:
        return conf
    return ndimage.gaussian_filter(conf, sigma, mode="mirror")


def local_maxima(img: np.ndarray) -> np.ndarray:
    """Pixels strictly greater than all 8 neighbours (outside the image counts as -inf)."""
    neigh = ndimage.maximum_filter(img, footprint=_RING, mode="constant", cval=-np.inf)
    return img > neigh


def llm_detect(conf: np.ndarray, sigma: float, theta: float) -> list[Detection]:
    """Strict local maxima of the smoothed confidence whose smoothed value exceeds ``theta``."""
    s = smooth(conf, sigma)
    ys, xs = np.nonzero(local_maxima(s) & (s > theta))
    return _ranked(Detection(float(x), float(y), float(s[y, x])) for y, x in zip(ys, xs))


def kde_value(points: np.ndarray, weights: np.ndarray, at: np.ndarray, bandwidth: float):
    """Unnormalised weighted Gaussian KDE ``sum w exp(-|at-p|^2 / 2h^2)``; ``at`` is ``(..., 2)``."""
    d2 = ((np.asarray(at)[..., None, :] - points) ** 2).sum(-1)
    return (weights * np.exp(-d2 / (2.0 * bandwidth ** 2))).sum(-1)


def mean_shift(points, weights, start, bandwidth, tol=MEAN_SHIFT_TOL,
               max_iter=MEAN_SHIFT_MAX_ITER, trace=False):
    """Follow the weighted Gaussian mean-shift from ``start``; returns the end point.

    With ``trace`` the whole path (including ``start``) is returned instead.
    """
    x = np.asarray(start, dtype=np.float64)
    path = [x]
    for _ in range(max_iter):
        k = weights * np.exp(-((points - x) ** 2).sum(1) / (2.0 * bandwidth ** 2))
        total = k.sum()
        if total <= 0:
            break
        nxt = (k[:, None] * points).sum(0) / total
        step = math.hypot(*(nxt - x))
        x = nxt
        path.append(x)
        if step < tol:
            break
    return np.array(path) if trace else x


def kde_detect(conf: np.ndarray, sigma_llm: float, sigma_kde: float,
               theta: float = 0.0) -> list[Detection]:
    """Modes of a confidence-weighted KDE over the LLM maxima."""
    if not sigma_kde > 0:
        raise ValueError(f"sigma_kde must be positive, got {sigma_kde}")
    maxima = [d for d in llm_detect(conf, sigma_llm, theta) if d.confidence > 0]
    if not maxima:
        return []
    pts = np.array([(d.x, d.y) for d in maxima])
    w = np.array([d.confidence for d in maxima])
    modes: list[np.ndarray] = []
    for p in pts:
        m = mean_shift(pts, w, p, sigma_kde)
        if not any(math.hypot(*(m - q)) <= MODE_MERGE_DIST for q in modes):
            modes.append(m)
    h, wd = np.shape(conf)
    out = []
    for m in modes:
        x = min(max(float(m[0]), 0.0), wd - 1.0)
        y = min(max(float(m[1]), 0.0), h - 1.0)
        out.append(Detection(x, y, float(kde_value(pts, w, m, sigma_kde))))
    return _ranked(out)


# -- detector parameter cells ------------------------------------------------

class Detector(Protocol):
    name: str

    def params(self) -> tuple: ...

    def detect(self, conf: np.ndarray, image_id: str | None = None) -> list[Detection]: ...


@dataclass(frozen=True)
class CCDetector:
    sigma: float
    name = "cc"

    def params(self):
        return (self.sigma,)

    def detect(self, conf, image_id=None):
        return cc_detect(conf, self.sigma)


@dataclass(frozen=True)
class LLMDetector:
    sigma: float
    theta: float = 0.0
    name = "llm"

    def params(self):
        return (self.sigma, self.theta)

    def detect(self, conf, image_id=None):
        return llm_detect(conf, self.sigma, self.theta)


@dataclass(frozen=True)
class KDEDetector:
    sigma_llm: float
    sigma_kde: float
    theta: float = 0.0
    name = "kde"

    def params(self):
        return (self.sigma_llm, self.sigma_kde, self.theta)

    def detect(self, conf, image_id=None):
        return kde_detect(conf, self.sigma_llm, self.sigma_kde, self.theta)


def detector_label(det) -> str:
    return f"{det.name}(" + ",".join(f"{p:g}" for p in det.params()) + ")"


def write_detections_csv(path, dets_by_image: dict) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["image_id", "x", "y", "confidence"])
        for image_id, dets in dets_by_image.items():
            for d in _ranked(dets):
                wr.writerow([image_id, repr(d.x), repr(d.y), repr(d.confidence)])


def read_detections_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["image_id"], []).append(
                Detection(float(row["x"]), float(row["y"]), float(row["confidence"])))
    return out


__all__ = ["Detection", "cc_detect", "llm_detect", "kde_detect", "mean_shift", "kde_value",
           "local_maxima", "smooth", "CCDetector", "LLMDetector", "KDEDetector",
           "detector_label", "write_detections_csv", "read_detections_csv"]
