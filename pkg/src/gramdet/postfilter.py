"""Post-processing filters for weak pixel classifications.

A filter maps a stump's sign map ({-1, +1}) to a ternary map ({-1, 0, +1}).
Region growing abstains on 4-connected positive regions larger than ``k``
pixels.  Erosion, dilation and median filter the positive mask with a disk
of radius ``r``; pixels where the filtered and original masks disagree
become abstentions, so no pixel ever flips sign.

Besides :func:`apply_post_filter`, this module scores a stump over a whole
list of thresholds at once, which is what makes the per-round search in the
booster affordable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from . import ops
from .raster import disk

REGION_KS = tuple(range(1000, 5001, 500))
RADII = (1, 2, 3, 4, 5)

_CODES = {"none": "N", "region": "R", "erode": "E", "dilate": "D", "median": "M"}
_KINDS = {v: k for k, v in _CODES.items()}


@dataclass(frozen=True, order=True)
class PostFilter:
    kind: str = "none"
    param: int = 0

    def __post_init__(self):
        if self.kind not in _CODES:
            raise ValueError(f"unknown post filter {self.kind!r}")
        if self.kind == "none" and self.param != 0:
            raise ValueError("the none filter takes no parameter")
        if self.kind == "region" and self.param < 1:
            raise ValueError(f"region grow k must be >= 1, got {self.param}")
        if self.kind in ("erode", "dilate", "median") and self.param < 1:
            raise ValueError(f"filter radius must be >= 1, got {self.param}")

    def __str__(self):
        code = _CODES[self.kind]
        return code if self.kind == "none" else f"{code}{self.param}"

    @classmethod
    def parse(cls, text: str) -> "PostFilter":
        text = text.strip()
        if text == "N":
            return cls()
        try:
            return cls(_KINDS[text[0]], int(text[1:]))
        except (KeyError, IndexError, ValueError):
            raise ValueError(f"bad post filter {text!r}") from None


NONE = PostFilter()


def filter_set(codes: str) -> tuple[PostFilter, ...]:
    """Expand a combination such as ``"REDM"`` or ``"N"`` into concrete filters.

    R ranges over k in 1000..5000 step 500 and E/D/M over r in 1..5.
    """
    out = []
    for code in codes.upper():
        if code == "N":
            out.append(NONE)
        elif code == "R":
            out.extend(PostFilter("region", k) for k in REGION_KS)
        elif code in "EDM":
            out.extend(PostFilter(_KINDS[code], r) for r in RADII)
        else:
            raise ValueError(f"unknown post filter code {code!r}")
    return tuple(dict.fromkeys(out))


FILTER_COMBINATIONS = ("R", "ED", "EDM", "REDM", "N")


def apply_post_filter(pred: np.ndarray, filt: PostFilter) -> np.ndarray:
    """Filter a {-1,+1} sign map into a {-1,0,+1} map (int8)."""
    pos = np.asarray(pred) > 0
    out = np.where(pos, 1, -1).astype(np.int8)
    if filt.kind == "none":
        return out
    if filt.kind == "region":
        labels, _ = ndimage.label(pos)
        sizes = np.bincount(labels.ravel())
        big = (sizes[labels] > filt.param) & pos
        out[big] = 0
        return out
    fp = disk(filt.param)
    m = pos.astype(np.float64)
    if filt.kind == "erode":
        filtered = ops.erode(m, fp) > 0.5
    elif filt.kind == "dilate":
        filtered = ops.dilate(m, fp) > 0.5
    else:
        filtered = ops.ptile(m, 50.0, fp) > 0.5
    out[pos != filtered] = 0
    return out


# -- batched threshold scoring ----------------------------------------------
#
# For a stump with threshold t and polarity +1 the positive mask is F > t,
# for polarity -1 it is F <= t.  Every score below is
#     r = sum_i Dy_i * h_i      (Dy = D * y, zero off the training pixels)
# evaluated for all thresholds.

def threshold_bins(values, thresholds):
    """Index of the first threshold ``>= v``, so ``v > t_j`` iff ``bin > j``.

    Thresholding at any ``t_j`` only depends on these bins, and the map is
    monotone, so rank filters may be applied to the bins instead of values.
    """
    return np.searchsorted(thresholds, values, side="left")


def _le_sums(bins, weights, n):
    """``sum(weights[bins <= j])`` for ``j = 0..n-1``."""
    return np.cumsum(np.bincount(bins, weights, minlength=n + 1))[:n]


def _paired_scores(lo, hi, dy, n):
    """Scores when +1 needs ``lo > j`` and -1 needs ``hi <= j`` (0 otherwise)."""
    return (dy.sum() - _le_sums(lo, dy, n)) - _le_sums(hi, dy, n)


def grey_stack(feature: np.ndarray, filt: PostFilter, cache: dict | None = None,
               n_bins: int | None = None):
    """Grey images ``(G_plus, G_minus)`` whose thresholds give the filtered masks.

    For polarity +1 the filtered mask is ``G_plus > t``; for polarity -1 it is
    ``G_minus <= t``.  Thresholding commutes with flat morphology and with
    order statistics, which is what makes this exact.  ``cache`` lets erosion
    and dilation at the same radius share work.  With ``n_bins`` the feature
    must hold integers in ``[0, n_bins)`` and medians use a sliding histogram.
    """
    if cache is None:
        cache = {}
    r = filt.param
    fp = disk(r)
    if filt.kind in ("erode", "dilate"):
        if ("min", r) not in cache:
            cache["min", r] = ops.erode(feature, fp)
            cache["max", r] = ops.dilate(feature, fp)
        lo, hi = cache["min", r], cache["max", r]
        return (lo, hi) if filt.kind == "erode" else (hi, lo)
    if ("med", r) not in cache:
        if n_bins is None:
            cache["med", r] = tuple(ops.clipped_order_stats(
                feature, fp, [lambda n: np.ceil(n / 2.0), lambda n: n // 2 + 1]))
        else:
            half = (fp.sum(axis=1) - 1) // 2
            lo, hi = _disk_medians(np.ascontiguousarray(feature, dtype=np.int64), n_bins,
                                   half.astype(np.int64))
            cache["med", r] = (lo.astype(feature.dtype), hi.astype(feature.dtype))
    return cache["med", r]


@numba.njit(cache=True)
def _disk_medians(b, n_bins, half):
    """Lower and upper clipped medians of an integer image over a symmetric disk.

    ``half[k]`` is the half-width of footprint row ``k`` (offset ``k - R``).
    A per-row sliding histogram keeps the lower median pointer up to date.
    """
    h, w = b.shape
    R = half.size // 2
    lo = np.empty((h, w), np.int64)
    hi = np.empty((h, w), np.int64)
    hist = np.zeros(n_bins, np.int64)
    for y in range(h):
        hist[:] = 0
        n = 0
        for k in range(2 * R + 1):
            yy = y + k - R
            if yy < 0 or yy >= h:
                continue
            for xx in range(min(half[k], w - 1) + 1):
                hist[b[yy, xx]] += 1
                n += 1
        m = 0
        lt = 0  # number of window values below m
        for x in range(w):
            if x > 0:
                for k in range(2 * R + 1):
                    yy = y + k - R
                    if yy < 0 or yy >= h:
                        continue
                    xo = x - 1 - half[k]
                    if xo >= 0:
                        v = b[yy, xo]
                        hist[v] -= 1
                        n -= 1
                        if v < m:
                            lt -= 1
                    xi = x + half[k]
                    if xi < w:
                        v = b[yy, xi]
                        hist[v] += 1
                        n += 1
                        if v < m:
                            lt += 1
            r1 = (n + 1) // 2
            while lt >= r1:
                m -= 1
                lt -= hist[m]
            while lt + hist[m] < r1:
                lt += hist[m]
                m += 1
            lo[y, x] = m
            r2 = n // 2 + 1
            mm = m
            l2 = lt
            while l2 + hist[mm] < r2:
                l2 += hist[mm]
                mm += 1
            hi[y, x] = mm
    return lo, hi


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _region_abstain(values, order, thresholds, ascending, dy, width, ks):
    """Weight of positive pixels in regions larger than each k, per threshold.

    Pixels join the positive set in ``order``; with ``ascending`` False the set
    at threshold t is values > t (thresholds descending), otherwise values <= t
    (thresholds ascending).  Returns ``(len(thresholds), len(ks))``.
    """
    n = values.size
    nk = ks.size
    parent = np.full(n, -1, np.int64)
    size = np.zeros(n, np.int64)
    wsum = np.zeros(n)
    acc = np.zeros(nk)
    out = np.zeros((thresholds.size, nk))
    height = n // width
    p = 0
    for t in range(thresholds.size):
        th = thresholds[t]
        while p < n:
            i = order[p]
            v = values[i]
            if ascending:
                if not v <= th:
                    break
            elif not v > th:
                break
            p += 1
            parent[i] = i
            size[i] = 1
            wsum[i] = dy[i]
            for q in range(nk):
                if 1 > ks[q]:
                    acc[q] += dy[i]
            y = i // width
            x = i - y * width
            for d in range(4):
                if d == 0:
                    if x == 0:
                        continue
                    j = i - 1
                elif d == 1:
                    if x == width - 1:
                        continue
                    j = i + 1
                elif d == 2:
                    if y == 0:
                        continue
                    j = i - width
                else:
                    if y == height - 1:
                        continue
                    j = i + width
                if parent[j] < 0:
                    continue
                a = _find(parent, i)
                b = _find(parent, j)
                if a == b:
                    continue
                sa, sb = size[a], size[b]
                for q in range(nk):
                    if sa > ks[q]:
                        acc[q] -= wsum[a]
                    if sb > ks[q]:
                        acc[q] -= wsum[b]
                    if sa + sb > ks[q]:
                        acc[q] += wsum[a] + wsum[b]
                if sa < sb:
                    a, b = b, a
                parent[b] = a
                size[a] = sa + sb
                wsum[a] += wsum[b]
        out[t] = acc
    return out


def region_abstain_weights(feature, dy_raster, thresholds, ks, polarity):
    """Sum of ``Dy`` over pixels abstained by region growing, per threshold and k."""
    values = np.ascontiguousarray(feature, dtype=np.float64).ravel()
    dy = np.ascontiguousarray(dy_raster, dtype=np.float64).ravel()
    ks = np.asarray(ks, dtype=np.int64)
    if polarity > 0:
        order = np.argsort(-values, kind="stable")
        res = _region_abstain(values, order, thresholds[::-1].copy(), False, dy,
                              feature.shape[1], ks)
        return res[::-1]
    order = np.argsort(values, kind="stable")
    return _region_abstain(values, order, np.ascontiguousarray(thresholds), True, dy,
                           feature.shape[1], ks)


def score_filters(features, dy_rasters, masks, thresholds, filters):
    """Scores of every (filter, threshold, polarity) stump on a set of images.

    ``features`` are full feature rasters, ``dy_rasters`` hold ``D*y`` on
    training pixels and zero elsewhere, ``masks`` flag the training pixels
    and ``thresholds`` must be sorted ascending.  Returns an array of shape
    ``(len(filters), len(thresholds), 2)``; the last axis is polarity
    (+1, -1).
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    n = thresholds.size
    out = np.zeros((len(filters), n, 2))
    bin_images = [threshold_bins(f, thresholds).astype(np.float64) for f in features]
    b_in = np.concatenate([b[m] for b, m in zip(bin_images, masks)]).astype(np.intp)
    dy_in = np.concatenate([d[m] for d, m in zip(dy_rasters, masks)])
    base = _paired_scores(b_in, b_in, dy_in, n)
    region_ks = [f.param for f in filters if f.kind == "region"]
    region_cols = {k: i for i, k in enumerate(region_ks)}
    region = None
    if region_ks:
        region = np.zeros((n, len(region_ks), 2))
        for f, d in zip(features, dy_rasters):
            region[:, :, 0] += region_abstain_weights(f, d, thresholds, region_ks, +1)
            region[:, :, 1] += region_abstain_weights(f, d, thresholds, region_ks, -1)
    grey_caches = [{} for _ in features]
    for fi, filt in enumerate(filters):
        if filt.kind == "none":
            out[fi, :, 0] = base
            out[fi, :, 1] = -base
        elif filt.kind == "region":
            col = region_cols[filt.param]
            out[fi, :, 0] = base - region[:, col, 0]
            out[fi, :, 1] = -base - region[:, col, 1]
        else:
            gp, gm = [], []
            for b, m, cache in zip(bin_images, masks, grey_caches):
                g_plus, g_minus = grey_stack(b, filt, cache, n + 1)
                gp.append(g_plus[m])
                gm.append(g_minus[m])
            gp = np.concatenate(gp).astype(np.intp)
            gm = np.concatenate(gm).astype(np.intp)
            out[fi, :, 0] = _paired_scores(np.minimum(b_in, gp), np.maximum(b_in, gp), dy_in, n)
            # polarity -1: +1 needs max(F, G-) <= t, -1 needs min(F, G-) > t
            out[fi, :, 1] = -_paired_scores(np.minimum(b_in, gm), np.maximum(b_in, gm), dy_in, n)
    return out
