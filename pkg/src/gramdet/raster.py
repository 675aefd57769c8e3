"""Raster primitives: label codes, structuring elements and integral images.

Grey images are plain 2-D ``float64`` arrays indexed ``[y, x]`` with nominal
range [0, 1].  Label masks are 2-D ``uint8`` arrays holding :class:`Label`
codes.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Slack for the ellipse inclusion test; keeps lattice points lying exactly on
# the boundary stable under trig round-off.
_INCLUSION_TOL = 1e-9

SE_K_RANGE = range(1, 8)


class Label(enum.IntEnum):
    BACKGROUND = 0
    OBJECT = 1
    CONFUSER = 2


def as_grey(data, *, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as a grey image and return it as float64."""
    img = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"grey image must be 2-D, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"grey image must be at least 1x1, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("grey image contains non-finite values")
    return img


def ellipse_mask(theta: float, semi_along: float, semi_across: float, half: int) -> np.ndarray:
    """Binary footprint of a rotated ellipse on a ``(2*half+1)**2`` grid.

    A pixel offset ``(dx, dy)`` is set when its centre satisfies the
    ellipse inclusion inequality.
    """
    d = np.arange(-half, half + 1, dtype=np.float64)
    dx, dy = np.meshgrid(d, d)
    c, s = math.cos(theta), math.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / semi_along) ** 2 + (v / semi_across) ** 2 <= 1.0 + _INCLUSION_TOL


def disk(radius: float) -> np.ndarray:
    """Circular footprint ``dx**2 + dy**2 <= radius**2``; radius 0 gives one pixel."""
    half = int(math.floor(radius))
    if half <= 0:
        return np.ones((1, 1), dtype=bool)
    d = np.arange(-half, half + 1)
    dx, dy = np.meshgrid(d, d)
    return dx * dx + dy * dy <= radius * radius * (1.0 + _INCLUSION_TOL)


@dataclass(frozen=True)
class StructuringElement:
    """Elliptical flat structuring element.

    ``k`` is the major semi-axis in pixels (footprint diameter ``2k+1``),
    ``ratio`` the width-to-height aspect ratio and ``theta`` the orientation
    in radians.
    """

    theta: float
    k: int
    ratio: float
    mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.k) != self.k or self.k not in SE_K_RANGE:
            raise ValueError(f"structuring element k must be in 1..7, got {self.k}")
        if not (self.ratio > 0 and math.isfinite(self.ratio)):
            raise ValueError(f"structuring element ratio must be positive, got {self.ratio}")
        if not math.isfinite(self.theta):
            raise ValueError("structuring element orientation must be finite")
        k = int(self.k)
        object.__setattr__(self, "k", k)
        big = max(1.0, self.ratio)
        along = max(k * self.ratio / big, 0.5)
        across = max(k / big, 0.5)
        m = ellipse_mask(self.theta, along, across, k)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def size(self) -> int:
        return int(self.mask.sum())


def rasterize_se(theta: float, k: int, ratio: float) -> StructuringElement:
    return StructuringElement(float(theta), k, float(ratio))


class IntegralImage:
    """Summed-area table with a zero first row and column.

    ``table[y, x]`` is the sum of ``img[:y, :x]``, so any rectangle sum
    takes four lookups.
    """

    def __init__(self, img):
        img = as_grey(img)
        self.height, self.width = img.shape
        table = np.zeros((self.height + 1, self.width + 1), dtype=np.float64)
        np.cumsum(img, axis=0, out=table[1:, 1:])
        np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
        table.setflags(write=False)
        self.table = table

    def rect_sum(self, x0: int, y0: int, x1: int, y1: int) -> float:
        """Sum over ``x0 <= x < x1`` and ``y0 <= y < y1``."""
        if not (0 <= x0 <= x1 <= self.width and 0 <= y0 <= y1 <= self.height):
            raise IndexError(f"rectangle ({x0},{y0})-({x1},{y1}) outside {self.width}x{self.height}")
        t = self.table
        return float(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])

    def window_sums(self, dy: int, dx: int, h: int, w: int, out_h: int, out_w: int) -> np.ndarray:
        """Sums of the ``h x w`` windows whose top-left corners are ``(dy+i, dx+j)``.

        Vectorised over an ``out_h x out_w`` grid of corners.
        """
        t = self.table
        return (t[dy + h:dy + h + out_h, dx + w:dx + w + out_w]
                - t[dy:dy + out_h, dx + w:dx + w + out_w]
                - t[dy + h:dy + h + out_h, dx:dx + out_w]
                + t[dy:dy + out_h, dx:dx + out_w])


def build_integral(img) -> IntegralImage:
    return IntegralImage(img)
