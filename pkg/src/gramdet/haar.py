"""Viola-Jones (Haar-like) kernels evaluated through integral images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import finite
from .raster import IntegralImage

KERNEL_EXTENT = 31
_HALF = KERNEL_EXTENT // 2

# kind -> coefficient grid of equal-sized cells, rows along y.
PATTERNS = {
    "horizontal-2": ((1, -1),),
    "vertical-2": ((1,), (-1,)),
    "horizontal-3": ((1, -1, 1),),
    "vertical-3": ((1,), (-1,), (1,)),
    "quad": ((1, -1), (-1, 1)),
}
KINDS = tuple(PATTERNS)


@dataclass(frozen=True)
class ViolaJonesKernel:
    """Adjacent equal cells of +-1 embedded in a zero 31x31 kernel.

    ``cell_w``/``cell_h`` are the size of one cell and ``x``/``y`` the
    offset of the pattern's top-left corner inside the kernel.
    """

    kind: str
    cell_w: int
    cell_h: int
    x: int
    y: int

    def __post_init__(self):
        if self.kind not in PATTERNS:
            raise ValueError(f"unknown Viola-Jones kernel kind {self.kind!r}")
        pw, ph = self.pattern_size
        if self.cell_w < 1 or self.cell_h < 1:
            raise ValueError("cell size must be positive")
        if not (0 <= self.x and self.x + pw <= KERNEL_EXTENT
                and 0 <= self.y and self.y + ph <= KERNEL_EXTENT):
            raise ValueError(f"kernel {self} does not fit in {KERNEL_EXTENT}x{KERNEL_EXTENT}")

    @property
    def pattern_size(self) -> tuple[int, int]:
        grid = PATTERNS[self.kind]
        return len(grid[0]) * self.cell_w, len(grid) * self.cell_h

    def rectangles(self):
        """``(y, x, h, w, coef)`` per cell, relative to the kernel's top-left."""
        out = []
        for row, coefs in enumerate(PATTERNS[self.kind]):
            for col, coef in enumerate(coefs):
                out.append((self.y + row * self.cell_h, self.x + col * self.cell_w,
                            self.cell_h, self.cell_w, coef))
        return out

    def dense(self) -> np.ndarray:
        k = np.zeros((KERNEL_EXTENT, KERNEL_EXTENT))
        for y, x, h, w, coef in self.rectangles():
            k[y:y + h, x:x + w] = coef
        return k


def sample_vj_kernel(rng: np.random.Generator) -> ViolaJonesKernel:
    """Kind uniformly, then cell size uniformly among sizes that fit, then offset."""
    kind = KINDS[rng.integers(len(KINDS))]
    grid = PATTERNS[kind]
    nx, ny = len(grid[0]), len(grid)
    cw = int(rng.integers(1, KERNEL_EXTENT // nx + 1))
    ch = int(rng.integers(1, KERNEL_EXTENT // ny + 1))
    x = int(rng.integers(0, KERNEL_EXTENT - nx * cw + 1))
    y = int(rng.integers(0, KERNEL_EXTENT - ny * ch + 1))
    return ViolaJonesKernel(kind, cw, ch, x, y)


def convolve_vj(img: np.ndarray, kernel: ViolaJonesKernel) -> np.ndarray:
    """Convolve with a Viola-Jones kernel anchored at its centre, reflect-101 borders.

    Convolution flips the kernel, so each cell is looked up at its mirrored
    position and summed from an integral image of the padded input.
    """
    h, w = img.shape
    padded = np.pad(img, _HALF, mode="reflect")
    ii = IntegralImage(padded)
    out = np.zeros((h, w))
    last = KERNEL_EXTENT
    for ry, rx, rh, rw, coef in kernel.rectangles():
        fy, fx = last - ry - rh, last - rx - rw
        out += coef * ii.window_sums(fy, fx, rh, rw, h, w)
    return finite(out)
