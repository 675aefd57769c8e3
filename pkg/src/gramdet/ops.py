"""Neighbourhood and element-wise image operators.

These are the terminal functions of the feature grammar.  Every operator
takes and returns 2-D float64 arrays of identical shape and never emits
NaN or infinities.  Linear filters use reflect-101 borders (scipy's
``"mirror"`` mode); morphology and percentile filters clip the footprint at
the image border.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage, signal

from .raster import StructuringElement

# Cap on output magnitude; chained ratios (scaledSub of signed images) can
# otherwise overflow through later products.
MAX_MAGNITUDE = 1e100

LAWS_VECTORS = {
    "L5": np.array([1.0, 4.0, 6.0, 4.0, 1.0]),
    "E5": np.array([-1.0, -2.0, 0.0, 2.0, 1.0]),
    "S5": np.array([-1.0, 0.0, 2.0, 0.0, -1.0]),
    "R5": np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
    "W5": np.array([-1.0, 2.0, 0.0, -2.0, 1.0]),
}

GABOR_ENVELOPES = ("sin", "cos", "both")
GABOR_MAX_HALF = 15

BINARY_KINDS = ("mult", "blend", "normDiff", "scaledSub")
MORPH_KINDS = ("erode", "dilate", "open", "close")


def finite(img: np.ndarray) -> np.ndarray:
    """Map NaN to 0 and clip to +-MAX_MAGNITUDE."""
    out = np.nan_to_num(img, nan=0.0, posinf=MAX_MAGNITUDE, neginf=-MAX_MAGNITUDE)
    return np.clip(out, -MAX_MAGNITUDE, MAX_MAGNITUDE, out=out)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _check_sigma(sigma):
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")


# -- element-wise -----------------------------------------------------------

# overflow to inf is expected for extreme inputs; finite() clips it
def _quiet():
    return np.errstate(over="ignore", invalid="ignore")


def mult(a, b):
    _check_same_shape(a, b)
    with _quiet():
        return finite(a * b)


def blend(a, b):
    _check_same_shape(a, b)
    with _quiet():
        return finite((a + b) / 2.0)


def norm_diff(a, b):
    """``(a - b) / (sum(A) + sum(B))``; all zero when the denominator is 0."""
    _check_same_shape(a, b)
    with _quiet():
        denom = float(np.sum(a) + np.sum(b))
        if denom == 0.0 or not math.isfinite(denom):
            return np.zeros_like(a)
        return finite((a - b) / denom)


def scaled_sub(a, b):
    """``(a - b) / (a + b)`` with 0 wherever ``a + b == 0``."""
    _check_same_shape(a, b)
    with _quiet():
        s = a + b
        out = np.zeros_like(a)
        np.divide(a - b, s, out=out, where=s != 0)
        return finite(out)


_BINARY = {"mult": mult, "blend": blend, "normDiff": norm_diff, "scaledSub": scaled_sub}


def apply_binary(kind: str, a, b):
    try:
        fn = _BINARY[kind]
    except KeyError:
        raise ValueError(f"unknown binary operator {kind!r}") from None
    return fn(a, b)


def sigmoid(img, theta: float, lam: float):
    """Soft maximum ``arctan(lam*(u+theta))/lam``; the ``lam == 0`` limit is ``u + theta``."""
    if not (math.isfinite(theta) and math.isfinite(lam)) or lam < 0:
        raise ValueError(f"sigmoid needs finite theta and lam >= 0, got {theta}, {lam}")
    with _quiet():
        if lam == 0:
            return finite(img + theta)
        return finite(np.arctan(lam * (img + theta)) / lam)


apply_sigmoid = sigmoid


# -- linear filters ---------------------------------------------------------

def laws_kernel(u: str, v: str) -> np.ndarray:
    try:
        return np.outer(LAWS_VECTORS[u], LAWS_VECTORS[v])
    except KeyError as exc:
        raise ValueError(f"unknown Laws vector {exc.args[0]!r}") from None


def laws(img, u: str, v: str):
    return finite(ndimage.convolve(img, laws_kernel(u, v), mode="mirror"))


def _gauss_kernels(sigma: float):
    """Gaussian and second-derivative kernels truncated at 4 sigma.

    The derivative kernel is corrected to zero sum and unit response to
    ``x**2 / 2`` so constants and ramps give exactly zero after truncation.
    """
    r = max(1, int(4.0 * sigma + 0.5))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    d2 = g * (x * x - sigma * sigma) / sigma ** 4
    d2 -= d2.sum() * g
    d2 *= 2.0 / np.sum(d2 * x * x)
    return g, d2


def laplace(img, sigma: float):
    """Sum of Gaussian second derivatives along x and y."""
    _check_sigma(sigma)
    g, d2 = _gauss_kernels(sigma)
    # kernels are symmetric, so correlation equals convolution
    dxx = ndimage.correlate1d(ndimage.correlate1d(img, d2, axis=1, mode="mirror"), g, axis=0,
                              mode="mirror")
    dyy = ndimage.correlate1d(ndimage.correlate1d(img, d2, axis=0, mode="mirror"), g, axis=1,
                              mode="mirror")
    return finite(dxx + dyy)


def ggm(img, sigma: float):
    _check_sigma(sigma)
    return finite(ndimage.gaussian_gradient_magnitude(img, sigma, mode="mirror"))


def gabor_kernels(theta: float, k: float, ratio: float, freq: float):
    """Even (cos) and odd (sin) Gabor kernels.

    The Gaussian envelope has std ``k/4`` along ``theta`` and ``k*ratio/4``
    across it, normalised to unit sum; ``freq`` is the carrier wavelength in
    pixels.  Kernel half-width is capped at 15.
    """
    for name, val in (("theta", theta), ("k", k), ("ratio", ratio), ("freq", freq)):
        if not math.isfinite(val):
            raise ValueError(f"gabor {name} must be finite")
    if k <= 0 or ratio <= 0 or freq <= 0:
        raise ValueError("gabor k, ratio and freq must be positive")
    s_along = max(k / 4.0, 0.5)
    s_across = max(k * ratio / 4.0, 0.5)
    half = min(GABOR_MAX_HALF, int(math.ceil(3.0 * max(s_along, s_across))))
    d = np.arange(-half, half + 1, dtype=np.float64)
    dx, dy = np.meshgrid(d, d)
    c, s = math.cos(theta), math.sin(theta)
    along = dx * c + dy * s
    across = -dx * s + dy * c
    env = np.exp(-0.5 * ((along / s_along) ** 2 + (across / s_across) ** 2))
    env /= env.sum()
    phase = 2.0 * math.pi * along / freq
    return env * np.cos(phase), env * np.sin(phase)


def gabor(img, theta: float, k: float, ratio: float, freq: float, envelope: str):
    if envelope not in GABOR_ENVELOPES:
        raise ValueError(f"unknown gabor envelope {envelope!r}")
    even, odd = gabor_kernels(theta, k, ratio, freq)
    half = even.shape[0] // 2
    padded = np.pad(img, half, mode="reflect")
    # one complex FFT pass gives the even response as the real part, odd as imaginary
    resp = signal.fftconvolve(padded, even + 1j * odd, mode="valid")
    if envelope == "cos":
        return finite(resp.real)
    if envelope == "sin":
        return finite(resp.imag)
    return finite(np.abs(resp))


# -- morphology -------------------------------------------------------------
#
# Morphology and percentile functions accept a StructuringElement or a raw
# boolean footprint with odd side lengths.

def _footprint(se) -> np.ndarray:
    return se.mask if isinstance(se, StructuringElement) else np.asarray(se, dtype=bool)


def erode(img, se):
    """Flat erosion: minimum over the footprint, clipped at the border."""
    return ndimage.minimum_filter(img, footprint=_footprint(se), mode="constant", cval=np.inf)


def dilate(img, se):
    """Flat dilation: maximum over the reflected footprint, clipped at the border."""
    return ndimage.maximum_filter(img, footprint=_footprint(se)[::-1, ::-1], mode="constant",
                                  cval=-np.inf)


def opening(img, se):
    return dilate(erode(img, se), se)


def closing(img, se):
    return erode(dilate(img, se), se)


_MORPH = {"erode": erode, "dilate": dilate, "open": opening, "close": closing}


def apply_morph(kind: str, img, se):
    try:
        fn = _MORPH[kind]
    except KeyError:
        raise ValueError(f"unknown morphology operator {kind!r}") from None
    return fn(img, se)


def _footprint_stack(img, footprint, fill):
    """Shifted copies of ``img`` for every footprint offset, padded with ``fill``.

    Returned as ``(h*w, m)`` so each row holds one pixel's neighbourhood.
    """
    fh, fw = footprint.shape
    hy, hx = fh // 2, fw // 2
    h, w = img.shape
    padded = np.pad(img, ((hy, hy), (hx, hx)), mode="constant", constant_values=fill)
    offsets = np.argwhere(footprint)
    out = np.empty((h, w, len(offsets)), dtype=img.dtype)
    for i, (oy, ox) in enumerate(offsets):
        out[:, :, i] = padded[oy:oy + h, ox:ox + w]
    return out.reshape(h * w, len(offsets))


def clipped_order_stats(img, se, rank_fns):
    """Order statistics over the in-bounds part of the footprint.

    ``rank_fns`` map the per-pixel in-bounds count ``n`` to a 1-based rank
    in ``[1, n]``; one image is returned per function.
    """
    stack = _footprint_stack(img, _footprint(se), np.inf)
    stack.sort(axis=1)
    n = np.isfinite(stack).sum(axis=1)
    rows = np.arange(stack.shape[0])
    out = []
    for fn in rank_fns:
        rank = np.clip(fn(n), 1, n).astype(np.intp)
        out.append(stack[rows, rank - 1].reshape(img.shape))
    return out


def ptile(img, p: float, se):
    """Nearest-rank ``p``-th percentile over the footprint.

    Rank is ``ceil(p/100 * n)`` clamped to ``[1, n]`` where ``n`` counts the
    footprint pixels inside the image, so ``p=0`` is the erosion and
    ``p=100`` the dilation.
    """
    if not (0.0 <= p <= 100.0):
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    if p == 0.0:
        return erode(img, se)
    (out,) = clipped_order_stats(img, se, [lambda n: np.ceil(p / 100.0 * n)])
    return out


apply_ptile = ptile
