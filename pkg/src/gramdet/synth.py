"""Synthetic aerial-like scenes with ground-truth label masks.

Each scene has a smooth textured background, small bright elliptical
"cars" (objects), large rectangular "roofs" of car-like brightness
(confusers), dark blobs that partially occlude some cars, and additive
Gaussian noise.  Output images are 8-bit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import Manifest, ManifestEntry
from .imageio import save_image, save_mask
from .raster import Label

log = logging.getLogger(__name__)

BACKGROUND_RANGE = (0.10, 0.45)
OBJECT_RANGE = (0.65, 0.95)
OCCLUDER_LEVEL = 0.2
PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class SceneSpec:
    size: int = 128
    n_objects: int = 10
    n_confusers: int = 1
    car_length: float = 4.0  # semi-axis along the car
    car_width: float = 2.0
    confuser_side: tuple = (35, 50)
    occlusion: float = 0.3  # probability that a car gets an occluder
    noise: float = 0.05
    texture_scale: float = 4.0

    def __post_init__(self):
        if self.size < 16:
            raise ValueError("scene size must be >= 16")
        if self.n_objects < 0 or self.n_confusers < 0:
            raise ValueError("object counts must be >= 0")
        if not 0 <= self.occlusion <= 1:
            raise ValueError("occlusion must be a probability")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                raise ValueError(f"unknown scene parameter {k!r}")
            kw[k] = v
        return cls(**kw)


def _background(spec: SceneSpec, rng) -> np.ndarray:
    n = spec.size
    tex = ndimage.gaussian_filter(rng.normal(size=(n, n)), spec.texture_scale, mode="wrap")
    fine = ndimage.gaussian_filter(rng.normal(size=(n, n)), 1.0, mode="wrap")
    tex = tex / (np.abs(tex).max() + 1e-12) + 0.3 * fine / (np.abs(fine).max() + 1e-12)
    lo, hi = BACKGROUND_RANGE
    tex = (tex - tex.min()) / (tex.max() - tex.min() + 1e-12)
    return lo + (hi - lo) * tex


def _ellipse(n, cx, cy, a, b, theta):
    yy, xx = np.mgrid[0:n, 0:n]
    dx, dy = xx - cx, yy - cy
    c, s = math.cos(theta), math.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_scene(spec: SceneSpec, rng: np.random.Generator):
    """Return ``(image, label_mask, n_objects_placed)``."""
    n = spec.size
    img = _background(spec, rng)
    labels = np.full((n, n), Label.BACKGROUND, dtype=np.uint8)
    busy = np.zeros((n, n), dtype=bool)

    for _ in range(spec.n_confusers):
        lo, hi = spec.confuser_side
        for _ in range(PLACEMENT_TRIES):
            w, h = rng.integers(lo, hi + 1, size=2)
            if w >= n or h >= n:
                w, h = min(w, n // 2), min(h, n // 2)
            x0, y0 = rng.integers(0, n - w + 1), rng.integers(0, n - h + 1)
            if not busy[y0:y0 + h, x0:x0 + w].any():
                roof = rng.uniform(*OBJECT_RANGE)
                ramp = np.linspace(-0.04, 0.04, w)[None, :]
                img[y0:y0 + h, x0:x0 + w] = roof + ramp
                labels[y0:y0 + h, x0:x0 + w] = Label.CONFUSER
                busy[max(y0 - 3, 0):y0 + h + 3, max(x0 - 3, 0):x0 + w + 3] = True
                break

    placed = 0
    margin = int(math.ceil(spec.car_length)) + 1
    for _ in range(spec.n_objects):
        for _ in range(PLACEMENT_TRIES):
            cx = rng.uniform(margin, n - 1 - margin)
            cy = rng.uniform(margin, n - 1 - margin)
            theta = rng.uniform(0, math.pi)
            a = spec.car_length * rng.uniform(0.9, 1.1)
            b = spec.car_width * rng.uniform(0.9, 1.1)
            car = _ellipse(n, cx, cy, a, b, theta)
            halo = ndimage.binary_dilation(car, iterations=2)
            if car.sum() == 0 or busy[halo].any():
                continue
            img[car] = rng.uniform(*OBJECT_RANGE)
            labels[car] = Label.OBJECT
            busy |= halo
            placed += 1
            if rng.random() < spec.occlusion:
                _occlude(img, labels, car, cx, cy, a, theta, rng)
            break
    if placed < spec.n_objects:
        log.warning("placed %d of %d objects; scene too crowded", placed, spec.n_objects)

    if spec.noise > 0:
        img = img + rng.normal(scale=spec.noise, size=img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return img, labels, placed


def _occlude(img, labels, car, cx, cy, a, theta, rng):
    """Cover one end of a car with a dark blob, keeping the car one connected piece."""
    side = 1 if rng.random() < 0.5 else -1
    ox = cx + side * a * math.cos(theta)
    oy = cy + side * a * math.sin(theta)
    r = rng.uniform(1.5, 2.5)
    n = img.shape[0]
    blob = _ellipse(n, ox, oy, r, r, 0.0)
    remaining = car & ~blob
    if remaining.sum() < 4 or ndimage.label(remaining, structure=np.ones((3, 3)))[1] != 1:
        return
    img[blob] = OCCLUDER_LEVEL
    labels[car & blob] = Label.BACKGROUND


def generate_dataset(out_dir, spec: SceneSpec, n_images: int = 20,
                     splits: tuple = (10, 5, 5), seed: int = 0) -> Manifest:
    """Write ``images/``, ``masks/`` and ``manifest.csv`` under ``out_dir``."""
    if sum(splits) != n_images:
        raise ValueError(f"split sizes {splits} do not add up to {n_images}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = ["train"] * splits[0] + ["validation"] * splits[1] + ["test"] * splits[2]
    entries = []
    for i, split in enumerate(names):
        img, labels, _ = render_scene(spec, rng)
        ip = out / "images" / f"scene_{i:03d}.png"
        mp = out / "masks" / f"scene_{i:03d}.png"
        save_image(ip, img, bits=8)
        save_mask(mp, labels)
        entries.append(ManifestEntry(ip, mp, split))
    manifest = Manifest(entries, out)
    manifest.save(out / "manifest.csv")
    return manifest
