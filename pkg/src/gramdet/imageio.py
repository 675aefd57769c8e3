"""Reading and writing grey images and label masks.

Two containers are supported: grayscale PNG (8 or 16 bit) and a text
raster whose first line is ``"w h"`` followed by ``w*h`` whitespace
separated reals in row-major order.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import Label, as_grey

MASK_CODES = {0: Label.BACKGROUND, 128: Label.OBJECT, 255: Label.CONFUSER}
_CODE_OF_LABEL = {v: k for k, v in MASK_CODES.items()}

_TEXT_SUFFIXES = (".txt", ".ras")


class ImageFormatError(ValueError):
    pass


def _is_text(path) -> bool:
    return str(path).lower().endswith(_TEXT_SUFFIXES)


def _read_png(path) -> tuple[np.ndarray, int]:
    with Image.open(path) as im:
        im.load()
        bands = im.getbands()
        if len(bands) > 1 or im.mode == "P":
            raise ImageFormatError(f"{path}: multi-channel input (mode {im.mode!r})")
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8), 8
        if im.mode.startswith("I;16"):
            return np.asarray(im).astype(np.uint16), 16
        if im.mode == "I":
            raw = np.asarray(im)
            if raw.min() < 0 or raw.max() > 65535:
                raise ImageFormatError(f"{path}: unsupported bit depth (32-bit integer data)")
            return raw.astype(np.uint16), 16
        raise ImageFormatError(f"{path}: unsupported bit depth (mode {im.mode!r})")


def read_text_raster(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ImageFormatError(f"{path}: header must be 'w h'")
        w, h = (int(v) for v in header)
        values = np.array(fh.read().split(), dtype=np.float64)
    if w < 1 or h < 1 or values.size != w * h:
        raise ImageFormatError(f"{path}: expected {w}x{h}={w * h} values, found {values.size}")
    return values.reshape(h, w)


def write_text_raster(path, data) -> None:
    data = np.asarray(data)
    h, w = data.shape
    rows = (" ".join(repr(float(v)) for v in row) for row in data)
    Path(path).write_text(f"{w} {h}\n" + "\n".join(rows) + "\n")


def load_image(path) -> np.ndarray:
    """Load a grey image scaled to [0, 1]."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image: {path}")
    if _is_text(path):
        return as_grey(read_text_raster(path))
    raw, bits = _read_png(path)
    return raw.astype(np.float64) / (255.0 if bits == 8 else 65535.0)


def save_image(path, img, bits: int = 16) -> None:
    img = as_grey(img)
    if _is_text(path):
        write_text_raster(path, img)
        return
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    top = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * top)
    arr = q.astype(np.uint8 if bits == 8 else np.uint16)
    Image.fromarray(arr).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Load a label mask; byte codes 0/128/255 map to background/object/confuser."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such mask: {path}")
    if _is_text(path):
        raw = read_text_raster(path)
    else:
        raw, _ = _read_png(path)
    bad = ~np.isin(raw, list(MASK_CODES))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ImageFormatError(
            f"{path}: invalid mask value {raw[y, x].item()!r} at (x={x}, y={y}); "
            f"allowed codes are 0, 128, 255")
    labels = np.zeros(raw.shape, dtype=np.uint8)
    labels[raw == 128] = Label.OBJECT
    labels[raw == 255] = Label.CONFUSER
    return labels


def save_mask(path, labels) -> None:
    labels = np.asarray(labels)
    codes = np.zeros(labels.shape, dtype=np.uint8)
    for lab, code in _CODE_OF_LABEL.items():
        codes[labels == lab] = code
    if _is_text(path):
        write_text_raster(path, codes)
    else:
        Image.fromarray(codes).save(path, format="PNG")
