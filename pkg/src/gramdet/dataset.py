"""Dataset manifests and split-access auditing.

A manifest is a CSV with columns ``image,mask,split``; paths are relative
to the manifest's directory.  Reads go through :class:`DataAccess`, which
only lets each phase touch its own split and keeps a log of every access.
"""
from __future__ import annotations

import csv
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from .imageio import load_image, load_mask

SPLITS = ("train", "validation", "test")


class SplitLeakageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    mask: Path
    split: str

    @property
    def image_id(self) -> str:
        return self.image.stem


class Manifest:
    def __init__(self, entries, root=None):
        self.entries = list(entries)
        self.root = Path(root) if root is not None else None
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for {e.image}")
        self.check_disjoint()

    def check_disjoint(self) -> None:
        seen: dict = {}
        for e in self.entries:
            for key in (os.path.realpath(e.image), e.image_id):
                other = seen.setdefault(key, e.split)
                if other != e.split:
                    raise SplitLeakageError(
                        f"image {e.image_id} appears in both {other} and {e.split} splits")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        root = path.parent
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and not {"image", "mask", "split"} <= set(rows[0]):
            raise ValueError(f"{path}: manifest needs columns image,mask,split")
        return cls([ManifestEntry(root / r["image"], root / r["mask"], r["split"].strip())
                    for r in rows], root)

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["image", "mask", "split"])
            for e in self.entries:
                wr.writerow([os.path.relpath(e.image, path.parent),
                             os.path.relpath(e.mask, path.parent), e.split])

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict:
        return {s: len(self.split(s)) for s in SPLITS}


def load_pair(entry: ManifestEntry):
    img = load_image(entry.image)
    mask = load_mask(entry.mask)
    if img.shape != mask.shape:
        raise ValueError(f"{entry.image_id}: image {img.shape} and mask {mask.shape} differ")
    return img, mask


class DataAccess:
    """Split-gated loader; a phase may only read the split of the same name."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self.log: list[tuple[str, str, str]] = []
        self._phase: str | None = None

    @contextmanager
    def phase(self, name: str):
        if name not in SPLITS:
            raise ValueError(f"unknown phase {name!r}")
        prev, self._phase = self._phase, name
        try:
            yield self
        finally:
            self._phase = prev

    def pairs(self, split: str):
        """``[(image_id, image, mask)]`` of ``split``; raises on cross-split reads."""
        if self._phase != split:
            raise SplitLeakageError(f"{split} split read during the {self._phase} phase")
        entries = self.manifest.split(split)
        if not entries:
            raise ValueError(f"the {split} split is empty")
        out = []
        for e in entries:
            self.log.append((self._phase, split, e.image_id))
            out.append((e.image_id, *load_pair(e)))
        return out

    def touched(self, split: str) -> set:
        return {i for _, s, i in self.log if s == split}

    def audit(self) -> None:
        """Every read matched its phase, and no image was read under two splits."""
        for ph, split, image_id in self.log:
            if ph != split:
                raise SplitLeakageError(f"{image_id} of {split} read during {ph}")
        ids = [self.touched(s) for s in SPLITS]
        for a in range(len(SPLITS)):
            for b in range(a + 1, len(SPLITS)):
                both = ids[a] & ids[b]
                if both:
                    raise SplitLeakageError(
                        f"{sorted(both)[0]} read as both {SPLITS[a]} and {SPLITS[b]}")
