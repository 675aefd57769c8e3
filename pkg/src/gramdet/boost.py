"""Confidence-rated AdaBoost over pixels.

Weak hypotheses are a sampled feature program, a decision stump on its
output and a post-processing filter.  Training pixels are the Object (+1)
and Background (-1) pixels of each mask; Confuser pixels get no weight.
The initial distribution gives each class half of the total weight.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grammar import DEFAULT_MAX_DEPTH, FeatureProgram, Variant, build_grammar, evaluate, sample_program
from .postfilter import NONE, PostFilter, apply_post_filter, score_filters
from .progtext import parse_program, serialize_program
from .raster import Label

log = logging.getLogger(__name__)

MODEL_FORMAT = "gramdet-model"
MODEL_VERSION = 1
MAX_THRESHOLDS = 256
# Scores are compared after rounding so that the batched search and a direct
# re-evaluation agree on ties.
_SCORE_DECIMALS = 12


class TrainingError(Exception):
    pass


class NoWeakHypothesis(TrainingError):
    """No candidate in the pool beats chance (r <= 0) or alpha <= 0."""


@dataclass
class TrainingSet:
    """Images, label masks and the derived per-pixel examples.

    ``include[i]`` flags pixels of image ``i`` that carry boosting weight and
    ``y[i]`` holds +1 (object) / -1 (background) there, 0 elsewhere.
    """

    images: list
    labels: list
    include: list = field(default_factory=list)
    y: list = field(default_factory=list)

    @classmethod
    def from_pairs(cls, pairs, background_cap: int | None = None,
                   rng: np.random.Generator | None = None) -> "TrainingSet":
        images, labels, include, ys = [], [], [], []
        for img, lab in pairs:
            img = np.asarray(img, dtype=np.float64)
            lab = np.asarray(lab)
            if img.shape != lab.shape:
                raise ValueError(f"image {img.shape} and mask {lab.shape} differ in size")
            obj = lab == Label.OBJECT
            bg = lab == Label.BACKGROUND
            if background_cap is not None and bg.sum() > background_cap:
                if rng is None:
                    raise ValueError("background_cap needs an rng")
                keep = rng.choice(np.flatnonzero(bg), size=background_cap, replace=False)
                bg = np.zeros_like(bg)
                bg.flat[keep] = True
            images.append(img)
            labels.append(lab)
            include.append(obj | bg)
            ys.append(np.where(obj, 1, np.where(bg, -1, 0)).astype(np.int8))
        return cls(images, labels, include, ys)

    def __len__(self):
        return len(self.images)

    @property
    def n_pixels(self) -> int:
        return int(sum(m.sum() for m in self.include))

    def flat_y(self) -> np.ndarray:
        return np.concatenate([y[m] for y, m in zip(self.y, self.include)]).astype(np.float64)

    def split_flat(self, v: np.ndarray) -> list[np.ndarray]:
        """Scatter a flat per-example vector back onto rasters (zero off-example)."""
        out, pos = [], 0
        for m in self.include:
            r = np.zeros(m.shape)
            n = int(m.sum())
            r[m] = v[pos:pos + n]
            out.append(r)
            pos += n
        return out

    def gather(self, rasters) -> np.ndarray:
        return np.concatenate([r[m] for r, m in zip(rasters, self.include)])


@dataclass(frozen=True)
class WeakHypothesis:
    program: FeatureProgram
    threshold: float
    polarity: int
    filter: PostFilter = NONE

    def stump(self, feature: np.ndarray) -> np.ndarray:
        return np.where(feature > self.threshold, self.polarity, -self.polarity).astype(np.int8)

    def predict(self, img: np.ndarray) -> np.ndarray:
        """Ternary {-1, 0, +1} map for ``img``."""
        return apply_post_filter(self.stump(evaluate(self.program, img)), self.filter)

    def to_dict(self) -> dict:
        return {"program": serialize_program(self.program), "threshold": self.threshold,
                "polarity": self.polarity, "filter": str(self.filter)}

    @classmethod
    def from_dict(cls, d) -> "WeakHypothesis":
        return cls(parse_program(d["program"]), float(d["threshold"]), int(d["polarity"]),
                   PostFilter.parse(d["filter"]))


@dataclass
class StrongClassifier:
    rounds: list  # [(WeakHypothesis, alpha)]
    metadata: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def predict_confidence(self, img: np.ndarray) -> np.ndarray:
        if not self.rounds:
            raise ValueError("empty classifier")
        conf = np.zeros(np.shape(img))
        for hyp, alpha in self.rounds:
            conf += alpha * hyp.predict(img)
        return conf

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "metadata": self.metadata,
            "rounds": [dict(h.to_dict(), alpha=a) for h, a in self.rounds],
            "history": self.history,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StrongClassifier":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError("not a model file")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        rounds = [(WeakHypothesis.from_dict(r), float(r["alpha"])) for r in doc["rounds"]]
        return cls(rounds, doc.get("metadata", {}), doc.get("history", []))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "StrongClassifier":
        with open(path) as fh:
            return cls.from_json(fh.read())


# -- boosting steps -----------------------------------------------------------

def init_weights(ts: TrainingSet) -> np.ndarray:
    """Uniform within each class, each class summing to 1/2."""
    y = ts.flat_y()
    n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise TrainingError(f"empty class: {n_pos} object and {n_neg} background pixels")
    return np.where(y > 0, 0.5 / n_pos, 0.5 / n_neg)


def candidate_thresholds(values: np.ndarray, cap: int = MAX_THRESHOLDS) -> np.ndarray:
    """Midpoints between consecutive distinct values, thinned to ``cap`` by quantile."""
    u = np.unique(values)
    mids = (u[:-1] + u[1:]) / 2.0
    if mids.size > cap:
        idx = np.unique(np.rint(np.linspace(0, mids.size - 1, cap)).astype(np.intp))
        mids = mids[idx]
    return mids


def compute_alpha(h: np.ndarray, y: np.ndarray, D: np.ndarray) -> float:
    """``0.5 * ln((W+ + eps) / (W- + eps))`` with ``eps = 1/(2N)``."""
    margin = h * y
    w_plus = float(D[margin > 0].sum())
    w_minus = float(D[margin < 0].sum())
    eps = 1.0 / (2.0 * len(D))
    return 0.5 * math.log((w_plus + eps) / (w_minus + eps))


def update_weights(D: np.ndarray, y: np.ndarray, h: np.ndarray, alpha: float):
    """Return the renormalised weights and the normaliser ``Z``."""
    new = D * np.exp(-alpha * y * h)
    z = float(new.sum())
    return new / z, z


@dataclass
class WeakFit:
    hypothesis: WeakHypothesis
    r: float
    pool_scores: list  # best r per sampled program


def _score_program(prog, ts, dy_rasters, filters, max_thresholds):
    feats = [evaluate(prog, img) for img in ts.images]
    thresholds = candidate_thresholds(ts.gather(feats), max_thresholds)
    if thresholds.size == 0:
        return None
    scores = score_filters(feats, dy_rasters, ts.include, thresholds, filters)
    return thresholds, np.round(scores, _SCORE_DECIMALS)


def fit_weak(ts: TrainingSet, D: np.ndarray, w: int, variant=Variant.FULL,
             filters=(NONE,), rng=None, *, max_thresholds: int = MAX_THRESHOLDS,
             max_depth: int = DEFAULT_MAX_DEPTH, workers: int = 1,
             programs=None) -> WeakFit:
    """Pick the best (program, threshold, polarity, filter) from a fresh pool of ``w`` programs.

    The score of a candidate is ``r = sum D*y*h``.  ``programs`` overrides
    sampling (the pool is then exactly that list).  Raises
    :class:`NoWeakHypothesis` when no candidate has ``r > 0``.
    """
    if w < 1:
        raise ValueError("pool size w must be >= 1")
    filters = tuple(filters)
    if programs is None:
        grammar = build_grammar(variant)
        programs = [sample_program(grammar, variant, rng, max_depth) for _ in range(w)]
    dy_rasters = ts.split_flat(D * ts.flat_y())

    def job(prog):
        return _score_program(prog, ts, dy_rasters, filters, max_thresholds)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, programs))
    else:
        results = [job(p) for p in programs]

    best = None
    pool_scores = []
    for prog, res in zip(programs, results):
        if res is None:
            pool_scores.append(0.0)
            continue
        thresholds, scores = res
        fi, ti, pi = np.unravel_index(int(np.argmax(scores)), scores.shape)
        r = float(scores[fi, ti, pi])
        pool_scores.append(r)
        if best is None or r > best[0]:
            best = (r, WeakHypothesis(prog, float(thresholds[ti]), 1 if pi == 0 else -1,
                                      filters[fi]))
    if best is None or best[0] <= 0:
        raise NoWeakHypothesis("no weak hypothesis better than chance in the pool")
    return WeakFit(best[1], best[0], pool_scores)


def training_predictions(hyp: WeakHypothesis, ts: TrainingSet) -> np.ndarray:
    return ts.gather([hyp.predict(img) for img in ts.images]).astype(np.float64)


def train(ts: TrainingSet, T: int, w: int, variant=Variant.FULL, filters=(NONE,),
          rng=None, *, seed=None, max_thresholds: int = MAX_THRESHOLDS,
          max_depth: int = DEFAULT_MAX_DEPTH, workers: int = 1) -> StrongClassifier:
    """Run up to ``T`` boosting rounds, stopping early when no hypothesis helps."""
    variant = Variant(variant)
    filters = tuple(filters)
    if rng is None:
        rng = np.random.default_rng(seed)
    y = ts.flat_y()
    D = init_weights(ts)
    D1 = D.copy()
    margin = np.zeros_like(D)
    loss = 1.0
    rounds, history = [], []
    for t in range(T):
        try:
            fit = fit_weak(ts, D, w, variant, filters, rng, max_thresholds=max_thresholds,
                           max_depth=max_depth, workers=workers)
        except NoWeakHypothesis as exc:
            log.info("round %d: stopping, %s", t + 1, exc)
            break
        h = training_predictions(fit.hypothesis, ts)
        alpha = compute_alpha(h, y, D)
        if not (alpha > 0 and math.isfinite(alpha)):
            log.info("round %d: stopping, alpha=%g", t + 1, alpha)
            break
        r_check = float(np.sum(D * y * h))
        D, z = update_weights(D, y, h, alpha)
        loss *= z
        margin += alpha * h
        error = float(D1[y * margin <= 0].sum())
        rounds.append((fit.hypothesis, alpha))
        entry = {"round": t + 1, "r": fit.r, "r_check": r_check, "alpha": alpha, "z": z,
                 "loss": loss, "error": error,
                 "accuracy": float(np.mean(np.sign(margin) == y)),
                 "weight_sum": float(D.sum()), "pool_scores": fit.pool_scores}
        history.append(entry)
        log.info("round %d: r=%.6f alpha=%.6f Z=%.6f loss=%.6f filter=%s", t + 1, fit.r,
                 alpha, z, loss, fit.hypothesis.filter)
    if not rounds:
        raise TrainingError("no learnable structure: no boosting round was accepted")
    metadata = {"variant": variant.value, "seed": seed, "T": T, "w": w,
                "filters": [str(f) for f in filters], "max_thresholds": max_thresholds,
                "max_depth": max_depth}
    return StrongClassifier(rounds, metadata, history)


def predict_confidence(model: StrongClassifier, img: np.ndarray) -> np.ndarray:
    return model.predict_confidence(img)
