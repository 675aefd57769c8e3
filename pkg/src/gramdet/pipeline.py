"""Training, validation grid search and test evaluation over a manifest.

Reports are deterministic JSON documents; wall-clock timings go to a
separate file so that reruns with the same seed produce identical bytes.
"""
from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .boost import StrongClassifier, TrainingSet, train
from .dataset import DataAccess, Manifest, SplitLeakageError
from .detectors import CCDetector, KDEDetector, LLMDetector, detector_label
from .grammar import Variant
from .metrics import CRITERIA, DEFAULT_U, TRACKING_RADIUS, GroundTruth, aroc, build_roc, make_criterion
from .postfilter import FILTER_COMBINATIONS, filter_set

log = logging.getLogger(__name__)

REPORT_FORMAT = "gramdet-report"
REPORT_VERSION = 1


def _grid(step: float, stop: float, start_index: int = 1) -> tuple:
    n = int(round(stop / step))
    return tuple(round(i * step, 10) for i in range(start_index, n))


# Table-style ranges: sigma_cc and sigma_llm in (0, 20) step 0.2 (sigma_llm
# may also be 0, meaning no smoothing), sigma_kde in (0, 10) step 0.1.
FULL_SIGMA_CC = _grid(0.2, 20.0)
FULL_SIGMA_LLM = _grid(0.2, 20.0, 0)
FULL_SIGMA_KDE = _grid(0.1, 10.0)
# default coarse grid: same ranges, steps five times larger
COARSE_SIGMA_CC = _grid(1.0, 20.0)
COARSE_SIGMA_LLM = _grid(1.0, 20.0, 0)
COARSE_SIGMA_KDE = _grid(0.5, 10.0)


@dataclass
class GridSearchConfig:
    T_values: tuple = (10, 25, 50, 75, 100)
    w: int = 100
    variants: tuple = ("full", "haar", "no-morph", "no-haar")
    filter_combos: tuple = FILTER_COMBINATIONS
    detectors: tuple = ("cc", "llm", "kde")
    sigma_cc: tuple = COARSE_SIGMA_CC
    sigma_llm: tuple = COARSE_SIGMA_LLM
    sigma_kde: tuple = COARSE_SIGMA_KDE
    theta_llm: float = 0.0
    metrics: tuple = CRITERIA
    U: float = DEFAULT_U
    tracking_radius: float = TRACKING_RADIUS
    seed: int = 0
    background_cap: int | None = None
    workers: int = 1

    def __post_init__(self):
        for v in self.variants:
            Variant(v)
        for combo in self.filter_combos:
            filter_set(combo)
        for d in self.detectors:
            if d not in ("cc", "llm", "kde"):
                raise ValueError(f"unknown detector {d!r}")
        for m in self.metrics:
            if m not in CRITERIA:
                raise ValueError(f"unknown metric {m!r}")
        if any(not 0 < s < 20 for s in self.sigma_cc):
            raise ValueError("sigma_cc values must lie in (0, 20)")
        if any(not 0 <= s < 20 for s in self.sigma_llm):
            raise ValueError("sigma_llm values must lie in [0, 20)")
        if any(not 0 < s < 10 for s in self.sigma_kde):
            raise ValueError("sigma_kde values must lie in (0, 10)")
        if not self.U > 0 or self.w < 1 or any(t < 1 for t in self.T_values):
            raise ValueError("U, w and T must be positive")

    def use_full_grid(self) -> "GridSearchConfig":
        self.sigma_cc, self.sigma_llm, self.sigma_kde = FULL_SIGMA_CC, FULL_SIGMA_LLM, FULL_SIGMA_KDE
        return self

    @classmethod
    def from_mapping(cls, d: dict) -> "GridSearchConfig":
        """Build from string values as found in a key=value config file."""
        types = {f.name: f for f in fields(cls)}
        kw: dict = {}
        full = False
        for key, raw in d.items():
            if key == "full_grid":
                full = _parse_bool(raw)
                continue
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            default = getattr(cls(), key)
            kw[key] = _coerce(raw, default, key)
        cfg = cls(**kw)
        return cfg.use_full_grid() if full else cfg

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def detector_cells(self) -> list:
        cells = []
        if "cc" in self.detectors:
            cells += [CCDetector(s) for s in self.sigma_cc]
        if "llm" in self.detectors:
            cells += [LLMDetector(s, self.theta_llm) for s in self.sigma_llm]
        if "kde" in self.detectors:
            cells += [KDEDetector(s, k, self.theta_llm) for s in self.sigma_llm
                      for k in self.sigma_kde]
        return cells


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    v = str(raw).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _coerce(raw, default, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if key in ("T_values",):
                return tuple(int(s) for s in items)
            if key.startswith("sigma"):
                return tuple(float(s) for s in items)
            return tuple(items)
        if key == "background_cap":
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"bad value {raw!r} for {key}") from None
    return raw


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    T: int
    w: int
    variant: str
    filters: str

    @property
    def model_id(self) -> str:
        return f"{self.variant}-{self.filters}-T{self.T}-w{self.w}"

    def seed(self, base: int) -> int:
        return (base * 1_000_003 + zlib.crc32(self.model_id.encode())) % 2**32


def model_specs(cfg: GridSearchConfig) -> list[ModelSpec]:
    return [ModelSpec(T, cfg.w, v, f) for v in cfg.variants for f in cfg.filter_combos
            for T in cfg.T_values]


def run_training(data, T: int, w: int, variant="full", filters="N", seed: int = 0,
                 out_path=None, background_cap=None, workers: int = 1) -> StrongClassifier:
    """Train on the train split only and optionally write the model file."""
    access = data if isinstance(data, DataAccess) else DataAccess(data)
    with access.phase("train"):
        pairs = access.pairs("train")
    rng = np.random.default_rng(seed)
    ts = TrainingSet.from_pairs([(img, mask) for _, img, mask in pairs], background_cap, rng)
    model = train(ts, T, w, Variant(variant), filter_set(filters), rng, seed=seed,
                  workers=workers)
    model.metadata["filter_combo"] = filters
    model.metadata["train_images"] = [i for i, _, _ in pairs]
    for entry in model.history:
        log.info("round %d: r=%.6g alpha=%.6g Z=%.6g", entry["round"], entry["r"],
                 entry["alpha"], entry["z"])
    if out_path is not None:
        model.save(out_path)
    return model


def train_models(access: DataAccess, cfg: GridSearchConfig, out_dir=None) -> dict:
    models = {}
    for spec in model_specs(cfg):
        path = None if out_dir is None else Path(out_dir) / f"{spec.model_id}.json"
        models[spec.model_id] = run_training(access, spec.T, spec.w, spec.variant, spec.filters,
                                             spec.seed(cfg.seed), path, cfg.background_cap,
                                             cfg.workers)
    return models


# -- grid search ---------------------------------------------------------------

class OracleDetector:
    """Emits the ground-truth object centroids; useful as a sanity reference."""

    name = "oracle"

    def __init__(self, gts: dict):
        from .detectors import Detection
        self._dets = {k: [Detection(float(x), float(y), 1.0) for x, y in g.centroids]
                      for k, g in gts.items()}

    def params(self):
        return ()

    def detect(self, conf, image_id=None):
        return list(self._dets[image_id])


def confidence_images(model, pairs, cache_dir=None, model_id=None) -> dict:
    """Per-image confidence, computed once per model (optionally cached as .npy)."""
    out = {}
    for image_id, img, _ in pairs:
        path = None
        if cache_dir is not None and model_id is not None:
            path = Path(cache_dir) / f"{model_id}__{image_id}.npy"
            if path.exists():
                out[image_id] = np.load(path)
                continue
        conf = model.predict_confidence(img)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, conf)
        out[image_id] = conf
    return out


def _evaluate_cells(confs: dict, gts: dict, cells, cfg: GridSearchConfig):
    criteria = {m: make_criterion(m, cfg.tracking_radius if m == "tracking" else None)
                for m in cfg.metrics}
    ids = list(gts)
    gt_list = [gts[i] for i in ids]
    rows = []
    for det in cells:
        dets = [det.detect(confs[i], i) for i in ids]
        for m, crit in criteria.items():
            curve = build_roc(dets, gt_list, crit, cfg.U)
            rows.append({"detector": det.name, "params": list(det.params()),
                         "label": detector_label(det), "metric": m, "aroc": aroc(curve)})
    return rows


def _best_key(row):
    return (-row["aroc"], row["params"], row["detector"], row["model"])


def run_grid_search(access: DataAccess, cfg: GridSearchConfig, models: dict,
                    extra_detectors=(), cache_dir=None) -> dict:
    """Score every (model, detector cell, metric) on the validation split."""
    with access.phase("validation"):
        pairs = access.pairs("validation")
    gts = {i: GroundTruth(m) for i, _, m in pairs}
    cells = cfg.detector_cells() + list(extra_detectors)
    rows = []
    for model_id, model in models.items():
        confs = confidence_images(model, pairs, cache_dir, model_id)
        for row in _evaluate_cells(confs, gts, cells, cfg):
            rows.append({"model": model_id, **row})
    best = {}
    for m in cfg.metrics:
        cand = [r for r in rows if r["metric"] == m]
        if cand:
            best[m] = min(cand, key=_best_key)
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "models": {k: getattr(v, "metadata", {}) for k, v in models.items()},
        "validation_images": sorted(gts),
        "rows": rows,
        "best": best,
    }


def detector_from_row(row, extra_detectors=()):
    p = row["params"]
    if row["detector"] == "cc":
        return CCDetector(*p)
    if row["detector"] == "llm":
        return LLMDetector(*p)
    if row["detector"] == "kde":
        return KDEDetector(*p)
    for d in extra_detectors:
        if d.name == row["detector"] and list(d.params()) == p:
            return d
    raise ValueError(f"cannot rebuild detector {row['label']}")


def run_test(report: dict, access: DataAccess, models: dict, extra_detectors=(),
             out_dir=None) -> dict:
    """Apply each metric's validated best cell to the test split."""
    access.manifest.check_disjoint()
    access.audit()
    if access.touched("test"):
        raise SplitLeakageError("test images were read before the test phase")
    test_ids = {e.image_id for e in access.manifest.split("test")}
    seen = access.touched("train") | access.touched("validation")
    if test_ids & seen:
        raise SplitLeakageError(f"test image {sorted(test_ids & seen)[0]} used earlier")
    if not report.get("best"):
        raise ValueError("report has no selected configuration")
    with access.phase("test"):
        pairs = access.pairs("test")
    gts = {i: GroundTruth(m) for i, _, m in pairs}
    cfg = report["config"]
    results = {}
    for metric, row in report["best"].items():
        model = models[row["model"]]
        det = detector_from_row(row, extra_detectors)
        confs = confidence_images(model, pairs)
        ids = list(gts)
        dets = [det.detect(confs[i], i) for i in ids]
        crit = make_criterion(metric, cfg["tracking_radius"] if metric == "tracking" else None)
        curve = build_roc(dets, [gts[i] for i in ids], crit, cfg["U"])
        results[metric] = {"model": row["model"], "detector": row["label"],
                           "aroc": aroc(curve), "validation_aroc": row["aroc"],
                           "curve": {"threshold": curve.thresholds.tolist(),
                                     "fp_per_image": curve.fp_per_image.tolist(),
                                     "tp_rate": curve.tp_rate.tolist()}}
        if out_dir is not None:
            curve.to_csv(Path(out_dir) / f"roc_test_{metric}.csv")
    access.audit()
    return results


# -- reports ------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def dump_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def write_report(path, report: dict) -> None:
    Path(path).write_text(dump_report(report))


def roc_svg(curves: dict, U: float, title: str = "", width: int = 480, height: int = 360) -> str:
    """Minimal line plot of ROC curves (fp per image on x, tp rate on y)."""
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    ml, mr, mt, mb = 50, 150, 30, 40
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + pw * min(v, U) / U

    def sy(v):
        return mt + ph * (1.0 - v)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
             f'<text x="{ml}" y="{mt - 10}" font-size="13">{title}</text>',
             f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" font-size="11" '
             f'text-anchor="middle">false positives per image</text>',
             f'<text x="12" y="{mt + ph / 2:.1f}" font-size="11" '
             f'transform="rotate(-90 12 {mt + ph / 2:.1f})" text-anchor="middle">TP rate</text>']
    for tick in range(0, 6):
        fx, fy = U * tick / 5, tick / 5
        parts.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 14}" font-size="10" '
                     f'text-anchor="middle">{fx:g}</text>')
        parts.append(f'<text x="{ml - 5}" y="{sy(fy) + 3:.1f}" font-size="10" '
                     f'text-anchor="end">{fy:g}</text>')
    for n, (label, curve) in enumerate(curves.items()):
        col = colours[n % len(colours)]
        xs = list(curve.fp_per_image) + [U]
        ys = list(curve.tp_rate) + [curve.tp_rate[-1]]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        parts.append(f'<text x="{ml + pw + 8}" y="{mt + 14 + 14 * n}" font-size="10" '
                     f'fill="{col}">{label} AROC={aroc(curve):.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class Timer:
    marks: dict = field(default_factory=dict)

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.marks[name] = time.perf_counter() - self.t

        return _Ctx()


def run_experiment(manifest_path, cfg: GridSearchConfig, out_dir, extra_detectors=()) -> dict:
    """Train every model, grid-search on validation, evaluate on test, write outputs."""
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    access = DataAccess(Manifest.load(manifest_path))
    timer = Timer()
    with timer("train"):
        models = train_models(access, cfg, out / "models")
    with timer("gridsearch"):
        report = run_grid_search(access, cfg, models, extra_detectors, out / "conf_cache")
    with timer("test"):
        report["test"] = run_test(report, access, models, extra_detectors, out)
    report["access_log"] = [list(x) for x in access.log]
    write_report(out / "report.json", report)
    write_outputs(report, out)
    (out / "timing.json").write_text(json.dumps(timer.marks, indent=2, sort_keys=True) + "\n")
    return report


def write_outputs(report: dict, out_dir) -> None:
    """ROC CSVs are written by run_test; this adds the summary lines and SVG plots."""
    from .metrics import RocCurve
    out = Path(out_dir)
    lines = []
    for metric, res in report.get("test", {}).items():
        c = res["curve"]
        curve = RocCurve(np.array(c["threshold"], dtype=float), np.array(c["fp_per_image"]),
                         np.array(c["tp_rate"]), report["config"]["U"])
        (out / f"roc_test_{metric}.svg").write_text(
            roc_svg({f"{res['model']} {res['detector']}": curve}, curve.U, f"test: {metric}"))
        lines.append(f"{metric}: AROC={res['aroc']!r}")
    (out / "summary.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
