"""Command-line interface: ``gramdet <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .boost import StrongClassifier
from .dataset import DataAccess, Manifest
from .detectors import (CCDetector, KDEDetector, LLMDetector, read_detections_csv,
                        write_detections_csv)
from .grammar import Variant
from .imageio import load_image, load_mask
from .metrics import CRITERIA, DEFAULT_U, GroundTruth, aroc, build_roc, make_criterion
from .pipeline import (GridSearchConfig, read_config, roc_svg, run_experiment, run_grid_search,
                       run_test, run_training, write_outputs, write_report)
from .postfilter import FILTER_COMBINATIONS
from .synth import SceneSpec, generate_dataset

log = logging.getLogger("gramdet")


def _grid_config(args) -> GridSearchConfig:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in ("T_values", "w", "variants", "filter_combos", "detectors", "sigma_cc",
                "sigma_llm", "sigma_kde", "metrics", "U", "seed", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "full_grid", False):
        values["full_grid"] = "true"
    return GridSearchConfig.from_mapping(values)


def _add_grid_flags(p):
    p.add_argument("--config", help="key = value file with grid settings")
    p.add_argument("--T-values", dest="T_values", help="comma list, e.g. 10,25")
    p.add_argument("--w", help="programs sampled per round")
    p.add_argument("--variants", "--feature-set", dest="variants",
                   help="comma list of full,haar,no-morph,no-haar")
    p.add_argument("--filter-combos", dest="filter_combos",
                   help=f"comma list of {','.join(FILTER_COMBINATIONS)}")
    p.add_argument("--detectors", help="comma list of cc,llm,kde")
    p.add_argument("--sigma-cc", dest="sigma_cc")
    p.add_argument("--sigma-llm", dest="sigma_llm")
    p.add_argument("--sigma-kde", dest="sigma_kde")
    p.add_argument("--metrics", help="comma list of cueing,tracking,counting")
    p.add_argument("--U", help="ROC truncation in false positives per image")
    p.add_argument("--seed")
    p.add_argument("--workers", help="threads for candidate evaluation")
    p.add_argument("--full-grid", action="store_true", help="use the exhaustive sigma grids")


def cmd_synth(args):
    spec = SceneSpec.from_dict(dict(
        (k, v) for k, v in (("size", args.size), ("n_objects", args.objects),
                            ("n_confusers", args.confusers), ("noise", args.noise),
                            ("occlusion", args.occlusion)) if v is not None))
    splits = tuple(int(s) for s in args.splits.split(","))
    m = generate_dataset(args.out, spec, sum(splits), splits, args.seed)
    print(f"wrote {len(m.entries)} images to {args.out} ({m.counts()})")


def cmd_train(args):
    model = run_training(Manifest.load(args.manifest), args.T, args.w, args.variant,
                         args.filters, args.seed, args.out, args.background_cap, args.workers)
    for h in model.history:
        print(f"round {h['round']}: r={h['r']:.6f} alpha={h['alpha']:.6f} Z={h['z']:.6f} "
              f"loss={h['loss']:.6g} error={h['error']:.6g}")
    print(f"model written to {args.out}")


def cmd_gridsearch(args):
    cfg = _grid_config(args)
    access = DataAccess(Manifest.load(args.manifest))
    models = {Path(p).stem: StrongClassifier.load(p) for p in args.models}
    report = run_grid_search(access, cfg, models, cache_dir=args.cache)
    write_report(args.out, report)
    for metric, row in report["best"].items():
        print(f"{metric}: best {row['model']} {row['label']} AROC={row['aroc']!r}")


def cmd_test(args):
    report = json.loads(Path(args.report).read_text())
    access = DataAccess(Manifest.load(args.manifest))
    models = {Path(p).stem: StrongClassifier.load(p) for p in args.models}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report["test"] = run_test(report, access, models, out_dir=out)
    write_report(out / "report.json", report)
    write_outputs(report, out)
    for metric, res in report["test"].items():
        print(f"{metric}: AROC={res['aroc']!r}")


def cmd_run(args):
    cfg = _grid_config(args)
    report = run_experiment(args.manifest, cfg, args.out)
    for metric, res in report["test"].items():
        print(f"{metric}: {res['model']} {res['detector']} test AROC={res['aroc']!r}")


def _detector(args):
    if args.detector == "cc":
        return CCDetector(args.sigma)
    if args.detector == "llm":
        return LLMDetector(args.sigma, args.theta)
    return KDEDetector(args.sigma, args.sigma_kde, args.theta)


def cmd_detect(args):
    model = StrongClassifier.load(args.model)
    det = _detector(args)
    out = {}
    for path in args.images:
        conf = model.predict_confidence(load_image(path))
        out[Path(path).stem] = det.detect(conf, Path(path).stem)
    write_detections_csv(args.out, out)
    print(f"{sum(len(v) for v in out.values())} detections written to {args.out}")


def cmd_eval(args):
    dets = read_detections_csv(args.detections)
    masks = {Path(p).stem: p for p in args.masks}
    ids = sorted(masks)
    gts = [GroundTruth(load_mask(masks[i])) for i in ids]
    curve = build_roc([dets.get(i, []) for i in ids], gts,
                      make_criterion(args.metric, args.radius), args.U)
    if args.roc:
        curve.to_csv(args.roc)
    if args.svg:
        Path(args.svg).write_text(roc_svg({args.metric: curve}, args.U, args.metric))
    print(f"AROC={aroc(curve)!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gramdet", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", default="10,5,5", help="train,validation,test image counts")
    p.add_argument("--size", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--confusers", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--occlusion", type=float)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one pixel classifier")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--w", type=int, default=100)
    p.add_argument("--variant", "--feature-set", dest="variant", default="full",
                   choices=[v.value for v in Variant])
    p.add_argument("--filters", default="N", choices=FILTER_COMBINATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--background-cap", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gridsearch", help="validate trained models over detector grids")
    p.add_argument("manifest")
    p.add_argument("models", nargs="+")
    p.add_argument("--out", required=True, help="report file")
    p.add_argument("--cache", help="directory for cached confidence images")
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_gridsearch)

    p = sub.add_parser("test", help="evaluate the validated best cells on the test split")
    p.add_argument("manifest")
    p.add_argument("report")
    p.add_argument("models", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_test)

    p = sub.add_parser("run", help="train, grid-search and test in one go")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("detect", help="write detections for images")
    p.add_argument("model")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--detector", choices=("cc", "llm", "kde"), default="llm")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--sigma-kde", type=float, default=2.0)
    p.add_argument("--theta", type=float, default=0.0)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("eval", help="ROC and AROC of a detections file")
    p.add_argument("detections")
    p.add_argument("masks", nargs="+", help="mask files; file stems are the image ids")
    p.add_argument("--metric", choices=CRITERIA, default="counting")
    p.add_argument("--radius", type=float)
    p.add_argument("--U", type=float, default=DEFAULT_U)
    p.add_argument("--roc", help="write the ROC CSV here")
    p.add_argument("--svg", help="write an SVG plot here")
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"gramdet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

