import json

import numpy as np
import pytest

from gramdet.boost import StrongClassifier, TrainingError, WeakHypothesis
from gramdet.dataset import DataAccess, Manifest, ManifestEntry, SplitLeakageError
from gramdet.grammar import identity_program
from gramdet.metrics import GroundTruth
from gramdet.pipeline import (COARSE_SIGMA_CC, FULL_SIGMA_CC, FULL_SIGMA_KDE, FULL_SIGMA_LLM,
                              GridSearchConfig, ModelSpec, OracleDetector, _best_key,
                              dump_report, model_specs, read_config, roc_svg, run_experiment,
                              run_grid_search, run_test, run_training)
from gramdet.synth import SceneSpec, generate_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("syn")
    generate_dataset(root, SceneSpec(size=48, n_objects=3, n_confusers=0, noise=0.02), 7,
                     (3, 2, 2), seed=4)
    return root / "manifest.csv"


def stump_model(threshold=0.55):
    return StrongClassifier([(WeakHypothesis(identity_program(), threshold, 1), 1.0)])


def small_cfg(**kw):
    base = dict(T_values=(2,), w=3, variants=("full",), filter_combos=("N",),
                detectors=("cc", "llm"), sigma_cc=(1.0,), sigma_llm=(1.0,), sigma_kde=(1.0,),
                seed=1)
    base.update(kw)
    return GridSearchConfig(**base)


def validation_gts(manifest_path):
    access = DataAccess(Manifest.load(manifest_path))
    with access.phase("validation"):
        return {i: GroundTruth(m) for i, _, m in access.pairs("validation")}


class TestConfig:
    def test_grids(self):
        assert FULL_SIGMA_CC[0] == 0.2 and FULL_SIGMA_CC[-1] == 19.8 and len(FULL_SIGMA_CC) == 99
        assert FULL_SIGMA_LLM[0] == 0.0 and len(FULL_SIGMA_LLM) == 100
        assert FULL_SIGMA_KDE[0] == 0.1 and FULL_SIGMA_KDE[-1] == 9.9
        assert COARSE_SIGMA_CC == tuple(float(i) for i in range(1, 20))

    def test_from_mapping(self):
        cfg = GridSearchConfig.from_mapping({"T_values": "10, 25", "w": "25", "U": "10",
                                             "variants": "full,no-haar", "full_grid": "yes"})
        assert cfg.T_values == (10, 25) and cfg.w == 25 and cfg.U == 10.0
        assert cfg.variants == ("full", "no-haar")
        assert cfg.sigma_kde == FULL_SIGMA_KDE

    @pytest.mark.parametrize("bad", [{"variants": "everything"}, {"sigma_cc": "25"},
                                     {"detectors": "hog"}, {"w": "many"}, {"colour": "1"}])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            GridSearchConfig.from_mapping(bad)

    def test_read_config(self, tmp_path):
        p = tmp_path / "grid.cfg"
        p.write_text("# grid\nT_values = 10\n\nseed = 3  # base seed\n")
        assert read_config(p) == {"T_values": "10", "seed": "3"}
        p.write_text("nonsense\n")
        with pytest.raises(ValueError):
            read_config(p)

    def test_cells(self):
        cfg = small_cfg(detectors=("cc", "llm", "kde"), sigma_llm=(0.0, 1.0),
                        sigma_kde=(1.0, 2.0, 3.0))
        assert len(cfg.detector_cells()) == 1 + 2 + 6

    def test_model_specs_and_seeds(self):
        cfg = small_cfg(T_values=(10, 25), filter_combos=("N", "REDM"))
        specs = model_specs(cfg)
        assert len(specs) == 4
        assert ModelSpec(10, 25, "full", "N").model_id == "full-N-T10-w25"
        seeds = {s.seed(0) for s in specs}
        assert len(seeds) == 4
        assert specs[0].seed(7) == specs[0].seed(7) != specs[0].seed(8)


class TestTraining:
    def test_deterministic_model_file(self, dataset, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        m = run_training(Manifest.load(dataset), 3, 4, "full", "ED", 5, a)
        run_training(Manifest.load(dataset), 3, 4, "full", "ED", 5, b)
        assert a.read_bytes() == b.read_bytes()
        losses = [h["loss"] for h in m.history]
        assert losses == sorted(losses, reverse=True)
        assert m.metadata["train_images"] == ["scene_000", "scene_001", "scene_002"]

    def test_empty_train_split(self, dataset):
        m = Manifest.load(dataset)
        only_val = Manifest([e for e in m.entries if e.split != "train"])
        with pytest.raises(ValueError, match="empty"):
            run_training(only_val, 2, 2)

    def test_no_structure_propagates(self, tmp_path):
        from gramdet.imageio import save_image, save_mask
        save_image(tmp_path / "i.png", np.zeros((8, 8)))
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[2:4, 2:4] = 1
        save_mask(tmp_path / "m.png", mask)
        m = Manifest([ManifestEntry(tmp_path / "i.png", tmp_path / "m.png", "train")])
        with pytest.raises(TrainingError):
            run_training(m, 2, 2, "haar")


class TestGridSearch:
    def test_single_cell(self, dataset):
        cfg = small_cfg(detectors=("cc",), metrics=("counting",))
        rep = run_grid_search(DataAccess(Manifest.load(dataset)), cfg, {"m": stump_model()})
        assert len(rep["rows"]) == 1
        assert rep["best"]["counting"] == rep["rows"][0]

    def test_row_count(self, dataset):
        cfg = small_cfg(detectors=("cc",), sigma_cc=(1.0, 2.0, 3.0))
        models = {"a": stump_model(0.5), "b": stump_model(0.6)}
        rep = run_grid_search(DataAccess(Manifest.load(dataset)), cfg, models)
        for m in cfg.metrics:
            assert sum(r["metric"] == m for r in rep["rows"]) == 6

    def test_oracle_selected(self, dataset):
        cfg = small_cfg()
        oracle = OracleDetector(validation_gts(dataset))
        rep = run_grid_search(DataAccess(Manifest.load(dataset)), cfg,
                              {"m": stump_model(0.99)}, [oracle])
        for m in cfg.metrics:
            assert rep["best"][m]["detector"] == "oracle"
            assert rep["best"][m]["aroc"] == 1.0

    def test_best_is_max(self, dataset):
        cfg = small_cfg(sigma_cc=(1.0, 2.0), sigma_llm=(0.0, 1.0, 2.0))
        rep = run_grid_search(DataAccess(Manifest.load(dataset)), cfg, {"m": stump_model()})
        for m, best in rep["best"].items():
            assert best["aroc"] == max(r["aroc"] for r in rep["rows"] if r["metric"] == m)

    def test_tie_break_smaller_params(self):
        rows = [{"aroc": 0.9, "params": [2.0], "detector": "cc", "model": "a"},
                {"aroc": 0.9, "params": [1.0, 0.0], "detector": "llm", "model": "a"},
                {"aroc": 0.8, "params": [0.5], "detector": "cc", "model": "a"}]
        assert min(rows, key=_best_key) is rows[1]

    def test_only_validation_read(self, dataset):
        access = DataAccess(Manifest.load(dataset))
        run_grid_search(access, small_cfg(), {"m": stump_model()})
        assert access.touched("test") == access.touched("train") == set()


class TestRunTest:
    def report(self, dataset, access):
        cfg = small_cfg()
        oracle = OracleDetector(validation_gts(dataset))
        return run_grid_search(access, cfg, {"m": stump_model()}, [oracle]), oracle

    def test_oracle_on_test(self, dataset):
        access = DataAccess(Manifest.load(dataset))
        rep, _ = self.report(dataset, access)
        test_access = DataAccess(Manifest.load(dataset))
        with test_access.phase("test"):
            gts = {i: GroundTruth(m) for i, _, m in test_access.pairs("test")}
        oracle = OracleDetector(gts)
        for row in rep["best"].values():
            assert row["detector"] == "oracle"
        res = run_test(rep, access, {"m": stump_model()}, [oracle])
        assert all(r["aroc"] == 1.0 for r in res.values())

    def test_prior_test_read_is_leakage(self, dataset):
        access = DataAccess(Manifest.load(dataset))
        rep, oracle = self.report(dataset, access)
        with access.phase("test"):
            access.pairs("test")
        with pytest.raises(SplitLeakageError):
            run_test(rep, access, {"m": stump_model()}, [oracle])

    def test_overlapping_manifest(self, dataset):
        m = Manifest.load(dataset)
        v = m.split("validation")[0]
        with pytest.raises(SplitLeakageError):
            Manifest(m.entries + [ManifestEntry(v.image, v.mask, "test")])

    def test_needs_selection(self, dataset):
        with pytest.raises(ValueError):
            run_test({"best": {}, "config": {}}, DataAccess(Manifest.load(dataset)), {})


class TestExperiment:
    def test_end_to_end_deterministic(self, dataset, tmp_path):
        cfg = small_cfg(filter_combos=("N", "ED"), detectors=("cc", "llm", "kde"))
        a = run_experiment(dataset, cfg, tmp_path / "a")
        run_experiment(dataset, cfg, tmp_path / "b")
        for name in ("report.json", "summary.txt", "roc_test_counting.csv",
                     "roc_test_cueing.svg", "models/full-ED-T2-w3.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        doc = json.loads((tmp_path / "a" / "report.json").read_text())
        assert doc["seed"] == 1 and set(doc["test"]) == {"cueing", "tracking", "counting"}
        assert "train" in json.loads((tmp_path / "a" / "timing.json").read_text())
        assert a["access_log"][0][0] == "train"
        assert {tuple(x[:2]) for x in doc["access_log"]} == {
            ("train", "train"), ("validation", "validation"), ("test", "test")}

    def test_report_serialises_inf(self):
        text = dump_report({"x": float("inf"), "y": [np.float64(0.5)]})
        assert json.loads(text) == {"x": "inf", "y": [0.5]}

    def test_svg(self):
        from gramdet.metrics import RocCurve
        c = RocCurve(np.array([np.inf, 1.0]), np.array([0.0, 2.0]), np.array([0.0, 1.0]), 30.0)
        svg = roc_svg({"demo": c}, 30.0, "t")
        assert svg.startswith("<svg") and "polyline" in svg and "AROC=" in svg
