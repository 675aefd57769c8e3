import numpy as np
import pytest
from scipy import ndimage

from gramdet.imageio import load_mask
from gramdet.raster import Label
from gramdet.synth import SceneSpec, generate_dataset, render_scene


def files_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestRender:
    def test_object_count(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            img, lab, placed = render_scene(SceneSpec(), rng)
            assert placed == 10
            _, n = ndimage.label(lab == Label.OBJECT, structure=np.ones((3, 3)))
            assert n == 10
            assert img.shape == lab.shape == (128, 128)

    def test_confuser_present(self):
        _, lab, _ = render_scene(SceneSpec(), np.random.default_rng(1))
        assert (lab == Label.CONFUSER).sum() >= 35 * 35

    def test_zero_noise_separable(self):
        rng = np.random.default_rng(2)
        for _ in range(3):
            img, lab, _ = render_scene(SceneSpec(noise=0.0), rng)
            obj = img[lab == Label.OBJECT]
            bg = img[lab == Label.BACKGROUND]
            assert obj.min() > bg.max()

    def test_car_size(self):
        _, lab, _ = render_scene(SceneSpec(occlusion=0.0), np.random.default_rng(3))
        inst, n = ndimage.label(lab == Label.OBJECT, structure=np.ones((3, 3)))
        sizes = np.bincount(inst.ravel())[1:]
        # semi-axes about 4 x 2 -> area near pi * 8
        assert np.all((sizes > 15) & (sizes < 40))

    def test_crowded_scene_warns(self, caplog):
        spec = SceneSpec(size=16, n_objects=30, n_confusers=0)
        _, _, placed = render_scene(spec, np.random.default_rng(0))
        assert placed < 30
        assert "placed" in caplog.text

    @pytest.mark.parametrize("bad", [dict(size=8), dict(noise=-1.0), dict(occlusion=2.0),
                                     dict(colour=3)])
    def test_invalid_spec(self, bad):
        with pytest.raises((ValueError, TypeError)):
            SceneSpec.from_dict(bad)


class TestGenerate:
    def test_byte_identical(self, tmp_path):
        spec = SceneSpec(size=48, n_objects=3)
        generate_dataset(tmp_path / "a", spec, 4, (2, 1, 1), seed=9)
        generate_dataset(tmp_path / "b", spec, 4, (2, 1, 1), seed=9)
        assert files_bytes(tmp_path / "a") == files_bytes(tmp_path / "b")

    def test_layout(self, tmp_path):
        m = generate_dataset(tmp_path, SceneSpec(size=48, n_objects=3), 4, (2, 1, 1), seed=0)
        assert m.counts() == {"train": 2, "validation": 1, "test": 1}
        assert (tmp_path / "manifest.csv").exists()
        lab = load_mask(m.entries[0].mask)
        assert set(np.unique(lab)) <= {0, 1, 2}

    def test_split_sum(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, SceneSpec(), 5, (2, 2, 2))
