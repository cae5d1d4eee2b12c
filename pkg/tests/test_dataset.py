import numpy as np
import pytest
from PIL import Image

from batk.dataset import ManifestError, load_manifest, load_png, save_png
from batk.tensor import DOMAIN_01, DOMAIN_255


def write_png(path, arr_uint8):
    Image.fromarray(arr_uint8, mode="RGB").save(path)


class TestManifest:
    def test_load(self, tmp_path, rng):
        for name in ("a.png", "b.png"):
            write_png(tmp_path / name, rng.integers(0, 256, (4, 4, 3), dtype=np.uint8))
        (tmp_path / "manifest.csv").write_text("path,label\na.png,0\nb.png,2\n")
        man = load_manifest(tmp_path / "manifest.csv")
        assert [(p.name, l) for p, l in man.entries] == [("a.png", 0), ("b.png", 2)]

    def test_label_names_sidecar(self, tmp_path, rng):
        write_png(tmp_path / "a.png", rng.integers(0, 256, (4, 4, 3), dtype=np.uint8))
        (tmp_path / "manifest.csv").write_text("a.png,1\n")
        (tmp_path / "labels.txt").write_text("cat\ndog\n")
        man = load_manifest(tmp_path / "manifest.csv")
        assert man.label_names == ["cat", "dog"]

    def test_bad_label(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("a.png,kitten\n")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "manifest.csv")

    def test_empty(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "manifest.csv")


class TestPngIO:
    def test_decode_255_domain_keeps_values(self, tmp_path, rng):
        raw = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
        write_png(tmp_path / "x.png", raw)
        arr = load_png(tmp_path / "x.png", DOMAIN_255)
        assert arr.dtype == np.float32
        np.testing.assert_array_equal(arr, raw.astype(np.float32))

    def test_decode_unit_domain_scales(self, tmp_path, rng):
        raw = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        write_png(tmp_path / "x.png", raw)
        arr = load_png(tmp_path / "x.png", DOMAIN_01)
        np.testing.assert_allclose(arr, raw / 255.0, atol=1e-7)
        assert arr.max() <= 1.0

    def test_save_round_trip_within_half_step(self, tmp_path, rng):
        img = rng.uniform(0, 255, (6, 6, 3)).astype(np.float32)
        save_png(tmp_path / "y.png", img, DOMAIN_255)
        back = load_png(tmp_path / "y.png", DOMAIN_255)
        assert np.abs(back - img).max() <= 0.5

    def test_save_unit_domain(self, tmp_path, rng):
        img = rng.uniform(0, 1, (6, 6, 3)).astype(np.float32)
        save_png(tmp_path / "y.png", img, DOMAIN_01)
        back = load_png(tmp_path / "y.png", DOMAIN_01)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7

    def test_save_clips_out_of_range(self, tmp_path):
        img = np.array([[[300.0, -5.0, 128.0]]], np.float32)
        save_png(tmp_path / "z.png", img, DOMAIN_255)
        back = load_png(tmp_path / "z.png", DOMAIN_255)
        np.testing.assert_array_equal(back, [[[255.0, 0.0, 128.0]]])
