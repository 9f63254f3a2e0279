import numpy as np
import pytest

from pointcover.geometry import load_entry, read_manifest
from pointcover.synth import SHAPES, make_cloud, shape_points, synthesize_dataset


class TestShapePoints:
    def test_sphere_radius_exact(self):
        pts = shape_points("sphere", 500, np.random.default_rng(0))
        radii = np.linalg.norm(pts, axis=1)
        assert np.abs(radii - 0.5).max() < 1e-9

    @pytest.mark.parametrize("kind", SHAPES)
    def test_all_shapes_generate(self, kind):
        pts = shape_points(kind, 200, np.random.default_rng(1))
        assert pts.shape == (200, 3)
        assert np.isfinite(pts).all()
        assert np.abs(pts).max() <= 0.75  # canonical shapes stay near the origin

    def test_unknown_shape(self):
        with pytest.raises(ValueError):
            shape_points("teapot", 10, np.random.default_rng(0))

    def test_plane_is_flat_before_pose(self):
        pts = shape_points("plane", 100, np.random.default_rng(2))
        assert not pts[:, 2].any()

    def test_make_cloud_applies_noise(self):
        a = make_cloud("sphere", 300, 0.0, np.random.default_rng(3))
        radii = np.linalg.norm(a - a.mean(axis=0), axis=1)
        assert radii.std() < 0.05  # rotation+scale jitter only
        b = make_cloud("sphere", 300, 0.05, np.random.default_rng(3))
        assert not np.array_equal(a, b)


class TestSynthesizeDataset:
    def test_file_and_manifest_counts(self, tmp_path):
        manifest = synthesize_dataset(tmp_path, classes=3, per_class=40, points=64,
                                      noise=0.01, seed=1)
        entries = read_manifest(manifest)
        assert len(entries) == 120
        assert len(list(tmp_path.glob("*.xyz"))) == 120
        assert sorted({e.class_label for e in entries}) == [1, 2, 3]

    def test_deterministic_files(self, tmp_path):
        m1 = synthesize_dataset(tmp_path / "a", classes=2, per_class=3, points=32,
                                noise=0.02, seed=9)
        m2 = synthesize_dataset(tmp_path / "b", classes=2, per_class=3, points=32,
                                noise=0.02, seed=9)
        for e1, e2 in zip(read_manifest(m1), read_manifest(m2)):
            assert e1.path == e2.path and e1.class_label == e2.class_label
            assert (m1.parent / e1.path).read_bytes() == (m2.parent / e2.path).read_bytes()

    def test_too_many_classes(self, tmp_path):
        with pytest.raises(ValueError, match="classes"):
            synthesize_dataset(tmp_path, classes=7, per_class=1, points=8, noise=0.0, seed=0)

    def test_entries_load_back(self, tmp_path):
        manifest = synthesize_dataset(tmp_path, classes=2, per_class=2, points=50,
                                      noise=0.01, seed=3)
        for entry in read_manifest(manifest):
            cloud = load_entry(entry, tmp_path)
            assert cloud.n == 50 and cloud.d == 3
            assert cloud.class_label == entry.class_label
