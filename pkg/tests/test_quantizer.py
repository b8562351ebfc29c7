"""k-means fitting, assignment, dedup, and the ULMC format."""

import numpy as np
import pytest

from unitprompt import quantizer
from unitprompt.errors import CodebookFileError, QuantizerError
from unitprompt.featio import FeatureMatrix
from unitprompt.quantizer import UnitSequence


def make_blobs(centers, sigma, per_blob, seed):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    points = np.concatenate([
        c + rng.normal(0, sigma, size=(per_blob, centers.shape[1])) for c in centers
    ])
    truth = np.repeat(np.arange(len(centers)), per_blob)
    return points, truth


class TestKmeansFit:
    def test_exact_fit_on_k_distinct_points(self):
        points = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
        cb = quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=4, seed=0)
        assert cb.inertia == 0.0
        got = {tuple(row) for row in cb.centroids}
        assert got == {tuple(row) for row in points}

    def test_duplicate_points_rejected(self):
        points = np.tile([[1.0, 2.0]], (100, 1))
        with pytest.raises(QuantizerError, match="fewer distinct points than k"):
            quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=2, seed=0)

    def test_blob_recovery(self):
        centers = [[0, 0, 0], [6, 0, 0], [0, 6, 6]]
        points, truth = make_blobs(centers, sigma=0.05, per_blob=100, seed=4)
        cb = quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=3, seed=1)
        # each fitted centroid must sit within 0.05 of one true center
        for row in cb.centroids:
            dists = np.linalg.norm(np.asarray(centers, float) - row, axis=1)
            assert dists.min() < 0.05
        units = quantizer.kmeans_assign(FeatureMatrix(points, 50.0), cb)
        # assignments must match blob membership up to a relabeling
        mapping = {}
        for blob in range(3):
            values, counts = np.unique(units.units[truth == blob], return_counts=True)
            mapping[blob] = values[counts.argmax()]
        assert len(set(mapping.values())) == 3
        agreement = np.mean([mapping[t] == u for t, u in zip(truth, units.units)])
        assert agreement >= 0.99

    def test_inertia_history_non_increasing(self):
        rng = np.random.default_rng(9)
        points = rng.normal(size=(300, 4))
        cb = quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=12, seed=3)
        history = np.array(cb.inertia_history)
        assert len(history) >= 2
        assert np.all(np.diff(history) <= 0.0)
        assert cb.inertia == history[-1]

    def test_seed_determinism(self):
        rng = np.random.default_rng(10)
        points = rng.normal(size=(200, 3))
        a = quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=7, seed=42)
        b = quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=7, seed=42)
        np.testing.assert_array_equal(a.centroids, b.centroids)
        assert a.inertia == b.inertia

    def test_fewer_frames_than_k(self):
        with pytest.raises(QuantizerError, match="fewer than k"):
            quantizer.kmeans_fit(FeatureMatrix(np.eye(3), 50.0), k=5, seed=0)

    def test_empty_clusters_reseeded_to_farthest_points(self, monkeypatch):
        # degenerate init: all centroids identical, so two clusters start
        # empty and must be re-seeded during the first update
        points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0],
                           [10.0, 1.0], [20.0, 0.0], [20.0, 1.0]])
        monkeypatch.setattr(quantizer, "_kmeans_pp_init",
                            lambda x, k, rng: np.tile(x[0], (k, 1)))
        cb = quantizer.kmeans_fit(FeatureMatrix(points, 50.0), k=3, seed=0)
        assert len({tuple(row) for row in cb.centroids}) == 3
        assert np.all(np.diff(cb.inertia_history) <= 0.0)
        units = quantizer.kmeans_assign(FeatureMatrix(points, 50.0), cb)
        assert len(set(units.units.tolist())) == 3  # no cluster left empty

    def test_dimension_mismatch_across_matrices(self):
        mats = [FeatureMatrix(np.ones((4, 3)), 50.0), FeatureMatrix(np.ones((4, 2)), 50.0)]
        with pytest.raises(QuantizerError, match="dimension mismatch"):
            quantizer.kmeans_fit(mats, k=2, seed=0)


class TestAssign:
    def test_frames_equal_to_centroids(self):
        cb = quantizer.Codebook(np.array([[0.0, 0], [1, 0], [2, 0]]), 0.0, 0)
        frames = FeatureMatrix(np.array([[2.0, 0], [0, 0], [1, 0]]), 50.0)
        units = quantizer.kmeans_assign(frames, cb)
        np.testing.assert_array_equal(units.units, [2, 0, 1])

    def test_equidistant_tie_breaks_low(self):
        centroids = np.array([[0.0, 0], [9, 9], [8, 8], [2, 0]])
        cb = quantizer.Codebook(centroids, 0.0, 0)
        units = quantizer.kmeans_assign(FeatureMatrix(np.array([[1.0, 0]]), 50.0), cb)
        assert units.units[0] == 0

    def test_matches_bruteforce_scan(self):
        rng = np.random.default_rng(6)
        frames = rng.normal(size=(150, 5))
        centroids = rng.normal(size=(11, 5))
        cb = quantizer.Codebook(centroids, 0.0, 0)
        units = quantizer.kmeans_assign(FeatureMatrix(frames, 50.0), cb)
        for t in range(len(frames)):
            dists = [np.sum((frames[t] - c) ** 2) for c in centroids]
            assert units.units[t] == int(np.argmin(dists))

    def test_dimension_mismatch(self):
        cb = quantizer.Codebook(np.ones((2, 4)), 0.0, 0)
        with pytest.raises(QuantizerError, match="dimension mismatch"):
            quantizer.kmeans_assign(FeatureMatrix(np.ones((3, 3)), 50.0), cb)


class TestDedup:
    def test_collapses_runs(self):
        s = UnitSequence([1, 1, 2, 2, 2, 3])
        np.testing.assert_array_equal(quantizer.dedup_units(s).units, [1, 2, 3])

    def test_singleton(self):
        s = UnitSequence([5])
        np.testing.assert_array_equal(quantizer.dedup_units(s).units, [5])

    def test_idempotent_and_no_adjacent_equal(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            s = UnitSequence(rng.integers(0, 4, size=rng.integers(1, 60)))
            once = quantizer.dedup_units(s)
            twice = quantizer.dedup_units(once)
            np.testing.assert_array_equal(once.units, twice.units)
            assert not np.any(once.units[1:] == once.units[:-1])

    def test_preserves_identity_fields(self):
        s = UnitSequence([3, 3, 1], patient_id="p7", segment_index=4)
        out = quantizer.dedup_units(s)
        assert out.patient_id == "p7" and out.segment_index == 4


class TestCodebookFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        centroids = rng.normal(size=(6, 4)).astype(np.float32).astype(np.float64)
        cb = quantizer.Codebook(centroids, 12.5, 99)
        path = tmp_path / "cb.ulmc"
        quantizer.write_codebook(cb, path)
        again = quantizer.read_codebook(path)
        np.testing.assert_array_equal(again.centroids, centroids)
        assert again.inertia == 12.5 and again.rng_seed == 99

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ulmc"
        path.write_bytes(b"WHAT" + b"\x00" * 40)
        with pytest.raises(CodebookFileError, match="bad magic"):
            quantizer.read_codebook(path)

    def test_truncated(self, tmp_path):
        cb = quantizer.Codebook(np.ones((4, 4)), 1.0, 0)
        path = tmp_path / "t.ulmc"
        quantizer.write_codebook(cb, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CodebookFileError, match="truncated payload"):
            quantizer.read_codebook(path)


def test_unit_sequence_validation():
    with pytest.raises(QuantizerError):
        UnitSequence([])
    with pytest.raises(QuantizerError):
        UnitSequence([-1, 2])
    with pytest.raises(QuantizerError):
        UnitSequence([1], segment_index=-2)
