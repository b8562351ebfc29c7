"""Backend agreement tests: the compiled kernels and the numpy fallback
must implement identical contracts."""

import numpy as np
import pytest

from unitprompt import kernels

BACKENDS = sorted(kernels.backends())


def all_backends(test):
    return pytest.mark.parametrize("backend", BACKENDS)(test)


@all_backends
def test_nearest_centroids_matches_bruteforce(backend):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(400, 12))
    c = rng.normal(size=(25, 12))
    labels, dists = kernels.nearest_centroids(x, c, impl=kernels.backends()[backend])
    # independent oracle: full distance table, first-minimum argmin
    table = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(labels, table.argmin(axis=1))
    np.testing.assert_allclose(dists, table.min(axis=1), rtol=1e-12, atol=1e-12)


@all_backends
def test_nearest_centroids_tie_breaks_to_lowest_index(backend):
    c = np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 9.0], [2.0, 0.0]])
    x = np.array([[1.0, 0.0]])  # exactly between centroids 0 and 3
    labels, dists = kernels.nearest_centroids(x, c, impl=kernels.backends()[backend])
    assert labels[0] == 0
    assert dists[0] == 1.0


def test_backends_agree_on_random_data():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3000, 9))
    c = rng.normal(size=(40, 9))
    results = {
        name: kernels.nearest_centroids(x, c, impl=impl)
        for name, impl in kernels.backends().items()
    }
    ref_labels, ref_dists = results[BACKENDS[0]]
    for labels, dists in results.values():
        np.testing.assert_array_equal(labels, ref_labels)
        np.testing.assert_allclose(dists, ref_dists, rtol=1e-10)


@all_backends
def test_cluster_sums_matches_oracle(backend):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(500, 6))
    labels = rng.integers(0, 10, size=500).astype(np.int32)
    sums, counts = kernels.cluster_sums(x, labels, 10, impl=kernels.backends()[backend])
    for j in range(10):
        np.testing.assert_allclose(sums[j], x[labels == j].sum(axis=0), atol=1e-10)
        assert counts[j] == int(np.sum(labels == j))


@all_backends
def test_markov_walk_matches_reference(backend):
    rng = np.random.default_rng(5)
    k = 8
    transition = rng.dirichlet(np.ones(k), size=k)
    start = rng.dirichlet(np.ones(k))
    uniforms = rng.random(200)
    out = kernels.markov_walk(transition, start, uniforms, impl=kernels.backends()[backend])

    # reference: same draw rule, written independently with searchsorted
    cum = np.cumsum(transition, axis=1)
    state = min(int(np.searchsorted(np.cumsum(start), uniforms[0], side="right")), k - 1)
    expected = [state]
    for u in uniforms[1:]:
        state = min(int(np.searchsorted(cum[state], u, side="right")), k - 1)
        expected.append(state)
    np.testing.assert_array_equal(out, expected)
    assert out.min() >= 0 and out.max() < k


def test_markov_walk_backends_agree():
    rng = np.random.default_rng(19)
    transition = rng.dirichlet(np.full(12, 0.4), size=12)
    start = np.full(12, 1 / 12)
    uniforms = rng.random(1000)
    walks = [kernels.markov_walk(transition, start, uniforms, impl=impl)
             for impl in kernels.backends().values()]
    for walk in walks[1:]:
        np.testing.assert_array_equal(walk, walks[0])


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="dimension mismatch"):
        kernels.nearest_centroids(np.zeros((4, 3)), np.zeros((2, 5)))
