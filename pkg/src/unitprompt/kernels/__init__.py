"""Kernel backend selection.

The compiled Cython extension is preferred; the pure-numpy fallback is
used when the extension is missing or UNITPROMPT_FORCE_PY is set. Both
backends implement identical contracts (see _pykernels docstring);
BACKEND names the one in use.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("UNITPROMPT_FORCE_PY"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest_centroids(x, centroids, impl=None):
    """Per-row nearest centroid by squared L2; ties -> lowest index.

    Returns (labels int32 (n,), sqdists float64 (n,)).
    """
    x = _c64(x)
    centroids = _c64(centroids)
    if x.shape[1] != centroids.shape[1]:
        raise ValueError(f"dimension mismatch: points D={x.shape[1]}, centroids D={centroids.shape[1]}")
    labels = np.empty(x.shape[0], dtype=np.int32)
    dists = np.empty(x.shape[0], dtype=np.float64)
    (impl or _impl).nearest_centroids(x, centroids, labels, dists)
    return labels, dists


def cluster_sums(x, labels, k, impl=None):
    """Per-cluster coordinate sums and counts, accumulated in row order."""
    x = _c64(x)
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    (impl or _impl).cluster_sums(x, labels, sums, counts)
    return sums, counts


def markov_walk(transition, start, uniforms, impl=None):
    """Sample a Markov chain path of len(uniforms) states.

    transition rows and start must be probability vectors; uniforms are
    iid U[0,1) draws, one per step (the first selects the start state).
    """
    cum_rows = _c64(np.cumsum(transition, axis=1))
    start_cum = _c64(np.cumsum(start))
    uniforms = _c64(uniforms)
    out = np.empty(uniforms.shape[0], dtype=np.int32)
    (impl or _impl).markov_walk(cum_rows, start_cum, uniforms, out)
    return out


def backends():
    """Mapping of available backend name -> module (for tests/benchmarks)."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels  # type: ignore[attr-defined]

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
