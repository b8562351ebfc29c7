"""Pure-numpy fallback for the compiled kernels.

Same contracts as _ckernels: first-lowest-index tie-breaks, row-order
accumulation, and identical Markov draw semantics (first index whose
cumulative mass exceeds the uniform).
"""

import numpy as np

_CHUNK = 2048  # rows per distance block, bounds the (chunk, k, d) temporary


def nearest_centroids(x, c, labels, dists):
    k = c.shape[0]
    for lo in range(0, x.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, x.shape[0])
        diff = x[lo:hi, None, :] - c[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        labels[lo:hi] = np.argmin(d2, axis=1).astype(np.int32)
        dists[lo:hi] = d2[np.arange(hi - lo), labels[lo:hi]]
    return labels, dists


def cluster_sums(x, labels, sums, counts):
    np.add.at(counts, labels, 1)
    np.add.at(sums, labels, x)
    return sums, counts


def markov_walk(cum_rows, start_cum, uniforms, out):
    k = cum_rows.shape[1]
    state = min(int(np.searchsorted(start_cum, uniforms[0], side="right")), k - 1)
    out[0] = state
    for t in range(1, out.shape[0]):
        state = min(int(np.searchsorted(cum_rows[state], uniforms[t], side="right")), k - 1)
        out[t] = state
    return out
