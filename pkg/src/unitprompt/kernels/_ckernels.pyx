# cython: boundscheck=False, wraparound=False, cdivision=True
# Hot loops kept out of Python: nearest-centroid scans, per-cluster
# accumulation in row order (fixed reduction order => deterministic),
# and first-order Markov sampling.

from libc.math cimport INFINITY


def nearest_centroids(const double[:, ::1] x, const double[:, ::1] c,
                      int[::1] labels, double[::1] dists):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], k = c.shape[0]
    cdef Py_ssize_t i, j, t, best_j
    cdef double best, s, diff
    for i in range(n):
        best = INFINITY
        best_j = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - c[j, t]
                s += diff * diff
                if s >= best:
                    # partial sum already too large; the tie case (== with
                    # all remaining terms zero) keeps the earlier index,
                    # which is the documented tie-break
                    break
            if s < best:
                best = s
                best_j = j
        labels[i] = <int> best_j
        dists[i] = best


def cluster_sums(const double[:, ::1] x, const int[::1] labels,
                 double[:, ::1] sums, long[::1] counts):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, t
    cdef int lab
    for i in range(n):
        lab = labels[i]
        counts[lab] += 1
        for t in range(d):
            sums[lab, t] += x[i, t]


def markov_walk(const double[:, ::1] cum_rows, const double[::1] start_cum,
                const double[::1] uniforms, int[::1] out):
    # out[0] drawn from start_cum, out[t] from cum_rows[out[t-1]]; each draw
    # picks the first index whose cumulative mass exceeds the uniform
    cdef Py_ssize_t steps = out.shape[0], k = cum_rows.shape[1]
    cdef Py_ssize_t t, j
    cdef int state
    j = 0
    while j < k - 1 and start_cum[j] <= uniforms[0]:
        j += 1
    state = <int> j
    out[0] = state
    for t in range(1, steps):
        j = 0
        while j < k - 1 and cum_rows[state, j] <= uniforms[t]:
            j += 1
        state = <int> j
        out[t] = state
