# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nearest-neighbour kernel.

Mirrors ``_knn_py.knn_query`` bit for bit: squared distances accumulate
feature by feature from 0.0, neighbours are ordered by (distance, index),
and the estimate sums scores in that order before dividing by L.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _select(const double[:, ::1] X, const double[:, ::1] Q, Py_ssize_t qi,
                  Py_ssize_t L, cnp.int64_t[:, ::1] idx, double[:, ::1] d2) noexcept nogil:
    cdef Py_ssize_t P = X.shape[0]
    cdef Py_ssize_t n = X.shape[1]
    cdef Py_ssize_t p, j, count = 0
    cdef double acc, diff
    for p in range(P):
        acc = 0.0
        for j in range(n):
            diff = X[p, j] - Q[qi, j]
            acc = acc + diff * diff
        if count == L and not (acc < d2[qi, L - 1]):
            continue
        # insertion keeps earlier indices ahead of later ones at equal distance
        if count < L:
            j = count
            count += 1
        else:
            j = L - 1
        while j > 0 and acc < d2[qi, j - 1]:
            d2[qi, j] = d2[qi, j - 1]
            idx[qi, j] = idx[qi, j - 1]
            j -= 1
        d2[qi, j] = acc
        idx[qi, j] = p


def knn_query(X, scores, queries, Py_ssize_t L):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[:, ::1] Qv = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t P = Xv.shape[0]
    cdef Py_ssize_t nq = Qv.shape[0]
    if Qv.shape[1] != Xv.shape[1]:
        raise ValueError(f"query dimension {Qv.shape[1]} != buffer dimension {Xv.shape[1]}")
    if sv.shape[0] != P:
        raise ValueError("scores and buffer samples differ in length")
    if L < 1 or L > P:
        raise ValueError(f"L={L} out of range for buffer of {P}")

    idx_arr = np.empty((nq, L), dtype=np.int64)
    d2_arr = np.empty((nq, L), dtype=np.float64)
    est_arr = np.empty(nq, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] d2 = d2_arr
    cdef double[::1] est = est_arr
    cdef Py_ssize_t qi, l
    cdef double s
    with nogil:
        for qi in range(nq):
            _select(Xv, Qv, qi, L, idx, d2)
            s = 0.0
            for l in range(L):
                s = s + sv[idx[qi, l]]
            est[qi] = s / L
    return est_arr, idx_arr, d2_arr
