# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Must agree exactly with ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log1p, cos, fmod, M_PI
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t j) nogil:
    return <double>(_mix(key + (j + 1) * GOLDEN) >> 11) * INV53


cdef inline Py_ssize_t _search_right(const double[:] edges, Py_ssize_t n, double x) nogil:
    # first index with edges[idx] > x
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if edges[mid] > x:
            hi = mid
        else:
            lo = mid + 1
    return lo


def code_density(edges_in, double period, uint64_t key, int64_t start, int64_t stop,
                 int mode=0, double mean=0.0, double sigma=0.0):
    cdef const double[:] edges = np.ascontiguousarray(edges_in, dtype=np.float64)
    cdef Py_ssize_t n = edges.shape[0]
    counts_arr = np.zeros(n + 1, dtype=np.int64)
    cdef int64_t[:] counts = counts_arr
    cdef int64_t j
    cdef double ph, u1, u2, z
    with nogil:
        for j in range(start, stop):
            if mode == 0:
                ph = _uniform(key, <uint64_t>j) * period
            else:
                u1 = _uniform(key, <uint64_t>(2 * j))
                u2 = _uniform(key, <uint64_t>(2 * j + 1))
                z = sqrt(-2.0 * log1p(-u1)) * cos(2.0 * M_PI * u2)
                ph = fmod(mean + sigma * z, period)
                if ph < 0:
                    ph = ph + period
                if ph >= period:
                    ph = 0.0
            counts[_search_right(edges, n, ph)] += 1
    return counts_arr[:n]


def match_greedy(ta_in, tb_in, double half_window):
    cdef const int64_t[:] ta = np.ascontiguousarray(ta_in, dtype=np.int64)
    cdef const int64_t[:] tb = np.ascontiguousarray(tb_in, dtype=np.int64)
    cdef Py_ssize_t na = ta.shape[0], nb = tb.shape[0]
    cdef Py_ssize_t m = na if na < nb else nb
    ia_arr = np.empty(m, dtype=np.int64)
    ib_arr = np.empty(m, dtype=np.int64)
    cdef int64_t[:] ia = ia_arr
    cdef int64_t[:] ib = ib_arr
    cdef Py_ssize_t i = 0, j = 0, k = 0
    cdef int64_t a, b, d, alt
    with nogil:
        while i < na and j < nb:
            a = ta[i]
            b = tb[j]
            d = b - a
            if d > half_window:
                i += 1
            elif -d > half_window:
                j += 1
            elif d >= 0:
                if i + 1 < na:
                    alt = ta[i + 1] - b
                    if alt < 0:
                        alt = -alt
                    if alt < d:
                        i += 1
                        continue
                ia[k] = i
                ib[k] = j
                k += 1
                i += 1
                j += 1
            else:
                if j + 1 < nb:
                    alt = tb[j + 1] - a
                    if alt < 0:
                        alt = -alt
                    if alt < -d:
                        j += 1
                        continue
                ia[k] = i
                ib[k] = j
                k += 1
                i += 1
                j += 1
    return ia_arr[:k].copy(), ib_arr[:k].copy()
