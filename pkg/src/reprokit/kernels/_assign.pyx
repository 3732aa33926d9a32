# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pairwise Euclidean distances and min-cost linear assignment."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def pairwise_euclidean(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    if b.shape[1] != d:
        raise ValueError("a and b must have the same number of columns")
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, k
    cdef double s, t
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    t = a[i, k] - b[j, k]
                    s += t * t
                c[i, j] = sqrt(s)
    return out


def linear_assignment(double[:, ::1] cost):
    """Column index assigned to each row, minimising total cost (rows <= cols).

    Shortest augmenting path with row/column potentials, O(n^2 m).
    """
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1]
    if n > m:
        raise ValueError("linear_assignment needs rows <= cols")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef char[::1] used = np.zeros(m + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    with nogil:
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(m + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                delta = INFINITY
                j1 = 0
                for j in range(1, m + 1):
                    if not used[j]:
                        cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(m + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if p[j0] == 0:
                    break
            while j0 != 0:
                j1 = way[j0]
                p[j0] = p[j1]
                j0 = j1
    cols = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] cv = cols
    for j in range(1, m + 1):
        if p[j] != 0:
            cv[p[j] - 1] = j - 1
    return cols
