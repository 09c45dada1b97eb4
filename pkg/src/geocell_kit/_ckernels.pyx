# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics match ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, asin, sqrt, fabs, INFINITY, M_PI

cnp.import_array()

cdef double DEG = M_PI / 180.0


cdef inline double _hav(double lat1, double lon1, double lat2, double lon2,
                        double radius) noexcept nogil:
    cdef double phi1 = lat1 * DEG
    cdef double phi2 = lat2 * DEG
    cdef double s1 = sin((phi2 - phi1) / 2.0)
    cdef double s2 = sin((lon2 - lon1) * DEG / 2.0)
    cdef double a = s1 * s1 + cos(phi1) * cos(phi2) * s2 * s2
    if a < 0.0:
        a = 0.0
    elif a > 1.0:
        a = 1.0
    return 2.0 * radius * asin(sqrt(a))


def haversine_pairs(lat1, lon1, lat2, lon2, double radius):
    cdef const double[::1] a1 = np.ascontiguousarray(np.ravel(lat1), dtype=np.float64)
    cdef const double[::1] o1 = np.ascontiguousarray(np.ravel(lon1), dtype=np.float64)
    cdef const double[::1] a2 = np.ascontiguousarray(np.ravel(lat2), dtype=np.float64)
    cdef const double[::1] o2 = np.ascontiguousarray(np.ravel(lon2), dtype=np.float64)
    cdef Py_ssize_t n = a1.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            res[i] = _hav(a1[i], o1[i], a2[i], o2[i], radius)
    return out.reshape(np.shape(lat1))


def haversine_matrix(lat1, lon1, lat2, lon2, double radius):
    cdef const double[::1] a1 = np.ascontiguousarray(lat1, dtype=np.float64)
    cdef const double[::1] o1 = np.ascontiguousarray(lon1, dtype=np.float64)
    cdef const double[::1] a2 = np.ascontiguousarray(lat2, dtype=np.float64)
    cdef const double[::1] o2 = np.ascontiguousarray(lon2, dtype=np.float64)
    cdef Py_ssize_t n = a1.shape[0], m = a2.shape[0], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] res = out
    with nogil:
        for i in range(n):
            for j in range(m):
                res[i, j] = _hav(a1[i], o1[i], a2[j], o2[j], radius)
    return out


def core_distances(dist, Py_ssize_t min_samples, double max_eps):
    cdef Py_ssize_t n = dist.shape[0]
    if n < min_samples:
        return np.full(n, np.inf)
    core = np.partition(dist, min_samples - 1, axis=1)[:, min_samples - 1].copy()
    core[core > max_eps] = np.inf
    return core


def optics_order(dist, Py_ssize_t min_samples, double max_eps):
    cdef const double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    core_arr = core_distances(np.asarray(d), min_samples, max_eps)
    reach_arr = np.full(n, np.inf)
    pred_arr = np.full(n, -1, dtype=np.int64)
    order_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] core = core_arr
    cdef double[::1] reach = reach_arr
    cdef cnp.int64_t[::1] pred = pred_arr
    cdef cnp.int64_t[::1] ordering = order_arr
    cdef unsigned char[::1] processed = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t step, j, o, first_free = 0
    cdef double best, r, new
    with nogil:
        for step in range(n):
            j = -1
            best = INFINITY
            for o in range(n):
                if not processed[o] and reach[o] < best:
                    best = reach[o]
                    j = o
            if j < 0:
                while processed[first_free]:
                    first_free += 1
                j = first_free
            processed[j] = 1
            ordering[step] = j
            if core[j] == INFINITY:
                continue
            for o in range(n):
                if processed[o]:
                    continue
                r = d[j, o]
                if r > max_eps:
                    continue
                new = r if r > core[j] else core[j]
                if new < reach[o]:
                    reach[o] = new
                    pred[o] = j
    return order_arr, reach_arr, core_arr, pred_arr


def points_in_ring(px, py, rx, ry, double eps):
    cdef const double[::1] x = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(py, dtype=np.float64)
    cdef const double[::1] ax_ = np.ascontiguousarray(rx, dtype=np.float64)
    cdef const double[::1] ay_ = np.ascontiguousarray(ry, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = ax_.shape[0], i, k
    out = np.zeros(n, dtype=np.int8)
    cdef signed char[::1] res = out
    cdef double ax, ay, bx, by, ex, ey, seg2, seglen, cross, dot, xcross
    cdef bint inside, boundary
    with nogil:
        for i in range(n):
            inside = False
            boundary = False
            for k in range(m):
                ax = ax_[k]
                ay = ay_[k]
                bx = ax_[(k + 1) % m]
                by = ay_[(k + 1) % m]
                ex = bx - ax
                ey = by - ay
                seg2 = ex * ex + ey * ey
                if seg2 > 0.0:
                    seglen = sqrt(seg2)
                    cross = ex * (y[i] - ay) - ey * (x[i] - ax)
                    dot = (x[i] - ax) * ex + (y[i] - ay) * ey
                    if (fabs(cross) <= eps * seglen and dot >= -eps * seglen
                            and dot <= seg2 + eps * seglen):
                        boundary = True
                elif fabs(x[i] - ax) <= eps and fabs(y[i] - ay) <= eps:
                    boundary = True
                if (ay > y[i]) != (by > y[i]):
                    xcross = ex * (y[i] - ay) / ey + ax
                    if x[i] < xcross:
                        inside = not inside
            if boundary:
                res[i] = 2
            elif inside:
                res[i] = 1
    return out


def row_distances(query, rows):
    cdef const double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], dim = r.shape[1], i, k
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef double acc, t
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(dim):
                t = r[i, k] - q[k]
                acc = acc + t * t
            res[i] = sqrt(acc)
    return out


def nearest_row(query, rows):
    cdef const double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], dim = r.shape[1], i, k, best_i = 0
    cdef double acc, t, best = INFINITY
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(dim):
                t = r[i, k] - q[k]
                acc = acc + t * t
            if acc < best:
                best = acc
                best_i = i
    return best_i, sqrt(best)
