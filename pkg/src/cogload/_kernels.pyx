# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Drop-in for ``_kernels_py``."""

import numpy as np

from libc.math cimport exp, log, INFINITY

cdef double LOG_2PI = log(2.0 * 3.141592653589793)


def gmm_accumulate(const double[:, ::1] X, const double[::1] weights,
                   const double[:, ::1] means, const double[:, ::1] variances,
                   bint second):
    cdef Py_ssize_t n = X.shape[0], f = X.shape[1], c = means.shape[0]
    cdef Py_ssize_t i, k, d
    cdef double[:, ::1] inv_var = np.empty((c, f))
    cdef double[::1] log_const = np.empty(c)
    cdef double[::1] buf = np.empty(c)
    frame_ll_arr = np.empty(n)
    zeroth_arr = np.zeros(c)
    first_arr = np.zeros((c, f))
    sec_arr = np.zeros((c, f)) if second else np.zeros((0, f))
    cdef double[::1] frame_ll = frame_ll_arr
    cdef double[::1] zeroth = zeroth_arr
    cdef double[:, ::1] first = first_arr
    cdef double[:, ::1] sec = sec_arr
    cdef double acc, diff, mx, s, g, x, logdet

    for k in range(c):
        logdet = 0.0
        for d in range(f):
            inv_var[k, d] = 1.0 / variances[k, d]
            logdet += log(variances[k, d])
        log_const[k] = log(weights[k]) - 0.5 * (f * LOG_2PI + logdet)

    for i in range(n):
        mx = -INFINITY
        for k in range(c):
            acc = 0.0
            for d in range(f):
                diff = X[i, d] - means[k, d]
                acc += diff * diff * inv_var[k, d]
            buf[k] = log_const[k] - 0.5 * acc
            if buf[k] > mx:
                mx = buf[k]
        s = 0.0
        for k in range(c):
            buf[k] = exp(buf[k] - mx)
            s += buf[k]
        frame_ll[i] = mx + log(s)
        for k in range(c):
            g = buf[k] / s
            if g == 0.0:
                continue
            zeroth[k] += g
            for d in range(f):
                x = X[i, d]
                first[k, d] += g * x
                if second:
                    sec[k, d] += g * x * x
    return frame_ll_arr, zeroth_arr, first_arr, sec_arr


def gmm_posteriors(const double[:, ::1] X, const double[::1] weights,
                   const double[:, ::1] means, const double[:, ::1] variances):
    cdef Py_ssize_t n = X.shape[0], f = X.shape[1], c = means.shape[0]
    cdef Py_ssize_t i, k, d
    cdef double[:, ::1] inv_var = np.empty((c, f))
    cdef double[::1] log_const = np.empty(c)
    out_arr = np.empty((n, c))
    cdef double[:, ::1] out = out_arr
    cdef double acc, diff, mx, s, logdet

    for k in range(c):
        logdet = 0.0
        for d in range(f):
            inv_var[k, d] = 1.0 / variances[k, d]
            logdet += log(variances[k, d])
        log_const[k] = log(weights[k]) - 0.5 * (f * LOG_2PI + logdet)

    for i in range(n):
        mx = -INFINITY
        for k in range(c):
            acc = 0.0
            for d in range(f):
                diff = X[i, d] - means[k, d]
                acc += diff * diff * inv_var[k, d]
            out[i, k] = log_const[k] - 0.5 * acc
            if out[i, k] > mx:
                mx = out[i, k]
        s = 0.0
        for k in range(c):
            out[i, k] = exp(out[i, k] - mx)
            s += out[i, k]
        for k in range(c):
            out[i, k] /= s
    return out_arr


def kmeans_assign(const double[:, ::1] X, const double[:, ::1] centers):
    cdef Py_ssize_t n = X.shape[0], f = X.shape[1], c = centers.shape[0]
    cdef Py_ssize_t i, k, d, best
    labels_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n)
    cdef long long[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    cdef double acc, diff, bestd
    for i in range(n):
        bestd = INFINITY
        best = 0
        for k in range(c):
            acc = 0.0
            for d in range(f):
                diff = X[i, d] - centers[k, d]
                acc += diff * diff
            if acc < bestd:
                bestd = acc
                best = k
        labels[i] = best
        dist[i] = bestd
    return labels_arr, dist_arr


def pool_groups(X_in, const long long[::1] flat_index, const long long[::1] offsets, int mode):
    cdef double[:, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], n_groups = offsets.shape[0] - 1
    cdef Py_ssize_t i, g, j, lo, hi
    out_arr = np.empty((n, n_groups))
    cdef double[:, ::1] out = out_arr
    cdef double acc, v
    for i in range(n):
        for g in range(n_groups):
            lo = offsets[g]
            hi = offsets[g + 1]
            acc = X[i, flat_index[lo]]
            for j in range(lo + 1, hi):
                v = X[i, flat_index[j]]
                if mode == 1:
                    if v > acc:
                        acc = v
                else:
                    acc += v
            if mode == 2:
                acc /= (hi - lo)
            out[i, g] = acc
    return out_arr


def trailing_mean(X_in, const long long[::1] segment_start, Py_ssize_t window):
    cdef double[:, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1]
    cdef Py_ssize_t t, lag, d, lo
    out_arr = np.empty((n, dim))
    cdef double[:, ::1] out = out_arr
    cdef double cnt
    for t in range(n):
        lo = t - window + 1
        if segment_start[t] > lo:
            lo = segment_start[t]
        for d in range(dim):
            out[t, d] = X[t, d]
        for lag in range(1, t - lo + 1):
            for d in range(dim):
                out[t, d] += X[t - lag, d]
        cnt = <double>(t - lo + 1)
        for d in range(dim):
            out[t, d] /= cnt
    return out_arr
