# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: AUROC pair counting and tree split search.

Mirrors ``_kernels_py`` operation for operation (same summation order,
same tie-breaking) so results are bit-identical across backends.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def auroc_counts(scores, labels):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s_arr = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] y_arr = np.ascontiguousarray(labels, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(s_arr, kind="mergesort").astype(np.int64)
    cdef double[::1] s = s_arr
    cdef long long[::1] y = y_arr
    cdef long long[::1] o = order
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef long long twice_u = 0, neg_below = 0, pos_g, neg_g, n_pos = 0
    cdef double v
    while i < n:
        v = s[o[i]]
        pos_g = 0
        neg_g = 0
        j = i
        while j < n and s[o[j]] == v:
            if y[o[j]] != 0:
                pos_g += 1
            else:
                neg_g += 1
            j += 1
        twice_u += 2 * pos_g * neg_below + pos_g * neg_g
        neg_below += neg_g
        n_pos += pos_g
        i = j
    return int(twice_u), int(n_pos), int(n - n_pos)


def best_split(X, y, w, order, mask, features, Py_ssize_t min_leaf):
    cdef double[:, :] Xv = np.asarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef long long[:, ::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef cnp.uint8_t[::1] mv = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef long long[::1] fv = np.ascontiguousarray(features, dtype=np.int64)
    cdef Py_ssize_t n = ov.shape[1]
    cdef Py_ssize_t fi, f, k, r, m, cnt
    cdef long long best_f = -1
    cdef double best_thr = 0.0, best_gain = 0.0
    cdef double tw, ts, wl, sl, wr, sr, gain, fbest, a, b, thr, prev_x, x
    cdef Py_ssize_t prev_r, fk

    for fi in range(fv.shape[0]):
        f = fv[fi]
        tw = 0.0
        ts = 0.0
        m = 0
        for k in range(n):
            r = ov[f, k]
            if mv[r]:
                tw = tw + wv[r]
                ts = ts + wv[r] * yv[r]
                m += 1
        if m < 2 * min_leaf or m < 2:
            continue
        wl = 0.0
        sl = 0.0
        cnt = 0
        fbest = -1.0
        fk = -1
        a = 0.0
        b = 0.0
        prev_r = -1
        for k in range(n):
            r = ov[f, k]
            if not mv[r]:
                continue
            x = Xv[r, f]
            if prev_r >= 0:
                prev_x = Xv[prev_r, f]
                if prev_x < x and cnt >= min_leaf and m - cnt >= min_leaf:
                    wr = tw - wl
                    if wl > 0 and wr > 0:
                        sr = ts - sl
                        gain = sl * sl / wl + sr * sr / wr - ts * ts / tw
                        if fk < 0 or gain > fbest:
                            fbest = gain
                            fk = cnt
                            a = prev_x
                            b = x
            wl = wl + wv[r]
            sl = sl + wv[r] * yv[r]
            cnt += 1
            prev_r = r
        if fk >= 0 and fbest > best_gain:
            thr = 0.5 * (a + b)
            if thr <= a:
                thr = b
            best_f = f
            best_thr = thr
            best_gain = fbest
    return int(best_f), float(best_thr), float(best_gain)
