# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

DEF CHI2_EPS = 1e-10


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def cell_histograms(bins, weights, map_idx, cx, cy, int nbins, int patch, int n_sigma, int n_tau):
    cdef const signed char[:, :, ::1] B = np.ascontiguousarray(bins, dtype=np.int8)
    cdef const double[:, :, ::1] Wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const Py_ssize_t[:, ::1] M = np.ascontiguousarray(map_idx, dtype=np.intp)
    cdef const Py_ssize_t[:, ::1] CX = np.ascontiguousarray(cx, dtype=np.intp)
    cdef const Py_ssize_t[:, ::1] CY = np.ascontiguousarray(cy, dtype=np.intp)
    cdef Py_ssize_t n = M.shape[0], L = M.shape[1]
    cdef Py_ssize_t H = B.shape[1], W = B.shape[2]
    out_arr = np.zeros((n, n_tau * n_sigma * n_sigma * nbins), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t cw = patch // n_sigma, half = patch // 2
    cdef Py_ssize_t k, l, f, t, ys, xs, y, x, y0, y1, x0, x1, base
    cdef signed char b
    with nogil:
        for k in range(n):
            for l in range(L):
                f = M[k, l]
                t = (l * n_tau) // L
                for ys in range(n_sigma):
                    y0 = _clamp(CY[k, l] - half + ys * cw, 0, H)
                    y1 = _clamp(CY[k, l] - half + (ys + 1) * cw, 0, H)
                    for xs in range(n_sigma):
                        x0 = _clamp(CX[k, l] - half + xs * cw, 0, W)
                        x1 = _clamp(CX[k, l] - half + (xs + 1) * cw, 0, W)
                        base = ((t * n_sigma + ys) * n_sigma + xs) * nbins
                        for y in range(y0, y1):
                            for x in range(x0, x1):
                                b = B[f, y, x]
                                if b >= 0:
                                    out[k, base + b] += Wt[f, y, x]
    return out_arr


def chi2_distance_matrix(X, Y):
    cdef const double[:, ::1] A = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Bm = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], m = Bm.shape[0], d = A.shape[1]
    if Bm.shape[1] != d:
        raise ValueError("dimension mismatch")
    D_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] D = D_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, a, b, diff
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    a = A[i, k]
                    b = Bm[j, k]
                    diff = a - b
                    if diff != 0.0:
                        acc += diff * diff / (a + b + CHI2_EPS)
                D[i, j] = acc
    return D_arr


def smo_solve(K, y, double C, double tol=1e-3, long max_iter=100000):
    cdef const double[:, ::1] Km = np.ascontiguousarray(K, dtype=np.float64)
    y_arr = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] Y = y_arr
    cdef Py_ssize_t n = Y.shape[0]
    alpha_arr = np.zeros(n, dtype=np.float64)
    G_arr = -np.ones(n, dtype=np.float64)
    QD_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef double[::1] QD = QD_arr
    cdef Py_ssize_t t, i, j
    cdef long it = 0
    cdef double gmax, gmin, v, b, a, score, best, quad, delta, diff, total, ai_old, aj_old, dai, daj
    cdef double qij, yi, yj
    cdef bint up, low
    for t in range(n):
        QD[t] = Km[t, t]
    with nogil:
        while it < max_iter:
            i = -1
            gmax = -INFINITY
            gmin = INFINITY
            for t in range(n):
                v = -Y[t] * G[t]
                up = (Y[t] > 0 and alpha[t] < C) or (Y[t] < 0 and alpha[t] > 0)
                low = (Y[t] > 0 and alpha[t] > 0) or (Y[t] < 0 and alpha[t] < C)
                if up and v > gmax:
                    gmax = v
                    i = t
                if low and v < gmin:
                    gmin = v
            if i < 0 or gmax - gmin < tol:
                break
            j = -1
            best = INFINITY
            yi = Y[i]
            for t in range(n):
                low = (Y[t] > 0 and alpha[t] > 0) or (Y[t] < 0 and alpha[t] < C)
                if not low:
                    continue
                v = -Y[t] * G[t]
                b = gmax - v
                if b <= 0:
                    continue
                # Q_it = y_i y_t K_it, so y_i y_t Q_it = K_it
                a = QD[i] + QD[t] - 2.0 * Km[i, t]
                if a <= 0:
                    a = 1e-12
                score = -(b * b) / a
                if score < best:
                    best = score
                    j = t
            if j < 0:
                break
            it += 1
            yj = Y[j]
            ai_old = alpha[i]
            aj_old = alpha[j]
            qij = yi * yj * Km[i, j]
            if yi != yj:
                quad = QD[i] + QD[j] + 2.0 * qij
                if quad <= 0:
                    quad = 1e-12
                delta = (-G[i] - G[j]) / quad
                diff = alpha[i] - alpha[j]
                alpha[i] += delta
                alpha[j] += delta
                if diff > 0:
                    if alpha[j] < 0:
                        alpha[j] = 0.0
                        alpha[i] = diff
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0.0
                        alpha[j] = -diff
                if diff > 0:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = C - diff
                else:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = C + diff
            else:
                quad = QD[i] + QD[j] - 2.0 * qij
                if quad <= 0:
                    quad = 1e-12
                delta = (G[i] - G[j]) / quad
                total = alpha[i] + alpha[j]
                alpha[i] -= delta
                alpha[j] += delta
                if total > C:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = total - C
                else:
                    if alpha[j] < 0:
                        alpha[j] = 0.0
                        alpha[i] = total
                if total > C:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = total - C
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0.0
                        alpha[j] = total
            dai = (alpha[i] - ai_old) * yi
            daj = (alpha[j] - aj_old) * yj
            for t in range(n):
                G[t] += Y[t] * (Km[i, t] * dai + Km[j, t] * daj)
    from ._kernels_py import _compute_rho
    rho = _compute_rho(G_arr, y_arr, alpha_arr, C)
    return alpha_arr, rho, int(it)
