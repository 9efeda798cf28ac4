"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` extension; used
when the extension is not built or ``EGOTRAJ_PURE_PYTHON`` is set.
"""

import numpy as np

CHI2_EPS = 1e-10


def _cell_edges(c, patch, n_sigma, size):
    """Clamped ``[lo, hi)`` bounds of the ``n_sigma`` cells along one axis."""
    cw = patch // n_sigma
    start = c - patch // 2
    lo = start[..., None] + cw * np.arange(n_sigma)
    hi = lo + cw
    return np.clip(lo, 0, size), np.clip(hi, 0, size)


def cell_histograms(bins, weights, map_idx, cx, cy, nbins, patch, n_sigma, n_tau):
    """Magnitude-weighted orientation histograms over trajectory-aligned volumes.

    Parameters
    ----------
    bins : int8 array (F, H, W)
        Bin index per pixel for each of F maps; negative entries never vote.
    weights : float64 array (F, H, W)
    map_idx : int array (n, L)
        Which map each of the L volume slices of trajectory n reads.
    cx, cy : int array (n, L)
        Rounded trajectory position on every slice.

    Returns
    -------
    (n, n_tau * n_sigma * n_sigma * nbins) float64, ordered
    ``[t_cell][y_cell][x_cell][bin]``, not normalised.
    """
    bins = np.asarray(bins)
    weights = np.asarray(weights, dtype=np.float64)
    map_idx = np.asarray(map_idx, dtype=np.intp)
    cx = np.asarray(cx, dtype=np.intp)
    cy = np.asarray(cy, dtype=np.intp)
    n, L = map_idx.shape
    F, H, W = bins.shape
    out = np.zeros((n, n_tau, n_sigma, n_sigma, nbins))
    if n == 0:
        return out.reshape(n, -1)
    x_lo, x_hi = _cell_edges(cx, patch, n_sigma, W)
    y_lo, y_hi = _cell_edges(cy, patch, n_sigma, H)
    tcell = (np.arange(L) * n_tau) // L
    for f in np.unique(map_idx):
        sel_n, sel_l = np.nonzero(map_idx == f)
        b = bins[f]
        onehot = np.zeros((H + 1, W + 1, nbins))
        valid = b >= 0
        yy, xx = np.nonzero(valid)
        onehot[yy + 1, xx + 1, b[valid]] = weights[f][valid]
        integ = onehot.cumsum(axis=0).cumsum(axis=1)
        for ys in range(n_sigma):
            y0 = y_lo[sel_n, sel_l, ys]
            y1 = y_hi[sel_n, sel_l, ys]
            for xs in range(n_sigma):
                x0 = x_lo[sel_n, sel_l, xs]
                x1 = x_hi[sel_n, sel_l, xs]
                box = integ[y1, x1] - integ[y0, x1] - integ[y1, x0] + integ[y0, x0]
                np.add.at(out, (sel_n, tcell[sel_l], ys, xs), box)
    return out.reshape(n, -1)


def chi2_distance_matrix(X, Y):
    """``D[i, j] = sum_k (x_ik - y_jk)^2 / (x_ik + y_jk + eps)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    n, m = len(X), len(Y)
    D = np.empty((n, m))
    rows = max(1, int(4_000_000 // max(1, m * X.shape[1])))
    for s in range(0, n, rows):
        xs = X[s:s + rows, None, :]
        num = (xs - Y[None]) ** 2
        den = xs + Y[None] + CHI2_EPS
        D[s:s + rows] = (num / den).sum(axis=2)
    return D


def _select_working_set(G, y, alpha, C, Q_diag, Q, tau=1e-12):
    """Second-order working-set selection; returns (i, j, gap) with j = -1 at optimum."""
    minus_yG = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    cand = np.where(up, minus_yG, -np.inf)
    i = int(np.argmax(cand))
    gmax = cand[i]
    gmin = np.min(np.where(low, minus_yG, np.inf))
    gap = gmax - gmin
    b = gmax - minus_yG
    ok = low & (b > 0)
    if not ok.any():
        return i, -1, gap
    Qi = Q[i]
    a = Q_diag[i] + Q_diag - 2.0 * y[i] * y * Qi
    a = np.where(a > 0, a, tau)
    score = np.where(ok, -(b * b) / a, np.inf)
    j = int(np.argmin(score))
    return i, j, gap


def smo_solve(K, y, C, tol=1e-3, max_iter=100000):
    """Dual C-SVM by sequential minimal optimisation on a precomputed kernel.

    Returns ``(alpha, rho, iterations)``; the decision function is
    ``sum_i alpha_i y_i K(x_i, x) - rho``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    Q = K * np.outer(y, y)
    Q_diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        i, j, gap = _select_working_set(G, y, alpha, C, Q_diag, Q)
        if j < 0 or gap < tol:
            break
        it += 1
        Qi, Qj = Q[i], Q[j]
        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = Q_diag[i] + Q_diag[j] + 2.0 * Qi[j]
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
            quad = Q_diag[i] + Q_diag[j] - 2.0 * Qi[j]
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
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        G += Qi * dai + Qj * daj
    rho = _compute_rho(G, y, alpha, C)
    return alpha, rho, it


def _compute_rho(G, y, alpha, C):
    """Offset from free support vectors, or the midpoint of the feasible range."""
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yG[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub):
        return float(lb) if np.isfinite(lb) else 0.0
    if not np.isfinite(lb):
        return float(ub)
    return float(0.5 * (ub + lb))
