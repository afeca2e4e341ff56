"""Pure numpy implementations of the hot kernels.

Same signatures and summation orders as ``_kernels.pyx`` where that is
cheap to guarantee (pooling, trailing mean); the GMM kernel uses the
expanded-square GEMM form and agrees with the compiled one to rounding.
"""

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 8192


def _component_terms(weights, means, variances):
    inv_var = 1.0 / variances
    log_const = (
        np.log(weights)
        - 0.5 * (means.shape[1] * LOG_2PI + np.log(variances).sum(axis=1))
    )
    return inv_var, log_const


def gmm_log_joint(X, weights, means, variances):
    """(N, C) matrix of log(w_c) + log N(x_n; mu_c, diag var_c)."""
    inv_var, log_const = _component_terms(weights, means, variances)
    sq = (X * X) @ inv_var.T
    cross = X @ (means * inv_var).T
    mu_term = (means * means * inv_var).sum(axis=1)
    return log_const - 0.5 * (sq - 2.0 * cross + mu_term)


def _logsumexp_rows(a):
    mx = a.max(axis=1)
    return mx + np.log(np.exp(a - mx[:, None]).sum(axis=1))


def gmm_accumulate(X, weights, means, variances, second):
    """Fused E-step over frames.

    Returns (frame_loglik (N,), zeroth (C,), first (C, F), second (C, F)).
    ``first`` is uncentered. ``second`` is an empty (0, F) array unless
    requested.
    """
    n, f = X.shape
    c = means.shape[0]
    frame_ll = np.empty(n)
    zeroth = np.zeros(c)
    first = np.zeros((c, f))
    sec = np.zeros((c, f)) if second else np.zeros((0, f))
    for start in range(0, n, _CHUNK):
        xb = X[start:start + _CHUNK]
        lj = gmm_log_joint(xb, weights, means, variances)
        ll = _logsumexp_rows(lj)
        frame_ll[start:start + len(xb)] = ll
        gamma = np.exp(lj - ll[:, None])
        zeroth += gamma.sum(axis=0)
        first += gamma.T @ xb
        if second:
            sec += gamma.T @ (xb * xb)
    return frame_ll, zeroth, first, sec


def gmm_posteriors(X, weights, means, variances):
    """(N, C) responsibilities, each row normalized in log space."""
    lj = gmm_log_joint(X, weights, means, variances)
    return np.exp(lj - _logsumexp_rows(lj)[:, None])


def kmeans_assign(X, centers):
    """Nearest center per row; returns (labels int64, squared distances)."""
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    c2 = (centers * centers).sum(axis=1)
    for start in range(0, n, _CHUNK):
        xb = X[start:start + _CHUNK]
        d = (xb * xb).sum(axis=1)[:, None] - 2.0 * xb @ centers.T + c2
        idx = d.argmin(axis=1)
        labels[start:start + len(xb)] = idx
        dist[start:start + len(xb)] = np.maximum(d[np.arange(len(xb)), idx], 0.0)
    return labels, dist


def pool_groups(X, flat_index, offsets, mode):
    """Pool channel groups per frame.

    ``flat_index[offsets[g]:offsets[g+1]]`` lists the columns of group g.
    mode: 0 = raw (singletons), 1 = max, 2 = average.
    """
    X = np.asarray(X, dtype=np.float64)
    n_groups = len(offsets) - 1
    out = np.empty((X.shape[0], n_groups))
    for g in range(n_groups):
        cols = flat_index[offsets[g]:offsets[g + 1]]
        if mode == 1:
            acc = X[:, cols[0]].copy()
            for j in cols[1:]:
                np.maximum(acc, X[:, j], out=acc)
        else:
            acc = X[:, cols[0]].copy()
            for j in cols[1:]:
                acc += X[:, j]
            if mode == 2:
                acc /= len(cols)
        out[:, g] = acc
    return out


def trailing_mean(X, segment_start, window):
    """Causal moving average that restarts at every segment boundary.

    ``segment_start[t]`` is the row index where t's segment begins.
    Sums run from lag 0 upwards so both backends round identically.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    t = np.arange(n)
    first = np.maximum(segment_start, t - window + 1)
    count = (t - first + 1).astype(np.float64)
    acc = X.copy()
    for lag in range(1, window):
        valid = t - lag >= first
        if not valid.any():
            break
        idx = np.nonzero(valid)[0]
        acc[idx] += X[idx - lag]
    return acc / count[:, None]
