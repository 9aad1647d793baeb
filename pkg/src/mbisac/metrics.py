"""GOSPA, categorical cross-entropy, the ISAC loss and test metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class GospaParams:
    gamma: float = np.inf
    mu: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive (inf allowed)")
        if not 0 < self.mu <= 2:
            raise ValueError("mu must lie in (0, 2]")
        if not 1 <= self.p < np.inf:
            raise ValueError("p must lie in [1, inf)")


ENUMERATION_LIMIT = 5


def _cost_matrix(P, Q, params):
    d = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=-1)
    return np.minimum(d, params.gamma) ** params.p


def assignment_enumerate(cost):
    """Exhaustive minimum assignment of rows to distinct columns.

    ``cost`` is (n, m) with n <= m. Ties resolve to the lexicographically
    smallest column tuple. Returns ``(columns, total)``.
    """
    n, m = cost.shape
    if n > m:
        raise ValueError("need at least as many columns as rows")
    best, best_cols = np.inf, ()
    rows = np.arange(n)
    for perm in itertools.permutations(range(m), n):
        total = cost[rows, list(perm)].sum() if n else 0.0
        if total < best:
            best, best_cols = total, perm
    return np.array(best_cols, dtype=int), (best if n else 0.0)


def assignment_hungarian(cost):
    n, m = cost.shape
    if n > m:
        raise ValueError("need at least as many columns as rows")
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    r, c = linear_sum_assignment(cost)
    order = np.argsort(r)
    cols = c[order]
    return cols, float(cost[np.arange(n), cols].sum())


def _oriented(P_true, P_est):
    P = np.asarray(P_true, dtype=float).reshape(-1, 2)
    Q = np.asarray(P_est, dtype=float).reshape(-1, 2)
    swapped = P.shape[0] > Q.shape[0]
    return (Q, P, True) if swapped else (P, Q, False)


def gospa_assignment(P_true, P_est, params: GospaParams = GospaParams(), backend="auto"):
    """Optimal assignment through which GOSPA gradients flow.

    Returns ``pi`` such that the smaller set's element ``i`` is matched to
    the larger set's element ``pi[i]`` (true set first when sizes are equal).
    """
    P, Q, _ = _oriented(P_true, P_est)
    cost = _cost_matrix(P, Q, params)
    if backend == "auto":
        backend = "enumerate" if Q.shape[0] <= ENUMERATION_LIMIT else "hungarian"
    fn = assignment_enumerate if backend == "enumerate" else assignment_hungarian
    return fn(cost)[0]


def gospa(P_true, P_est, params: GospaParams = GospaParams(), backend="auto"):
    """GOSPA distance between two finite point sets in the plane."""
    P, Q, _ = _oriented(P_true, P_est)
    n, m = P.shape[0], Q.shape[0]
    if np.isinf(params.gamma) and n != m:
        raise ValueError("infinite cut-off needs equal cardinalities")
    cost = _cost_matrix(P, Q, params)
    if backend == "auto":
        backend = "enumerate" if m <= ENUMERATION_LIMIT else "hungarian"
    fn = assignment_enumerate if backend == "enumerate" else assignment_hungarian
    _, total = fn(cost)
    if m > n:
        total = total + params.gamma ** params.p / params.mu * (m - n)
    return float(total) ** (1 / params.p)


def gospa_batch(true_pos, true_counts, est_pos, est_counts, params: GospaParams = GospaParams()):
    """GOSPA for many padded set pairs at once, shape (B,).

    ``true_pos`` is (B, T, 2) and ``est_pos`` (B, E, 2); only the first
    ``counts[b]`` rows of item ``b`` are used. Items are grouped by their
    pair of set sizes and small groups are solved by vectorized
    enumeration; larger sets fall back to the Hungarian solver.
    """
    tp = np.asarray(true_pos, dtype=float)
    ep = np.asarray(est_pos, dtype=float)
    tc = np.asarray(true_counts, dtype=int)
    ec = np.asarray(est_counts, dtype=int)
    out = np.empty(tc.size)
    for n_t, n_e in set(zip(tc.tolist(), ec.tolist())):
        idx = np.flatnonzero((tc == n_t) & (ec == n_e))
        n, m = min(n_t, n_e), max(n_t, n_e)
        if m > ENUMERATION_LIMIT:
            for b in idx:
                out[b] = gospa(tp[b, :n_t], ep[b, :n_e], params)
            continue
        if np.isinf(params.gamma) and n != m:
            raise ValueError("infinite cut-off needs equal cardinalities")
        small, big = (tp[idx, :n_t], ep[idx, :n_e]) if n_t <= n_e else (ep[idx, :n_e],
                                                                         tp[idx, :n_t])
        total = np.zeros(idx.size)
        if n:
            d = np.linalg.norm(small[:, :, None, :] - big[:, None, :, :], axis=-1)
            cost = np.minimum(d, params.gamma) ** params.p               # (G, n, m)
            perms = np.array(list(itertools.permutations(range(m), n)))  # (P, n)
            total = cost[:, np.arange(n), perms].sum(axis=-1).min(axis=1)
        total = total + params.gamma ** params.p / params.mu * (m - n) if m > n else total
        out[idx] = total ** (1 / params.p)
    return out


def cce(u_enc, u_hat):
    """Categorical cross-entropy -sum u log(u_hat) along the last axis."""
    u_enc = np.asarray(u_enc, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.where(u_enc > 0, np.log(u_hat), 0.0)
    return -(u_enc * logs).sum(axis=-1)


def isac_loss(gospa_value, cce_value, omega_r):
    if not 0 <= omega_r <= 1:
        raise ValueError("omega_r must lie in [0, 1]")
    return omega_r * gospa_value + (1 - omega_r) * cce_value


def pmd_pfa(true_counts, est_counts, t_max):
    """Multi-target misdetection and false-alarm rates over a batch.

    Empty denominators give NaN.
    """
    T = np.asarray(true_counts, dtype=float)
    That = np.asarray(est_counts, dtype=float)
    den_md = T.sum()
    den_fa = (t_max - T).sum()
    pmd = 1 - np.minimum(T, That).sum() / den_md if den_md > 0 else np.nan
    pfa = (np.maximum(T, That) - T).sum() / den_fa if den_fa > 0 else np.nan
    return float(pmd), float(pfa)


def ser(true_msgs, est_msgs):
    a, b = np.asarray(true_msgs), np.asarray(est_msgs)
    if a.shape != b.shape:
        raise ValueError("message arrays must have the same shape")
    return float(np.mean(a != b))
