"""Angle-delay maps and orthogonal matching pursuit for multi-target sensing.

Two detectors share the same greedy skeleton:

* :func:`omp_baseline` keeps on-grid estimates and stops on a threshold;
* :func:`omp_differentiable` runs a known number of iterations and replaces
  each on-grid estimate by a softmax-weighted average over a window around
  the peak, which makes the estimate differentiable w.r.t. the map.

Bulk evaluation goes through :func:`omp_batch`, which works on the
delay-transformed observation ``Z = Y conj(Phi_d)`` so that residual updates
never touch the full K x S observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import czt

from . import autodiff as ad
from .array import SPEED_OF_LIGHT, SteeringDictionary
from .channel import OfdmConfig, delay_response


@dataclass(frozen=True)
class DelayDictionary:
    matrix: np.ndarray      # (S, N_tau)
    delay_grid: np.ndarray  # (N_tau,)

    @property
    def range_grid(self):
        return SPEED_OF_LIGHT * self.delay_grid / 2

    def __len__(self):
        return self.delay_grid.size

    def gram(self):
        """G[j, l] = rho_l^H rho_j, i.e. Phi_d^T conj(Phi_d)."""
        return self.matrix.T @ np.conj(self.matrix)


def build_delay_dictionary(cfg: OfdmConfig, r_min, r_max, n_tau) -> DelayDictionary:
    if not r_min < r_max:
        raise ValueError("need r_min < r_max")
    if n_tau < 2:
        raise ValueError("need at least two delay grid points")
    taus = np.linspace(2 * r_min / SPEED_OF_LIGHT, 2 * r_max / SPEED_OF_LIGHT, n_tau)
    return DelayDictionary(delay_response(taus, cfg.num_subcarriers, cfg.subcarrier_spacing).T,
                           taus)


def _matrix(x):
    return getattr(x, "matrix", x)


def angle_delay_map(Y, phi_a, phi_d):
    """|Phi_a^H Y conj(Phi_d)|^2 (works on stacked observations too)."""
    A, D = _matrix(phi_a), _matrix(phi_d)
    return np.abs(np.conj(A).T @ Y @ np.conj(D)) ** 2


def angle_delay_map_fast(Y, phi_a, delays: DelayDictionary, cfg: OfdmConfig):
    """Same map, with the delay correlation done by a chirp-z transform.

    The delay grid is uniform, so the correlation over subcarriers is a
    z-transform sampled on an arc of the unit circle.
    """
    taus = delays.delay_grid
    step = taus[1] - taus[0]
    df = cfg.subcarrier_spacing
    w = np.exp(2j * np.pi * df * step)
    a = np.exp(-2j * np.pi * df * taus[0])
    Z = czt(Y, m=taus.size, w=w, a=a, axis=-1)
    return np.abs(np.conj(_matrix(phi_a)).T @ Z) ** 2


def discrete_resolutions(num_antennas, num_subcarriers, subcarrier_spacing, n_theta, n_tau,
                         theta_min, theta_max, r_min, r_max):
    """Window half-widths (iota_theta, iota_R) in grid points."""
    if theta_max - theta_min <= 0 or r_max - r_min <= 0:
        raise ValueError("prior intervals must have positive width")
    d_theta = 2 / num_antennas
    d_r = SPEED_OF_LIGHT / (2 * num_subcarriers * subcarrier_spacing)
    iota_theta = int(np.floor(d_theta * n_theta / (theta_max - theta_min)))
    iota_r = int(np.floor(d_r * n_tau / (r_max - r_min)))
    return iota_theta, iota_r


@dataclass
class DetectionResult:
    angles: np.ndarray
    delays: np.ndarray
    gains: np.ndarray = None
    atoms: list = field(default_factory=list)
    peaks: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.angles)

    @property
    def ranges(self):
        return SPEED_OF_LIGHT * np.asarray(self.delays) / 2


def to_positions(result):
    """Cartesian target positions; negative delays are clamped to zero.

    Returns ``(positions, clamped)`` where ``clamped`` flags any clamp.
    """
    delays = np.asarray(result.delays, dtype=float)
    clamped = bool(np.any(delays < 0))
    r = SPEED_OF_LIGHT * np.maximum(delays, 0) / 2
    th = np.asarray(result.angles, dtype=float)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1).reshape(-1, 2), clamped


def omp_baseline(Y, steering: SteeringDictionary, delays: DelayDictionary, threshold,
                 max_iter=10) -> DetectionResult:
    """Threshold-terminated OMP with on-grid estimates.

    Gains are re-estimated jointly by least squares on the QR factors of the
    stacked vectorized atoms. Already selected atoms are excluded from the
    argmax; a rank-deficient atom set drops its newest atom and stops.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    A, D = steering.matrix, delays.matrix
    y = Y.reshape(-1)
    residual = Y
    used = np.zeros((A.shape[1], D.shape[1]), dtype=bool)
    atoms, cols, peaks = [], [], []
    gains = np.zeros(0, dtype=complex)
    while len(atoms) < max_iter:
        L = angle_delay_map(residual, A, D)
        L[used] = -np.inf
        peak = L.max()
        if not peak > threshold:
            break
        i, j = np.unravel_index(np.argmax(L), L.shape)
        cols.append(np.outer(A[:, i], D[:, j]).reshape(-1))
        Q, R = np.linalg.qr(np.stack(cols, axis=1))
        diag = np.abs(np.diag(R))
        if diag[-1] <= 1e-10 * diag.max():
            cols.pop()
            break
        atoms.append((int(i), int(j)))
        peaks.append(float(peak))
        used[i, j] = True
        gains = np.linalg.solve(R, np.conj(Q).T @ y)
        residual = Y - (np.stack(cols, axis=1) @ gains).reshape(Y.shape)
    idx = np.array(atoms, dtype=int).reshape(-1, 2)
    return DetectionResult(steering.angle_grid[idx[:, 0]], delays.delay_grid[idx[:, 1]],
                           gains, atoms, peaks)


@dataclass
class OmpTrace:
    """Per-iteration record of a batched OMP run (B observations, n iterations)."""

    rows: np.ndarray        # (B, n) selected angle indices
    cols: np.ndarray        # (B, n) selected delay indices
    peaks: np.ndarray       # (B, n) map maximum before each selection
    gains: np.ndarray       # (B, n) LS gains after the last iteration
    window: dict = None     # window indices and residual slices, per iteration

    def counts(self, threshold):
        """Number of detections a threshold-terminated run would return."""
        below = ~(self.peaks > threshold)
        first = np.where(below.any(axis=1), below.argmax(axis=1), self.peaks.shape[1])
        return first


def sector_columns(angle_grid, sectors):
    """Inclusive index ranges [lo, hi] of grid points inside each sector.

    A sector that contains no grid point falls back to its nearest point.
    """
    grid = np.asarray(angle_grid)
    sectors = np.asarray(sectors, dtype=float).reshape(-1, 2)
    lo = np.searchsorted(grid, sectors[:, 0], side="left")
    hi = np.searchsorted(grid, sectors[:, 1], side="right") - 1
    empty = hi < lo
    if np.any(empty):
        mid = sectors[empty].mean(axis=1)
        nearest = np.abs(grid[None, :] - mid[:, None]).argmin(axis=1)
        lo[empty] = hi[empty] = nearest
    lo = np.clip(lo, 0, grid.size - 1)
    hi = np.clip(hi, 0, grid.size - 1)
    return lo, hi


def omp_batch(Z, phi_a, delay_gram, n_iter, col_lo=None, col_hi=None, window=None):
    """Run ``n_iter`` OMP iterations on every observation of a batch.

    Parameters
    ----------
    Z : (B, K, N_tau) delay-transformed observations ``Y conj(Phi_d)``.
    phi_a : (K, N_theta) steering matrix of the full angle grid.
    delay_gram : (N_tau, N_tau) ``Phi_d^T conj(Phi_d)``.
    col_lo, col_hi : optional per-observation inclusive angle index ranges to
        search; the window may still extend beyond them.
    window : optional ``(iota_theta, iota_R)``; when given, window indices
        and the residual restricted to the window delays are recorded.
    """
    Z = np.asarray(Z)
    phi_a = np.asarray(phi_a)
    B, K, n_tau = Z.shape
    n_theta = phi_a.shape[1]
    if col_lo is None:
        col_lo = np.zeros(B, dtype=int)
        col_hi = np.full(B, n_theta - 1)
    width = int(np.max(col_hi - col_lo)) + 1
    sec = col_lo[:, None] + np.arange(width)
    sec_valid = sec <= col_hi[:, None]
    sec = np.minimum(sec, n_theta - 1)
    A_sec = np.conj(np.transpose(phi_a[:, sec], (1, 2, 0)))    # (B, W, K)

    bidx = np.arange(B)
    rows = np.zeros((B, n_iter), dtype=int)
    cols = np.zeros((B, n_iter), dtype=int)
    peaks = np.zeros((B, n_iter))
    used = np.zeros((B, width, n_tau), dtype=bool)
    sel_a = np.zeros((B, K, n_iter), dtype=complex)
    gram = np.zeros((B, n_iter, n_iter), dtype=complex)
    rhs = np.zeros((B, n_iter), dtype=complex)
    gains = np.zeros((B, n_iter), dtype=complex)
    residual = Z
    rec = None
    if window is not None:
        it, ir = window
        off_t = np.arange(-it, it + 1)
        off_r = np.arange(-ir, ir + 1)
        rec = {"rows": [], "row_valid": [], "cols": [], "col_valid": [], "residual": []}

    for n in range(n_iter):
        L = np.abs(A_sec @ residual) ** 2
        L[~sec_valid] = -np.inf
        L[used] = -np.inf
        flat = L.reshape(B, -1)
        best = flat.argmax(axis=1)
        peaks[:, n] = flat[bidx, best]
        w_idx, j = np.divmod(best, n_tau)
        i = sec[bidx, w_idx]
        rows[:, n], cols[:, n] = i, j
        used[bidx, w_idx, j] = True

        if rec is not None:
            r = i[:, None] + off_t
            c = j[:, None] + off_r
            rv = (r >= 0) & (r < n_theta)
            cv = (c >= 0) & (c < n_tau)
            c = np.clip(c, 0, n_tau - 1)
            rec["rows"].append(np.clip(r, 0, n_theta - 1))
            rec["row_valid"].append(rv)
            rec["cols"].append(c)
            rec["col_valid"].append(cv)
            rec["residual"].append(residual[bidx[:, None, None], np.arange(K)[None, :, None],
                                            c[:, None, :]])

        a = phi_a[:, i].T                                        # (B, K)
        sel_a[:, :, n] = a
        m = n + 1
        # atom Gram: (a_s^H a_t) (rho_s^H rho_t), with rho_s^H rho_t = G_d[j_t, j_s]
        aa = np.conj(sel_a[:, :, :m]).transpose(0, 2, 1) @ sel_a[:, :, :m]
        jj = cols[:, :m]
        dd = delay_gram[jj[:, None, :], jj[:, :, None]]
        gram[:, :m, :m] = aa * dd
        rhs[:, n] = np.einsum("bk,bk->b", np.conj(a), Z[bidx, :, j])
        g = np.linalg.solve(gram[:, :m, :m], rhs[:, :m, None])[..., 0]
        gains[:, :m] = g
        # residual in the delay-transformed domain
        fit = np.einsum("bkt,bt,btl->bkl", sel_a[:, :, :m], g, delay_gram[jj])
        residual = Z - fit

    if rec is not None:
        rec = {k: np.stack(v, axis=1) for k, v in rec.items()}
    return OmpTrace(rows, cols, peaks, gains, rec)


def soft_estimates(phi_a, residual_win, rows, row_valid, cols, col_valid, angle_grid, delay_grid,
                   beta=None):
    """Softmax-weighted angle and delay estimates over the peak windows.

    ``phi_a`` and ``residual_win`` may be autodiff nodes; the indices are
    plain arrays. Shapes: residual_win (B, K, wR), rows (B, wT), cols (B, wR).
    With ``beta=None`` the logits are the raw map values; otherwise each
    window is divided by its maximum and multiplied by ``beta``.
    Returns ``(theta_hat, tau_hat)`` nodes of shape (B,).
    """
    phi_a = ad.as_var(phi_a)
    residual_win = ad.as_var(residual_win)
    B, wt = rows.shape
    wr = cols.shape[1]
    A_win = ad.transpose(phi_a[:, rows], (1, 0, 2))                  # (B, K, wT)
    vals = ad.abs2(ad.conj(ad.swapaxes(A_win, -1, -2)) @ residual_win)  # (B, wT, wR)
    mask = (row_valid[:, :, None] & col_valid[:, None, :]).reshape(B, -1)
    logits = vals.reshape(B, wt * wr)
    if beta is not None:
        peak = np.where(mask, logits.value, -np.inf).argmax(axis=1)
        top = ad.reshape(logits[np.arange(B), peak], B, 1)
        logits = logits * ad.const(float(beta)) / top
    prob = ad.softmax(logits, axis=-1, mask=mask).reshape(B, wt, wr)
    p_theta = prob.sum(axis=2)
    p_tau = prob.sum(axis=1)
    theta = (p_theta * np.asarray(angle_grid)[rows]).sum(axis=1)
    tau = (p_tau * np.asarray(delay_grid)[cols]).sum(axis=1)
    return theta, tau


def omp_differentiable(Y, steering: SteeringDictionary, delays: DelayDictionary, num_targets,
                       iota_theta, iota_r, beta=None) -> DetectionResult:
    """Exactly ``num_targets`` iterations with softmax-window estimates.

    Residual and gain updates use the on-grid atoms selected by the argmax.
    """
    if num_targets < 1:
        raise ValueError("num_targets must be at least 1")
    if num_targets > len(steering) * len(delays):
        raise ValueError("more targets than dictionary atoms")
    if iota_theta < 0 or iota_r < 0:
        raise ValueError("window radii must be nonnegative")
    Z = (Y @ np.conj(delays.matrix))[None]
    trace = omp_batch(Z, steering.matrix, delays.gram(), num_targets,
                      window=(iota_theta, iota_r))
    w = trace.window
    thetas, taus = [], []
    for n in range(num_targets):
        th, tu = soft_estimates(steering.matrix, w["residual"][:, n], w["rows"][:, n],
                                w["row_valid"][:, n], w["cols"][:, n], w["col_valid"][:, n],
                                steering.angle_grid, delays.delay_grid, beta)
        thetas.append(th.value[0])
        taus.append(tu.value[0])
    atoms = list(zip(trace.rows[0].tolist(), trace.cols[0].tolist()))
    return DetectionResult(np.array(thetas), np.array(taus), trace.gains[0], atoms,
                           trace.peaks[0].tolist())
