"""Least-squares beampattern synthesis and multi-beam ISAC precoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import ArrayModel, SteeringDictionary, steering_vectors

RIDGE_EPS = 1e-8
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class Beampattern:
    grid: np.ndarray
    response: np.ndarray


@dataclass(frozen=True)
class Precoder:
    f: np.ndarray
    power: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.f, dtype=dtype)


def desired_beampattern(angle_grid, interval, num_antennas) -> Beampattern:
    """K on the grid points inside ``interval``, zero elsewhere."""
    grid = np.asarray(angle_grid, dtype=float)
    lo, hi = interval
    b = np.where((grid >= lo) & (grid <= hi), float(num_antennas), 0.0)
    return Beampattern(grid, b)


def beampattern_matrix(angle_grid, intervals, num_antennas):
    """Desired patterns for many intervals, shape (N_theta, B)."""
    grid = np.asarray(angle_grid, dtype=float)[:, None]
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    return np.where((grid >= iv[:, 0]) & (grid <= iv[:, 1]), float(num_antennas), 0.0)


def regularized_gram(phi):
    """conj(Phi) Phi^T plus a ridge when the Gram matrix is ill-conditioned.

    Returns ``(gram, ridge)``; the ridge is a constant (no gradient) term.
    """
    gram = np.conj(phi) @ phi.T
    K = gram.shape[0]
    ridge = 0.0
    if np.linalg.cond(gram) > MAX_CONDITION:
        ridge = RIDGE_EPS * np.trace(gram).real / K
    return gram + ridge * np.eye(K), ridge


def synthesize(steering: SteeringDictionary, interval) -> Precoder:
    """Unnormalized LS precoder f_bs = (Phi^* Phi^T)^{-1} Phi^* b."""
    phi = steering.matrix
    b = desired_beampattern(steering.angle_grid, interval, phi.shape[0]).response
    if not np.any(b):
        raise ValueError("empty beampattern: interval contains no grid angle")
    gram, _ = regularized_gram(phi)
    f = np.linalg.solve(gram, np.conj(phi) @ b)
    return Precoder(f, float(np.vdot(f, f).real))


def synthesize_batch(steering: SteeringDictionary, intervals):
    """LS precoders for many intervals at once, shape (B, K)."""
    phi = steering.matrix
    b = beampattern_matrix(steering.angle_grid, intervals, phi.shape[0])
    if not np.all(b.any(axis=0)):
        raise ValueError("empty beampattern: interval contains no grid angle")
    gram, _ = regularized_gram(phi)
    return np.linalg.solve(gram, np.conj(phi) @ b).T


def isac_combine(f_r, f_c, eta, phi, power) -> Precoder:
    """sqrt(P) (sqrt(eta) f_r + sqrt(1-eta) e^{j phi} f_c) / ||.||.

    Both beams are first scaled to unit norm.
    """
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    f_r = np.asarray(f_r, dtype=complex)
    f_c = np.asarray(f_c, dtype=complex)
    f_r = f_r / np.linalg.norm(f_r, axis=-1, keepdims=True)
    f_c = f_c / np.linalg.norm(f_c, axis=-1, keepdims=True)
    mix = np.sqrt(eta) * f_r + np.sqrt(1 - eta) * np.exp(1j * phi) * f_c
    norm = np.linalg.norm(mix, axis=-1, keepdims=True)
    if np.any(norm <= 1e-12):
        raise ValueError("sensing and communication beams cancel exactly")
    return Precoder(np.sqrt(power) * mix / norm, power)


def transmit_response(array: ArrayModel, f, angles):
    """|a(theta)^T f|^2 on the true array."""
    return np.abs(steering_vectors(array, angles) @ np.asarray(f)) ** 2
