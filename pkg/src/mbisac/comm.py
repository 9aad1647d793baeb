"""Communication receiver: hard ML decoding and the soft posterior used for
training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=complex))

    def __len__(self):
        return self.points.size

    def modulate(self, messages):
        return self.points[np.asarray(messages)]


def qpsk() -> Constellation:
    """Gray-mapped QPSK with unit symbol energy.

    Index bits (b1 b0) map to (sign of I, sign of Q): adjacent points differ
    in one bit.
    """
    s = 1 / np.sqrt(2)
    return Constellation(np.array([s + 1j * s, -s + 1j * s, s - 1j * s, -s - 1j * s]))


def symbol_distances(y, kappa, constellation):
    """|y_s - kappa_s x(m)|^2 for every subcarrier and message, shape (..., S, M)."""
    y = np.asarray(y)[..., None]
    kappa = np.asarray(kappa)[..., None]
    return np.abs(y - kappa * constellation.points) ** 2


def ml_detect(y, kappa, constellation=None):
    """Subcarrier-wise maximum-likelihood decision; ties go to the lowest index."""
    constellation = constellation or qpsk()
    y, kappa = np.asarray(y), np.asarray(kappa)
    if y.shape != kappa.shape:
        raise ValueError("y and kappa must have the same shape")
    return np.argmin(symbol_distances(y, kappa, constellation), axis=-1)


def soft_posterior(y, kappa, constellation=None):
    """Softmax of -log|y - kappa x(m)|^2 over the constellation.

    Works elementwise over any leading shape. A zero distance puts all mass on
    that symbol.
    """
    constellation = constellation or qpsk()
    d2 = symbol_distances(y, kappa, constellation)
    logits = -np.log(np.maximum(d2, _LOG_FLOOR))
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def qpsk_ser(snr):
    """Analytic QPSK symbol error rate at per-symbol SNR |kappa|^2 / noise variance."""
    q = 0.5 * erfc(np.sqrt(np.asarray(snr, dtype=float) / 2))
    return 2 * q - q * q
