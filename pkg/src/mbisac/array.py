"""Uniform linear array with inter-antenna spacing perturbations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class ArrayModel:
    """Linear array described by its K-1 consecutive element gaps.

    Antenna positions are ``p_k = p0 + sum_{i<=k} d_i``. Phases are formed
    from positions re-centred on their mean, so the nominal array
    (``d = lambda/2`` everywhere) reproduces the symmetric closed form
    ``exp(-j*pi*(k-(K-1)/2)*sin(theta))``.
    """

    num_antennas: int
    wavelength: float
    spacing: np.ndarray = field(default=None)
    reference_position: float = None

    def __post_init__(self):
        K = int(self.num_antennas)
        if K < 1:
            raise ValueError("num_antennas must be positive")
        lam = float(self.wavelength)
        spacing = self.spacing
        if spacing is None:
            spacing = np.full(K - 1, lam / 2)
        spacing = np.asarray(spacing, dtype=float).reshape(-1)
        if spacing.shape != (K - 1,):
            raise ValueError(f"spacing must have length {K - 1}, got {spacing.shape}")
        if np.any(spacing <= 0):
            raise ValueError("all spacings must be strictly positive")
        p0 = self.reference_position
        if p0 is None:
            p0 = -(K - 1) * lam / 4
        spacing.setflags(write=False)
        object.__setattr__(self, "num_antennas", K)
        object.__setattr__(self, "wavelength", lam)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "reference_position", float(p0))

    @classmethod
    def nominal(cls, num_antennas, wavelength):
        return cls(num_antennas, wavelength)

    @classmethod
    def from_positions(cls, positions, wavelength):
        positions = np.asarray(positions, dtype=float)
        return cls(len(positions), wavelength, np.diff(positions), positions[0])

    @property
    def positions(self):
        return self.reference_position + np.concatenate(([0.0], np.cumsum(self.spacing)))

    @property
    def centered_positions(self):
        p = self.positions
        return p - p.mean()

    @property
    def is_nominal(self):
        return bool(np.all(self.spacing == self.wavelength / 2))

    def steering_vector(self, theta):
        return steering_vector(self, theta)

    def steering_matrix(self, angle_grid):
        return steering_matrix(self, angle_grid)


@dataclass(frozen=True)
class SteeringDictionary:
    """K x N_theta matrix of steering vectors and the angles of its columns."""

    matrix: np.ndarray
    angle_grid: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        grid = np.asarray(self.angle_grid, dtype=float).reshape(-1)
        if matrix.ndim != 2 or matrix.shape[1] != grid.size:
            raise ValueError("matrix columns must match the angle grid")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("angle grid must be strictly increasing")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "angle_grid", grid)

    @property
    def num_antennas(self):
        return self.matrix.shape[0]

    def __len__(self):
        return self.angle_grid.size

    def subset(self, columns):
        columns = np.asarray(columns)
        return SteeringDictionary(self.matrix[:, columns], self.angle_grid[columns])


def steering_phase_matrix(centered_positions, angles, wavelength):
    """Phase argument -2*pi*p_k*sin(theta)/lambda for every (k, theta)."""
    return (-2 * np.pi / wavelength) * np.multiply.outer(centered_positions, np.sin(angles))


def steering_vector(model: ArrayModel, theta: float) -> np.ndarray:
    if not -np.pi / 2 <= theta <= np.pi / 2:
        raise ValueError("theta must lie in [-pi/2, pi/2]")
    return np.exp(1j * steering_phase_matrix(model.centered_positions, theta, model.wavelength))


def steering_matrix(model: ArrayModel, angle_grid) -> SteeringDictionary:
    grid = np.atleast_1d(np.asarray(angle_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("angle grid is empty")
    if np.any(np.abs(grid) > np.pi / 2 + 1e-12):
        raise ValueError("angle grid must lie in [-pi/2, pi/2]")
    phase = steering_phase_matrix(model.centered_positions, grid, model.wavelength)
    return SteeringDictionary(np.exp(1j * phase), grid)


def steering_vectors(model: ArrayModel, angles) -> np.ndarray:
    """Steering vectors for an arbitrarily shaped array of angles.

    Returns shape ``angles.shape + (K,)``; no grid ordering is required.
    """
    angles = np.asarray(angles, dtype=float)
    phase = (-2 * np.pi / model.wavelength) * np.sin(angles)[..., None] * model.centered_positions
    return np.exp(1j * phase)


def sample_impairment(num_antennas, sigma, wavelength, rng):
    """Draw K-1 spacings from N(lambda/2, sigma^2), redrawing nonpositive ones."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    d = wavelength / 2 + sigma * rng.standard_normal(num_antennas - 1)
    bad = d <= 0
    while np.any(bad):
        d[bad] = wavelength / 2 + sigma * rng.standard_normal(int(bad.sum()))
        bad = d <= 0
    return d


def uniform_angle_grid(n, lo=-np.pi / 2, hi=np.pi / 2):
    return np.linspace(lo, hi, n)
