"""Greedy per-antenna grid-search calibration of element positions.

Antenna 1 is taken as known. For k = 2..K every candidate gap from a fixed
grid is tried between element k-1 and element k (the elements beyond k stay
where they are), the mean GOSPA of on-grid OMP with a known
number of targets is measured on a shared set of observations, and the best
gap is kept before moving on to element k+1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .array import ArrayModel, steering_matrix, steering_phase_matrix
from .config import rng_stream
from .evaluation import known_count_gospa
from .scenario import Scenario, SensingDraw, draw_sensing, unit_precoders

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationConfig:
    spacing_grid: np.ndarray
    observations: int = 64
    sweeps: int = 1

    def __post_init__(self):
        grid = np.asarray(self.spacing_grid, dtype=float).reshape(-1)
        if grid.size == 0:
            raise ValueError("spacing grid is empty")
        if np.any(grid <= 0):
            raise ValueError("candidate spacings must be positive")
        if self.observations < 1 or self.sweeps < 1:
            raise ValueError("observations and sweeps must be positive")
        object.__setattr__(self, "spacing_grid", grid)

    @classmethod
    def around_nominal(cls, wavelength, sigma, num_candidates=100, width_sigmas=4.0, **kw):
        """Uniform grid over lambda/2 +- width_sigmas * sigma."""
        if num_candidates < 2:
            raise ValueError("need at least two candidates")
        lo = max(wavelength / 2 - width_sigmas * sigma, 1e-3 * wavelength)
        hi = wavelength / 2 + width_sigmas * sigma
        return cls(np.linspace(lo, hi, num_candidates), **kw)


@dataclass
class CalibrationResult:
    positions: np.ndarray
    choices: list = field(default_factory=list)    # (sweep, antenna, index, spacing)
    losses: list = field(default_factory=list)     # one loss vector per choice

    def array(self, wavelength):
        return ArrayModel.from_positions(self.positions, wavelength)


def calibrate_on_draw(scn: Scenario, assumed_positions, cal: CalibrationConfig,
                      draw: SensingDraw, F, result: CalibrationResult = None, sweep=0):
    """One greedy sweep over antennas 2..K on fixed observations."""
    lam = scn.wavelength
    pos = np.array(assumed_positions, dtype=float)
    result = result or CalibrationResult(pos)
    for k in range(1, pos.size):
        losses = np.empty(cal.spacing_grid.size)
        for m, gap in enumerate(cal.spacing_grid):
            trial = pos.copy()
            trial[k] = pos[k - 1] + gap
            # trial arrays may be transiently out of order, so no ArrayModel here
            phi = np.exp(1j * steering_phase_matrix(trial - trial.mean(), scn.angle_grid, lam))
            losses[m] = known_count_gospa(scn, draw, F, phi).mean()
        best = int(np.argmin(losses))             # lowest index on ties
        pos[k] = pos[k - 1] + cal.spacing_grid[best]
        result.choices.append((sweep, k + 1, best, cal.spacing_grid[best]))
        result.losses.append(losses)
        log.debug("sweep %d antenna %d: spacing %.6g m, mean GOSPA %.4f",
                  sweep, k + 1, cal.spacing_grid[best], losses[best])
    result.positions = pos
    return result


def greedy_calibrate(scn: Scenario, assumed_positions, cal: CalibrationConfig, seed=0):
    """Calibrated element positions; observations are redrawn every sweep.

    The transmit beams always assume half-wavelength spacing, and every
    observation holds between 1 and ``t_max`` targets whose count is known.
    """
    nominal = scn.nominal_array
    phi_tx = steering_matrix(nominal, scn.angle_grid).matrix
    result = CalibrationResult(np.array(assumed_positions, dtype=float))
    for i in range(cal.sweeps):
        rng = rng_stream(seed, "calibration", i)
        sectors = scn.sample_sectors(rng, cal.observations)
        F = np.sqrt(scn.cfg.power) * unit_precoders(phi_tx, scn.angle_grid, sectors)
        draw = draw_sensing(scn, sectors, rng, min_targets=1)
        calibrate_on_draw(scn, result.positions, cal, draw, F, result, sweep=i)
    return result


def write_report(result: CalibrationResult, spacing_grid, path):
    """CSV with one row per (sweep, antenna, candidate)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "antenna", "candidate", "spacing_m", "mean_gospa", "chosen"])
        for (sweep, k, best, _), losses in zip(result.choices, result.losses):
            for m, (gap, loss) in enumerate(zip(spacing_grid, losses)):
                w.writerow([sweep, k, m, f"{gap:.9e}", f"{loss:.9e}", int(m == best)])
