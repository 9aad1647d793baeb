"""Shared simulation setup and batched draws in the delay-transformed domain.

The matched-filtered sensing observation only enters the receiver through
``Z = Y~ conj(Phi_d)``. Because ``Y~`` is linear in the per-target factors
``a_t^T f``, a draw stores the constant pieces once and any precoder can be
applied afterwards with a single contraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import ArrayModel, SteeringDictionary, sample_impairment, steering_matrix, \
    steering_vectors, uniform_angle_grid
from .beamforming import isac_combine, synthesize_batch
from .channel import OfdmConfig, calibrate_comm_noise, calibrate_noise, comm_components, \
    complex_noise, delay_response, sample_comm_batch, sample_interval, sample_sensing_batch, \
    sensing_observation_batch, SensingBatch, CommBatch
from .comm import qpsk
from .config import ExperimentConfig, rng_stream
from .metrics import GospaParams
from .omp import DelayDictionary, build_delay_dictionary, discrete_resolutions


@dataclass
class Scenario:
    cfg: OfdmConfig
    true_array: ArrayModel
    angle_grid: np.ndarray
    delays: DelayDictionary
    delay_gram: np.ndarray
    iota: tuple
    t_max: int
    comm_max_paths: int
    r_min: float
    r_max: float
    comm_r_min: float
    comm_r_max: float
    theta_mean_range: tuple      # radians
    theta_span_range: tuple      # radians
    gospa_eval: GospaParams

    @property
    def num_antennas(self):
        return self.true_array.num_antennas

    @property
    def wavelength(self):
        return self.cfg.wavelength

    @property
    def nominal_array(self):
        return ArrayModel.nominal(self.num_antennas, self.wavelength)

    def steering(self, array: ArrayModel) -> SteeringDictionary:
        return steering_matrix(array, self.angle_grid)

    def dictionary(self, matrix) -> SteeringDictionary:
        return SteeringDictionary(np.asarray(matrix), self.angle_grid)

    def sample_sectors(self, rng, size):
        lo, hi = sample_interval(rng, self.theta_mean_range, self.theta_span_range, size)
        return np.stack([lo, hi], axis=-1)


def build_scenario(config: ExperimentConfig, true_spacing=None) -> Scenario:
    """Derive the physical setup; the true impairment is drawn from the seed
    unless given explicitly."""
    a, o, ch, g = config.array, config.ofdm, config.channel, config.grid
    base = OfdmConfig(o.num_subcarriers, o.subcarrier_spacing, o.carrier_frequency, o.power,
                      mean_rcs=ch.mean_rcs)
    K = a.num_antennas
    n0 = calibrate_noise(base, ch.snr_r_db, K, ch.r_min, ch.r_max)
    n0c = calibrate_comm_noise(base, ch.snr_c_db, K, ch.comm_r_min, ch.comm_r_max)
    cfg = base.replace(noise_psd=n0, comm_noise_psd=n0c)
    lam = cfg.wavelength
    if true_spacing is None:
        true_spacing = sample_impairment(K, a.sigma_lambda * lam, lam,
                                         rng_stream(config.seed, "impairment"))
    true_array = ArrayModel(K, lam, true_spacing)
    grid = uniform_angle_grid(g.n_theta)
    delays = build_delay_dictionary(cfg, ch.r_min, ch.r_max, g.n_tau)
    iota = discrete_resolutions(K, cfg.num_subcarriers, cfg.subcarrier_spacing, g.n_theta,
                                g.n_tau, grid[0], grid[-1], ch.r_min, ch.r_max)
    gamma = config.evaluation.gospa_gamma
    if gamma is None:
        gamma = ch.r_max - ch.r_min
    return Scenario(cfg, true_array, grid, delays, delays.gram(), iota, ch.t_max,
                    ch.comm_max_paths, ch.r_min, ch.r_max, ch.comm_r_min, ch.comm_r_max,
                    tuple(np.deg2rad(ch.theta_mean_deg)), tuple(np.deg2rad(ch.theta_span_deg)),
                    GospaParams(gamma, config.learning.gospa_mu, config.learning.gospa_p))


# precoders --------------------------------------------------------------

def unit_precoders(phi, angle_grid, sectors):
    """LS beams for each sector, scaled to unit norm, shape (B, K)."""
    F = synthesize_batch(SteeringDictionary(np.asarray(phi), angle_grid), sectors)
    return F / np.linalg.norm(F, axis=-1, keepdims=True)


def isac_precoders(phi, angle_grid, sensing_sectors, comm_sectors, eta, phi_shift, power):
    """Batched ISAC precoders with ||f||^2 = P."""
    if eta == 1:
        return np.sqrt(power) * unit_precoders(phi, angle_grid, sensing_sectors)
    f_c = unit_precoders(phi, angle_grid, comm_sectors)
    if eta == 0:
        return np.sqrt(power) * f_c
    f_r = unit_precoders(phi, angle_grid, sensing_sectors)
    return isac_combine(f_r, f_c, eta, phi_shift, power).f


# sensing draws ----------------------------------------------------------

@dataclass
class SensingDraw:
    batch: SensingBatch
    steer: np.ndarray        # (B, T, K) true steering vectors of the targets
    parts: np.ndarray        # (B, T, K, N_tau) psi_t a_t (rho_t^T conj(Phi_d))
    symbols: np.ndarray      # (B, S)
    noise: np.ndarray        # (B, K, S) receiver noise W
    noise_z: np.ndarray      # (B, K, N_tau) (W * conj(x)) conj(Phi_d)

    @property
    def size(self):
        return self.batch.size

    def z(self, F):
        """Delay-transformed matched-filter output for precoders F (B, K)."""
        coef = np.einsum("btk,bk->bt", self.steer, F)
        return np.einsum("bt,btkl->bkl", coef, self.parts) + self.noise_z


def draw_sensing(scn: Scenario, sectors, rng, min_targets=0, counts=None) -> SensingDraw:
    cfg = scn.cfg
    batch = sample_sensing_batch(sectors, scn.t_max, cfg, rng, scn.r_min, scn.r_max,
                                 min_targets=min_targets, counts=counts)
    return sensing_draw_from_batch(scn, batch, rng)


def sensing_draw_from_batch(scn: Scenario, batch: SensingBatch, rng, noiseless=False):
    """Symbols and noise for a given set of scenes (noise is zero when ``noiseless``)."""
    cfg = scn.cfg
    B = batch.size
    K, S = scn.num_antennas, cfg.num_subcarriers
    const = qpsk()
    symbols = const.modulate(rng.integers(0, len(const), size=(B, S)))
    noise = complex_noise(0.0 if noiseless else cfg.noise_variance, (B, K, S), rng)
    steer = steering_vectors(scn.true_array, batch.angles)
    conj_d = np.conj(scn.delays.matrix)
    proj = delay_response(batch.delays, S, cfg.subcarrier_spacing) @ conj_d   # (B, T, N_tau)
    parts = batch.gains[..., None, None] * steer[..., :, None] * proj[..., None, :]
    noise_z = (noise * np.conj(symbols)[:, None, :]) @ conj_d
    return SensingDraw(batch, steer, parts, symbols, noise, noise_z)


def sensing_y(scn: Scenario, draw: SensingDraw, F):
    """Full K x S observations (before matched filtering) for the same draw."""
    return sensing_observation_batch(draw.batch, F, draw.symbols, scn.cfg, scn.true_array,
                                     draw.noise)


# communication draws ----------------------------------------------------

@dataclass
class CommDraw:
    batch: CommBatch
    steer: np.ndarray        # (B, P, K)
    paths: np.ndarray        # (B, P, S) psi_p rho(tau_p)
    messages: np.ndarray     # (B, S)
    symbols: np.ndarray      # (B, S)
    noise: np.ndarray        # (B, S)

    def kappa(self, F):
        coef = np.einsum("bpk,bk->bp", self.steer, F)
        return np.einsum("bp,bps->bs", coef, self.paths)

    def received(self, F):
        k = self.kappa(F)
        return k * self.symbols + self.noise, k


def draw_comm(scn: Scenario, sectors, rng) -> CommDraw:
    cfg = scn.cfg
    batch = sample_comm_batch(sectors, cfg, rng, scn.comm_max_paths, scn.comm_r_min,
                              scn.comm_r_max)
    steer, paths = comm_components(batch, cfg, scn.true_array)
    B, S = batch.angles.shape[0], cfg.num_subcarriers
    const = qpsk()
    messages = rng.integers(0, len(const), size=(B, S))
    noise = complex_noise(cfg.comm_noise_variance, (B, S), rng)
    return CommDraw(batch, steer, paths, messages, const.modulate(messages), noise)
