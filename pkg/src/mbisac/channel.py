"""OFDM sensing and communication channel simulation.

Sensing observation (monostatic, K antennas, S subcarriers)::

    Y_r = sum_t psi_t a(theta_t) a(theta_t)^T f [x * rho(tau_t)]^T + W

with ``[rho(tau)]_s = exp(-j 2 pi s df tau)`` and ``W ~ CN(0, N0 S df)``.
The communication receiver sees ``y_c = kappa * x + n`` with
``kappa = sum_t psi_t a(theta_t)^T f rho(tau_t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .array import SPEED_OF_LIGHT, ArrayModel, steering_vectors
from .comm import Constellation, qpsk


@dataclass(frozen=True)
class OfdmConfig:
    num_subcarriers: int = 256
    subcarrier_spacing: float = 240e3
    carrier_frequency: float = 60e9
    power: float = 1.0
    noise_psd: float = 1.0
    comm_noise_psd: float = None
    mean_rcs: float = 1.0

    def __post_init__(self):
        for name in ("num_subcarriers", "subcarrier_spacing", "carrier_frequency",
                     "power", "mean_rcs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_psd < 0:
            raise ValueError("noise_psd must be nonnegative")
        if self.comm_noise_psd is None:
            object.__setattr__(self, "comm_noise_psd", self.noise_psd)

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def bandwidth(self):
        return self.num_subcarriers * self.subcarrier_spacing

    @property
    def noise_variance(self):
        return self.noise_psd * self.bandwidth

    @property
    def comm_noise_variance(self):
        return self.comm_noise_psd * self.bandwidth

    @property
    def cyclic_prefix(self):
        # Only gates scene validity; never enters the signal model.
        return 1 / (4 * self.subcarrier_spacing)

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return OfdmConfig(**fields)


@dataclass(frozen=True)
class SensingPriors:
    theta_min: float
    theta_max: float
    r_min: float = 10.0
    r_max: float = 43.75

    def __post_init__(self):
        if not self.theta_min <= self.theta_max:
            raise ValueError("theta_min must not exceed theta_max")
        if not 0 <= self.r_min <= self.r_max:
            raise ValueError("need 0 <= r_min <= r_max")


@dataclass(frozen=True)
class SensingScene:
    angles: np.ndarray
    ranges: np.ndarray
    gains: np.ndarray
    priors: SensingPriors
    rcs: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float).reshape(-1))
        object.__setattr__(self, "ranges", np.asarray(self.ranges, dtype=float).reshape(-1))
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=complex).reshape(-1))
        if not (self.angles.size == self.ranges.size == self.gains.size):
            raise ValueError("angles, ranges and gains must have equal length")

    @property
    def num_targets(self):
        return self.angles.size

    @property
    def delays(self):
        return 2 * self.ranges / SPEED_OF_LIGHT

    @property
    def positions(self):
        return np.stack([self.ranges * np.cos(self.angles),
                         self.ranges * np.sin(self.angles)], axis=-1)


@dataclass(frozen=True)
class CommScene:
    """Propagation paths to the single-antenna user; entry 0 is line of sight."""

    angles: np.ndarray
    delays: np.ndarray
    gains: np.ndarray
    los_range: float = None

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float).reshape(-1))
        object.__setattr__(self, "delays", np.asarray(self.delays, dtype=float).reshape(-1))
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=complex).reshape(-1))
        if self.angles.size < 1:
            raise ValueError("a communication scene needs at least the LOS path")

    @property
    def num_paths(self):
        return self.angles.size

    def delay_spread(self):
        return float(np.max(self.delays) - self.delays[0])


@dataclass(frozen=True)
class SymbolBlock:
    messages: np.ndarray
    symbols: np.ndarray


def radar_gain_power(rcs, ranges, wavelength):
    """|psi|^2 from the radar range equation."""
    return rcs * wavelength ** 2 / ((4 * np.pi) ** 3 * np.asarray(ranges, dtype=float) ** 4)


def delay_response(delays, num_subcarriers, subcarrier_spacing):
    """rho(tau) for an array of delays, shape delays.shape + (S,)."""
    s = np.arange(num_subcarriers)
    return np.exp(-2j * np.pi * subcarrier_spacing * np.asarray(delays)[..., None] * s)


def sample_interval(rng, mean_range, span_range, size=None):
    """Angular sector ``mean +- span/2`` with mean and span uniform."""
    mean = rng.uniform(*mean_range, size=size)
    span = rng.uniform(*span_range, size=size)
    return mean - span / 2, mean + span / 2


def sample_symbols(num_subcarriers, rng, constellation: Constellation = None):
    constellation = constellation or qpsk()
    m = rng.integers(0, len(constellation), size=num_subcarriers)
    return SymbolBlock(m, constellation.modulate(m))


def sample_sensing_scene(priors: SensingPriors, t_max, mean_rcs, wavelength, rng,
                         num_targets=None) -> SensingScene:
    """T ~ U{0..t_max} targets (or exactly ``num_targets``) inside the priors."""
    T = int(rng.integers(0, t_max + 1)) if num_targets is None else int(num_targets)
    angles = rng.uniform(priors.theta_min, priors.theta_max, size=T)
    ranges = rng.uniform(priors.r_min, priors.r_max, size=T)
    rcs = rng.exponential(mean_rcs, size=T)
    phase = rng.uniform(0, 2 * np.pi, size=T)
    gains = np.sqrt(radar_gain_power(rcs, ranges, wavelength)) * np.exp(1j * phase)
    return SensingScene(angles, ranges, gains, priors, rcs)


def sample_comm_scene(theta_min, theta_max, cfg: OfdmConfig, rng, max_paths=6,
                      r_min=10.0, r_max=200.0, max_redraws=1000) -> CommScene:
    """LOS user in [theta_min, theta_max] plus U{0..max_paths-1} scatterers.

    Scatterers are placed uniformly in angle over [-pi/2, pi/2] and in range
    over the same annulus as the user; any scatterer whose excess path
    exceeds the cyclic prefix is redrawn.
    """
    lam = cfg.wavelength
    theta_los = rng.uniform(theta_min, theta_max)
    r_los = rng.uniform(r_min, r_max)
    user = r_los * np.array([np.cos(theta_los), np.sin(theta_los)])
    angles, delays = [theta_los], [r_los / SPEED_OF_LIGHT]
    power = [lam ** 2 / (4 * np.pi * r_los) ** 2]
    n_nlos = int(rng.integers(0, max_paths))
    for _ in range(n_nlos):
        for _ in range(max_redraws):
            th = rng.uniform(-np.pi / 2, np.pi / 2)
            r1 = rng.uniform(r_min, r_max)
            scat = r1 * np.array([np.cos(th), np.sin(th)])
            r2 = float(np.linalg.norm(scat - user))
            if r2 > 0 and (r1 + r2 - r_los) / SPEED_OF_LIGHT <= cfg.cyclic_prefix:
                break
        else:
            raise RuntimeError("could not place a scatterer within the cyclic prefix")
        rcs = rng.exponential(cfg.mean_rcs)
        angles.append(th)
        delays.append((r1 + r2) / SPEED_OF_LIGHT)
        power.append(rcs * lam ** 2 / ((4 * np.pi) ** 3 * r1 ** 2 * r2 ** 2))
    phase = rng.uniform(0, 2 * np.pi, size=len(power))
    gains = np.sqrt(np.array(power)) * np.exp(1j * phase)
    return CommScene(angles, delays, gains, r_los)


def check_cyclic_prefix(scene, cfg: OfdmConfig):
    """True when every delay (sensing) or the delay spread (comm) fits the CP."""
    if isinstance(scene, SensingScene):
        return bool(np.all(scene.delays <= cfg.cyclic_prefix))
    return scene.delay_spread() <= cfg.cyclic_prefix + 1e-15


def complex_noise(variance, shape, rng):
    return np.sqrt(variance / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _check_power(f, cfg):
    power = float(np.vdot(f, f).real)
    if abs(power - cfg.power) > 1e-9 * cfg.power:
        raise ValueError(f"precoder power {power} differs from P = {cfg.power}")


def sensing_observation(scene: SensingScene, f, symbols, cfg: OfdmConfig,
                        array: ArrayModel, rng, noise=None) -> np.ndarray:
    """K x S sensing observation; steering vectors from the true array."""
    f = np.asarray(f, dtype=complex)
    x = np.asarray(getattr(symbols, "symbols", symbols), dtype=complex)
    K, S = array.num_antennas, cfg.num_subcarriers
    if f.shape != (K,) or x.shape != (S,):
        raise ValueError("precoder or symbol dimensions do not match the array/OFDM config")
    _check_power(f, cfg)
    A = steering_vectors(array, scene.angles)                       # (T, K)
    rho = delay_response(scene.delays, S, cfg.subcarrier_spacing)   # (T, S)
    coef = scene.gains * (A @ f)                                    # (T,)
    Y = (A.T * coef) @ (rho * x)
    if noise is None:
        noise = complex_noise(cfg.noise_variance, (K, S), rng) if cfg.noise_psd > 0 else 0.0
    return Y + noise


def matched_filter(Y, symbols):
    x = np.asarray(getattr(symbols, "symbols", symbols))
    return Y * np.conj(x)[..., None, :]


def channel_response(scene: CommScene, f, cfg: OfdmConfig, array: ArrayModel):
    """CSI kappa over the S subcarriers."""
    A = steering_vectors(array, scene.angles)
    rho = delay_response(scene.delays, cfg.num_subcarriers, cfg.subcarrier_spacing)
    return (scene.gains * (A @ f)) @ rho


def comm_observation(scene: CommScene, f, symbols, cfg: OfdmConfig, array: ArrayModel, rng,
                     noise=None):
    """Returns (y_c, kappa)."""
    f = np.asarray(f, dtype=complex)
    x = np.asarray(getattr(symbols, "symbols", symbols), dtype=complex)
    kappa = channel_response(scene, f, cfg, array)
    if noise is None:
        noise = (complex_noise(cfg.comm_noise_variance, x.shape, rng)
                 if cfg.comm_noise_psd > 0 else 0.0)
    return kappa * x + noise, kappa


def expected_radar_gain(cfg: OfdmConfig, r_min, r_max):
    """E|psi|^2 for R ~ U[r_min, r_max] and E[rcs] = mean_rcs (numerical quadrature)."""
    lam = cfg.wavelength
    integrand = lambda r: radar_gain_power(cfg.mean_rcs, r, lam)
    val, _ = integrate.quad(integrand, r_min, r_max, epsabs=0, epsrel=1e-12)
    return val / (r_max - r_min)


def calibrate_noise(cfg: OfdmConfig, target_snr_db, num_antennas, r_min=10.0, r_max=43.75):
    """N0 such that P K E|psi|^2 / (N0 S df) equals the target sensing SNR."""
    if not np.isfinite(target_snr_db):
        raise ValueError("target SNR must be finite")
    snr = 10 ** (target_snr_db / 10)
    return cfg.power * num_antennas * expected_radar_gain(cfg, r_min, r_max) / (cfg.bandwidth * snr)


def sensing_snr_db(cfg: OfdmConfig, num_antennas, r_min=10.0, r_max=43.75):
    gain = expected_radar_gain(cfg, r_min, r_max)
    return 10 * np.log10(cfg.power * num_antennas * gain / cfg.noise_variance)


def calibrate_comm_noise(cfg: OfdmConfig, target_snr_db, num_antennas, r_min=10.0, r_max=200.0):
    """N0 for the user link: LOS free-space gain averaged over R ~ U[r_min, r_max]
    with the same P K beamforming upper bound as the sensing SNR."""
    lam = cfg.wavelength
    mean_inv_r2 = 1 / (r_min * r_max)
    gain = lam ** 2 / (4 * np.pi) ** 2 * mean_inv_r2
    snr = 10 ** (target_snr_db / 10)
    return cfg.power * num_antennas * gain / (cfg.bandwidth * snr)


# batched generation ---------------------------------------------------

@dataclass
class SensingBatch:
    """Padded batch of sensing scenes. Missing targets carry zero gain."""

    angles: np.ndarray          # (B, T)
    ranges: np.ndarray          # (B, T)
    gains: np.ndarray           # (B, T)
    counts: np.ndarray          # (B,)
    sectors: np.ndarray         # (B, 2) prior angular sectors
    r_min: float = 10.0
    r_max: float = 43.75

    @property
    def size(self):
        return self.counts.size

    @property
    def mask(self):
        return np.arange(self.angles.shape[1]) < self.counts[:, None]

    @property
    def delays(self):
        return 2 * self.ranges / SPEED_OF_LIGHT

    def positions(self, b):
        n = self.counts[b]
        r, th = self.ranges[b, :n], self.angles[b, :n]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def scene(self, b):
        n = self.counts[b]
        lo, hi = self.sectors[b]
        return SensingScene(self.angles[b, :n], self.ranges[b, :n], self.gains[b, :n],
                            SensingPriors(lo, hi, self.r_min, self.r_max))


def sample_sensing_batch(sectors, t_max, cfg: OfdmConfig, rng, r_min=10.0, r_max=43.75,
                         min_targets=0, counts=None) -> SensingBatch:
    sectors = np.asarray(sectors, dtype=float).reshape(-1, 2)
    B = sectors.shape[0]
    if counts is None:
        counts = rng.integers(min_targets, t_max + 1, size=B)
    counts = np.asarray(counts, dtype=int)
    width = max(int(t_max), 1)
    u = rng.uniform(size=(B, width))
    angles = sectors[:, :1] + u * (sectors[:, 1:] - sectors[:, :1])
    ranges = rng.uniform(r_min, r_max, size=(B, width))
    rcs = rng.exponential(cfg.mean_rcs, size=(B, width))
    phase = rng.uniform(0, 2 * np.pi, size=(B, width))
    gains = np.sqrt(radar_gain_power(rcs, ranges, cfg.wavelength)) * np.exp(1j * phase)
    mask = np.arange(width) < counts[:, None]
    gains = np.where(mask, gains, 0)
    angles = np.where(mask, angles, 0.0)
    ranges = np.where(mask, ranges, 0.0)
    return SensingBatch(angles, ranges, gains, counts, sectors, r_min, r_max)


def sensing_components(batch: SensingBatch, symbols, cfg: OfdmConfig, array: ArrayModel):
    """Per-target constant factors of the sensing observation.

    Returns ``(A, C)`` with ``A`` (B, T, K) true steering vectors and
    ``C`` (B, T, K*S) the flattened ``psi_t a_t (x * rho_t)^T`` so that
    ``Y = sum_t (a_t^T f) C_t + W``.
    """
    S = cfg.num_subcarriers
    A = steering_vectors(array, batch.angles)
    rho = delay_response(batch.delays, S, cfg.subcarrier_spacing)
    xr = rho * symbols[:, None, :]
    C = batch.gains[..., None, None] * A[..., :, None] * xr[..., None, :]
    return A, C.reshape(C.shape[0], C.shape[1], -1)


def sensing_observation_batch(batch: SensingBatch, F, symbols, cfg: OfdmConfig,
                              array: ArrayModel, noise):
    """Batched sensing observation; F is (B, K), symbols (B, S), noise (B, K, S)."""
    A, C = sensing_components(batch, symbols, cfg, array)
    coef = np.einsum("btk,bk->bt", A, F)
    Y = (coef[:, None, :] @ C)[:, 0, :].reshape(noise.shape)
    return Y + noise


@dataclass
class CommBatch:
    angles: np.ndarray      # (B, P)
    delays: np.ndarray      # (B, P)
    gains: np.ndarray       # (B, P), zero for absent paths
    sectors: np.ndarray     # (B, 2)


def sample_comm_batch(sectors, cfg: OfdmConfig, rng, max_paths=6, r_min=10.0, r_max=200.0):
    sectors = np.asarray(sectors, dtype=float).reshape(-1, 2)
    B = sectors.shape[0]
    angles = np.zeros((B, max_paths))
    delays = np.zeros((B, max_paths))
    gains = np.zeros((B, max_paths), dtype=complex)
    for b in range(B):
        sc = sample_comm_scene(sectors[b, 0], sectors[b, 1], cfg, rng, max_paths, r_min, r_max)
        n = sc.num_paths
        angles[b, :n], delays[b, :n], gains[b, :n] = sc.angles, sc.delays, sc.gains
    return CommBatch(angles, delays, gains, sectors)


def comm_components(batch: CommBatch, cfg: OfdmConfig, array: ArrayModel):
    """``(A, G)`` with kappa = sum_p (a_p^T f) G_p; A (B, P, K), G (B, P, S)."""
    A = steering_vectors(array, batch.angles)
    rho = delay_response(batch.delays, cfg.num_subcarriers, cfg.subcarrier_spacing)
    return A, batch.gains[..., None] * rho
