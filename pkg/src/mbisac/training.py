"""End-to-end learning of the array model through the differentiable pipeline.

Forward pass (all on the autodiff tape unless noted)::

    params -> Phi_a -> LS precoders (regularized solve) -> Z = sum_t (a_t^T f) Z_t + W_z
           -> batched OMP (numpy: argmax, atoms, gains, residual)
           -> window softmax estimates -> positions -> GOSPA (gamma = inf)
    params -> precoders -> kappa -> soft posterior -> CCE

Gradient-opaque: argmax indices, atom sets, LS gains and the fitted part
subtracted by each residual update. Gradients therefore reach the
observation of every iteration, but only through ``Z`` itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .array import SPEED_OF_LIGHT, ArrayModel, steering_matrix
from .beamforming import MAX_CONDITION, RIDGE_EPS, beampattern_matrix
from .comm import qpsk
from .metrics import GospaParams, assignment_enumerate, assignment_hungarian, ENUMERATION_LIMIT
from .omp import omp_batch, sector_columns, soft_estimates
from .scenario import CommDraw, Scenario, SensingDraw, draw_comm, draw_sensing

CHECKPOINT_VERSION = 1


# parameters -------------------------------------------------------------

@dataclass
class LearnableParams:
    """Either K-1 spacings (metres) or a free complex K x N_theta dictionary."""

    mode: str
    values: np.ndarray
    num_antennas: int
    wavelength: float
    angle_grid: np.ndarray

    def __post_init__(self):
        K, n = self.num_antennas, len(self.angle_grid)
        if self.mode == "impairment":
            self.values = np.array(self.values, dtype=float).reshape(-1)
            if self.values.size != K - 1:
                raise ValueError(f"impairment mode needs {K - 1} spacings")
        elif self.mode == "dictionary":
            self.values = np.array(self.values, dtype=complex)
            if self.values.shape != (K, n):
                raise ValueError(f"dictionary mode needs a {K}x{n} matrix")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def initial(cls, mode, num_antennas, wavelength, angle_grid):
        """Start from the nominal array, as the baseline does."""
        grid = np.asarray(angle_grid, dtype=float)
        if mode == "impairment":
            vals = np.full(num_antennas - 1, wavelength / 2)
        else:
            vals = steering_matrix(ArrayModel.nominal(num_antennas, wavelength), grid).matrix
        return cls(mode, vals, num_antennas, wavelength, grid)

    @property
    def num_real_parameters(self):
        return self.values.size * (2 if self.mode == "dictionary" else 1)

    def array(self) -> ArrayModel:
        if self.mode != "impairment":
            raise ValueError("only impairment mode defines an array")
        return ArrayModel(self.num_antennas, self.wavelength, self.values)

    def steering(self):
        """Current K x N_theta steering matrix (plain array)."""
        if self.mode == "impairment":
            return steering_matrix(self.array(), self.angle_grid).matrix
        return self.values.copy()

    def tape_steering(self, node):
        """Steering matrix as a function of the parameter node."""
        if self.mode == "dictionary":
            return node
        K = self.num_antennas
        # centred positions are linear in the spacings; p0 drops out
        lower = np.tril(np.ones((K, K - 1)), -1)
        centre = lower - lower.mean(axis=0, keepdims=True)
        pos = ad.matmul(ad.const(centre), ad.reshape(node, K - 1, 1))          # (K, 1)
        sin = np.sin(self.angle_grid)[None, :] * (-2 * np.pi / self.wavelength)
        return ad.exp(ad.mul(pos * sin, 1j))

    def copy(self):
        return LearnableParams(self.mode, self.values.copy(), self.num_antennas,
                               self.wavelength, self.angle_grid.copy())


# optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def _real_view(x):
    x = np.ascontiguousarray(x)
    return x.view(float) if np.iscomplexobj(x) else x


def adam_init(values):
    r = _real_view(values)
    return AdamState(np.zeros_like(r, dtype=float), np.zeros_like(r, dtype=float), 0)


def adam_step(values, grad, state: AdamState, lr):
    """One Adam update; complex values update real and imaginary parts separately."""
    x = _real_view(np.array(values, copy=True))
    g = _real_view(np.asarray(grad, dtype=np.result_type(values)))
    step = state.step + 1
    m = BETA1 * state.m + (1 - BETA1) * g
    v = BETA2 * state.v + (1 - BETA2) * g * g
    m_hat = m / (1 - BETA1 ** step)
    v_hat = v / (1 - BETA2 ** step)
    x = x - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    out = x.view(complex) if np.iscomplexobj(values) else x
    return out.reshape(np.shape(values)), AdamState(m, v, step)


# batches ----------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 64
    iterations: int = 2000
    lr: float = 2e-5
    omega_r: float = 1.0
    eta: float = 1.0
    phi: float = 0.0
    seed: int = 0
    softmax_beta: float = None              # None: raw map values as logits
    min_spacing_fraction: float = 0.05      # spacings clipped at this fraction of lambda
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 <= self.omega_r <= 1 or not 0 <= self.eta <= 1:
            raise ValueError("omega_r and eta must lie in [0, 1]")


@dataclass
class TrainingBatch:
    """A frozen set of random realizations for one loss evaluation."""

    seed: int
    sensing_sectors: np.ndarray
    comm_sectors: np.ndarray
    sensing: SensingDraw = None
    comm: CommDraw = None


def sample_training_batch(scn: Scenario, batch_size, rng, seed=0, need_sensing=True,
                          need_comm=True) -> TrainingBatch:
    """Random sectors per item, T ~ U{1..T_max} targets, LOS user plus scatterers."""
    s_sec = scn.sample_sectors(rng, batch_size)
    c_sec = scn.sample_sectors(rng, batch_size)
    sens = draw_sensing(scn, s_sec, rng, min_targets=1) if need_sensing else None
    comm = draw_comm(scn, c_sec, rng) if need_comm else None
    return TrainingBatch(seed, s_sec, c_sec, sens, comm)


# forward pass -----------------------------------------------------------

def _tape_unit_beams(phi, angle_grid, sectors):
    """LS beams for each sector, unit norm, shape (K, B)."""
    K = phi.shape[0]
    gram = ad.conj(phi) @ ad.swapaxes(phi, 0, 1)
    ridge = 0.0
    if np.linalg.cond(gram.value) > MAX_CONDITION:
        ridge = RIDGE_EPS * np.trace(gram.value).real / K
    gram = gram + ad.const(ridge * np.eye(K))
    b = beampattern_matrix(angle_grid, sectors, K)
    if not np.all(b.any(axis=0)):
        raise ValueError("empty beampattern: interval contains no grid angle")
    F = ad.solve(gram, ad.conj(phi) @ ad.const(b))
    norm = ad.sqrt(ad.abs2(F).sum(axis=0, keepdims=True))
    return F / norm


def tape_precoders(phi, angle_grid, s_sectors, c_sectors, eta, phi_shift, power):
    """ISAC precoders on the tape, shape (B, K)."""
    if eta == 1:
        F = _tape_unit_beams(phi, angle_grid, s_sectors)
    elif eta == 0:
        F = _tape_unit_beams(phi, angle_grid, c_sectors)
    else:
        fr = _tape_unit_beams(phi, angle_grid, s_sectors)
        fc = _tape_unit_beams(phi, angle_grid, c_sectors)
        mix = fr * np.sqrt(eta) + fc * (np.sqrt(1 - eta) * np.exp(1j * phi_shift))
        F = mix / ad.sqrt(ad.abs2(mix).sum(axis=0, keepdims=True))
    return ad.swapaxes(F * np.sqrt(power), 0, 1)


def gospa_assignments(true_pos, est_pos, counts):
    """Optimal matching per item (gamma = inf, equal cardinalities).

    Returns ``perm`` (B, T) with ``perm[b, i]`` the estimate matched to true
    target ``i``; padded slots map to themselves.
    """
    B, T, _ = true_pos.shape
    perm = np.tile(np.arange(T), (B, 1))
    for b in range(B):
        n = counts[b]
        if n == 0:
            continue
        P, Q = true_pos[b, :n], est_pos[b, :n]
        cost = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)
        if not np.all(np.isfinite(cost)):
            continue            # the loss turns non-finite and is reported by the caller
        fn =assignment_enumerate if n <= ENUMERATION_LIMIT else assignment_hungarian
        perm[b, :n] = fn(cost)[0]
    return perm


def sensing_loss(scn: Scenario, phi, F, draw: SensingDraw, sectors, beta=None):
    """Mean GOSPA (gamma = inf, p = 2) of the differentiable OMP estimates."""
    B = draw.size
    counts = draw.batch.counts
    T = int(counts.max())
    coef = ad.matmul(ad.const(draw.steer[:, :T]), ad.reshape(F, B, -1, 1))       # (B, T, 1)
    K, n_tau = draw.parts.shape[2:]
    parts = ad.const(draw.parts[:, :T].reshape(B, T, K * n_tau))
    Z = ad.reshape(ad.swapaxes(coef, 1, 2) @ parts, B, K, n_tau) + ad.const(draw.noise_z)
    lo, hi = sector_columns(scn.angle_grid, sectors)
    trace = omp_batch(Z.value, phi.value, scn.delay_gram, T, lo, hi, window=scn.iota)
    w = trace.window
    bidx = np.arange(B)[:, None, None]
    kidx = np.arange(K)[None, :, None]
    thetas, taus = [], []
    for n in range(T):
        cols = w["cols"][:, n]
        z_win = Z[bidx, kidx, cols[:, None, :]]
        fitted = z_win.value - w["residual"][:, n]
        res = z_win - ad.const(fitted)
        th, tu = soft_estimates(phi, res, w["rows"][:, n], w["row_valid"][:, n], cols,
                                w["col_valid"][:, n], scn.angle_grid, scn.delays.delay_grid,
                                beta)
        thetas.append(th)
        taus.append(tu)
    theta = ad.stack(thetas, axis=1)
    rng_hat = ad.stack(taus, axis=1) * (SPEED_OF_LIGHT / 2)
    x_hat = rng_hat * ad.cos(theta)
    y_hat = rng_hat * ad.sin(theta)
    mask = np.arange(T) < counts[:, None]
    r_true, th_true = draw.batch.ranges[:, :T], draw.batch.angles[:, :T]
    true_pos = np.stack([r_true * np.cos(th_true), r_true * np.sin(th_true)], axis=-1)
    est_pos = np.stack([x_hat.value, y_hat.value], axis=-1)
    perm = gospa_assignments(true_pos, est_pos, counts)
    rows = np.arange(B)[:, None]
    dx = x_hat[rows, perm] - true_pos[..., 0]
    dy = y_hat[rows, perm] - true_pos[..., 1]
    sq = (ad.abs2(dx) + ad.abs2(dy)) * mask.astype(float)
    per_item = ad.sqrt(sq.sum(axis=1) + 1e-300)
    return ad.mean(per_item), trace


def comm_loss(F, draw: CommDraw):
    """Mean CCE of the soft posterior softmax(-log|y - kappa x|^2)."""
    B, P, K = draw.steer.shape
    coef = ad.matmul(ad.const(draw.steer), ad.reshape(F, B, K, 1))               # (B, P, 1)
    kappa = ad.reshape(ad.swapaxes(coef, 1, 2) @ ad.const(draw.paths), B, -1)     # (B, S)
    y = kappa * draw.symbols + ad.const(draw.noise)
    pts = qpsk().points
    S = kappa.shape[1]
    diff = ad.reshape(y, B, S, 1) - ad.reshape(kappa, B, S, 1) * pts[None, None, :]
    logd = ad.log(ad.abs2(diff) + 1e-300)
    onehot = np.eye(len(pts))[draw.messages]
    true_term = (logd * onehot).sum(axis=-1)
    return ad.mean(ad.reshape(true_term + ad.logsumexp(-logd, axis=-1), -1))


@dataclass
class LossReport:
    loss: float
    gospa: float
    cce: float
    grad: np.ndarray


def evaluate_loss_and_gradient(params: LearnableParams, batch: TrainingBatch, scn: Scenario,
                               omega_r=1.0, eta=1.0, phi_shift=0.0, beta=None) -> LossReport:
    node = ad.param(params.values)
    phi = params.tape_steering(node)
    F = tape_precoders(phi, scn.angle_grid, batch.sensing_sectors, batch.comm_sectors, eta,
                       phi_shift, scn.cfg.power)
    total = ad.const(0.0)
    g_val = c_val = np.nan
    if omega_r > 0:
        g, _ = sensing_loss(scn, phi, F, batch.sensing, batch.sensing_sectors, beta)
        g_val = float(g.value)
        total = total + g * omega_r
    if omega_r < 1:
        c = comm_loss(F, batch.comm)
        c_val = float(c.value)
        total = total + c * (1 - omega_r)
    loss = float(total.value)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss for batch seed {batch.seed}")
    if total.requires_grad:
        total.backward()
        grad = node.grad if node.grad is not None else np.zeros_like(params.values)
    else:
        grad = np.zeros_like(params.values)
    return LossReport(loss, g_val, c_val, np.asarray(grad))


# training loop ----------------------------------------------------------

@dataclass
class TrainResult:
    params: LearnableParams
    state: AdamState
    trace: list = field(default_factory=list)   # (iteration, gospa, cce, isac)


def train(params: LearnableParams, scn: Scenario, tc: TrainConfig, state: AdamState = None,
          callback=None) -> TrainResult:
    params = params.copy()
    state = state or adam_init(params.values)
    ss = np.random.SeedSequence([tc.seed, 2])
    trace = []
    need_s, need_c = tc.omega_r > 0, tc.omega_r < 1
    floor = tc.min_spacing_fraction * params.wavelength
    for it in range(tc.iterations):
        child = ss.spawn(1)[0]
        rng = np.random.default_rng(child)
        batch = sample_training_batch(scn, tc.batch_size, rng, seed=it, need_sensing=need_s,
                                      need_comm=need_c)
        rep = evaluate_loss_and_gradient(params, batch, scn, tc.omega_r, tc.eta, tc.phi,
                                         tc.softmax_beta)
        new, state = adam_step(params.values, rep.grad, state, tc.lr)
        if params.mode == "impairment":
            new = np.maximum(new, floor)
        params.values = new
        trace.append((it, rep.gospa, rep.cce, rep.loss))
        if callback is not None:
            callback(it, rep, params)
    return TrainResult(params, state, trace)


def save_checkpoint(path, params: LearnableParams, state: AdamState, iteration):
    np.savez(path, version=CHECKPOINT_VERSION, mode=params.mode, values=params.values,
             num_antennas=params.num_antennas, wavelength=params.wavelength,
             angle_grid=params.angle_grid, adam_m=state.m, adam_v=state.v,
             adam_step=state.step, iteration=iteration)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
        params = LearnableParams(str(z["mode"]), z["values"], int(z["num_antennas"]),
                                 float(z["wavelength"]), z["angle_grid"])
        state = AdamState(z["adam_m"], z["adam_v"], int(z["adam_step"]))
        return params, state, int(z["iteration"])


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "gospa", "cce", "isac"])
        for it, g, c, l in trace:
            w.writerow([it, repr(float(g)), repr(float(c)), repr(float(l))])
