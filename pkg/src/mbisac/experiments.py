"""Experiment protocols and deterministic artifact emission.

A *system* is a pair of steering matrices: the one used to synthesize the
transmit beams and the one used as the OMP angle dictionary. Every protocol
evaluates all systems on the same random draws, so comparisons are paired.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .array import ArrayModel, steering_matrix
from .calibration import CalibrationConfig, greedy_calibrate
from .config import ExperimentConfig, rng_stream
from .evaluation import SensingRun, comm_ser, sensing_run, threshold_for_pfa
from .scenario import Scenario, draw_comm, draw_sensing, isac_precoders, unit_precoders
from .training import LearnableParams, TrainConfig, train


@dataclass(frozen=True)
class System:
    name: str
    phi_tx: np.ndarray
    phi_rx: np.ndarray

    @classmethod
    def from_array(cls, name, array: ArrayModel, angle_grid):
        phi = steering_matrix(array, angle_grid).matrix
        return cls(name, phi, phi)

    @classmethod
    def from_params(cls, name, params: LearnableParams):
        phi = params.steering()
        return cls(name, phi, phi)


def baseline_systems(scn: Scenario):
    return [System.from_array("known", scn.true_array, scn.angle_grid),
            System.from_array("agnostic", scn.nominal_array, scn.angle_grid)]


# training and calibration -------------------------------------------------

def train_config(config: ExperimentConfig, mode, iterations=None, seed=None) -> TrainConfig:
    ln = config.learning
    lr = ln.lr_impairment if mode == "impairment" else ln.lr_dictionary
    return TrainConfig(batch_size=ln.batch_size,
                       iterations=ln.iterations if iterations is None else iterations,
                       lr=lr, omega_r=ln.omega_r, eta=ln.eta, phi=ln.phi,
                       seed=config.seed if seed is None else seed,
                       softmax_beta=ln.softmax_beta, log_every=ln.log_every)


def train_system(scn: Scenario, config: ExperimentConfig, mode, iterations=None, callback=None):
    params = LearnableParams.initial(mode, scn.num_antennas, scn.wavelength, scn.angle_grid)
    return train(params, scn, train_config(config, mode, iterations), callback=callback)


def calibration_config(scn: Scenario, config: ExperimentConfig) -> CalibrationConfig:
    c = config.calibration
    obs = c.observations if c.observations is not None else config.learning.batch_size
    return CalibrationConfig.around_nominal(scn.wavelength,
                                            config.array.sigma_lambda * scn.wavelength,
                                            c.num_candidates, c.width_sigmas,
                                            observations=obs, sweeps=c.sweeps)


def calibrate_system(scn: Scenario, config: ExperimentConfig):
    cal = calibration_config(scn, config)
    result = greedy_calibrate(scn, scn.nominal_array.positions, cal, seed=config.seed)
    return System.from_array("calibrated", result.array(scn.wavelength), scn.angle_grid), \
        result, cal


# sensing protocols ----------------------------------------------------------

def _fixed_sectors(sector_deg, n):
    return np.tile(np.deg2rad(np.asarray(sector_deg, dtype=float)), (n, 1))


def _chunks(total, chunk):
    for start in range(0, total, chunk):
        yield min(chunk, total - start)


def _max_iter(config: ExperimentConfig, t_max):
    m = config.evaluation.max_iter
    return max(int(m if m is not None else 2 * t_max), 1)


def sensing_runs(scn: Scenario, systems, config: ExperimentConfig, sector_deg, stream,
                 *extra, t_max=None, num_samples=None, precoder_fn=None):
    """Thresholdless OMP runs of every system on shared draws.

    ``precoder_fn(system, sectors)`` overrides the default unit-power LS beam.
    """
    ev = config.evaluation
    t_max = scn.t_max if t_max is None else t_max
    scn_t = dataclasses.replace(scn, t_max=t_max)
    n_total = ev.num_samples if num_samples is None else num_samples
    rng = rng_stream(config.seed, stream, *extra)
    draws = []
    for n in _chunks(n_total, ev.chunk):
        sectors = _fixed_sectors(sector_deg, n)
        draws.append(draw_sensing(scn_t, sectors, rng))
    power = np.sqrt(scn.cfg.power)
    if precoder_fn is None:
        precoder_fn = lambda s, sec: power * unit_precoders(s.phi_tx, scn.angle_grid, sec)
    out = {}
    for s in systems:
        F = [precoder_fn(s, d.batch.sectors) for d in draws]
        out[s.name] = sensing_run(scn_t, draws, F, s.phi_rx, _max_iter(config, t_max), t_max)
    return out


def summarize(run: SensingRun, threshold, scn: Scenario):
    pmd, pfa = run.rates(threshold)
    g = run.gospa(threshold, scn.gospa_eval)
    return {"threshold": threshold, "pmd": pmd, "pfa": pfa, "gospa": float(g.mean()),
            "gospa_se": float(g.std(ddof=1) / np.sqrt(g.size)) if g.size > 1 else np.nan}


def at_target_pfa(run: SensingRun, config: ExperimentConfig, scn: Scenario):
    thr, _ = threshold_for_pfa(run, config.evaluation.pfa_target)
    return summarize(run, thr, scn)


SENSING_HEADER = ["system", "t_max", "threshold", "pfa", "pmd", "gospa", "gospa_se"]


def run_sensing_eval(scn: Scenario, systems, config: ExperimentConfig):
    """Pmd, Pfa and GOSPA against the maximum number of targets at the target Pfa."""
    rows = []
    for t in config.evaluation.t_max_sweep:
        runs = sensing_runs(scn, systems, config, config.evaluation.sensing_sector_deg,
                            "eval", int(t), t_max=int(t))
        for s in systems:
            m = at_target_pfa(runs[s.name], config, scn)
            rows.append([s.name, int(t), m["threshold"], m["pfa"], m["pmd"], m["gospa"],
                         m["gospa_se"]])
    return SENSING_HEADER, rows


ROC_HEADER = ["system", "point", "threshold", "pfa", "pmd", "gospa"]


def roc_thresholds(run: SensingRun, n_points):
    """Log-spaced thresholds spanning the observed map peaks."""
    peaks = run.peaks[np.isfinite(run.peaks) & (run.peaks > 0)]
    lo, hi = np.log10(peaks.min()), np.log10(peaks.max())
    return np.logspace(lo, hi, n_points)


def run_roc(scn: Scenario, systems, config: ExperimentConfig):
    runs = sensing_runs(scn, systems, config, config.evaluation.sensing_sector_deg, "roc")
    rows = []
    for s in systems:
        run = runs[s.name]
        for i, thr in enumerate(roc_thresholds(run, config.evaluation.roc_points)):
            m = summarize(run, thr, scn)
            rows.append([s.name, i, thr, m["pfa"], m["pmd"], m["gospa"]])
    return ROC_HEADER, rows


# ISAC trade-off ---------------------------------------------------------------

ISAC_HEADER = ["system", "eta", "phi", "threshold", "pfa", "pmd", "gospa", "ser"]


def eta_grid(config: ExperimentConfig):
    ev = config.evaluation
    return np.logspace(np.log10(ev.eta_min), 0.0, ev.eta_count)


def run_isac_sweep(scn: Scenario, systems, config: ExperimentConfig, etas=None):
    """Full (eta, phi) table; sensing thresholds are re-tuned to the target Pfa."""
    ev = config.evaluation
    etas = eta_grid(config) if etas is None else np.asarray(etas, dtype=float)
    c_sec_deg = np.deg2rad(np.asarray(ev.comm_sector_deg, dtype=float))
    rows = []
    for j, phi_shift in enumerate(ev.phi_set):
        for i, eta in enumerate(etas):
            def precoder(s, sec):
                c_sec = np.tile(c_sec_deg, (sec.shape[0], 1))
                return isac_precoders(s.phi_tx, scn.angle_grid, sec, c_sec, eta, phi_shift,
                                      scn.cfg.power)
            runs = sensing_runs(scn, systems, config, ev.sensing_sector_deg, "isac", j, i,
                                precoder_fn=precoder)
            c_rng = rng_stream(config.seed, "isac", j, i, 1)
            c_draws = [draw_comm(scn, _fixed_sectors(ev.comm_sector_deg, n), c_rng)
                       for n in _chunks(ev.num_samples, ev.chunk)]
            for s in systems:
                m = at_target_pfa(runs[s.name], config, scn)
                errs = [comm_ser(d, precoder(s, _fixed_sectors(ev.sensing_sector_deg,
                                                                 d.messages.shape[0])))
                        * d.messages.size for d in c_draws]
                ser = sum(errs) / sum(d.messages.size for d in c_draws)
                rows.append([s.name, float(eta), float(phi_shift), m["threshold"], m["pfa"],
                             m["pmd"], m["gospa"], ser])
    return ISAC_HEADER, rows


def pareto_rows(header, rows, keys=("pmd", "ser"), group="system"):
    """Rows not dominated (all keys <=, one <) by another row of the same group."""
    gi = header.index(group)
    ki = [header.index(k) for k in keys]
    out = []
    for r in rows:
        v = np.array([r[k] for k in ki], dtype=float)
        dominated = False
        for q in rows:
            if q is r or q[gi] != r[gi]:
                continue
            w = np.array([q[k] for k in ki], dtype=float)
            if np.all(w <= v) and np.any(w < v):
                dominated = True
                break
        if not dominated:
            out.append(r)
    return out


# generalization -------------------------------------------------------------

GEN_HEADER = ["system", "theta_mean_deg", "threshold", "pfa", "pmd", "gospa", "gospa_se"]


def run_generalization(scn: Scenario, systems, config: ExperimentConfig):
    ev = config.evaluation
    rows = []
    half = ev.generalization_span_deg / 2
    for i, mean in enumerate(ev.generalization_means_deg):
        sector = (mean - half, mean + half)
        runs = sensing_runs(scn, systems, config, sector, "generalization", i)
        for s in systems:
            m = at_target_pfa(runs[s.name], config, scn)
            rows.append([s.name, float(mean), m["threshold"], m["pfa"], m["pmd"], m["gospa"],
                         m["gospa_se"]])
    return GEN_HEADER, rows


# output -----------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if np.isnan(x) else format(x, ".10g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def emit_outputs(tables, out_dir, config: ExperimentConfig, extra=None):
    """Write ``{name: (header, rows)}`` as CSV files plus ``manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    files = []
    for name in sorted(tables):
        header, rows = tables[name]
        fname = f"{name}.csv"
        write_csv(os.path.join(out_dir, fname), header, rows)
        files.append(fname)
    manifest = {"version": __version__, "seed": config.seed,
                "config_digest": config.digest(), "files": files,
                "config": config.to_dict()}
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return files


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")
