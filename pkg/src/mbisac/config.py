"""Experiment configuration: presets, YAML overrides and seeded RNG streams."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np
import yaml


@dataclass
class ArraySection:
    num_antennas: int = 64
    sigma_lambda: float = 1 / 15         # impairment std, in wavelengths


@dataclass
class OfdmSection:
    num_subcarriers: int = 256
    carrier_frequency: float = 60e9
    subcarrier_spacing: float = 240e3
    power: float = 1.0


@dataclass
class ChannelSection:
    t_max: int = 5
    comm_max_paths: int = 6
    mean_rcs: float = 1.0
    theta_mean_deg: tuple = (-60.0, 60.0)
    theta_span_deg: tuple = (10.0, 20.0)
    r_min: float = 10.0
    r_max: float = 43.75
    comm_r_min: float = 10.0
    comm_r_max: float = 200.0
    snr_r_db: float = 7.05
    snr_c_db: float = 7.5


@dataclass
class GridSection:
    n_theta: int = 720
    n_tau: int = 200


@dataclass
class LearningSection:
    gospa_mu: float = 2.0
    gospa_p: float = 2.0
    batch_size: int = 800
    iterations: int = 15000
    lr_dictionary: float = 1e-5
    lr_impairment: float = 0.2
    omega_r: float = 1.0
    eta: float = 1.0
    phi: float = 0.0
    softmax_beta: float = None           # None: raw map values as softmax logits
    log_every: int = 100


@dataclass
class EvaluationSection:
    gospa_gamma: float = None            # None -> r_max - r_min
    pfa_target: float = 1e-2
    num_samples: int = 4000
    chunk: int = 256
    max_iter: int = None                 # None -> 2 t_max
    sensing_sector_deg: tuple = (-40.0, -20.0)
    comm_sector_deg: tuple = (40.0, 60.0)
    t_max_sweep: tuple = (1, 2, 3, 4, 5)
    eta_count: int = 8
    eta_min: float = 1e-3
    phi_set: tuple = (0.0, np.pi)
    generalization_span_deg: float = 20.0
    generalization_means_deg: tuple = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)
    roc_points: int = 25


@dataclass
class CalibrationSection:
    num_candidates: int = 100
    width_sigmas: float = 4.0
    observations: int = None             # None -> batch size
    sweeps: int = 1


@dataclass
class ExperimentConfig:
    array: ArraySection = field(default_factory=ArraySection)
    ofdm: OfdmSection = field(default_factory=OfdmSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    grid: GridSection = field(default_factory=GridSection)
    learning: LearningSection = field(default_factory=LearningSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    seed: int = 0

    def to_dict(self):
        return _plain(asdict(self))

    def digest(self):
        """Stable hash of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **overrides):
        return from_dict(deep_merge(self.to_dict(), overrides))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


DESK_OVERRIDES = {
    "array": {"num_antennas": 16},
    "ofdm": {"num_subcarriers": 64},
    "grid": {"n_theta": 180, "n_tau": 50},
    # learning rates tuned on seed 7; calibration needs more than B observations
    "learning": {"batch_size": 64, "iterations": 2000,
                 "lr_impairment": 1e-5, "lr_dictionary": 1e-2},
    "evaluation": {"num_samples": 2000},
    "calibration": {"observations": 256},
}

PRESETS = {"full": {}, "desk": DESK_OVERRIDES}


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def from_dict(data) -> ExperimentConfig:
    data = dict(data or {})
    kwargs = {}
    for f in fields(ExperimentConfig):
        if f.name not in data:
            continue
        val = data.pop(f.name)
        section_cls = f.default_factory if is_dataclass(f.default_factory) else None
        if section_cls is not None:
            known = {g.name for g in fields(section_cls)}
            unknown = set(val) - known
            if unknown:
                raise ValueError(f"unknown keys in [{f.name}]: {sorted(unknown)}")
            val = {k: tuple(v) if isinstance(v, list) else v for k, v in val.items()}
            kwargs[f.name] = section_cls(**val)
        else:
            kwargs[f.name] = val
    if data:
        raise ValueError(f"unknown config sections: {sorted(data)}")
    return ExperimentConfig(**kwargs)


def load_config(path=None, preset="full", seed=None) -> ExperimentConfig:
    """Preset defaults, then the YAML file on top, then an explicit seed."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    data = deep_merge(ExperimentConfig().to_dict(), PRESETS[preset])
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        data = deep_merge(data, user)
    if seed is not None:
        data["seed"] = int(seed)
    return from_dict(data)


_STREAMS = {"impairment": 1, "train": 2, "eval": 3, "calibration": 4, "simulate": 5,
            "isac": 6, "generalization": 7, "map": 8, "roc": 9, "holdout": 10}


def rng_stream(seed, name, *extra):
    """Independent generator per (seed, purpose, extra ints)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name], *extra]))
