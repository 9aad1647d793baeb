"""Inference-time sensing and communication metrics over simulated batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comm import ml_detect
from .metrics import GospaParams, gospa_batch, pmd_pfa, ser
from .omp import OmpTrace, omp_batch, sector_columns
from .scenario import CommDraw, Scenario, SensingDraw


def trace_positions(scn: Scenario, trace: OmpTrace):
    """On-grid Cartesian estimates for every iteration, shape (B, n, 2)."""
    th = scn.angle_grid[trace.rows]
    r = scn.delays.range_grid[trace.cols]
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def true_positions(draw: SensingDraw):
    r, th = draw.batch.ranges, draw.batch.angles
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def gospa_per_item(true_pos, true_counts, est_pos, est_counts, params: GospaParams):
    return gospa_batch(true_pos, true_counts, est_pos, est_counts, params)


def run_omp(scn: Scenario, draw: SensingDraw, F, phi, n_iter):
    lo, hi = sector_columns(scn.angle_grid, draw.batch.sectors)
    return omp_batch(draw.z(F), phi, scn.delay_gram, n_iter, lo, hi)


def known_count_gospa(scn: Scenario, draw: SensingDraw, F, phi, params: GospaParams = None):
    """Per-item GOSPA of on-grid OMP stopped after the true number of targets."""
    params = params or scn.gospa_eval
    counts = draw.batch.counts
    n = max(int(counts.max()), 1)
    trace = run_omp(scn, draw, F, phi, n)
    return gospa_per_item(true_positions(draw), counts, trace_positions(scn, trace), counts,
                          params)


@dataclass
class SensingRun:
    """Thresholdless OMP traces of several chunks, ready for threshold sweeps."""

    true_counts: np.ndarray
    true_pos: np.ndarray
    peaks: np.ndarray
    est_pos: np.ndarray
    t_max: int

    def counts(self, threshold):
        below = ~(self.peaks > threshold)
        return np.where(below.any(axis=1), below.argmax(axis=1), self.peaks.shape[1])

    def rates(self, threshold):
        return pmd_pfa(self.true_counts, self.counts(threshold), self.t_max)

    def gospa(self, threshold, params: GospaParams):
        return gospa_per_item(self.true_pos, self.true_counts, self.est_pos,
                              self.counts(threshold), params)


def sensing_run(scn: Scenario, draws, precoders, phi, max_iter, t_max=None) -> SensingRun:
    tc, tp, pk, ep = [], [], [], []
    width = max(int(t_max if t_max is not None else scn.t_max), 1)
    for draw, F in zip(draws, precoders):
        trace = run_omp(scn, draw, F, phi, max_iter)
        tc.append(draw.batch.counts)
        pos = true_positions(draw)
        pad = np.zeros((pos.shape[0], width, 2))
        pad[:, :pos.shape[1]] = pos[:, :width]
        tp.append(pad)
        pk.append(trace.peaks)
        ep.append(trace_positions(scn, trace))
    return SensingRun(np.concatenate(tc), np.concatenate(tp), np.concatenate(pk),
                      np.concatenate(ep), t_max if t_max is not None else scn.t_max)


def threshold_for_pfa(run: SensingRun, target):
    """Smallest threshold whose false-alarm rate does not exceed ``target``.

    Pfa only changes when the threshold crosses a recorded map peak and is
    non-increasing in the threshold, so bisection over the sorted distinct
    peaks is exact. Returns ``(threshold, pfa)``. With no admissible false
    alarms at all (empty denominator) the largest peak is returned.
    """
    cand = np.unique(run.peaks[np.isfinite(run.peaks)])
    if cand.size == 0:
        return 0.0, run.rates(0.0)[1]
    pfa = lambda i: run.rates(cand[i])[1]
    top = cand.size - 1
    if np.isnan(pfa(top)):
        return float(cand[top]), np.nan
    lo, hi = -1, top              # pfa(hi) <= target always holds (no peak exceeds the top)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pfa(mid) <= target:
            hi = mid
        else:
            lo = mid
    return float(cand[hi]), pfa(hi)


def comm_ser(draw: CommDraw, F):
    y, kappa = draw.received(F)
    return ser(draw.messages, ml_detect(y, kappa))
