"""Short desk run comparing impairment learning with greedy calibration.

Trains the spacing vector for a few hundred iterations, calibrates with a
small observation budget and evaluates all systems on the same held-out
draws at Pfa = 1e-2. Takes a few minutes on one core.

    python demos/learn_vs_calibrate.py [iterations]
"""

import sys

import numpy as np

from mbisac.config import load_config
from mbisac.experiments import System, at_target_pfa, baseline_systems, calibrate_system, \
    sensing_runs, train_system
from mbisac.scenario import build_scenario


def main(iterations=300):
    config = load_config(preset="desk").replace(evaluation={"num_samples": 1000},
                                                calibration={"observations": 64})
    scn = build_scenario(config)
    lam = scn.wavelength
    err = lambda d: np.abs(d - scn.true_array.spacing).mean() / lam

    print(f"nominal spacing error: {err(np.full(scn.num_antennas - 1, lam / 2)):.4f} lambda")
    res = train_system(scn, config, "impairment", iterations)
    print(f"learned spacing error after {iterations} iterations: {err(res.params.values):.4f}")
    calibrated, cal, _ = calibrate_system(scn, config)
    print(f"calibrated spacing error: {err(np.diff(cal.positions)):.4f}")

    systems = baseline_systems(scn) + [System.from_params("impairment-learned", res.params),
                                       calibrated]
    runs = sensing_runs(scn, systems, config, config.evaluation.sensing_sector_deg, "holdout")
    print(f"\n{'system':<20} {'pmd':>6} {'pfa':>7} {'gospa':>7}")
    for s in systems:
        m = at_target_pfa(runs[s.name], config, scn)
        print(f"{s.name:<20} {m['pmd']:6.3f} {m['pfa']:7.4f} {m['gospa']:7.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)
