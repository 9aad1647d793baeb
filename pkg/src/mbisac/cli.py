"""Command-line entry point: ``mbisac <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .calibration import write_report
from .config import PRESETS, load_config, rng_stream
from .evaluation import known_count_gospa, run_omp, trace_positions, true_positions
from .experiments import System, baseline_systems, calibrate_system, emit_outputs, \
    pareto_rows, roc_thresholds, run_generalization, run_isac_sweep, run_roc, \
    run_sensing_eval, sensing_runs, train_system, write_csv
from .omp import angle_delay_map
from .scenario import build_scenario, draw_sensing, unit_precoders
from .training import load_checkpoint, save_checkpoint, write_loss_trace

log = logging.getLogger("mbisac")

SYSTEM_NAMES = {"impairment": "impairment-learned", "dictionary": "dictionary-learned"}


def _common(p):
    p.add_argument("--config", help="YAML file with overrides")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--seed", type=int, help="overrides the seed of the configuration")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _systems_args(p):
    p.add_argument("--checkpoint", action="append", default=[],
                   help="trained parameters to evaluate (repeatable)")
    p.add_argument("--with-calibration", action="store_true",
                   help="also run greedy calibration and evaluate the calibrated array")


def build_parser():
    parser = argparse.ArgumentParser(prog="mbisac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw sensing scenes and baseline estimates")
    _common(p)
    p.add_argument("--num", type=int, default=16)

    p = sub.add_parser("train", help="learn the array spacings or a free dictionary")
    _common(p)
    p.add_argument("--mode", choices=sorted(SYSTEM_NAMES), default="impairment")
    p.add_argument("--iterations", type=int)
    p.add_argument("--checkpoint", default=None, help="where to save (default OUT/<mode>.npz)")

    p = sub.add_parser("calibrate", help="greedy per-antenna calibration")
    _common(p)

    for name, text in [("evaluate", "Pmd, Pfa and GOSPA against T_max at the target Pfa"),
                       ("roc", "misdetection against false alarm over a threshold sweep"),
                       ("isac-sweep", "sensing and SER over the ISAC (eta, phi) grid"),
                       ("generalize", "performance against the mean sector angle")]:
        p = sub.add_parser(name, help=text)
        _common(p)
        _systems_args(p)

    p = sub.add_parser("map-dump", help="angle-delay map of one observation")
    _common(p)
    p.add_argument("--system", default="agnostic",
                   help="known, agnostic, or a checkpoint path")
    p.add_argument("--targets", type=int, default=3)
    return parser


def _setup(args):
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    config = load_config(args.config, preset=args.preset, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    return config, build_scenario(config)


def _checkpoint_system(scn, path):
    params, _, _ = load_checkpoint(path)
    if params.num_antennas != scn.num_antennas or len(params.angle_grid) != scn.angle_grid.size:
        raise SystemExit(f"{path}: checkpoint does not match the configured array or grid")
    return System.from_params(SYSTEM_NAMES[params.mode], params)


def _systems(args, config, scn):
    systems = baseline_systems(scn)
    for path in args.checkpoint:
        systems.append(_checkpoint_system(scn, path))
    if args.with_calibration:
        s, result, cal = calibrate_system(scn, config)
        write_report(result, cal.spacing_grid, os.path.join(args.out, "calibration_report.csv"))
        systems.append(s)
    return systems


def cmd_simulate(args):
    config, scn = _setup(args)
    rng = rng_stream(config.seed, "simulate")
    sectors = scn.sample_sectors(rng, args.num)
    draw = draw_sensing(scn, sectors, rng, min_targets=1)
    known = baseline_systems(scn)[0]
    F = np.sqrt(scn.cfg.power) * unit_precoders(known.phi_tx, scn.angle_grid, sectors)
    trace = run_omp(scn, draw, F, known.phi_rx, int(draw.batch.counts.max()))
    est = trace_positions(scn, trace)
    tru = true_positions(draw)
    g = known_count_gospa(scn, draw, F, known.phi_rx)
    b = draw.batch
    scenes = [[i, t, np.rad2deg(b.angles[i, t]), b.ranges[i, t], abs(b.gains[i, t]),
               tru[i, t, 0], tru[i, t, 1]] for i in range(b.size) for t in range(b.counts[i])]
    dets = [[i, t, np.rad2deg(scn.angle_grid[trace.rows[i, t]]),
             scn.delays.range_grid[trace.cols[i, t]], est[i, t, 0], est[i, t, 1]]
            for i in range(b.size) for t in range(b.counts[i])]
    tables = {
        "scenes": (["item", "target", "angle_deg", "range_m", "gain_abs", "x_m", "y_m"], scenes),
        "detections": (["item", "target", "angle_deg", "range_m", "x_m", "y_m"], dets),
        "gospa": (["item", "count", "gospa"],
                  [[i, b.counts[i], g[i]] for i in range(b.size)]),
    }
    emit_outputs(tables, args.out, config)
    log.info("mean GOSPA of the known-impairment baseline: %.4f", g.mean())


def cmd_train(args):
    config, scn = _setup(args)

    def progress(it, rep, params):
        if it % config.learning.log_every == 0:
            extra = ""
            if params.mode == "impairment":
                err = np.abs(params.values - scn.true_array.spacing).mean() / scn.wavelength
                extra = f" spacing error {err:.4f} lambda"
            log.info("iteration %d loss %.4f%s", it, rep.loss, extra)

    result = train_system(scn, config, args.mode, args.iterations, callback=progress)
    ckpt = args.checkpoint or os.path.join(args.out, f"{args.mode}.npz")
    save_checkpoint(ckpt, result.params, result.state, len(result.trace))
    write_loss_trace(os.path.join(args.out, f"loss_{args.mode}.csv"), result.trace)
    if args.mode == "impairment":
        rows = [[k + 1, d, t] for k, (d, t) in enumerate(zip(result.params.values,
                                                             scn.true_array.spacing))]
        write_csv(os.path.join(args.out, "learned_spacing.csv"),
                  ["gap", "learned_m", "true_m"], rows)
    log.info("checkpoint written to %s", ckpt)


def cmd_calibrate(args):
    config, scn = _setup(args)
    system, result, cal = calibrate_system(scn, config)
    write_report(result, cal.spacing_grid, os.path.join(args.out, "calibration_report.csv"))
    rows = [[k + 1, p] for k, p in enumerate(result.positions)]
    emit_outputs({"calibrated_positions": (["antenna", "position_m"], rows)}, args.out, config)


def _evaluation(fn, name):
    def run(args):
        config, scn = _setup(args)
        systems = _systems(args, config, scn)
        header, rows = fn(scn, systems, config)
        tables = {name: (header, rows)}
        extra = {"systems": [s.name for s in systems]}
        if name == "isac":
            tables["isac_pareto"] = (header, pareto_rows(header, rows))
        if name == "roc":
            # publish the per-system threshold grid
            runs = sensing_runs(scn, systems, config, config.evaluation.sensing_sector_deg, "roc")
            extra["roc_thresholds"] = {s.name: roc_thresholds(runs[s.name],
                                                              config.evaluation.roc_points)
                                       for s in systems}
        emit_outputs(tables, args.out, config, extra)
    return run


def cmd_map_dump(args):
    config, scn = _setup(args)
    if args.system == "known":
        system = baseline_systems(scn)[0]
    elif args.system == "agnostic":
        system = baseline_systems(scn)[1]
    else:
        system = _checkpoint_system(scn, args.system)
    rng = rng_stream(config.seed, "map")
    sectors = np.deg2rad(np.asarray([config.evaluation.sensing_sector_deg], dtype=float))
    draw = draw_sensing(scn, sectors, rng, counts=[min(args.targets, scn.t_max)])
    F = np.sqrt(scn.cfg.power) * unit_precoders(system.phi_tx, scn.angle_grid, sectors)
    L = angle_delay_map(draw.z(F)[0], system.phi_rx, np.eye(scn.delays.matrix.shape[1]))
    theta = np.rad2deg(scn.angle_grid)
    rng_m = scn.delays.range_grid
    rows = [[theta[i], rng_m[j], L[i, j]] for i in range(theta.size) for j in range(rng_m.size)]
    b = draw.batch
    targets = [[t, np.rad2deg(b.angles[0, t]), b.ranges[0, t]] for t in range(b.counts[0])]
    emit_outputs({"map": (["theta_deg", "range_m", "power"], rows),
                  "map_targets": (["target", "angle_deg", "range_m"], targets)},
                 args.out, config, {"system": system.name})


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": _evaluation(run_sensing_eval, "sensing"),
    "roc": _evaluation(run_roc, "roc"),
    "isac-sweep": _evaluation(run_isac_sweep, "isac"),
    "generalize": _evaluation(run_generalization, "generalization"),
    "map-dump": cmd_map_dump,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    COMMANDS[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
