"""Command-line pipeline: staged, file-based, re-runnable in isolation.

Exit codes: 0 success, 1 computational failure, 2 usage or config error.
``TLS_LOCATOR_THREADS`` caps internal parallelism; ``TLS_LOCATOR_NO_NUMBA``
forces the pure-numpy kernel fallbacks.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .defects import EnsembleSpec, QubitParams, read_ensemble, sample_defect_ensemble, write_ensemble
from .geometry import ConfigError, CrossSectionConfig
from .laplace import SolverError
from .localize import write_histograms_csv, write_solutions
from .manifest import write_manifest
from .pipeline import analyze_map, localize_fits, simulate_profiles
from .profiles import read_profiles, write_profiles
from .score import score_round_trip
from .spectroscopy import (RampPlan, load_map, ramp_path, save_map,
                           simulate_swap_spectroscopy, write_map_csv)
from .sweeps import (cutoff_sweep, participation_statistics,
                     sweep_electrode_distances, write_cutoff_csv, write_sweep_csv)
from .tracefit import fit_map, read_fits, write_fits

PAPER_RAMP = {"start_v": [-100.0, -100.0], "limit_v": 100.0,
              "segments_preset": {"span_v": 10.0, "step_v": 0.14, "stop": 100.0}}


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {p}: {exc}") from None


def _cross_section(cfg: dict, preset: str | None) -> CrossSectionConfig:
    section = dict(cfg.get("cross_section", {}))
    try:
        return CrossSectionConfig.from_json_dict(section)
    except ConfigError as exc:
        raise UsageError(f"cross_section: {exc}") from None


def _qubit(cfg: dict) -> QubitParams:
    section = cfg.get("qubit", {})
    known = set(QubitParams.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"qubit: unknown fields {sorted(unknown)}")
    return QubitParams(**section)


def _ramp_plan(cfg: dict, preset: str | None) -> RampPlan:
    section = cfg.get("ramp")
    if section is None:
        if preset == "paper":
            return RampPlan.alternating(start=-100.0, stop=100.0,
                                        span_v=10.0, step_v=0.14)
        return RampPlan.alternating(start=-15.0, stop=15.0, span_v=5.0, step_v=0.14)
    if "alternating" in section:
        return RampPlan.alternating(**section["alternating"])
    return RampPlan.from_json_dict(section)


def _ensemble_spec(cfg: dict) -> EnsembleSpec:
    section = dict(cfg.get("ensemble", {}))
    known = set(EnsembleSpec.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"ensemble: unknown fields {sorted(unknown)}")
    if "interface_weights" in section:
        section["interface_weights"] = dict(section["interface_weights"])
    if "x_range_nm" in section:
        section["x_range_nm"] = tuple(section["x_range_nm"])
    if "dipole_range_debye" in section:
        section["dipole_range_debye"] = tuple(section["dipole_range_debye"])
    return EnsembleSpec(**section)


def cmd_simulate_fields(args) -> int:
    cfg = _load_config(args.config)
    xsec = _cross_section(cfg, args.preset)
    calibrate = args.preset == "paper" or cfg.get("calibrate", False)
    profiles = simulate_profiles(xsec, calibrate=calibrate)
    written = write_profiles(args.out, profiles)
    write_manifest(args.out, "simulate-fields", xsec.digest(), None,
                   [args.config], written)
    print(f"wrote {len(written)} profile files to {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    profiles = read_profiles(args.profiles)
    qubit = _qubit(cfg)
    plan = _ramp_plan(cfg, args.preset)
    spec = _ensemble_spec(cfg)
    path = ramp_path(plan)
    ensemble = sample_defect_ensemble(spec, args.seed, profiles, path,
                                      band_ghz=qubit.band_ghz,
                                      v_max=plan.limit_v)
    noise = float(cfg.get("noise_sigma", 0.0))
    smap, warnings = simulate_swap_spectroscopy(ensemble, path, qubit, profiles,
                                                noise_sigma=noise, seed=args.seed)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if args.format in ("npz", "both"):
        save_map(out / "map.npz", smap)
        outputs.append(out / "map.npz")
    if args.format in ("csv", "both"):
        write_map_csv(out / "map.csv", smap)
        outputs.append(out / "map.csv")
    truth = out / "ground_truth.json"
    write_ensemble(truth, ensemble, profiles)
    outputs.append(truth)
    write_manifest(out, "synth", profiles.config_digest, args.seed,
                   [args.config, args.profiles], outputs)
    print(f"synthesized map with {len(ensemble)} defects "
          f"({len(ensemble.tunable)} tunable) over {smap.n_steps} steps")
    return 0


def cmd_fit(args) -> int:
    smap = load_map(args.map)
    traces, fits = fit_map(smap, rel_threshold=args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fits_path = out / "fits.json"
    write_fits(fits_path, fits)
    write_manifest(out, "fit", "", None, [args.map], [fits_path])
    n_junction = sum(1 for f in fits if f.junction_flag)
    print(f"extracted {len(traces)} traces, fitted {len(fits)} "
          f"({n_junction} junction-flagged)")
    return 0


def cmd_localize(args) -> int:
    fits = read_fits(args.fits)
    profiles = read_profiles(args.profiles)
    qubit = _qubit(_load_config(args.config) if args.config else {})
    results = localize_fits(fits, profiles, cutoff=args.cutoff, qubit=qubit)
    from .localize import build_histograms
    hist = build_histograms(results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sol_path = out / "solutions.json"
    hist_path = out / "histograms.csv"
    write_solutions(sol_path, results)
    write_histograms_csv(hist_path, hist)
    part_path = out / "participations.json"
    part_path.write_text(json.dumps(
        {"participation": hist.participation,
         "located": hist.located_count,
         "unlocated": hist.unlocated_count}, indent=2))
    write_manifest(out, "localize", profiles.config_digest, None,
                   [args.fits, args.profiles], [sol_path, hist_path, part_path])
    print(f"localized {hist.located_count} defects "
          f"({hist.unlocated_count} unlocated); participations: "
          + ", ".join(f"{k}={v:.3f}" for k, v in hist.participation.items()))
    return 0


def cmd_error_sweep(args) -> int:
    cfg = _load_config(args.config)
    xsec = _cross_section(cfg, args.preset)
    fits = read_fits(args.fits)
    profiles = read_profiles(args.profiles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    step = args.step if args.step is not None else (10.0 if args.preset == "fine" else 25.0)
    distance = sweep_electrode_distances(xsec, fits, profiles.scale_t,
                                         profiles.scale_b, range_um=args.range,
                                         step_um=step, cutoff=args.cutoff)
    dist_path = out / "distance_sweep.csv"
    write_sweep_csv(dist_path, distance)
    outputs.append(dist_path)
    stats = participation_statistics(distance)
    cutoffs = cfg.get("cutoff_sweep_debye", [2.0, 5.0, 10.0, 20.0, 50.0])
    cut = cutoff_sweep(cutoffs, fits, profiles)
    cut_path = out / "cutoff_sweep.csv"
    write_cutoff_csv(cut_path, cut)
    outputs.append(cut_path)
    stats_path = out / "participation_stats.json"
    stats_path.write_text(json.dumps(
        {k: {"mean": v[0], "std": v[1]} for k, v in stats.items()}, indent=2))
    outputs.append(stats_path)
    write_manifest(out, "error-sweep", xsec.digest(), None,
                   [args.config, args.fits, args.profiles], outputs)
    print(f"swept {len(distance)} electrode-distance points, "
          f"{len(cut)} cutoff values")
    return 0


def cmd_score(args) -> int:
    ensemble = read_ensemble(args.truth)
    fits = read_fits(args.fits)
    profiles = read_profiles(args.profiles)
    results = localize_fits(fits, profiles, cutoff=args.cutoff)
    report = score_round_trip(ensemble, fits, results, profiles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "score.json"
    report.to_json(report_path)
    write_manifest(out, "score", profiles.config_digest, None,
                   [args.truth, args.fits, args.profiles], [report_path])
    print(f"matched {report.n_matched}/{report.n_planted_tunable} tunable defects; "
          f"ratio within 2%: {report.ratio_within_2pct:.1%}; "
          f"position RMSE: {report.position_rmse_nm} nm")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tls-locator",
        description="Locate two-level-system defects at a qubit film edge "
                    "from gate-voltage spectroscopy.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-fields", help="solve the 2D field model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["paper"], default=None)
    p.set_defaults(func=cmd_simulate_fields)

    p = sub.add_parser("synth", help="synthesize a swap-spectroscopy map")
    p.add_argument("--config", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=["paper"], default=None)
    p.add_argument("--format", choices=["npz", "csv", "both"], default="npz")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="extract and fit defect traces")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("localize", help="invert fits into positions")
    p.add_argument("--fits", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--cutoff", type=float, default=10.0)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("error-sweep", help="electrode-distance and cutoff sweeps")
    p.add_argument("--config", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--range", type=float, default=50.0)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--cutoff", type=float, default=10.0)
    p.add_argument("--preset", choices=["paper", "fine"], default=None)
    p.set_defaults(func=cmd_error_sweep)

    p = sub.add_parser("score", help="round-trip metrics against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff", type=float, default=10.0)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, RuntimeError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
