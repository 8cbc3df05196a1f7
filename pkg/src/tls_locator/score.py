"""Round-trip scoring of analysis outputs against a planted ground truth.

The analysis pipeline never reads the ground truth; this module compares
its outputs after the fact: fitted tunabilities against planted ones,
junction classification, and localization (interface recall and position
error at the true interface).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .defects import DefectEnsemble, defect_gammas
from .geometry import INTERFACES
from .profiles import InterfaceProfileSet

MATCH_TOLERANCE = 0.2  # relative parameter distance for truth-fit matching


def _canonical(g_t: float, g_b: float) -> tuple[float, float]:
    if g_t < 0 or (g_t == 0 and g_b < 0):
        return -g_t, -g_b
    return g_t, g_b


@dataclass
class MatchedDefect:
    interface: str
    x_nm: float | None
    alpha_rad: float
    trace_id: int
    ratio_true: float
    ratio_fit: float
    ratio_err: float
    gamma_err: float
    junction_flag: bool
    interface_recalled: bool | None = None
    position_err_nm: float | None = None


@dataclass
class ScoreReport:
    n_planted_tunable: int
    n_planted_junction: int
    n_fits: int
    n_matched: int
    fit_recall: float
    ratio_within_2pct: float
    ratio_within_5pct: float
    junction_recall: float
    junction_false_positive: int
    interface_recall: dict
    position_rmse_nm: float | None
    position_errors: dict
    participation: dict
    unlocated: int

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


def match_fits(ensemble: DefectEnsemble, fits: list,
               profiles: InterfaceProfileSet,
               tolerance: float = MATCH_TOLERANCE) -> list:
    """Greedy unique matching of planted tunable defects to fits."""
    tunable = ensemble.tunable
    truth = []
    for d in tunable:
        g_t, g_b = _canonical(*defect_gammas(d, profiles))
        truth.append((d, g_t, g_b))
    candidates = []
    for ti, (d, g_t, g_b) in enumerate(truth):
        for fi, f in enumerate(fits):
            if f.junction_flag:
                continue
            scale_t = max(abs(g_t), 1.0)
            scale_b = max(abs(g_b), 1.0)
            dist = max(abs(f.gamma_t - g_t) / scale_t,
                       abs(f.gamma_b - g_b) / scale_b)
            if "vertex-unobserved" not in f.flags:
                # the tunneling energy is only identified when the trace
                # curvature is visible in the sweep window
                dist = max(dist, abs(f.delta_ghz - d.delta_ghz) / d.delta_ghz)
            if dist <= tolerance:
                candidates.append((dist, ti, fi))
    candidates.sort()
    used_t, used_f = set(), set()
    matches = []
    for dist, ti, fi in candidates:
        if ti in used_t or fi in used_f:
            continue
        used_t.add(ti)
        used_f.add(fi)
        d, g_t, g_b = truth[ti]
        f = fits[fi]
        ratio_true = g_t / g_b
        ratio_fit = f.gamma_t / f.gamma_b if f.gamma_b != 0 else math.inf
        matches.append(MatchedDefect(
            d.interface, d.x_nm, d.alpha_rad, f.trace_id,
            ratio_true, ratio_fit,
            abs(ratio_fit - ratio_true) / abs(ratio_true),
            max(abs(f.gamma_t - g_t) / max(abs(g_t), 1e-12),
                abs(f.gamma_b - g_b) / max(abs(g_b), 1e-12)),
            f.junction_flag))
    return matches


def _position_error(match: MatchedDefect, result) -> tuple[bool, float | None]:
    """Did the true interface get weight, and how far off is the position."""
    best = None
    for sol in result.solutions:
        if sol.interface != match.interface or sol.weight <= 0.0:
            continue
        if sol.interface == "SV" and sol.alpha_points is not None:
            k = int(np.argmin(np.abs(sol.alpha_points - match.alpha_rad)))
            err = abs(float(sol.x_points[k]) - match.x_nm)
        else:
            err = abs(sol.x_nm - match.x_nm)
        best = err if best is None else min(best, err)
    return best is not None, best


def score_round_trip(ensemble: DefectEnsemble, fits: list, results: list,
                     profiles: InterfaceProfileSet,
                     tolerance: float = MATCH_TOLERANCE) -> ScoreReport:
    matches = match_fits(ensemble, fits, profiles, tolerance)
    by_trace = {r.trace_id: r for r in results}

    pos_errors = {name: [] for name in INTERFACES}
    recalled = {name: [] for name in INTERFACES}
    for m in matches:
        res = by_trace.get(m.trace_id)
        if res is None:
            continue
        ok, err = _position_error(m, res)
        m.interface_recalled = ok
        m.position_err_nm = err
        recalled[m.interface].append(ok)
        if err is not None:
            pos_errors[m.interface].append(err)

    # junction scoring: horizontal traces match planted junctions by frequency
    jj_f0 = [math.hypot(d.delta_ghz, d.eps_i_ghz) for d in ensemble.junction]
    junction_fits = [f for f in fits if f.junction_flag]
    jj_recalled = 0
    for f0 in jj_f0:
        for f in junction_fits:
            f_fit = math.hypot(f.delta_ghz, f.eps_i_ghz)
            if abs(f_fit - f0) < 0.01:
                jj_recalled += 1
                break

    n_tun = len(ensemble.tunable)
    n_jj = len(ensemble.junction)
    ratio_errs = np.array([m.ratio_err for m in matches]) if matches else np.array([])
    all_pos = [e for errs in pos_errors.values() for e in errs]
    return ScoreReport(
        n_planted_tunable=n_tun,
        n_planted_junction=n_jj,
        n_fits=len(fits),
        n_matched=len(matches),
        fit_recall=len(matches) / n_tun if n_tun else 1.0,
        ratio_within_2pct=float(np.mean(ratio_errs <= 0.02)) if matches else 0.0,
        ratio_within_5pct=float(np.mean(ratio_errs <= 0.05)) if matches else 0.0,
        junction_recall=jj_recalled / n_jj if n_jj else 1.0,
        junction_false_positive=sum(1 for m in matches if m.junction_flag),
        interface_recall={
            name: (float(np.mean(v)) if v else None) for name, v in recalled.items()},
        position_rmse_nm=(float(np.sqrt(np.mean(np.square(all_pos))))
                          if all_pos else None),
        position_errors={
            name: (float(np.sqrt(np.mean(np.square(v)))) if v else None)
            for name, v in pos_errors.items()},
        participation={},
        unlocated=sum(1 for r in results if r.unlocated),
    )
