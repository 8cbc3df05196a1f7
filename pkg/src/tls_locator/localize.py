"""Inversion of fitted tunability ratios into defect positions.

Film interfaces (SM, Ox, OxV) use the scalar ratio of calibrated field
strengths; on the substrate-vacuum interface the applied fields are not
parallel, so the equation gains the ratio of dipole projections onto the
two fields and is scanned over a dense orientation grid.  Solutions whose
implied dipole moment exceeds the physical cutoff are discarded but kept
for reporting; the surviving solutions of one defect are weighted by their
allowed orientation measure (a full half-turn for orientation-degenerate
film solutions).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import GAMMA_MHZ_PER_DEBYE_FIELD, coupling_mhz
from .defects import QubitParams, bisector_angle
from .geometry import INTERFACES
from .kernels import sv_alpha_scan
from .profiles import InterfaceProfileSet, RatioCurve, curve_roots, field_ratio

DIPOLE_CUTOFF_DEBYE = 10.0
ALPHA_GRID_POINTS = 512
ROOT_TOL_NM = 0.1
HISTOGRAM_BIN_NM = 5.0

#: film-interface solutions are orientation-degenerate over a half-turn
FILM_ALPHA_MEASURE = math.pi


class SingularProjection(ValueError):
    """Dipole orthogonal to the bottom field: no finite projection ratio."""


def zeta(alpha: float, alpha_tb: float) -> float:
    """Ratio of dipole projections onto the two applied field directions.

    ``alpha`` is the dipole angle from the field bisector, ``alpha_tb`` the
    angle between the fields; the value is signed.
    """
    den = math.cos(alpha + 0.5 * alpha_tb)
    if abs(den) < 1e-9:
        raise SingularProjection(
            f"projection ratio singular at alpha={alpha:.6f}, alpha_tb={alpha_tb:.6f}")
    return math.cos(alpha - 0.5 * alpha_tb) / den


def default_alpha_grid(n: int = ALPHA_GRID_POINTS) -> np.ndarray:
    """Midpoint grid over a half-turn of in-plane orientations."""
    return (np.arange(n) + 0.5) * (math.pi / n)


@dataclass
class LocalizationSolution:
    interface: str
    x_nm: float
    p_par_debye: float
    weight: float = 0.0
    alpha_interval_rad: tuple[float, float] | None = None  # SV only
    alpha_points: np.ndarray | None = None  # SV branch samples
    x_points: np.ndarray | None = None
    p_points: np.ndarray | None = None
    point_measures: np.ndarray | None = None
    g_mhz: float | None = None
    flags: list = field(default_factory=list)

    @property
    def measure(self) -> float:
        if self.point_measures is not None:
            return float(np.sum(self.point_measures))
        return FILM_ALPHA_MEASURE


@dataclass
class LocalizationResult:
    trace_id: int
    ratio: float
    solutions: list
    discarded: list
    unlocated: bool


# ---------------------------------------------------------------------------
# per-interface solvers
# ---------------------------------------------------------------------------

def solve_film_interface(ratio: float, curve: RatioCurve,
                         tol_nm: float = ROOT_TOL_NM) -> list:
    """All positions where the interface's field ratio equals ``ratio``.

    An empty list is a legitimate outcome: the ratio never occurs on this
    interface (e.g. beyond the simulated coverage).
    """
    if not (ratio > 0.0):
        raise ValueError("field-strength ratio must be positive on film interfaces")
    if ratio < curve.r_min or ratio > curve.r_max:
        return []
    return curve_roots(curve.x_nm, curve.ratio, ratio, tol=tol_nm)


def solve_sv_interface(ratio: float, profiles: InterfaceProfileSet,
                       alpha_grid: np.ndarray | None = None,
                       tol_nm: float = ROOT_TOL_NM):
    """Orientation-resolved solutions on the substrate-vacuum interface.

    For every orientation in the grid, finds the positions where the
    projection-weighted field ratio matches; returns ``(alphas, x_roots)``
    arrays.  Orientations where the projection ratio is singular are
    skipped inside the scan.
    """
    if alpha_grid is None:
        alpha_grid = default_alpha_grid()
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if alpha_grid.size < 200:
        raise ValueError("orientation grid needs at least 200 points")
    sv = profiles["SV"]
    r_sv = (profiles.scale_t * sv.e_t) / (profiles.scale_b * sv.e_b)
    idx, roots = sv_alpha_scan(sv.x_nm, r_sv, sv.alpha_tb, alpha_grid,
                               float(ratio), tol_nm)
    return alpha_grid[idx], roots


def dipole_moment(gamma_t: float, gamma_b: float, profiles: InterfaceProfileSet,
                  interface: str, x_nm: float, alpha: float | None = None,
                  consistency_limit: float = 0.05):
    """Dipole moment (Debye) implied by a solution, from both electrodes.

    Returns ``(p_par, inconsistent_flag)``; the two estimates agree exactly
    at a true root, so disagreement beyond ``consistency_limit`` flags a
    stale or badly interpolated solution rather than discarding it.
    """
    e_t = float(profiles.e_t_eff(interface, x_nm))
    e_b = float(profiles.e_b_eff(interface, x_nm))
    if interface == "SV":
        if alpha is None:
            raise ValueError("SV dipole estimates need the orientation")
        atb = float(profiles.alpha_tb_at(x_nm))
        cos_t = math.cos(alpha - 0.5 * atb)
        cos_b = math.cos(alpha + 0.5 * atb)
    else:
        cos_t = cos_b = 1.0
    with np.errstate(divide="ignore"):
        p_t = gamma_t / (GAMMA_MHZ_PER_DEBYE_FIELD * e_t * cos_t) if cos_t != 0 else math.inf
        p_b = gamma_b / (GAMMA_MHZ_PER_DEBYE_FIELD * e_b * cos_b) if cos_b != 0 else math.inf
    if not (math.isfinite(p_t) and math.isfinite(p_b)):
        return math.inf, True
    p = 0.5 * (p_t + p_b)
    inconsistent = abs(p_t - p_b) > consistency_limit * max(abs(p), 1e-30)
    return p, inconsistent


def apply_cutoff(solutions: list, cutoff: float = DIPOLE_CUTOFF_DEBYE):
    """Partition solutions by the physical dipole-moment cutoff.

    Discarded solutions are returned too (they are reported, not erased).
    SV solutions are filtered pointwise over their orientation branches.
    """
    if not (cutoff > 0.0):
        raise ValueError("cutoff must be positive")
    kept, discarded = [], []
    for sol in solutions:
        if sol.alpha_points is None:
            (kept if 0.0 < sol.p_par_debye <= cutoff else discarded).append(sol)
            continue
        inside = (sol.p_points > 0.0) & (sol.p_points <= cutoff)
        if not np.any(inside):
            discarded.append(sol)
            continue
        if np.all(inside):
            kept.append(sol)
            continue
        kept.append(_sv_subset(sol, inside))
        discarded.append(_sv_subset(sol, ~inside))
    return kept, discarded


def _sv_subset(sol: LocalizationSolution, mask: np.ndarray) -> LocalizationSolution:
    alphas = sol.alpha_points[mask]
    xs = sol.x_points[mask]
    ps = sol.p_points[mask]
    meas = sol.point_measures[mask]
    return LocalizationSolution(
        sol.interface, float(np.median(xs)), float(np.median(ps)),
        alpha_interval_rad=(float(alphas.min()), float(alphas.max())),
        alpha_points=alphas, x_points=xs, p_points=ps, point_measures=meas,
        flags=list(sol.flags))


def interface_probabilities(kept: list) -> list:
    """Normalize orientation measures of one defect's kept solutions to 1.

    Film-interface solutions each carry the full half-turn measure; SV
    branches carry the measure of their allowed orientation interval.
    Returns the solutions with weights set (empty input -> empty output).
    """
    total = sum(sol.measure for sol in kept)
    if total <= 0.0:
        return []
    for sol in kept:
        sol.weight = sol.measure / total
    return kept


def coupling_strength(solution: LocalizationSolution, profiles: InterfaceProfileSet,
                      qubit: QubitParams) -> float:
    """Qubit coupling g/h in MHz for a localization solution."""
    lo, hi = profiles.coverage(solution.interface)
    if not (lo <= solution.x_nm <= hi):
        raise ValueError(f"x = {solution.x_nm} nm outside qubit-field coverage")
    if solution.interface == "SV" and solution.alpha_points is not None:
        sv = profiles["SV"]
        g_acc = 0.0
        for alpha, x, p, w in zip(solution.alpha_points, solution.x_points,
                                  solution.p_points, solution.point_measures):
            proj = 1.0
            if sv.u_t is not None and sv.u_q is not None:
                u_t = np.array([np.interp(x, sv.x_nm, sv.u_t[:, 0]),
                                np.interp(x, sv.x_nm, sv.u_t[:, 1])])
                u_b = np.array([np.interp(x, sv.x_nm, sv.u_b[:, 0]),
                                np.interp(x, sv.x_nm, sv.u_b[:, 1])])
                u_q = np.array([np.interp(x, sv.x_nm, sv.u_q[:, 0]),
                                np.interp(x, sv.x_nm, sv.u_q[:, 1])])
                proj = abs(math.cos(alpha - bisector_angle(u_t, u_b, u_q)))
            e_q = float(profiles.e_q_at("SV", x))
            g_acc += w * coupling_mhz(p * proj, e_q, qubit.v_rms)
        return g_acc / solution.measure
    e_q = float(profiles.e_q_at(solution.interface, solution.x_nm))
    return coupling_mhz(solution.p_par_debye, e_q, qubit.v_rms)


# ---------------------------------------------------------------------------
# defect-level driver
# ---------------------------------------------------------------------------

def localize_defect(trace_id: int, gamma_t: float, gamma_b: float,
                    profiles: InterfaceProfileSet,
                    curves: dict | None = None,
                    alpha_grid: np.ndarray | None = None,
                    cutoff: float = DIPOLE_CUTOFF_DEBYE,
                    qubit: QubitParams | None = None) -> LocalizationResult:
    """Candidate positions for one fitted defect on all four interfaces."""
    if curves is None:
        curves = {name: field_ratio(profiles, name) for name in ("SM", "Ox", "OxV")}
    if alpha_grid is None:
        alpha_grid = default_alpha_grid()
    ratio = gamma_t / gamma_b
    solutions = []
    if ratio > 0.0:
        # film interfaces require parallel projections, hence a positive ratio
        for name in ("SM", "Ox", "OxV"):
            for x in solve_film_interface(ratio, curves[name]):
                p, inconsistent = dipole_moment(gamma_t, gamma_b, profiles, name, x)
                sol = LocalizationSolution(name, float(x), float(abs(p)))
                if inconsistent:
                    sol.flags.append("electrode-inconsistent")
                solutions.append(sol)
    alphas, roots = solve_sv_interface(ratio, profiles, alpha_grid)
    if alphas.size:
        solutions.extend(_sv_branches(alphas, roots, gamma_t, gamma_b, profiles,
                                      alpha_grid))
    kept, discarded = apply_cutoff(solutions, cutoff)
    kept = interface_probabilities(kept)
    if qubit is not None:
        for sol in kept:
            sol.g_mhz = coupling_strength(sol, profiles, qubit)
    return LocalizationResult(trace_id, ratio, kept, discarded,
                              unlocated=not kept)


def _sv_branches(alphas, roots, gamma_t, gamma_b, profiles, alpha_grid):
    """Group per-orientation roots into branches and size their measures.

    Adjacent orientation-gridpoints with solutions merge into an interval;
    each gridpoint's measure (grid spacing) is split over its simultaneous
    roots so multi-branch orientations are not double counted.
    """
    d_alpha = float(alpha_grid[1] - alpha_grid[0])
    p_vals = np.empty_like(roots)
    ok = np.ones(roots.size, dtype=bool)
    for i, (a, x) in enumerate(zip(alphas, roots)):
        p, bad = dipole_moment(gamma_t, gamma_b, profiles, "SV", float(x), float(a))
        # a negative estimate is the unobservable overall dipole flip (both
        # projections negated leave the trace invariant): report magnitudes
        p_vals[i] = abs(p)
        if bad:
            ok[i] = False
    alphas, roots, p_vals = alphas[ok], roots[ok], p_vals[ok]
    if alphas.size == 0:
        return []
    counts = {}
    for a in alphas:
        counts[a] = counts.get(a, 0) + 1
    measures = np.array([d_alpha / counts[a] for a in alphas])

    order = np.lexsort((roots, alphas))
    alphas, roots, p_vals, measures = (alphas[order], roots[order],
                                       p_vals[order], measures[order])
    branches = []  # each: list of indices
    open_branches = []  # (last_alpha, last_x, index list)
    gate_nm = 8.0
    for i, (a, x) in enumerate(zip(alphas, roots)):
        best = None
        for bi, (la, lx, idxs) in enumerate(open_branches):
            if abs(a - la) > 1.5 * d_alpha or abs(x - lx) > gate_nm:
                continue
            if best is None or abs(x - lx) < best[0]:
                best = (abs(x - lx), bi)
        if best is None:
            open_branches.append((a, x, [i]))
        else:
            _, bi = best
            la, lx, idxs = open_branches[bi]
            idxs.append(i)
            open_branches[bi] = (a, x, idxs)
    branches = [idxs for _, _, idxs in open_branches]

    out = []
    for idxs in branches:
        sel = np.asarray(idxs, dtype=int)
        out.append(LocalizationSolution(
            "SV", float(np.median(roots[sel])), float(np.median(p_vals[sel])),
            alpha_interval_rad=(float(alphas[sel].min()), float(alphas[sel].max())),
            alpha_points=alphas[sel], x_points=roots[sel], p_points=p_vals[sel],
            point_measures=measures[sel]))
    return out


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

@dataclass
class InterfaceHistogram:
    bin_edges_nm: np.ndarray
    weights: dict  # interface -> per-bin summed weights
    participation: dict  # interface -> fraction of located weight
    unlocated_count: int
    located_count: int


def build_histograms(results: list, bin_width_nm: float = HISTOGRAM_BIN_NM,
                     x_max_nm: float = 225.0) -> InterfaceHistogram:
    """Probability-weighted position histograms over all located defects."""
    if not (bin_width_nm > 0.0):
        raise ValueError("bin width must be positive")
    edges = np.arange(0.0, x_max_nm + bin_width_nm, bin_width_nm)
    weights = {name: np.zeros(edges.size - 1) for name in INTERFACES}
    totals = {name: 0.0 for name in INTERFACES}
    unlocated = 0
    located = 0
    for res in results:
        if res.unlocated:
            unlocated += 1
            continue
        located += 1
        for sol in res.solutions:
            if sol.alpha_points is not None:
                pw = sol.weight * sol.point_measures / sol.measure
                weights[sol.interface] += np.histogram(
                    sol.x_points, bins=edges, weights=pw)[0]
            else:
                k = min(np.searchsorted(edges, sol.x_nm, side="right") - 1,
                        edges.size - 2)
                weights[sol.interface][k] += sol.weight
            totals[sol.interface] += sol.weight
    total = sum(totals.values())
    participation = {name: (totals[name] / total if total > 0 else 0.0)
                     for name in INTERFACES}
    return InterfaceHistogram(edges, weights, participation, unlocated, located)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_solutions(path, results: list) -> None:
    records = []
    for res in results:
        sols = []
        for sol in res.solutions:
            rec = {
                "interface": sol.interface,
                "x_nm": sol.x_nm,
                "p_par_D": sol.p_par_debye,
                "weight": sol.weight,
                "flags": list(sol.flags),
            }
            if sol.alpha_interval_rad is not None:
                rec["alpha_interval_rad"] = list(sol.alpha_interval_rad)
            if sol.g_mhz is not None:
                rec["g_MHz"] = sol.g_mhz
            sols.append(rec)
        records.append({
            "trace_id": res.trace_id,
            "ratio": res.ratio,
            "solutions": sols,
            "discarded": [
                {"interface": d.interface, "x_nm": d.x_nm, "p_par_D": d.p_par_debye}
                for d in res.discarded],
            "unlocated": res.unlocated,
        })
    Path(path).write_text(json.dumps(records, indent=2))


def write_histograms_csv(path, hist: InterfaceHistogram) -> None:
    lines = ["interface,bin_lo_nm,bin_hi_nm,weight"]
    for name in INTERFACES:
        w = hist.weights[name]
        for k in range(w.size):
            lines.append(f"{name},{hist.bin_edges_nm[k]:.2f},"
                         f"{hist.bin_edges_nm[k + 1]:.2f},{w[k]:.8g}")
    Path(path).write_text("\n".join(lines) + "\n")
