"""Sensitivity sweeps: electrode distances and the dipole-moment cutoff.

Every sweep point is a full independent re-analysis (field re-solve and
re-localization of all fitted defects), not a perturbative rescaling.  The
physical electrode distances map proportionally onto the effective plate
offsets of the reduced 2D model while the calibration scale factors stay at
their nominal values, so distance errors propagate into ratio-curve shifts
exactly as they would in the measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import CrossSectionConfig, INTERFACES
from .localize import build_histograms
from .pipeline import localize_fits, simulate_profiles
from .profiles import InterfaceProfileSet

#: nominal electrode distances, um
NOMINAL_H_T_UM = 590.0
NOMINAL_H_B_UM = 815.0


@dataclass(frozen=True)
class SweepResult:
    h_t_um: float | None
    h_b_um: float | None
    cutoff_debye: float | None
    participation: dict
    unlocated_count: int
    located_count: int
    weight_within_50nm: float

    def participation_vector(self) -> np.ndarray:
        return np.array([self.participation[n] for n in INTERFACES])


def electrode_distance_grid(range_um: float = 50.0, step_um: float = 25.0,
                            h_t_nominal: float = NOMINAL_H_T_UM,
                            h_b_nominal: float = NOMINAL_H_B_UM):
    """Admissible (h_t, h_b) pairs of the coupled-variation grid.

    The top distance rides on bottom-distance changes (shortening the
    bottom gap pushes the chip away from the lid), so the realized top
    distance is ``h_t + d_t - d_b``; combinations whose realized offset
    leaves the +-``range_um`` window are excluded.
    """
    if step_um <= 0 or range_um <= 0:
        raise ValueError("range and step must be positive")
    n = int(round(range_um / step_um))
    if abs(n * step_um - range_um) > 1e-9:
        raise ValueError("step must divide the sweep range")
    deltas = step_um * np.arange(-n, n + 1)
    grid = []
    for d_t in deltas:
        for d_b in deltas:
            h_t = h_t_nominal + d_t - d_b
            h_b = h_b_nominal + d_b
            if abs(h_t - h_t_nominal) > range_um + 1e-9:
                continue
            if h_t <= 0 or h_b <= 0:
                raise ValueError("non-positive electrode distance in sweep")
            grid.append((float(h_t), float(h_b)))
    return grid


def _config_for_distances(base: CrossSectionConfig, h_t_um: float, h_b_um: float,
                          h_t_nominal: float, h_b_nominal: float) -> CrossSectionConfig:
    return replace(base,
                   plate_above_offset_um=base.plate_above_offset_um * h_t_um / h_t_nominal,
                   plate_below_offset_um=base.plate_below_offset_um * h_b_um / h_b_nominal)


def _result_from_localization(results, h_t=None, h_b=None, cutoff=None,
                              bin_width_nm: float = 5.0) -> SweepResult:
    hist = build_histograms(results, bin_width_nm)
    centers = 0.5 * (hist.bin_edges_nm[:-1] + hist.bin_edges_nm[1:])
    total = sum(float(w.sum()) for w in hist.weights.values())
    near = sum(float(w[centers <= 50.0].sum()) for w in hist.weights.values())
    frac = near / total if total > 0 else 0.0
    return SweepResult(h_t, h_b, cutoff, dict(hist.participation),
                       hist.unlocated_count, hist.located_count, frac)


def sweep_electrode_distances(base_config: CrossSectionConfig, fits: list,
                              scale_t: float, scale_b: float,
                              range_um: float = 50.0, step_um: float = 25.0,
                              cutoff: float = 10.0,
                              h_t_nominal: float = NOMINAL_H_T_UM,
                              h_b_nominal: float = NOMINAL_H_B_UM) -> list:
    """Re-run field solve and localization on the admissible distance grid.

    ``fits`` are the measured tunabilities (data: they do not change with
    the assumed electrode distances); the calibration scales are the
    nominal ones and are held fixed across the sweep.
    """
    out = []
    for h_t, h_b in electrode_distance_grid(range_um, step_um, h_t_nominal, h_b_nominal):
        cfg = _config_for_distances(base_config, h_t, h_b, h_t_nominal, h_b_nominal)
        profiles = simulate_profiles(cfg, excitations=("top", "bottom"))
        profiles = profiles.with_scales(scale_t, scale_b)
        results = localize_fits(fits, profiles, cutoff)
        out.append(_result_from_localization(results, h_t=h_t, h_b=h_b))
    return sorted(out, key=lambda r: (r.h_t_um, r.h_b_um))


def cutoff_sweep(cutoffs, fits: list, profiles: InterfaceProfileSet) -> list:
    """Full localization of all fits at each dipole cutoff."""
    out = []
    for cutoff in cutoffs:
        if not (cutoff > 0.0):
            raise ValueError("cutoffs must be positive")
        results = localize_fits(fits, profiles, float(cutoff))
        out.append(_result_from_localization(results, cutoff=float(cutoff)))
    return out


def participation_statistics(results: list) -> dict:
    """Unweighted mean and sample standard deviation per interface."""
    if len(results) < 2:
        raise ValueError("need at least two sweep results")
    stats = {}
    for name in INTERFACES:
        vals = np.array([r.participation[name] for r in results])
        stats[name] = (float(np.mean(vals)), float(np.std(vals, ddof=1)))
    return stats


def write_sweep_csv(path, results: list) -> None:
    lines = ["h_t_um,h_b_um,P_SM,P_Ox,P_OxV,P_SV,unlocated_count"]
    for r in results:
        p = r.participation
        lines.append(f"{r.h_t_um:.1f},{r.h_b_um:.1f},{p['SM']:.6f},{p['Ox']:.6f},"
                     f"{p['OxV']:.6f},{p['SV']:.6f},{r.unlocated_count}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_cutoff_csv(path, results: list) -> None:
    lines = ["cutoff_debye,P_SM,P_Ox,P_OxV,P_SV,unlocated_count"]
    for r in results:
        p = r.participation
        lines.append(f"{r.cutoff_debye:.2f},{p['SM']:.6f},{p['Ox']:.6f},"
                     f"{p['OxV']:.6f},{p['SV']:.6f},{r.unlocated_count}")
    Path(path).write_text("\n".join(lines) + "\n")
