"""End-to-end analysis helpers shared by the CLI and the parameter sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .defects import QubitParams
from .geometry import CrossSectionConfig, build_geometry
from .laplace import solve_all
from .localize import (InterfaceHistogram, LocalizationResult, build_histograms,
                       default_alpha_grid, localize_defect)
from .profiles import (InterfaceProfileSet, calibrate_plate_scales,
                       extract_interface_profiles, field_ratio)
from .spectroscopy import SpectroscopyMap
from .tracefit import TunabilityFit, fit_map


def simulate_profiles(config: CrossSectionConfig, calibrate: bool = False,
                      excitations=("top", "bottom", "qubit")) -> InterfaceProfileSet:
    """Build, solve and extract; optionally calibrate the electrode scales."""
    model = build_geometry(config)
    grids = solve_all(model, excitations=tuple(excitations))
    profiles = extract_interface_profiles(grids, model)
    if calibrate:
        profiles = calibrate_plate_scales(profiles)
    return profiles


def localize_fits(fits: list, profiles: InterfaceProfileSet,
                  cutoff: float = 10.0, qubit: QubitParams | None = None,
                  alpha_grid: np.ndarray | None = None) -> list:
    """Localization results for every non-junction fit."""
    curves = {name: field_ratio(profiles, name) for name in ("SM", "Ox", "OxV")}
    if alpha_grid is None:
        alpha_grid = default_alpha_grid()
    results = []
    for fit in fits:
        if fit.junction_flag or "unlocatable" in fit.flags:
            # single-segment traces do not constrain both tunabilities
            continue
        if fit.gamma_b == 0.0 or not np.isfinite(fit.gamma_t / fit.gamma_b):
            results.append(LocalizationResult(fit.trace_id, float("inf"),
                                              [], [], unlocated=True))
            continue
        results.append(localize_defect(fit.trace_id, fit.gamma_t, fit.gamma_b,
                                       profiles, curves, alpha_grid, cutoff, qubit))
    return results


@dataclass
class AnalysisOutput:
    traces: list
    fits: list
    results: list
    histogram: InterfaceHistogram


def analyze_map(smap: SpectroscopyMap, profiles: InterfaceProfileSet,
                cutoff: float = 10.0, qubit: QubitParams | None = None,
                rel_threshold: float = 0.5,
                bin_width_nm: float = 5.0) -> AnalysisOutput:
    """Map -> traces -> fits -> localization -> histograms."""
    traces, fits = fit_map(smap, rel_threshold)
    results = localize_fits(fits, profiles, cutoff, qubit)
    hist = build_histograms(results, bin_width_nm)
    return AnalysisOutput(traces, fits, results, hist)
