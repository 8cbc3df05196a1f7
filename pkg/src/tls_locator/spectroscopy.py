"""Synthetic swap-spectroscopy maps over alternating gate-voltage ramps.

The qubit's energy relaxation rate is sampled on a uniform frequency grid
at every voltage step.  Each defect contributes a weak-coupling Lorentzian
in detuning with half-width Gamma2 and on-resonance rate 2 g^2 / Gamma2;
ridge positions, not depths, carry the information the analysis uses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .defects import DefectEnsemble, QubitParams, defect_coupling_mhz, defect_frequency, defect_gammas
from .kernels import add_lorentzian_ridges
from .profiles import InterfaceProfileSet

MAP_CSV_HEADER = ["step", "V_t", "V_b", "f_GHz", "rate_per_us"]


class RampPlanError(ValueError):
    pass


@dataclass(frozen=True)
class RampSegment:
    sweep: str  # electrode being swept: "t" | "b"
    span_v: float  # signed sweep extent
    step_v: float
    start: tuple[float, float] | None = None  # optional explicit (V_t, V_b) start


@dataclass(frozen=True)
class RampPlan:
    start_v: tuple[float, float]
    segments: tuple
    limit_v: float = 100.0

    def validate(self) -> None:
        if not self.segments:
            raise RampPlanError("plan has no segments")
        pos = tuple(self.start_v)
        prev_sweep = None
        for i, seg in enumerate(self.segments):
            if seg.sweep not in ("t", "b"):
                raise RampPlanError(f"segment {i}: sweep must be 't' or 'b'")
            if seg.step_v <= 0:
                raise RampPlanError(f"segment {i}: step must be positive")
            if seg.span_v == 0:
                raise RampPlanError(f"segment {i}: zero span")
            if seg.sweep == prev_sweep:
                raise RampPlanError(f"segment {i}: segments must alternate electrodes")
            if seg.start is not None and tuple(seg.start) != pos:
                raise RampPlanError(
                    f"segment {i}: start {tuple(seg.start)} does not continue the "
                    f"path at {pos}")
            pos = _segment_end(pos, seg)
            for v in pos:
                if abs(v) > self.limit_v + 1e-9:
                    raise RampPlanError(f"segment {i}: exceeds +-{self.limit_v} V")
            prev_sweep = seg.sweep

    @classmethod
    def alternating(cls, start: float = -100.0, stop: float = 100.0,
                    span_v: float = 10.0, step_v: float = 0.14,
                    first: str = "t", limit_v: float = 100.0) -> "RampPlan":
        """Staircase plan sweeping both electrodes from ``start`` to ``stop``."""
        n = max(1, int(round(abs(stop - start) / span_v)))
        sgn = math.copysign(1.0, stop - start)
        order = (first, "b" if first == "t" else "t")
        segs = []
        for k in range(n):
            segs.append(RampSegment(order[0], sgn * span_v, step_v))
            segs.append(RampSegment(order[1], sgn * span_v, step_v))
        plan = cls((start, start), tuple(segs), limit_v=limit_v)
        plan.validate()
        return plan

    def to_json_dict(self) -> dict:
        return {
            "start_v": list(self.start_v),
            "limit_v": self.limit_v,
            "segments": [{"sweep": s.sweep, "span_v": s.span_v, "step_v": s.step_v}
                         for s in self.segments],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RampPlan":
        segs = tuple(RampSegment(s["sweep"], s["span_v"], s["step_v"],
                                 tuple(s["start"]) if "start" in s else None)
                     for s in data["segments"])
        plan = cls(tuple(data["start_v"]), segs, data.get("limit_v", 100.0))
        plan.validate()
        return plan


def _segment_end(pos, seg: RampSegment):
    n_steps = int(math.floor(abs(seg.span_v) / seg.step_v + 1e-9))
    delta = math.copysign(n_steps * seg.step_v, seg.span_v)
    if seg.sweep == "t":
        return (pos[0] + delta, pos[1])
    return (pos[0], pos[1] + delta)


@dataclass
class VoltagePath:
    v_t: np.ndarray
    v_b: np.ndarray
    segment_id: np.ndarray

    def __len__(self):
        return self.v_t.size


def ramp_path(plan: RampPlan) -> VoltagePath:
    """Expand a plan into the ordered voltage pairs of every measurement step.

    Each segment includes its own start point, so consecutive segments share
    their corner pair (it appears once per segment); pairs are unique within
    a segment.
    """
    plan.validate()
    v_t, v_b, seg_id = [], [], []
    pos = tuple(plan.start_v)
    for i, seg in enumerate(plan.segments):
        n_steps = int(math.floor(abs(seg.span_v) / seg.step_v + 1e-9))
        ks = np.arange(n_steps + 1)
        delta = math.copysign(1.0, seg.span_v) * seg.step_v * ks
        if seg.sweep == "t":
            v_t.append(pos[0] + delta)
            v_b.append(np.full(ks.size, pos[1]))
        else:
            v_t.append(np.full(ks.size, pos[0]))
            v_b.append(pos[1] + delta)
        seg_id.append(np.full(ks.size, i, dtype=np.int64))
        pos = _segment_end(pos, seg)
    return VoltagePath(np.concatenate(v_t), np.concatenate(v_b),
                       np.concatenate(seg_id))


@dataclass
class SpectroscopyMap:
    v_t: np.ndarray
    v_b: np.ndarray
    segment_id: np.ndarray
    f_ghz: np.ndarray
    rates: np.ndarray  # (n_steps, n_freq), 1/us
    baseline_rate: float

    @property
    def n_steps(self) -> int:
        return self.v_t.size

    @property
    def resolution_mhz(self) -> float:
        return float((self.f_ghz[1] - self.f_ghz[0]) * 1e3)


def frequency_grid(qubit: QubitParams) -> np.ndarray:
    res = qubit.resolution_mhz / 1e3
    n = int(math.floor((qubit.band_hi_ghz - qubit.band_lo_ghz) / res + 1e-9)) + 1
    return qubit.band_lo_ghz + res * np.arange(n)


def simulate_swap_spectroscopy(ensemble: DefectEnsemble, path: VoltagePath,
                               qubit: QubitParams, profiles: InterfaceProfileSet,
                               noise_sigma: float = 0.0, seed: int | None = None,
                               ) -> tuple[SpectroscopyMap, list]:
    """Render the relaxation-rate map; returns (map, out-of-band warnings).

    Defect ridges follow the hyperbolic voltage dependence of each defect's
    resonance; multiplicative log-normal noise of width ``noise_sigma`` is
    applied when requested.  Defects whose resonance never enters the band
    are reported in the warning list, not an error.
    """
    f_grid = frequency_grid(qubit)
    n_steps = len(path)
    rates = np.full((n_steps, f_grid.size), 1.0 / qubit.baseline_t1_us)
    f_def, peaks, hwhms = [], [], []
    warnings = []
    for i, d in enumerate(ensemble):
        g_t, g_b = defect_gammas(d, profiles)
        f_d = defect_frequency(d.delta_ghz, d.eps_i_ghz, g_t, g_b, path.v_t, path.v_b)
        if f_d.min() > f_grid[-1] or f_d.max() < f_grid[0]:
            warnings.append(f"defect {i} ({d.interface}) never enters the band")
            continue
        g = defect_coupling_mhz(d, profiles, qubit)
        g_rad_us = 2.0 * math.pi * g
        f_def.append(f_d)
        peaks.append(2.0 * g_rad_us ** 2 / d.gamma2_per_us)
        hwhms.append(d.gamma2_per_us)
    if f_def:
        add_lorentzian_ridges(rates, f_grid, np.array(f_def), np.array(peaks),
                              np.array(hwhms))
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        rates = rates * rng.lognormal(0.0, noise_sigma, size=rates.shape)
    return SpectroscopyMap(path.v_t.copy(), path.v_b.copy(), path.segment_id.copy(),
                           f_grid, rates, 1.0 / qubit.baseline_t1_us), warnings


# ---------------------------------------------------------------------------
# map persistence: binary columnar (.npz) and CSV long format
# ---------------------------------------------------------------------------

def save_map(path, smap: SpectroscopyMap) -> None:
    """Binary columnar format (compressed npz)."""
    np.savez_compressed(path, v_t=smap.v_t, v_b=smap.v_b,
                        segment_id=smap.segment_id, f_ghz=smap.f_ghz,
                        rates=smap.rates, baseline_rate=smap.baseline_rate)


def load_map(path) -> SpectroscopyMap:
    path = str(path)
    if path.endswith(".csv"):
        return read_map_csv(path)
    with np.load(path) as data:
        return SpectroscopyMap(data["v_t"], data["v_b"], data["segment_id"],
                               data["f_ghz"], data["rates"],
                               float(data["baseline_rate"]))


def write_map_csv(path, smap: SpectroscopyMap) -> None:
    """Long format: one row per (voltage step, frequency bin)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MAP_CSV_HEADER)
        for s in range(smap.n_steps):
            v_t, v_b = smap.v_t[s], smap.v_b[s]
            for k in range(smap.f_ghz.size):
                writer.writerow([s, f"{v_t:.4f}", f"{v_b:.4f}",
                                 f"{smap.f_ghz[k]:.6f}", f"{smap.rates[s, k]:.6g}"])


def read_map_csv(path) -> SpectroscopyMap:
    data = np.genfromtxt(path, delimiter=",", names=True)
    steps = data["step"].astype(np.int64)
    n_steps = int(steps.max()) + 1
    f_all = data["f_GHz"]
    n_freq = np.count_nonzero(steps == 0)
    f_ghz = f_all[:n_freq]
    rates = data["rate_per_us"].reshape(n_steps, n_freq)
    v_t = data["V_t"].reshape(n_steps, n_freq)[:, 0]
    v_b = data["V_b"].reshape(n_steps, n_freq)[:, 0]
    seg = _infer_segments(v_t, v_b)
    return SpectroscopyMap(v_t, v_b, seg, f_ghz, rates, float(np.median(rates)))


def _infer_segments(v_t: np.ndarray, v_b: np.ndarray) -> np.ndarray:
    """Recover segment ids: a repeated corner pair or a swept-electrode
    change marks a new segment."""
    seg = np.zeros(v_t.size, dtype=np.int64)
    cur = 0
    last_moved = None
    for i in range(1, v_t.size):
        dt = v_t[i] != v_t[i - 1]
        db = v_b[i] != v_b[i - 1]
        if not dt and not db:
            cur += 1
            last_moved = None
        else:
            moved = "t" if dt else "b"
            if last_moved is not None and moved != last_moved:
                cur += 1
            last_moved = moved
        seg[i] = cur
    return seg


def write_path_json(path, plan: RampPlan) -> None:
    Path(path).write_text(json.dumps(plan.to_json_dict(), indent=2))
