"""Ridge extraction from rate maps and hyperbolic trace fitting.

Peaks are linked step-by-step into traces with a frequency gate around each
trace's locally extrapolated position; traces then get a derivative-based
least-squares fit of the square-root voltage dependence with an analytic
Jacobian and multi-starts over the sign and vertex ambiguities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .kernels import find_peaks_grid
from .spectroscopy import SpectroscopyMap

#: tunability below which a defect counts as junction-hosted, h*MHz/V
JUNCTION_GAMMA_MIN = 1.0

#: linking gate in frequency bins and tolerated consecutive missed steps
TRACE_GATE_BINS = 3.0
TRACE_MAX_GAP = 3

#: a localizable trace needs this many points over >= 2 swept electrodes
MIN_TRACE_POINTS = 6


class FitError(RuntimeError):
    def __init__(self, message: str, best_residual: float = math.nan):
        super().__init__(message)
        self.best_residual = best_residual


@dataclass
class DefectTrace:
    trace_id: int
    step_idx: np.ndarray
    v_t: np.ndarray
    v_b: np.ndarray
    f_ghz: np.ndarray
    rate: np.ndarray
    segment_id: np.ndarray

    def __len__(self):
        return self.step_idx.size

    def swept_electrodes(self, path_v_t, path_v_b) -> set:
        """Which electrodes actually sweep across this trace's points."""
        kinds = set()
        for seg in np.unique(self.segment_id):
            m = self.segment_id == seg
            if m.sum() < 2:
                continue
            if np.ptp(self.v_t[m]) > 0:
                kinds.add("t")
            if np.ptp(self.v_b[m]) > 0:
                kinds.add("b")
        return kinds

    @property
    def localizable(self) -> bool:
        kinds = set()
        for seg in np.unique(self.segment_id):
            m = self.segment_id == seg
            if np.ptp(self.v_t[m]) > 0:
                kinds.add("t")
            if np.ptp(self.v_b[m]) > 0:
                kinds.add("b")
        return len(self) >= MIN_TRACE_POINTS and len(kinds) >= 2


@dataclass
class TunabilityFit:
    trace_id: int
    delta_ghz: float
    eps_i_ghz: float
    gamma_t: float  # h*MHz/V, >= 0 by sign convention
    gamma_b: float  # h*MHz/V, sign relative to gamma_t
    covariance: np.ndarray
    residual_mhz: float
    n_points: int
    junction_flag: bool
    flags: list = field(default_factory=list)

    @property
    def ratio(self) -> float | None:
        if self.junction_flag or self.gamma_b == 0.0:
            return None
        return self.gamma_t / self.gamma_b


# ---------------------------------------------------------------------------
# peak detection
# ---------------------------------------------------------------------------

def detect_peaks(rates: np.ndarray, f_ghz: np.ndarray, baseline_rate: float,
                 rel_threshold: float = 0.5) -> list:
    """Local maxima above ``baseline*(1+rel_threshold)`` in one rate column.

    Returns ``(f_peak_ghz, rate)`` pairs with sub-bin positions from 3-point
    parabolic interpolation.
    """
    rows, cols, amps = find_peaks_grid(rates[None, :], baseline_rate * (1.0 + rel_threshold))
    df = f_ghz[1] - f_ghz[0]
    return [(float(f_ghz[0] + c * df), float(a)) for c, a in zip(cols, amps)]


def map_peaks(smap: SpectroscopyMap, rel_threshold: float = 0.5,
              baseline_rate: float | None = None):
    """Peak lists for every voltage step of a map."""
    if baseline_rate is None:
        baseline_rate = float(np.median(smap.rates))
    rows, cols, amps = find_peaks_grid(smap.rates, baseline_rate * (1.0 + rel_threshold))
    df = smap.f_ghz[1] - smap.f_ghz[0]
    freqs = smap.f_ghz[0] + cols * df
    by_step = [[] for _ in range(smap.n_steps)]
    for r, f, a in zip(rows, freqs, amps):
        by_step[r].append((float(f), float(a)))
    return by_step


# ---------------------------------------------------------------------------
# trace linking
# ---------------------------------------------------------------------------

class _OpenTrace:
    __slots__ = ("points", "gap", "slopes")

    def __init__(self):
        self.points = []  # (step, f, rate)
        self.gap = 0
        self.slopes = {}  # electrode -> learned df/dV within its segments

    def predict(self, step: int, smap: SpectroscopyMap) -> tuple[float, bool]:
        """Extrapolated frequency at ``step`` and whether the move is covered
        by learned per-electrode slopes (voltages at shared corners repeat,
        so crossing a segment boundary needs no extra term)."""
        s_last, f_last, _ = self.points[-1]
        dv_t = smap.v_t[step] - smap.v_t[s_last]
        dv_b = smap.v_b[step] - smap.v_b[s_last]
        f_hat = f_last
        covered = True
        for dv, electrode in ((dv_t, "t"), (dv_b, "b")):
            if dv == 0.0:
                continue
            slope = self.slopes.get(electrode)
            if slope is None:
                covered = False
            else:
                f_hat += slope * dv
        return f_hat, covered

    def append(self, step: int, f: float, amp: float, smap: SpectroscopyMap) -> None:
        if self.points:
            s_prev, f_prev, _ = self.points[-1]
            if smap.segment_id[s_prev] == smap.segment_id[step]:
                dv_t = smap.v_t[step] - smap.v_t[s_prev]
                dv_b = smap.v_b[step] - smap.v_b[s_prev]
                if dv_t != 0.0 and dv_b == 0.0:
                    self.slopes["t"] = (f - f_prev) / dv_t
                elif dv_b != 0.0 and dv_t == 0.0:
                    self.slopes["b"] = (f - f_prev) / dv_b
        self.points.append((step, f, amp))
        self.gap = 0


def _link_pass(peaks_by_step: list, claimed: list, smap: SpectroscopyMap,
               gate_ghz: float, max_gap: int) -> list:
    open_traces: list[_OpenTrace] = []
    done: list[_OpenTrace] = []
    for step in range(len(peaks_by_step)):
        peaks = [(pi, fp, amp) for pi, (fp, amp) in enumerate(peaks_by_step[step])
                 if not claimed[step][pi]]
        candidates = []
        for ti, tr in enumerate(open_traces):
            f_hat, covered = tr.predict(step, smap)
            # an unlearned electrode slope widens the gate to a birth gate
            gate = gate_ghz if covered else 4.0 * gate_ghz
            for pi, f_peak, _amp in peaks:
                dist = abs(f_peak - f_hat)
                if dist <= gate:
                    candidates.append((dist, -len(tr.points), ti, pi))
        candidates.sort()
        used_traces, used_peaks = set(), set()
        for dist, _neg, ti, pi in candidates:
            if ti in used_traces or pi in used_peaks:
                continue
            used_traces.add(ti)
            used_peaks.add(pi)
            f_peak, amp = peaks_by_step[step][pi]
            open_traces[ti].append(step, f_peak, amp, smap)
            claimed[step][pi] = True
        for pi, f_peak, amp in peaks:
            if pi not in used_peaks:
                tr = _OpenTrace()
                tr.append(step, f_peak, amp, smap)
                open_traces.append(tr)
                claimed[step][pi] = True
        still_open = []
        for tr in open_traces:
            if tr.points[-1][0] == step:
                still_open.append(tr)
            elif tr.gap + 1 > max_gap:
                done.append(tr)
            else:
                tr.gap += 1
                still_open.append(tr)
        open_traces = still_open
    done.extend(open_traces)
    return done


def link_traces(peaks_by_step: list, smap: SpectroscopyMap,
                gate_bins: float = TRACE_GATE_BINS,
                max_gap: int = TRACE_MAX_GAP) -> list:
    """Greedy nearest-frequency linking of per-step peaks into traces.

    A peak joins the trace whose extrapolated frequency is nearest within
    the gate; ties prefer smaller distance, then the longer trace.  Traces
    learn a slope per electrode, so they survive segment corners where the
    swept electrode changes.  Unmatched peaks seed new traces; traces
    tolerate ``max_gap`` missed steps, which lets crossing ridges pass
    through each other.  Steep ridges whose step-to-step motion exceeds the
    gate are picked up by re-running the linker with widened gates on the
    peaks no earlier pass claimed.
    """
    df = smap.f_ghz[1] - smap.f_ghz[0]
    claimed = [[False] * len(p) for p in peaks_by_step]
    raw = []
    gate_mults = (1.0, 4.0, 16.0)
    for k, gate_mult in enumerate(gate_mults):
        found = _link_pass(peaks_by_step, claimed, smap,
                           gate_bins * df * gate_mult, max_gap)
        last = k == len(gate_mults) - 1
        for tr in found:
            # stubs release their peaks so a wider-gate pass can link them
            if len(tr.points) >= 4 or last:
                raw.append(tr)
            else:
                for step, f, _amp in tr.points:
                    for pi, (fp, _a) in enumerate(peaks_by_step[step]):
                        if fp == f:
                            claimed[step][pi] = False
                            break

    traces = []
    order = sorted(raw, key=lambda t: (t.points[0][0], t.points[0][1]))
    for tid, tr in enumerate(order):
        steps = np.array([p[0] for p in tr.points], dtype=np.int64)
        traces.append(DefectTrace(
            tid, steps,
            smap.v_t[steps].copy(), smap.v_b[steps].copy(),
            np.array([p[1] for p in tr.points]),
            np.array([p[2] for p in tr.points]),
            smap.segment_id[steps].copy()))
    return traces


# ---------------------------------------------------------------------------
# hyperbola fitting
# ---------------------------------------------------------------------------

def _model_and_jac(theta, v_t, v_b):
    delta, eps_i, g_t, g_b = theta
    e = eps_i + (g_t * v_t + g_b * v_b) / 1e3
    f = np.sqrt(delta ** 2 + e ** 2)
    f = np.maximum(f, 1e-12)
    jac = np.empty((v_t.size, 4))
    jac[:, 0] = delta / f
    jac[:, 1] = e / f
    jac[:, 2] = e * v_t / 1e3 / f
    jac[:, 3] = e * v_b / 1e3 / f
    return f, jac


def fit_hyperbola(trace: DefectTrace, gamma_min: float = JUNCTION_GAMMA_MIN) -> TunabilityFit:
    """Least-squares fit of the square-root voltage dependence of one trace.

    Runs 8 starts over the asymmetry-sign and vertex-position ambiguities;
    the overall sign is normalized so gamma_t >= 0 (negating all three of
    eps_i, gamma_t, gamma_b leaves the model invariant).  Non-localizable
    traces are fitted anyway and flagged.
    """
    v_t, v_b, f_data = trace.v_t, trace.v_b, trace.f_ghz
    flags = []
    if not trace.localizable:
        flags.append("unlocatable")

    # slope seed from a linear model f ~ c + a_t V_t + a_b V_b
    basis = np.column_stack([np.ones_like(v_t), v_t, v_b])
    coef, *_ = np.linalg.lstsq(basis, f_data, rcond=None)
    g_t0 = coef[1] * 1e3
    g_b0 = coef[2] * 1e3
    f_min = float(np.min(f_data))

    starts = []
    for eps_sign in (1.0, -1.0):
        for delta0 in (0.98 * f_min, 0.6 * f_min):
            for g_scale in (1.0, 2.0):
                eps0 = eps_sign * math.sqrt(max(f_min ** 2 - delta0 ** 2, 1e-8))
                starts.append([delta0, eps0, g_scale * g_t0, g_scale * g_b0])

    best = None
    lower = [1e-4, -np.inf, -np.inf, -np.inf]
    upper = [np.inf, np.inf, np.inf, np.inf]
    # soft_l1 keeps foreign peaks picked up at ridge crossings from
    # dragging the parameters; the final pass below uses a plain quadratic
    # loss on the trimmed points so the covariance stays meaningful
    for theta0 in starts:
        try:
            res = least_squares(
                lambda th: _model_and_jac(th, v_t, v_b)[0] - f_data,
                theta0,
                jac=lambda th: _model_and_jac(th, v_t, v_b)[1],
                bounds=(lower, upper), method="trf", loss="soft_l1",
                f_scale=0.002, xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=200)
        except ValueError:
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("no fit start converged", math.nan)

    resid = _model_and_jac(best.x, v_t, v_b)[0] - f_data
    scale = max(3.0 * float(np.median(np.abs(resid))), 0.0012)
    keep = np.abs(resid) <= scale
    if keep.sum() >= max(6, int(0.5 * f_data.size)) and keep.sum() >= 5:
        if not keep.all():
            flags.append("trimmed")
        v_t, v_b, f_data = v_t[keep], v_b[keep], f_data[keep]
        try:
            refit = least_squares(
                lambda th: _model_and_jac(th, v_t, v_b)[0] - f_data,
                best.x,
                jac=lambda th: _model_and_jac(th, v_t, v_b)[1],
                bounds=(lower, upper), method="trf",
                xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=200)
            best = refit
        except ValueError:
            pass

    delta, eps_i, g_t, g_b = best.x
    if g_t < 0 or (g_t == 0 and g_b < 0):
        eps_i, g_t, g_b = -eps_i, -g_t, -g_b

    n = f_data.size
    dof = max(n - 4, 1)
    sigma2 = 2.0 * best.cost / dof
    jtj = best.jac.T @ best.jac
    try:
        cov = np.linalg.inv(jtj) * sigma2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj) * sigma2
        flags.append("singular-covariance")

    e_vals = np.abs(eps_i + (g_t * v_t + g_b * v_b) / 1e3)
    if float(np.min(e_vals)) > 0.5 * delta:
        flags.append("vertex-unobserved")

    residual_mhz = float(np.sqrt(2.0 * best.cost / n) * 1e3)
    junction = bool(max(abs(g_t), abs(g_b)) < gamma_min)
    return TunabilityFit(trace.trace_id, float(delta), float(eps_i),
                         float(g_t), float(g_b), cov, residual_mhz, n,
                         junction, flags)


def classify_junction(fit: TunabilityFit, gamma_min: float = JUNCTION_GAMMA_MIN) -> bool:
    """A defect is junction-hosted iff both tunabilities are below threshold."""
    return bool(max(abs(fit.gamma_t), abs(fit.gamma_b)) < gamma_min)


def refine_fits(fits: list, peaks_by_step: list, smap: SpectroscopyMap,
                assign_gate_bins: float = 1.5, rounds: int = 2) -> list:
    """Model-based reassignment: peaks go to the nearest fitted hyperbola.

    Crossing ridges confuse step-local linking; with a global model per
    trace each peak can be re-attributed by prediction distance and every
    hyperbola refitted on its own peaks.  Fits that converge onto the same
    ridge are merged (keeping the better-supported one).
    """
    df = smap.f_ghz[1] - smap.f_ghz[0]
    gate = assign_gate_bins * df
    steps_all = np.arange(smap.n_steps)
    flat_steps, flat_f, flat_amp = [], [], []
    for s, peaks in enumerate(peaks_by_step):
        for f, a in peaks:
            flat_steps.append(s)
            flat_f.append(f)
            flat_amp.append(a)
    flat_steps = np.asarray(flat_steps, dtype=np.int64)
    flat_f = np.asarray(flat_f)
    flat_amp = np.asarray(flat_amp)

    current = list(fits)
    for _ in range(rounds):
        if not current:
            break
        preds = np.stack([
            np.sqrt(f.delta_ghz ** 2
                    + (f.eps_i_ghz + (f.gamma_t * smap.v_t + f.gamma_b * smap.v_b) / 1e3) ** 2)
            for f in current])
        dist = np.abs(preds[:, flat_steps] - flat_f[None, :])
        owner = np.argmin(dist, axis=0)
        owner_dist = dist[owner, np.arange(flat_f.size)]
        assigned = owner_dist <= gate
        next_fits = []
        for fi, fit in enumerate(current):
            sel = assigned & (owner == fi)
            if sel.sum() < MIN_TRACE_POINTS:
                continue
            steps = flat_steps[sel]
            trace = DefectTrace(fit.trace_id, steps, smap.v_t[steps].copy(),
                                smap.v_b[steps].copy(), flat_f[sel],
                                flat_amp[sel], smap.segment_id[steps].copy())
            try:
                next_fits.append(fit_hyperbola(trace))
            except FitError:
                continue
        current = _dedupe_fits(next_fits)
    return current


def _dedupe_fits(fits: list) -> list:
    """Merge fits describing the same ridge, keeping the better-supported."""
    kept: list[TunabilityFit] = []
    for f in sorted(fits, key=lambda f: -f.n_points):
        dup = False
        for k in kept:
            scale_t = max(abs(k.gamma_t), 2.0)
            scale_b = max(abs(k.gamma_b), 2.0)
            same_slopes = (abs(f.gamma_t - k.gamma_t) / scale_t < 0.03
                           and abs(f.gamma_b - k.gamma_b) / scale_b < 0.03)
            # the zero-bias frequency is identifiable even when delta and
            # eps_i individually are not (horizontal or asymptote-only fits)
            f0_f = math.hypot(f.delta_ghz, f.eps_i_ghz)
            f0_k = math.hypot(k.delta_ghz, k.eps_i_ghz)
            if same_slopes and abs(f0_f - f0_k) < 0.01:
                dup = True
                break
        if not dup:
            kept.append(f)
    return kept


def fit_map(smap: SpectroscopyMap, rel_threshold: float = 0.5,
            gate_bins: float = TRACE_GATE_BINS,
            max_gap: int = TRACE_MAX_GAP,
            min_points: int = 3,
            refine_rounds: int = 2) -> tuple[list, list]:
    """Full extraction: peaks -> traces -> fits -> model-based refinement."""
    peaks = map_peaks(smap, rel_threshold)
    traces = [t for t in link_traces(peaks, smap, gate_bins, max_gap)
              if len(t) >= min_points]
    fits = []
    for tr in traces:
        try:
            fits.append(fit_hyperbola(tr))
        except FitError:
            continue
    if refine_rounds > 0:
        fits = refine_fits(fits, peaks, smap, rounds=refine_rounds)
    return traces, fits


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_fits(path, fits: list) -> None:
    records = []
    for f in fits:
        records.append({
            "trace_id": f.trace_id,
            "delta_GHz": f.delta_ghz,
            "eps_i_GHz": f.eps_i_ghz,
            "gamma_t_MHz_per_V": f.gamma_t,
            "gamma_b_MHz_per_V": f.gamma_b,
            "ratio": f.ratio,
            "junction_flag": f.junction_flag,
            "flags": list(f.flags),
            "residual_MHz": f.residual_mhz,
            "n_points": f.n_points,
            "cov_diag": [float(v) for v in np.diag(f.covariance)],
        })
    Path(path).write_text(json.dumps(records, indent=2))


REQUIRED_FIT_FIELDS = ("trace_id", "delta_GHz", "eps_i_GHz",
                       "gamma_t_MHz_per_V", "gamma_b_MHz_per_V",
                       "junction_flag", "flags", "residual_MHz")


def read_fits(path) -> list:
    records = json.loads(Path(path).read_text())
    fits = []
    for i, rec in enumerate(records):
        for key in REQUIRED_FIT_FIELDS:
            if key not in rec:
                raise ValueError(f"fit record {i}: missing field {key!r}")
        cov = np.diag(rec.get("cov_diag", [0.0] * 4))
        fits.append(TunabilityFit(
            rec["trace_id"], rec["delta_GHz"], rec["eps_i_GHz"],
            rec["gamma_t_MHz_per_V"], rec["gamma_b_MHz_per_V"], cov,
            rec["residual_MHz"], rec.get("n_points", 0),
            rec["junction_flag"], list(rec["flags"])))
    return fits
