"""Defect ensembles and the voltage response of individual defects.

A defect is parameterized by its tunneling energy and zero-bias asymmetry
(both as E/h in GHz), a dipole moment in Debye, and a location.  On film
interfaces the applied fields are normal to the metal, so only the
field-parallel dipole component matters and ``p_debye`` stores it directly.
On the substrate-vacuum interface the in-plane orientation ``alpha_rad``
is measured from the local bisector of the two applied field directions
(rotating toward the top-electrode field), which is also the frame the
inverse solver uses.  Junction defects (``JJ``) feel no applied DC field.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .constants import coupling_mhz, gamma_mhz_per_volt, qubit_zero_point_voltage
from .geometry import INTERFACES
from .profiles import InterfaceProfileSet

FIELD_TUNABLE = INTERFACES  # SM, Ox, OxV, SV
ALL_INTERFACES = FIELD_TUNABLE + ("JJ",)


class DefectError(ValueError):
    pass


@dataclass(frozen=True)
class Defect:
    interface: str
    x_nm: float | None  # distance from the edge; None for JJ
    p_debye: float  # field-parallel component (film) or in-plane magnitude (SV)
    alpha_rad: float  # orientation from the local field bisector (SV only)
    delta_ghz: float  # tunneling energy / h
    eps_i_ghz: float  # zero-bias asymmetry / h
    gamma2_per_us: float = 2.0
    g_mhz: float | None = None  # explicit qubit coupling; None -> coupling model

    def __post_init__(self):
        if self.interface not in ALL_INTERFACES:
            raise DefectError(f"unknown interface {self.interface!r}")
        if self.interface != "JJ" and self.x_nm is None:
            raise DefectError("field-tunable defects need a position")
        if self.delta_ghz <= 0.0:
            raise DefectError("tunneling energy must be positive")
        if not (0.0 < self.p_debye <= 10.0) and self.interface != "JJ":
            raise DefectError("dipole moment must be in (0, 10] Debye")

    @property
    def is_junction(self) -> bool:
        return self.interface == "JJ"


@dataclass(frozen=True)
class QubitParams:
    """Probe-qubit parameters for map synthesis and coupling strengths."""

    baseline_t1_us: float = 8.3
    band_lo_ghz: float = 5.6
    band_hi_ghz: float = 6.3
    resolution_mhz: float = 1.5
    mode_freq_ghz: float = 6.0
    capacitance_ff: float = 90.0

    @property
    def v_rms(self) -> float:
        """Zero-point voltage of the qubit mode across its capacitance."""
        return qubit_zero_point_voltage(self.mode_freq_ghz, self.capacitance_ff * 1e-15)

    @property
    def band_ghz(self) -> tuple[float, float]:
        return self.band_lo_ghz, self.band_hi_ghz


def defect_gammas(defect: Defect, profiles: InterfaceProfileSet) -> tuple[float, float]:
    """Tunability coefficients (gamma_t, gamma_b) in h*MHz/V.

    gamma = 2 p_parallel E per volt, with the dipole projected onto the
    local direction of each electrode's field (the calibrated plate scales
    are part of the effective field).
    """
    if defect.is_junction:
        return 0.0, 0.0
    name = defect.interface
    lo, hi = profiles.coverage(name)
    if not (lo <= defect.x_nm <= hi):
        raise DefectError(
            f"x = {defect.x_nm} nm outside {name} profile coverage [{lo}, {hi}]")
    e_t = float(profiles.e_t_eff(name, defect.x_nm))
    e_b = float(profiles.e_b_eff(name, defect.x_nm))
    if name == "SV":
        atb = float(profiles.alpha_tb_at(defect.x_nm))
        proj_t = math.cos(defect.alpha_rad - 0.5 * atb)
        proj_b = math.cos(defect.alpha_rad + 0.5 * atb)
    else:
        proj_t = proj_b = 1.0
    return (gamma_mhz_per_volt(defect.p_debye * proj_t, e_t),
            gamma_mhz_per_volt(defect.p_debye * proj_b, e_b))


def defect_frequency(delta_ghz, eps_i_ghz, gamma_t, gamma_b, v_t, v_b):
    """Resonance frequency in GHz; gammas in h*MHz/V, voltages in V."""
    e = eps_i_ghz + (gamma_t * np.asarray(v_t) + gamma_b * np.asarray(v_b)) / 1e3
    return np.sqrt(delta_ghz ** 2 + e ** 2)


def qubit_field_projection(defect: Defect, profiles: InterfaceProfileSet) -> float:
    """Dipole projection factor onto the qubit-mode field direction."""
    if defect.is_junction:
        return 1.0
    if defect.interface != "SV":
        return 1.0  # qubit field is normal to the metal like the DC fields
    sv = profiles["SV"]
    if sv.u_t is None or sv.u_q is None:
        return 1.0
    x = defect.x_nm
    u_t = np.array([np.interp(x, sv.x_nm, sv.u_t[:, 0]), np.interp(x, sv.x_nm, sv.u_t[:, 1])])
    u_b = np.array([np.interp(x, sv.x_nm, sv.u_b[:, 0]), np.interp(x, sv.x_nm, sv.u_b[:, 1])])
    u_q = np.array([np.interp(x, sv.x_nm, sv.u_q[:, 0]), np.interp(x, sv.x_nm, sv.u_q[:, 1])])
    alpha_q = bisector_angle(u_t, u_b, u_q)
    return math.cos(defect.alpha_rad - alpha_q)


def bisector_angle(u_t: np.ndarray, u_b: np.ndarray, v: np.ndarray) -> float:
    """Signed angle of ``v`` in the (bisector, toward-u_t) frame of the fields."""
    bisec = u_t + u_b
    norm = np.linalg.norm(bisec)
    if norm < 1e-12:  # antiparallel fields: bisector undefined
        bisec = np.array([-u_t[1], u_t[0]])
        norm = 1.0
    bisec = bisec / norm
    perp = u_t - np.dot(u_t, bisec) * bisec
    pn = np.linalg.norm(perp)
    perp = np.array([-bisec[1], bisec[0]]) if pn < 1e-12 else perp / pn
    return math.atan2(float(np.dot(v, perp)), float(np.dot(v, bisec)))


def defect_coupling_mhz(defect: Defect, profiles: InterfaceProfileSet,
                        qubit: QubitParams) -> float:
    """Coupling g/h in MHz from the simulated qubit field, or the explicit value."""
    if defect.g_mhz is not None:
        return defect.g_mhz
    if defect.is_junction:
        raise DefectError("junction defects need an explicit coupling")
    e_q = float(profiles.e_q_at(defect.interface, defect.x_nm))
    proj = abs(qubit_field_projection(defect, profiles))
    return coupling_mhz(defect.p_debye * proj, e_q, qubit.v_rms)


# ---------------------------------------------------------------------------
# ensemble sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Planting densities and parameter windows for synthetic ensembles.

    Densities are per GHz of analysis band (in-band counts are Poisson
    unless ``poisson_counts`` is off).  ``fixed_g_mhz`` plants every defect
    at the same coupling; ``None`` uses the simulated qubit field, which
    makes distant or weak dipoles fade below the detection floor exactly as
    in a measurement.
    """

    tunable_per_ghz: float = 26.0
    jj_per_ghz: float = 16.0
    interface_weights: dict = field(default_factory=lambda: {
        "SM": 1.0, "Ox": 1.0, "OxV": 1.0, "SV": 1.0})
    x_range_nm: tuple[float, float] = (1.0, 200.0)
    dipole_range_debye: tuple[float, float] = (0.5, 10.0)
    delta_min_ghz: float = 2.0
    gamma2_per_us: float = 2.0
    jj_g_mhz: float = 0.6
    fixed_g_mhz: float | None = None
    poisson_counts: bool = True

    def validate(self, band_ghz: tuple[float, float]) -> None:
        lo, hi = band_ghz
        if hi <= lo:
            raise DefectError("empty analysis band")
        if self.delta_min_ghz >= hi:
            raise DefectError("tunneling-energy range does not overlap the band")
        bad = set(self.interface_weights) - set(FIELD_TUNABLE)
        if bad:
            raise DefectError(f"unknown interfaces in weights: {sorted(bad)}")


@dataclass
class DefectEnsemble:
    defects: list
    seed: int
    band_ghz: tuple[float, float]

    def __iter__(self):
        return iter(self.defects)

    def __len__(self):
        return len(self.defects)

    @property
    def tunable(self) -> list:
        return [d for d in self.defects if not d.is_junction]

    @property
    def junction(self) -> list:
        return [d for d in self.defects if d.is_junction]


def sample_defect_ensemble(spec: EnsembleSpec, seed: int,
                           profiles: InterfaceProfileSet,
                           path=None,
                           band_ghz: tuple[float, float] = (5.6, 6.3),
                           v_max: float = 100.0) -> DefectEnsemble:
    """Draw a reproducible ensemble whose traces enter the analysis band.

    The zero-bias asymmetry of each tunable defect is drawn uniformly from
    the window of values for which the trace touches the band somewhere on
    the voltage path (``path``; a symmetric +-``v_max`` box if omitted), so
    planted in-band counts match the configured densities.
    """
    spec.validate(band_ghz)
    rng = np.random.default_rng(seed)
    f_lo, f_hi = band_ghz
    width = f_hi - f_lo
    n_tun = (rng.poisson(spec.tunable_per_ghz * width) if spec.poisson_counts
             else round(spec.tunable_per_ghz * width))
    n_jj = (rng.poisson(spec.jj_per_ghz * width) if spec.poisson_counts
            else round(spec.jj_per_ghz * width))

    names = sorted(spec.interface_weights)
    weights = np.array([spec.interface_weights[n] for n in names], dtype=float)
    if weights.sum() <= 0:
        raise DefectError("interface weights sum to zero")
    weights = weights / weights.sum()

    defects = []
    for _ in range(n_tun):
        interface = str(rng.choice(names, p=weights))
        lo, hi = profiles.coverage(interface)
        x = float(rng.uniform(max(spec.x_range_nm[0], lo),
                              min(spec.x_range_nm[1], hi)))
        p = float(rng.uniform(*spec.dipole_range_debye))
        alpha = float(rng.uniform(0.0, math.pi)) if interface == "SV" else 0.0
        delta = float(rng.uniform(spec.delta_min_ghz, f_hi - 1e-3))
        probe = Defect(interface, x, p, alpha, delta, 0.0, spec.gamma2_per_us,
                       spec.fixed_g_mhz)
        g_t, g_b = defect_gammas(probe, profiles)
        if path is not None:
            u = (g_t * np.asarray(path.v_t) + g_b * np.asarray(path.v_b)) / 1e3
            u_lo, u_hi = float(np.min(u)), float(np.max(u))
        else:
            u_hi = (abs(g_t) + abs(g_b)) * v_max / 1e3
            u_lo = -u_hi
        eps_i = _draw_eps_i(rng, delta, f_lo, f_hi, u_lo, u_hi)
        defects.append(replace(probe, eps_i_ghz=eps_i))
    for _ in range(n_jj):
        f0 = float(rng.uniform(f_lo, f_hi))
        frac = float(rng.uniform(0.3, 0.98))
        delta = f0 * frac
        eps_i = math.sqrt(f0 ** 2 - delta ** 2) * (1 if rng.random() < 0.5 else -1)
        defects.append(Defect("JJ", None, 1.0, 0.0, delta, eps_i,
                              spec.gamma2_per_us,
                              spec.fixed_g_mhz or spec.jj_g_mhz))
    return DefectEnsemble(defects, seed, band_ghz)


def _draw_eps_i(rng, delta, f_lo, f_hi, u_lo, u_hi) -> float:
    """Uniform draw from the asymmetry windows that reach the band on the path."""
    a = math.sqrt(max(f_lo ** 2 - delta ** 2, 0.0))
    b = math.sqrt(f_hi ** 2 - delta ** 2)
    upper = (a - u_hi, b - u_lo)
    lower = (-b - u_hi, -a - u_lo)
    len_up = upper[1] - upper[0]
    len_lo = lower[1] - lower[0]
    pick = rng.uniform(0.0, len_up + len_lo)
    if pick < len_up:
        return upper[0] + pick
    return lower[0] + (pick - len_up)


# ---------------------------------------------------------------------------
# ground-truth persistence (for round-trip scoring only)
# ---------------------------------------------------------------------------

def write_ensemble(path, ensemble: DefectEnsemble,
                   profiles: InterfaceProfileSet | None = None) -> None:
    records = []
    for d in ensemble:
        rec = asdict(d)
        if profiles is not None and not d.is_junction:
            g_t, g_b = defect_gammas(d, profiles)
            rec["gamma_t_MHz_per_V"] = g_t
            rec["gamma_b_MHz_per_V"] = g_b
        records.append(rec)
    payload = {"seed": ensemble.seed, "band_ghz": list(ensemble.band_ghz),
               "defects": records}
    Path(path).write_text(json.dumps(payload, indent=2))


def read_ensemble(path) -> DefectEnsemble:
    payload = json.loads(Path(path).read_text())
    defects = []
    for rec in payload["defects"]:
        defects.append(Defect(
            rec["interface"], rec["x_nm"], rec["p_debye"], rec["alpha_rad"],
            rec["delta_ghz"], rec["eps_i_ghz"], rec.get("gamma2_per_us", 2.0),
            rec.get("g_mhz")))
    return DefectEnsemble(defects, payload["seed"], tuple(payload["band_ghz"]))
