"""Physical constants and the unit conversions used throughout the package.

Energies are handled as linear frequencies (E/h) in GHz, tunabilities as
h*MHz per volt, dipole moments in Debye, and fields in (V/m) per applied
volt.  Keeping the conversions in one place avoids silent 2*pi or factor-2
drift between the forward model and the inverse solvers.
"""

import math

PLANCK_H = 6.62607015e-34  # J*s
ELEMENTARY_CHARGE = 1.602176634e-19  # C
DEBYE_CM = 3.33564e-30  # C*m per Debye
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m

# 2 * (1 Debye) * (1 V/m) / h, expressed in MHz: tunability of a 1-D dipole
# per (V/m)/V of applied field.
GAMMA_MHZ_PER_DEBYE_FIELD = 2.0 * DEBYE_CM / PLANCK_H / 1e6


def gamma_mhz_per_volt(p_debye: float, e_per_volt: float) -> float:
    """Asymmetry-energy tunability h*MHz/V for a dipole aligned with the field.

    ``e_per_volt`` is the field magnitude per applied volt, (V/m)/V.
    """
    return GAMMA_MHZ_PER_DEBYE_FIELD * p_debye * e_per_volt


def dipole_debye(gamma_mhz_per_v: float, e_per_volt: float) -> float:
    """Invert :func:`gamma_mhz_per_volt` for the dipole magnitude in Debye."""
    return gamma_mhz_per_v / (GAMMA_MHZ_PER_DEBYE_FIELD * e_per_volt)


def coupling_mhz(p_debye: float, e_q_per_volt: float, v_rms: float) -> float:
    """Defect-qubit coupling g/h in MHz: p * E_q with E_q = e_q * V_rms."""
    return p_debye * DEBYE_CM * e_q_per_volt * v_rms / PLANCK_H / 1e6


def qubit_zero_point_voltage(freq_ghz: float, capacitance_f: float) -> float:
    """RMS zero-point voltage sqrt(h*f / (2*C)) of a lumped qubit mode."""
    return math.sqrt(PLANCK_H * freq_ghz * 1e9 / (2.0 * capacitance_f))
