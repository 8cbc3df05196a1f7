"""Hot numeric kernels with numba and pure-numpy twin implementations.

Each kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorized numpy fallback.  The public names dispatch on
:data:`tls_locator.backend.USE_NUMBA`; ``benchmarks/bench_kernels.py`` times
the two paths against each other.  Both paths must return identical results
(covered by tests), so everything downstream is backend-agnostic.
"""

import numpy as np

from .backend import USE_NUMBA, njit

# GHz detuning -> angular frequency in rad/us
_TWO_PI_GHZ_TO_RAD_PER_US = 2.0 * np.pi * 1e3

_SINGULAR_COS = 1e-9


# ---------------------------------------------------------------------------
# Lorentzian ridge accumulation for synthetic swap-spectroscopy maps
# ---------------------------------------------------------------------------

def _add_lorentzian_ridges_loops(rates, f_grid, f_defect, peak_rate, hwhm_rad_us):
    n_def, n_steps = f_defect.shape
    n_freq = f_grid.shape[0]
    f0 = f_grid[0]
    df = (f_grid[-1] - f_grid[0]) / (n_freq - 1)
    for d in range(n_def):
        g2 = hwhm_rad_us[d] * hwhm_rad_us[d]
        # beyond ~180 half-widths the added rate is < 3e-5 of the peak
        window = 180.0 * hwhm_rad_us[d] / _TWO_PI_GHZ_TO_RAD_PER_US
        for s in range(n_steps):
            fc = f_defect[d, s]
            k_lo = int(np.floor((fc - window - f0) / df))
            k_hi = int(np.ceil((fc + window - f0) / df)) + 1
            if k_lo < 0:
                k_lo = 0
            if k_hi > n_freq:
                k_hi = n_freq
            for k in range(k_lo, k_hi):
                det = _TWO_PI_GHZ_TO_RAD_PER_US * (f_grid[k] - fc)
                rates[s, k] += peak_rate[d] * g2 / (g2 + det * det)


_add_lorentzian_ridges_numba = njit(_add_lorentzian_ridges_loops)


def _add_lorentzian_ridges_numpy(rates, f_grid, f_defect, peak_rate, hwhm_rad_us):
    n_freq = f_grid.shape[0]
    f0 = f_grid[0]
    df = (f_grid[-1] - f_grid[0]) / (n_freq - 1)
    k = np.arange(n_freq)
    for d in range(f_defect.shape[0]):
        g2 = hwhm_rad_us[d] ** 2
        window = 180.0 * hwhm_rad_us[d] / _TWO_PI_GHZ_TO_RAD_PER_US
        k_lo = np.floor((f_defect[d] - window - f0) / df).astype(np.int64)
        k_hi = np.ceil((f_defect[d] + window - f0) / df).astype(np.int64) + 1
        near = (k[None, :] >= k_lo[:, None]) & (k[None, :] < k_hi[:, None])
        det = _TWO_PI_GHZ_TO_RAD_PER_US * (f_grid[None, :] - f_defect[d][:, None])
        rates += np.where(near, peak_rate[d] * g2 / (g2 + det * det), 0.0)


def add_lorentzian_ridges(rates, f_grid, f_defect, peak_rate, hwhm_rad_us):
    """Accumulate per-defect Lorentzian relaxation peaks into ``rates``.

    ``rates``: (n_steps, n_freq) array, modified in place, 1/us.
    ``f_defect``: (n_defects, n_steps) resonance frequencies in GHz
    (``f_grid`` must be uniform).  ``peak_rate`` is the on-resonance added
    rate 2 g^2 / Gamma2 in 1/us; ``hwhm_rad_us`` is Gamma2 in rad/us.
    """
    f_defect = np.ascontiguousarray(f_defect, dtype=np.float64)
    peak_rate = np.ascontiguousarray(peak_rate, dtype=np.float64)
    hwhm_rad_us = np.ascontiguousarray(hwhm_rad_us, dtype=np.float64)
    if f_defect.shape[0] == 0:
        return
    if USE_NUMBA:
        _add_lorentzian_ridges_numba(rates, f_grid, f_defect, peak_rate, hwhm_rad_us)
    else:
        _add_lorentzian_ridges_numpy(rates, f_grid, f_defect, peak_rate, hwhm_rad_us)


# ---------------------------------------------------------------------------
# Peak detection over a whole map (local maxima + 3-point parabolic refine)
# ---------------------------------------------------------------------------

def _find_peaks_grid_loops(rates, threshold_rate):
    n_steps, n_freq = rates.shape
    cap = n_steps * (n_freq // 2 + 1)
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.float64)
    amps = np.empty(cap, dtype=np.float64)
    n = 0
    for s in range(n_steps):
        for k in range(1, n_freq - 1):
            c = rates[s, k]
            if c <= threshold_rate:
                continue
            if c > rates[s, k - 1] and c >= rates[s, k + 1]:
                denom = rates[s, k - 1] - 2.0 * c + rates[s, k + 1]
                if denom < 0.0:
                    shift = 0.5 * (rates[s, k - 1] - rates[s, k + 1]) / denom
                else:
                    shift = 0.0
                rows[n] = s
                cols[n] = k + shift
                amps[n] = c - 0.25 * (rates[s, k - 1] - rates[s, k + 1]) * shift
                n += 1
    return rows[:n], cols[:n], amps[:n]


_find_peaks_grid_numba = njit(_find_peaks_grid_loops)


def _find_peaks_grid_numpy(rates, threshold_rate):
    c = rates[:, 1:-1]
    left = rates[:, :-2]
    right = rates[:, 2:]
    is_peak = (c > threshold_rate) & (c > left) & (c >= right)
    rows, k = np.nonzero(is_peak)
    cl = left[rows, k]
    cc = c[rows, k]
    cr = right[rows, k]
    denom = cl - 2.0 * cc + cr
    shift = np.where(denom < 0.0, 0.5 * (cl - cr) / np.where(denom == 0.0, 1.0, denom), 0.0)
    cols = (k + 1) + shift
    amps = cc - 0.25 * (cl - cr) * shift
    return rows.astype(np.int64), cols, amps


def find_peaks_grid(rates, threshold_rate):
    """Local maxima above ``threshold_rate`` in every row of a rate map.

    Returns ``(rows, cols, amps)`` where ``cols`` carries the sub-bin peak
    position from a 3-point parabolic fit (in fractional bin units).
    """
    rates = np.ascontiguousarray(rates, dtype=np.float64)
    if USE_NUMBA:
        return _find_peaks_grid_numba(rates, float(threshold_rate))
    return _find_peaks_grid_numpy(rates, float(threshold_rate))


# ---------------------------------------------------------------------------
# Orientation-resolved root scan on the substrate-vacuum interface
# ---------------------------------------------------------------------------

def _sv_alpha_scan_loops(x, ratio_curve, alpha_tb, alphas, target, tol_nm):
    n_alpha = alphas.shape[0]
    n_x = x.shape[0]
    cap = 4 * n_alpha
    out_alpha = np.empty(cap, dtype=np.int64)
    out_x = np.empty(cap, dtype=np.float64)
    n = 0
    for a in range(n_alpha):
        alpha = alphas[a]
        prev_num = np.cos(alpha - 0.5 * alpha_tb[0])
        prev_den = np.cos(alpha + 0.5 * alpha_tb[0])
        prev_ok = np.abs(prev_den) >= _SINGULAR_COS
        prev_y = ratio_curve[0] * prev_num / prev_den if prev_ok else 0.0
        for i in range(1, n_x):
            num = np.cos(alpha - 0.5 * alpha_tb[i])
            den = np.cos(alpha + 0.5 * alpha_tb[i])
            ok = np.abs(den) >= _SINGULAR_COS
            y = ratio_curve[i] * num / den if ok else 0.0
            # a sign flip of the denominator means the pole sits inside the
            # interval: the apparent sign change there is not a root
            if ok and prev_ok and (den > 0.0) == (prev_den > 0.0):
                f_lo = prev_y - target
                f_hi = y - target
                if f_lo == 0.0:
                    if n < cap:
                        out_alpha[n] = a
                        out_x[n] = x[i - 1]
                        n += 1
                elif f_hi == 0.0:
                    if i == n_x - 1 and n < cap:
                        out_alpha[n] = a
                        out_x[n] = x[i]
                        n += 1
                elif f_lo * f_hi < 0.0:
                    lo = x[i - 1]
                    hi = x[i]
                    # bisection on the linearly interpolated samples
                    while hi - lo > tol_nm:
                        mid = 0.5 * (lo + hi)
                        t = (mid - x[i - 1]) / (x[i] - x[i - 1])
                        r_m = ratio_curve[i - 1] + t * (ratio_curve[i] - ratio_curve[i - 1])
                        atb_m = alpha_tb[i - 1] + t * (alpha_tb[i] - alpha_tb[i - 1])
                        den_m = np.cos(alpha + 0.5 * atb_m)
                        y_m = r_m * np.cos(alpha - 0.5 * atb_m) / den_m
                        if (y_m - target) * f_lo <= 0.0:
                            hi = mid
                        else:
                            lo = mid
                    if n < cap:
                        out_alpha[n] = a
                        out_x[n] = 0.5 * (lo + hi)
                        n += 1
            prev_y = y
            prev_den = den
            prev_ok = ok
    return out_alpha[:n], out_x[:n]


_sv_alpha_scan_numba = njit(_sv_alpha_scan_loops)


def _sv_alpha_scan_numpy(x, ratio_curve, alpha_tb, alphas, target, tol_nm):
    num = np.cos(alphas[:, None] - 0.5 * alpha_tb[None, :])
    den = np.cos(alphas[:, None] + 0.5 * alpha_tb[None, :])
    ok = np.abs(den) >= _SINGULAR_COS
    with np.errstate(divide="ignore", invalid="ignore"):
        y = ratio_curve[None, :] * num / den
    f = np.where(ok, y - target, np.nan)
    same_branch = ok[:, :-1] & ok[:, 1:] & ((den[:, :-1] > 0) == (den[:, 1:] > 0))
    hit_lo = same_branch & (f[:, :-1] == 0.0)
    hit_end = same_branch[:, -1] & (f[:, -2] != 0.0) & (f[:, -1] == 0.0)
    crosses = same_branch & ~hit_lo & (f[:, :-1] * f[:, 1:] < 0.0)
    out_alpha = []
    out_x = []
    for a, i in zip(*np.nonzero(hit_lo)):
        out_alpha.append(a)
        out_x.append(x[i])
    for a in np.nonzero(hit_end)[0]:
        out_alpha.append(a)
        out_x.append(x[-1])
    for a, i in zip(*np.nonzero(crosses)):
        lo, hi = x[i], x[i + 1]
        f_lo = f[a, i]
        alpha = alphas[a]
        while hi - lo > tol_nm:
            mid = 0.5 * (lo + hi)
            t = (mid - x[i]) / (x[i + 1] - x[i])
            r_m = ratio_curve[i] + t * (ratio_curve[i + 1] - ratio_curve[i])
            atb_m = alpha_tb[i] + t * (alpha_tb[i + 1] - alpha_tb[i])
            y_m = r_m * np.cos(alpha - 0.5 * atb_m) / np.cos(alpha + 0.5 * atb_m)
            if (y_m - target) * f_lo <= 0.0:
                hi = mid
            else:
                lo = mid
        out_alpha.append(a)
        out_x.append(0.5 * (lo + hi))
    order = np.lexsort((out_x, out_alpha)) if out_alpha else []
    return (
        np.asarray(out_alpha, dtype=np.int64)[order],
        np.asarray(out_x, dtype=np.float64)[order],
    )


def sv_alpha_scan(x, ratio_curve, alpha_tb, alphas, target, tol_nm=0.1):
    """Roots of ``ratio_curve(x) * zeta(alpha, alpha_tb(x)) = target`` per alpha.

    Returns ``(alpha_indices, x_roots)``.  Samples where the dipole is
    orthogonal to the bottom field (singular projection ratio) are skipped,
    as are brackets that contain the pole itself.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    ratio_curve = np.ascontiguousarray(ratio_curve, dtype=np.float64)
    alpha_tb = np.ascontiguousarray(alpha_tb, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    if USE_NUMBA:
        return _sv_alpha_scan_numba(x, ratio_curve, alpha_tb, alphas, float(target), float(tol_nm))
    return _sv_alpha_scan_numpy(x, ratio_curve, alpha_tb, alphas, float(target), float(tol_nm))
