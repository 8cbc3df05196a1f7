"""Finite-difference solution of the dielectric Laplace equation.

Box-integration scheme on the nonuniform tensor grid of a
:class:`~tls_locator.geometry.CrossSectionModel`: each stencil arm carries
the flux coefficient of its two transverse half-cells, which reproduces the
dielectric jump conditions exactly on grid-aligned interfaces.  Arms that
cross the rounded metal edge are shortened to the true boundary distance
(Shortley-Weller), so the film contour does not staircase.

Systems are solved per applied volt (the equation is linear, so scaling the
excitation voltage rescales the solution exactly).  A sparse direct
factorization is computed once per model and reused for every excitation;
AMG-preconditioned CG serves as a low-memory fallback.  The contract is a
relative residual of at most 1e-8, not a particular method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CrossSectionModel

EXCITATIONS = ("top", "bottom", "qubit")

RESIDUAL_LIMIT = 1e-8


class SolverError(RuntimeError):
    """Linear solve failed to reach the residual contract."""

    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


@dataclass
class PotentialGrid:
    """Node potentials for one excitation of one model."""

    x_nm: np.ndarray
    y_nm: np.ndarray
    phi: np.ndarray  # (ny, nx), volts
    excitation: str
    volts: float
    conductor_volts: float  # film potential (0 unless the qubit island is driven)
    residual: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.phi.shape


@dataclass
class _Assembly:
    unknown_index: np.ndarray  # (ny, nx) -> row in the reduced system, -1 elsewhere
    matrix: sp.csr_matrix
    arm_coeff: dict  # direction -> (ny, nx) coefficient array
    dirichlet_mask: np.ndarray
    solver: object = field(default=None, repr=False)


def _arm_coefficients(model: CrossSectionModel) -> dict:
    x, y = model.x_nm, model.y_nm
    ny, nx = model.shape
    eps = np.zeros((ny + 1, nx + 1))
    eps[1:-1, 1:-1] = model.eps_cell
    dxe = np.zeros(nx)
    dxe[:-1] = np.diff(x)
    dxw = np.zeros(nx)
    dxw[1:] = np.diff(x)
    dyn = np.zeros(ny)
    dyn[:-1] = np.diff(y)
    dys = np.zeros(ny)
    dys[1:] = np.diff(y)

    half_y = 0.5 * (eps[1:, 1:-1] * dyn[:, None] + eps[:-1, 1:-1] * dys[:, None])  # (ny, nx-1)
    half_x = 0.5 * (eps[1:-1, 1:] * dxe[None, :] + eps[1:-1, :-1] * dxw[None, :])  # (ny-1, nx)

    a_e = np.zeros((ny, nx))
    a_e[:, :-1] = half_y / np.diff(x)[None, :]
    a_w = np.zeros((ny, nx))
    a_w[:, 1:] = a_e[:, :-1]
    a_n = np.zeros((ny, nx))
    a_n[:-1, :] = half_x / np.diff(y)[:, None]
    a_s = np.zeros((ny, nx))
    a_s[1:, :] = a_n[:-1, :]

    coeff = {0: a_e, 1: a_w, 2: a_n, 3: a_s}
    # Shortley-Weller corrections at the rounded edge
    for arm in model.cut_arms:
        if arm.direction in (0, 1):
            trans = 0.5 * (dyn[arm.iy] + dys[arm.iy])
            full = dxe[arm.ix] if arm.direction == 0 else dxw[arm.ix]
        else:
            trans = 0.5 * (dxe[arm.ix] + dxw[arm.ix])
            full = dyn[arm.iy] if arm.direction == 2 else dys[arm.iy]
        coeff[arm.direction][arm.iy, arm.ix] = arm.eps * trans / (arm.theta * full)
    return coeff


def _dirichlet_mask(model: CrossSectionModel) -> np.ndarray:
    mask = model.metal_mask.copy()
    mask[0, :] = True  # bottom plate
    mask[-1, :] = True  # top plate
    return mask


def _dirichlet_values(model: CrossSectionModel, excitation: str) -> tuple[np.ndarray, float]:
    ny, nx = model.shape
    values = np.zeros((ny, nx))
    conductor = 0.0
    if excitation == "top":
        values[-1, :] = 1.0
    elif excitation == "bottom":
        values[0, :] = 1.0
    elif excitation == "qubit":
        if not model.config.include_film:
            raise ValueError("qubit excitation requires the film to be present")
        values[model.metal_mask] = 1.0
        conductor = 1.0
    else:
        raise ValueError(f"unknown excitation {excitation!r}; expected one of {EXCITATIONS}")
    return values, conductor


_NEIGHBOR_SHIFT = {0: (0, 1), 1: (0, -1), 2: (1, 0), 3: (-1, 0)}


def _assemble(model: CrossSectionModel) -> _Assembly:
    cached = getattr(model, "_assembly_cache", None)
    if cached is not None:
        return cached
    ny, nx = model.shape
    dirichlet = _dirichlet_mask(model)
    unknown = ~dirichlet
    index = -np.ones((ny, nx), dtype=np.int64)
    index[unknown] = np.arange(int(unknown.sum()))
    coeff = _arm_coefficients(model)

    n_unknown = int(unknown.sum())
    rows = [np.arange(n_unknown)]
    cols = [np.arange(n_unknown)]
    diag = np.zeros(n_unknown)
    vals = [None]  # placeholder for the diagonal
    iy_u, ix_u = np.nonzero(unknown)
    row_of = index[iy_u, ix_u]
    for direction, (diy, dix) in _NEIGHBOR_SHIFT.items():
        a = coeff[direction][iy_u, ix_u]
        has = a > 0.0
        jy = iy_u + diy
        jx = ix_u + dix
        inside = has & (jy >= 0) & (jy < ny) & (jx >= 0) & (jx < nx)
        diag += np.where(has, a, 0.0)
        jy_c = np.clip(jy, 0, ny - 1)
        jx_c = np.clip(jx, 0, nx - 1)
        to_unknown = inside & unknown[jy_c, jx_c]
        rows.append(row_of[to_unknown])
        cols.append(index[jy_c[to_unknown], jx_c[to_unknown]])
        vals.append(-a[to_unknown])
    vals[0] = diag
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unknown, n_unknown),
    )
    assembly = _Assembly(index, matrix, coeff, dirichlet)
    model._assembly_cache = assembly
    return assembly


def _rhs(model: CrossSectionModel, assembly: _Assembly, values: np.ndarray) -> np.ndarray:
    ny, nx = model.shape
    unknown = assembly.unknown_index >= 0
    iy_u, ix_u = np.nonzero(unknown)
    b = np.zeros(int(unknown.sum()))
    for direction, (diy, dix) in _NEIGHBOR_SHIFT.items():
        a = assembly.arm_coeff[direction][iy_u, ix_u]
        jy = np.clip(iy_u + diy, 0, ny - 1)
        jx = np.clip(ix_u + dix, 0, nx - 1)
        fixed = (a > 0.0) & assembly.dirichlet_mask[jy, jx]
        np.add.at(b, assembly.unknown_index[iy_u[fixed], ix_u[fixed]],
                  a[fixed] * values[jy[fixed], jx[fixed]])
    return b


def solve_laplace(model: CrossSectionModel, excitation: str, volts: float = 1.0,
                  residual_limit: float = RESIDUAL_LIMIT) -> PotentialGrid:
    """Solve one excitation; all other conductors are grounded.

    The solution is computed for 1 V and scaled, so doubling ``volts``
    doubles every potential and field sample exactly.
    """
    assembly = _assemble(model)
    values, conductor = _dirichlet_values(model, excitation)
    b = _rhs(model, assembly, values)
    a_mat = assembly.matrix

    history: list[float] = []
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        raise ValueError("excitation produced an all-zero right-hand side")

    if assembly.solver is None:
        try:
            assembly.solver = spla.splu(a_mat.tocsc())
        except MemoryError:
            assembly.solver = "amg"
    if assembly.solver == "amg":
        # low-memory path: AMG-preconditioned CG on the graded grid
        ml = pyamg.ruge_stuben_solver(a_mat.tocsr())
        res: list[float] = []
        phi_u = ml.solve(b, tol=1e-11, accel="cg", maxiter=2000, residuals=res)
        history.extend(r / b_norm for r in res)
    else:
        phi_u = assembly.solver.solve(b)
    rel = float(np.linalg.norm(b - a_mat @ phi_u)) / b_norm
    history.append(rel)
    if rel > residual_limit:
        raise SolverError(
            f"relative residual {rel:.3e} exceeds {residual_limit:.1e} "
            f"for excitation {excitation!r}", history)

    phi = values.copy()
    phi[assembly.unknown_index >= 0] = phi_u
    return PotentialGrid(model.x_nm, model.y_nm, phi * volts, excitation,
                         volts, conductor * volts, rel)


def solve_all(model: CrossSectionModel, volts: float = 1.0,
              excitations: tuple[str, ...] = EXCITATIONS) -> dict:
    """Solve the requested excitations, sharing the assembled operator."""
    return {name: solve_laplace(model, name, volts) for name in excitations}
