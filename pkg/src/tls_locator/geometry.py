"""Film-edge cross-section geometry: config, nonuniform mesh, material masks.

Coordinate system (nm): the substrate surface is y = 0 and the
substrate-metal-vacuum triple point is the origin.  The metal film occupies
y in [0, t] for x below the rounded edge profile and extends to the left
domain wall.  A quarter-round of radius ``edge_radius`` joins the film end
face to the top face; the native oxide is a conformal coating of thickness
``oxide_thickness`` on every metal surface exposed to vacuum.  Effective
bias plates close the domain at the top and bottom; the side walls are
symmetry (zero-flux) boundaries.

Interface coordinates (all measured from the edge origin, in nm):
``SM`` runs under the film along y = 0, ``SV`` along the bare substrate
surface, ``Ox``/``OxV`` follow the metal / outer oxide surface by arc
length (end face, then quarter-round, then top face).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

INTERFACES = ("SM", "Ox", "OxV", "SV")

#: minimum covered length along every interface, nm
MIN_COVERAGE_NM = 220.0


class ConfigError(ValueError):
    """Raised for invalid cross-section configuration values."""


@dataclass(frozen=True)
class CrossSectionConfig:
    substrate_permittivity: float = 10.0
    oxide_permittivity: float = 10.0
    oxide_thickness_nm: float = 4.0
    film_thickness_nm: float = 100.0
    edge_radius_nm: float | None = None  # None -> film_thickness_nm
    plate_below_offset_um: float = 50.0
    plate_above_offset_um: float = 100.0
    plate_voltage_scale_t: float = 1.0
    plate_voltage_scale_b: float = 1.0
    domain_half_width_um: float = 20.0
    fine_margin_nm: float = 240.0
    fine_spacing_nm: float = 0.5
    fine_grading: float = 0.03
    fine_max_spacing_nm: float = 4.0
    coarse_growth: float = 1.3
    coarse_max_spacing_nm: float = 2000.0
    include_film: bool = True
    include_oxide: bool = True

    @property
    def edge_radius(self) -> float:
        return self.film_thickness_nm if self.edge_radius_nm is None else self.edge_radius_nm

    def validate(self) -> None:
        positive = {
            "substrate_permittivity": self.substrate_permittivity,
            "oxide_permittivity": self.oxide_permittivity,
            "oxide_thickness_nm": self.oxide_thickness_nm,
            "film_thickness_nm": self.film_thickness_nm,
            "plate_below_offset_um": self.plate_below_offset_um,
            "plate_above_offset_um": self.plate_above_offset_um,
            "domain_half_width_um": self.domain_half_width_um,
            "fine_margin_nm": self.fine_margin_nm,
            "fine_spacing_nm": self.fine_spacing_nm,
            "fine_grading": self.fine_grading,
            "fine_max_spacing_nm": self.fine_max_spacing_nm,
            "coarse_max_spacing_nm": self.coarse_max_spacing_nm,
        }
        for name, value in positive.items():
            if not (value > 0.0) or not math.isfinite(value):
                raise ConfigError(f"{name} must be positive and finite, got {value!r}")
        if self.substrate_permittivity < 1.0 or self.oxide_permittivity < 1.0:
            raise ConfigError("permittivities must be >= 1")
        if self.oxide_thickness_nm >= self.film_thickness_nm:
            raise ConfigError(
                f"oxide_thickness_nm ({self.oxide_thickness_nm}) must be smaller than "
                f"film_thickness_nm ({self.film_thickness_nm})"
            )
        if self.edge_radius <= 0.0 or self.edge_radius > self.film_thickness_nm:
            raise ConfigError(
                f"edge_radius_nm ({self.edge_radius}) must be in (0, film_thickness_nm]"
            )
        if self.fine_margin_nm < MIN_COVERAGE_NM:
            raise ConfigError(
                f"fine_margin_nm ({self.fine_margin_nm}) must cover at least "
                f"{MIN_COVERAGE_NM} nm along every interface"
            )
        if self.fine_spacing_nm > 1.0:
            raise ConfigError("fine_spacing_nm must be <= 1 nm inside the fine margin")
        if self.coarse_growth <= 1.0:
            raise ConfigError("coarse_growth must exceed 1")
        if not (self.plate_voltage_scale_t > 0.0 and self.plate_voltage_scale_b > 0.0):
            raise ConfigError("plate voltage scales must be positive")

    def refined(self, factor: float = 2.0) -> "CrossSectionConfig":
        """Mesh-refined copy (near-edge spacings divided by ``factor``)."""
        return replace(
            self,
            fine_spacing_nm=self.fine_spacing_nm / factor,
            fine_grading=self.fine_grading / factor,
            fine_max_spacing_nm=self.fine_max_spacing_nm / factor,
        )

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, data: dict) -> "CrossSectionConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def digest(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


# ---------------------------------------------------------------------------
# metal boundary
# ---------------------------------------------------------------------------

def edge_profile_x(cfg: CrossSectionConfig, y: float) -> float:
    """Rightmost metal x at height ``y`` (valid for 0 <= y <= film thickness)."""
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    if y <= t - r:
        return 0.0
    dy = y - (t - r)
    return -r + math.sqrt(max(r * r - dy * dy, 0.0))


def edge_profile_y(cfg: CrossSectionConfig, x: float) -> float:
    """Top of the metal at abscissa ``x`` (valid for -edge_radius <= x <= 0)."""
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    dx = x + r
    return (t - r) + math.sqrt(max(r * r - dx * dx, 0.0))


def is_metal(cfg: CrossSectionConfig, x: float, y: float) -> bool:
    if not cfg.include_film:
        return False
    t = cfg.film_thickness_nm
    if y < 0.0 or y > t:
        return False
    return x <= edge_profile_x(cfg, y) + 1e-12


def metal_surface_distance(cfg: CrossSectionConfig, x: float, y: float) -> float:
    """Euclidean distance from an outside point to the metal surface."""
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    cx, cy = -r, t - r
    best = math.inf
    # top face {x <= -r, y = t}
    if x <= -r:
        best = abs(y - t)
    else:
        best = math.hypot(x + r, y - t)
    # quarter-round sector
    vx, vy = x - cx, y - cy
    if vx > 0.0 and vy > 0.0:
        best = min(best, abs(math.hypot(vx, vy) - r))
    # end face {x = 0, 0 <= y <= t - r}
    if r < t:
        if 0.0 <= y <= t - r:
            best = min(best, abs(x))
        else:
            best = min(best, math.hypot(x, y - (t - r)) if y > t - r else math.hypot(x, y))
    return best


def is_oxide(cfg: CrossSectionConfig, x: float, y: float) -> bool:
    if not (cfg.include_film and cfg.include_oxide):
        return False
    if y <= 0.0 or is_metal(cfg, x, y):
        return False
    return metal_surface_distance(cfg, x, y) <= cfg.oxide_thickness_nm


def permittivity_at(cfg: CrossSectionConfig, x: float, y: float) -> float:
    if y < 0.0:
        return cfg.substrate_permittivity
    if is_oxide(cfg, x, y):
        return cfg.oxide_permittivity
    return 1.0


def _cell_permittivity(cfg: CrossSectionConfig, x0: float, x1: float,
                       y0: float, y1: float, n_sub: int = 8) -> float:
    """Cell permittivity; boundary-crossing cells get a sub-sampled average.

    The curved oxide surface cannot be snapped to the tensor grid, so cells
    it crosses carry the area-averaged permittivity of their non-metal part;
    this keeps the extracted fields smooth under mesh refinement.
    """
    xc, yc = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    probes = [(x0, y0), (x1, y0), (x0, y1), (x1, y1), (xc, yc)]
    kinds = {(is_metal(cfg, px, py), is_oxide(cfg, px, py)) for px, py in probes}
    if len(kinds) == 1:
        return cfg.oxide_permittivity if is_oxide(cfg, xc, yc) else 1.0
    xs = x0 + (np.arange(n_sub) + 0.5) * (x1 - x0) / n_sub
    ys = y0 + (np.arange(n_sub) + 0.5) * (y1 - y0) / n_sub
    total = 0.0
    count = 0
    for py in ys:
        for px in xs:
            if is_metal(cfg, px, py):
                continue
            total += cfg.oxide_permittivity if is_oxide(cfg, px, py) else 1.0
            count += 1
    if count == 0:
        return 1.0
    return total / count


# ---------------------------------------------------------------------------
# mesh generation
# ---------------------------------------------------------------------------

def _march_fine(lo: float, hi: float, features: np.ndarray, h_min: float,
                grading: float, h_max: float) -> list[float]:
    """Grid lines in [lo, hi] graded by distance to the nearest feature."""
    pts = [lo]
    u = lo
    feats = np.sort(features)
    guard = int(4 * (hi - lo) / h_min) + 16
    for _ in range(guard):
        if u >= hi - 1e-9:
            break
        d = np.min(np.abs(feats - u)) if feats.size else math.inf
        h = min(max(grading * d, h_min), h_max)
        nxt = u + h
        ahead = feats[(feats > u + 1e-9) & (feats < nxt - 1e-9)]
        if ahead.size:
            nxt = float(ahead[0])
        if nxt > hi - 0.3 * h_min:
            nxt = hi
        pts.append(nxt)
        u = nxt
    else:  # pragma: no cover - guard against runaway marching
        raise RuntimeError("fine mesh marching did not terminate")
    return pts


def _march_coarse(start: float, end: float, h0: float, growth: float,
                  h_max: float) -> list[float]:
    """Geometric growth from ``start`` toward ``end`` (either direction)."""
    pts = []
    sign = 1.0 if end > start else -1.0
    u = start
    h = h0
    for _ in range(100000):
        h = min(h * growth, h_max)
        remaining = abs(end - u)
        if remaining <= 1.55 * h:
            pts.append(end)
            break
        u = u + sign * h
        pts.append(u)
    return pts


def _axis_lines(lo: float, hi: float, fine_lo: float, fine_hi: float,
                features: list[float], cfg: CrossSectionConfig) -> np.ndarray:
    fine_lo = max(fine_lo, lo)
    fine_hi = min(fine_hi, hi)
    feats = np.asarray([f for f in features if fine_lo <= f <= fine_hi], dtype=float)
    fine = _march_fine(fine_lo, fine_hi, feats, cfg.fine_spacing_nm,
                       cfg.fine_grading, cfg.fine_max_spacing_nm)
    left = _march_coarse(fine_lo, lo, cfg.fine_max_spacing_nm,
                         cfg.coarse_growth, cfg.coarse_max_spacing_nm) if fine_lo > lo else []
    right = _march_coarse(fine_hi, hi, cfg.fine_max_spacing_nm,
                          cfg.coarse_growth, cfg.coarse_max_spacing_nm) if fine_hi < hi else []
    lines = np.unique(np.concatenate([np.asarray(left), np.asarray(fine), np.asarray(right)]))
    # drop near-duplicates produced by forced landings, keeping the first
    keep = np.ones(lines.size, dtype=bool)
    keep[1:] = np.diff(lines) > 0.25 * cfg.fine_spacing_nm
    keep[0] = True
    keep[-1] = True
    return lines[keep]


@dataclass
class CutArm:
    """Shortened stencil arm where the grid crosses the rounded metal edge."""

    iy: int
    ix: int
    direction: int  # 0:+x 1:-x 2:+y 3:-y
    theta: float  # boundary distance as a fraction of the full arm
    eps: float  # permittivity along the cut portion


@dataclass
class CrossSectionModel:
    config: CrossSectionConfig
    x_nm: np.ndarray
    y_nm: np.ndarray
    metal_mask: np.ndarray  # (ny, nx) Dirichlet film nodes
    eps_cell: np.ndarray  # (ny-1, nx-1) cell permittivities
    cut_arms: list[CutArm] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.y_nm.size, self.x_nm.size

    @property
    def n_nodes(self) -> int:
        return self.y_nm.size * self.x_nm.size


def build_geometry(config: CrossSectionConfig) -> CrossSectionModel:
    """Build the deterministic mesh and material masks for a configuration."""
    config.validate()
    cfg = config
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    dox = cfg.oxide_thickness_nm
    half_w = cfg.domain_half_width_um * 1000.0
    y_bot = -cfg.plate_below_offset_um * 1000.0
    y_top = cfg.plate_above_offset_um * 1000.0
    m = cfg.fine_margin_nm

    x_feats = [0.0, -r]
    y_feats = [0.0, t]
    if cfg.include_oxide:
        y_feats.append(t + dox)
        if r < t:
            x_feats.append(dox)
        # oxide foot on the substrate surface
        dy = t - r
        if dy <= r + dox:
            x_feats.append(math.sqrt((r + dox) ** 2 - dy * dy) - r)
    if r < t:
        y_feats.append(t - r)

    x = _axis_lines(-half_w, half_w, -m, m, x_feats, cfg)
    y = _axis_lines(y_bot, y_top, -m / 3.0, t + dox + m / 3.0, y_feats, cfg)

    ny, nx = y.size, x.size
    metal = np.zeros((ny, nx), dtype=bool)
    if cfg.include_film:
        iy0 = np.searchsorted(y, -1e-9)
        iy1 = np.searchsorted(y, t + 1e-9)
        for iy in range(iy0, iy1):
            xe = edge_profile_x(cfg, float(y[iy]))
            metal[iy, : np.searchsorted(x, xe + 1e-9)] = True

    # cell permittivities (cell i,j spans x[j]..x[j+1], y[i]..y[i+1])
    xc = 0.5 * (x[:-1] + x[1:])
    yc = 0.5 * (y[:-1] + y[1:])
    eps = np.ones((ny - 1, nx - 1))
    eps[yc < 0.0, :] = cfg.substrate_permittivity
    if cfg.include_film and cfg.include_oxide:
        # oxide cells only occur near the film surface; restrict the scan
        jx0 = np.searchsorted(xc, -half_w if m > half_w else -(m + 1.0))
        jx1 = np.searchsorted(xc, m + 1.0)
        iy0 = np.searchsorted(yc, 0.0)
        iy1 = np.searchsorted(yc, t + dox + 1.0)
        for i in range(iy0, iy1):
            for j in range(jx0, jx1):
                eps[i, j] = _cell_permittivity(cfg, x[j], x[j + 1], y[i], y[i + 1])
        # conformal coating on the flat top face out to the domain wall
        row = (yc > t) & (yc < t + dox)
        col = xc < -r
        eps[np.ix_(row, col)] = cfg.oxide_permittivity

    cut_arms = _find_cut_arms(cfg, x, y, metal)
    model = CrossSectionModel(cfg, x, y, metal, eps, cut_arms)
    _check_coverage(model)
    return model


def _find_cut_arms(cfg: CrossSectionConfig, x: np.ndarray, y: np.ndarray,
                   metal: np.ndarray) -> list[CutArm]:
    """Shortley-Weller arm fractions for stencil arms crossing the round edge."""
    if not cfg.include_film:
        return []
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    pad = 4.0 * cfg.fine_max_spacing_nm
    ix_lo = np.searchsorted(x, -r - pad)
    ix_hi = np.searchsorted(x, pad)
    iy_lo = np.searchsorted(y, max(0.0, t - r) - pad)
    iy_hi = np.searchsorted(y, t + pad)
    arms: list[CutArm] = []
    theta_min = 0.05
    for iy in range(max(iy_lo, 1), min(iy_hi, y.size - 1)):
        for ix in range(max(ix_lo, 1), min(ix_hi, x.size - 1)):
            if metal[iy, ix]:
                continue
            px, py = float(x[ix]), float(y[iy])
            # -x arm into the metal through the arc
            if metal[iy, ix - 1] and 0.0 < py <= t:
                xe = edge_profile_x(cfg, py)
                full = px - float(x[ix - 1])
                theta = (px - xe) / full
                if theta < 1.0 - 1e-9:
                    theta = max(theta, theta_min)
                    mx, my = px - 0.5 * theta * full, py
                    arms.append(CutArm(iy, ix, 1, theta, permittivity_at(cfg, mx, my)))
            # -y arm into the metal through the arc
            if metal[iy - 1, ix] and -r < px <= 0.0:
                ye = edge_profile_y(cfg, px)
                full = py - float(y[iy - 1])
                theta = (py - ye) / full
                if theta < 1.0 - 1e-9:
                    theta = max(theta, theta_min)
                    mx, my = px, py - 0.5 * theta * full
                    arms.append(CutArm(iy, ix, 3, theta, permittivity_at(cfg, mx, my)))
    return arms


def _check_coverage(model: CrossSectionModel) -> None:
    cfg = model.config
    m = cfg.fine_margin_nm
    for name in INTERFACES:
        path = interface_path(cfg, name, s_max=MIN_COVERAGE_NM, n_samples=24)
        ok_x = np.all(np.abs(path.surface[:, 0]) <= m + 1e-6)
        ok_y = np.all((path.surface[:, 1] >= -m / 3.0 - 1e-6)
                      & (path.surface[:, 1] <= cfg.film_thickness_nm
                         + cfg.oxide_thickness_nm + m / 3.0 + 1e-6))
        if not (ok_x and ok_y):
            raise ConfigError(
                f"fine margin {m} nm does not cover {MIN_COVERAGE_NM} nm along {name}"
            )


# ---------------------------------------------------------------------------
# interface sample paths
# ---------------------------------------------------------------------------

@dataclass
class InterfacePath:
    """Sample locations along one interface.

    ``surface`` holds points on the interface itself, ``normal`` the unit
    normal pointing into the sampling medium, ``tangent`` the direction of
    increasing coordinate.  ``metal_backed`` marks interfaces whose surface
    potential is a known conductor value.
    """

    name: str
    s_nm: np.ndarray
    surface: np.ndarray  # (n, 2)
    normal: np.ndarray  # (n, 2)
    tangent: np.ndarray  # (n, 2)
    metal_backed: bool
    oxide_backed: bool = False  # evaluate via the oxide-side flux jump


def default_sample_grid(s_max: float = 225.0) -> np.ndarray:
    parts = [np.arange(0.0, 20.0, 0.5), np.arange(20.0, 60.0, 1.0),
             np.arange(60.0, s_max + 1e-9, 2.5)]
    return np.concatenate(parts)


def _metal_surface(cfg: CrossSectionConfig, s: np.ndarray):
    """Point/normal/tangent of the metal surface at arc length ``s`` from the edge."""
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    s_face = t - r
    s_arc = s_face + r * math.pi / 2.0
    pts = np.empty((s.size, 2))
    nrm = np.empty((s.size, 2))
    tan = np.empty((s.size, 2))
    for i, si in enumerate(s):
        if si <= s_face:
            pts[i] = (0.0, si)
            nrm[i] = (1.0, 0.0)
            tan[i] = (0.0, 1.0)
        elif si <= s_arc:
            phi = (si - s_face) / r
            pts[i] = (-r + r * math.cos(phi), s_face + r * math.sin(phi))
            nrm[i] = (math.cos(phi), math.sin(phi))
            tan[i] = (-math.sin(phi), math.cos(phi))
        else:
            u = si - s_arc
            pts[i] = (-r - u, t)
            nrm[i] = (0.0, 1.0)
            tan[i] = (-1.0, 0.0)
    return pts, nrm, tan


def _outer_surface(cfg: CrossSectionConfig, s_out: np.ndarray):
    """Oxide outer surface at arc length ``s_out`` from its substrate contact."""
    t = cfg.film_thickness_nm
    r = cfg.edge_radius
    d = cfg.oxide_thickness_nm
    s_face = t - r
    s_arc = s_face + (r + d) * math.pi / 2.0
    pts = np.empty((s_out.size, 2))
    nrm = np.empty((s_out.size, 2))
    tan = np.empty((s_out.size, 2))
    for i, si in enumerate(s_out):
        if si <= s_face:
            pts[i] = (d, si)
            nrm[i] = (1.0, 0.0)
            tan[i] = (0.0, 1.0)
        elif si <= s_arc:
            phi = (si - s_face) / (r + d)
            pts[i] = (-r + (r + d) * math.cos(phi), s_face + (r + d) * math.sin(phi))
            nrm[i] = (math.cos(phi), math.sin(phi))
            tan[i] = (-math.sin(phi), math.cos(phi))
        else:
            u = si - s_arc
            pts[i] = (-r - u, t + d)
            nrm[i] = (0.0, 1.0)
            tan[i] = (-1.0, 0.0)
    return pts, nrm, tan


def interface_path(cfg: CrossSectionConfig, name: str, s_max: float = 225.0,
                   n_samples: int | None = None) -> InterfacePath:
    if n_samples is None:
        s = default_sample_grid(s_max)
    else:
        s = np.linspace(0.0, s_max, n_samples)
    if name == "SM":
        pts = np.column_stack([-s, np.zeros_like(s)])
        nrm = np.tile((0.0, -1.0), (s.size, 1))
        tan = np.tile((-1.0, 0.0), (s.size, 1))
        return InterfacePath(name, s, pts, nrm, tan, metal_backed=cfg.include_film)
    if name == "SV":
        pts = np.column_stack([s, np.zeros_like(s)])
        nrm = np.tile((0.0, 1.0), (s.size, 1))
        tan = np.tile((1.0, 0.0), (s.size, 1))
        return InterfacePath(name, s, pts, nrm, tan, metal_backed=False)
    if name == "Ox":
        pts, nrm, tan = _metal_surface(cfg, s)
        return InterfacePath(name, s, pts, nrm, tan, metal_backed=cfg.include_film)
    if name == "OxV":
        pts, nrm, tan = _outer_surface(cfg, s)
        return InterfacePath(name, s, pts, nrm, tan,
                             metal_backed=False,
                             oxide_backed=cfg.include_film and cfg.include_oxide)
    raise ValueError(f"unknown interface {name!r}")
