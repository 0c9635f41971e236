"""Chart-atlas representation of surfaces.

A surface is covered by explicitly parametrized charts: two periodic plane
charts (the horizontal faces of the model slab, with disk interiors removed)
and one revolution chart per tube.  Chart domains are inflated by a fixed
overlap collar so that metric evaluation, event location, and chart handoff
never probe a domain edge.  Every chart metric here is analytic; derivatives
are closed-form with one exception (second derivatives of torus-induced tube
metrics, which fall back to central differences of the analytic first
derivatives).

Metric modes
------------
A single atlas carries one of three metric modes:

* ``model``      -- flat planes, revolution tubes (the reference geometry);
* ``perturbed``  -- the model metric multiplied by the conformal factor
                    1 + eps * sin(2 pi u) sin(2 pi v), evaluated through each
                    chart's slab immersion (a smooth, lattice-periodic bump);
* ``embedded``   -- the metric induced by the nested-torus pullback matrix,
                    i.e. the chart metric of the wrapped surface.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import atan2, cos, hypot, pi, sin
from typing import Callable, Optional, Union

import numpy as np

from . import _pullback
from .errors import NoOverlap, NotPositiveDefinite, OutOfDomain
from .profile import TubeProfile

#: width of the overlap collar every chart domain is inflated by
COLLAR_WIDTH = 0.05
#: relative tolerance for transition round trips and cross-chart agreement
TRANSITION_TOL = 1e-9
#: central finite-difference step used by derivative fallbacks
FD_STEP = 1e-5


class ChartKind(enum.Enum):
    PLANE_BOTTOM = "plane_bottom"
    PLANE_TOP = "plane_top"
    TUBE = "tube"
    HALF_PLANE = "half_plane"


@dataclass(frozen=True)
class ChartId:
    kind: ChartKind
    index: int = 0

    def __str__(self):
        return f"{self.kind.value}:{self.index}"


@dataclass(frozen=True)
class ChartPoint:
    chart: ChartId
    coords: tuple[float, float]


@dataclass(frozen=True)
class MetricMode:
    kind: str = "model"            # model | perturbed | embedded
    eps: float = 0.0
    R1: float = 0.0
    R2: float = 0.0


# ---------------------------------------------------------------------------
# chart geometries


@dataclass
class Hole:
    center: tuple[float, float]
    radius: float                  # attachment radius of the tube
    tube_index: int                # atlas chart index of the attached tube


@dataclass
class PlaneGeometry:
    cell: tuple[float, float]
    w0: float
    holes: list[Hole] = field(default_factory=list)


# analytic profile codes for tubes without a tabulated profile
PROFILE_TABULATED = 0
PROFILE_SIN = 1        # rho = sin t   (unit sphere, K = +1)
PROFILE_COSH = 2       # rho = cosh t  (abstract surface, K = -1)
PROFILE_CONST = 3      # rho = const   (cylinder, K = 0)


@dataclass
class TubeGeometry:
    center: tuple[float, float]
    profile: Optional[TubeProfile]
    analytic: int = PROFILE_TABULATED
    const_rho: float = 1.0
    bottom_plane: int = -1
    top_plane: int = -1
    disk_index: int = -1

    def rho_pack(self, t):
        """(rho, rho', rho'', w, w', w'') at arclength t."""
        if self.analytic == PROFILE_TABULATED:
            p = self.profile
            return (p.rho(t), p.drho(t), p.d2rho(t), p.w(t), p.dw(t), p.d2w(t))
        t = np.asarray(t, dtype=float)
        if self.analytic == PROFILE_SIN:
            return (np.sin(t), np.cos(t), -np.sin(t),
                    1.0 - np.cos(t), np.sin(t), np.cos(t))
        if self.analytic == PROFILE_COSH:
            z = np.zeros_like(t)
            return (np.cosh(t), np.sinh(t), np.cosh(t), z, z, z)
        z = np.zeros_like(t)
        return (np.full_like(t, self.const_rho), z, z, t, np.ones_like(t), z)


@dataclass
class HalfPlaneGeometry:
    pass


Geometry = Union[PlaneGeometry, TubeGeometry, HalfPlaneGeometry]


@dataclass
class MetricField:
    """Chart-local metric with first and second coordinate derivatives.

    ``g`` maps a ChartPoint to the symmetric 2x2 matrix; ``dg`` and ``d2g``
    return the stacked coordinate derivatives of the entries (g11, g12, g22)
    in the layouts documented at :func:`chart_metric`.
    """
    g: Callable
    dg: Callable
    d2g: Callable


def make_metric_field(atlas: "Atlas", chart_index: int) -> MetricField:
    def _eval(p: ChartPoint):
        _require_domain(atlas, p)
        return chart_metric(atlas, chart_index, *p.coords)

    def _g(p: ChartPoint):
        e = _eval(p)[0]
        return np.array([[e[0], e[1]], [e[1], e[2]]])

    return MetricField(g=_g, dg=lambda p: _eval(p)[1], d2g=lambda p: _eval(p)[2])


@dataclass
class Chart:
    id: ChartId
    domain: str
    geometry: Geometry
    metric: Optional[MetricField] = None


@dataclass
class Transition:
    source: ChartId
    target: ChartId
    overlap: str
    apply: Callable          # (coords, vec) -> (coords, vec)
    jacobian: Callable       # coords -> 2x2 ndarray


@dataclass
class Atlas:
    charts: list[Chart]
    transitions: list[Transition]
    mode: MetricMode = MetricMode()
    lattice: object = None
    quotient: tuple[int, int] = (1, 1)
    collar: float = COLLAR_WIDTH
    _scene: tuple = field(default=None, repr=False, compare=False)

    def index_of(self, cid: ChartId) -> int:
        for i, c in enumerate(self.charts):
            if c.id == cid:
                return i
        raise KeyError(f"no chart {cid} in atlas")

    def chart(self, cid: ChartId) -> Chart:
        return self.charts[self.index_of(cid)]

    def scene(self):
        if self._scene is None:
            from ._scene import build_scene
            self._scene = build_scene(self)
        return self._scene


# ---------------------------------------------------------------------------
# conformal perturbation factor


def conformal_factor(u, v, eps):
    """lambda = 1 + eps sin(2 pi u) sin(2 pi v) with (u, v)-derivatives.

    Returns (lam, l_u, l_v, l_uu, l_uv, l_vv).
    """
    tp = 2.0 * np.pi
    su, cu = np.sin(tp * u), np.cos(tp * u)
    sv, cv = np.sin(tp * v), np.cos(tp * v)
    lam = 1.0 + eps * su * sv
    return (lam,
            eps * tp * cu * sv,
            eps * tp * su * cv,
            -eps * tp * tp * su * sv,
            eps * tp * tp * cu * cv,
            -eps * tp * tp * su * sv)


# ---------------------------------------------------------------------------
# reference metric evaluation (single point, plain numpy)
#
# Entry order conventions used throughout:
#   g   -> (g11, g12, g22)
#   dg  -> (2, 3): dg[l, e] = d g_e / d x^(l+1)
#   d2g -> (3, 3): rows are (d11, d12, d22) second-derivative slots


def _tube_base_metric(geom: TubeGeometry, t):
    rho, drho, d2rho, *_ = geom.rho_pack(t)
    g = np.array([1.0, 0.0, rho * rho])
    dg = np.zeros((2, 3))
    dg[0, 2] = 2.0 * rho * drho
    d2g = np.zeros((3, 3))
    d2g[0, 2] = 2.0 * (drho * drho + rho * d2rho)
    return g, dg, d2g


def _immersion(geom: Geometry, x1, x2, w0=None):
    """Map chart coords to slab coords (u, v, w) with 1st/2nd derivatives.

    Returns (pos[3], J[3,2], H[3,3]) where H rows are the second derivative
    slots (d11, d12, d22) of each slab coordinate stacked as H[slot, coord].
    """
    if isinstance(geom, PlaneGeometry):
        pos = np.array([x1, x2, geom.w0])
        J = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        H = np.zeros((3, 3))
        return pos, J, H
    if isinstance(geom, TubeGeometry):
        rho, drho, d2rho, w, dw, d2w = geom.rho_pack(x1)
        ct, st = cos(x2), sin(x2)
        cx, cy = geom.center
        pos = np.array([cx + rho * ct, cy + rho * st, w])
        J = np.array([
            [drho * ct, -rho * st],
            [drho * st, rho * ct],
            [dw, 0.0],
        ])
        H = np.array([
            [d2rho * ct, d2rho * st, d2w],      # d/dt dt
            [-drho * st, drho * ct, 0.0],       # d/dt dtheta
            [-rho * ct, -rho * st, 0.0],        # d/dtheta dtheta
        ])
        return pos, J, H
    raise OutOfDomain("chart kind carries no slab immersion")


def _conformal_lift(geom, x1, x2, eps):
    """Conformal factor and chart-coordinate derivatives through the immersion."""
    pos, J, H = _immersion(geom, x1, x2)
    lam, l_u, l_v, l_uu, l_uv, l_vv = conformal_factor(pos[0], pos[1], eps)
    gu = np.array([l_u, l_v, 0.0])
    guu = np.array([[l_uu, l_uv, 0.0], [l_uv, l_vv, 0.0], [0.0, 0.0, 0.0]])
    d1 = gu @ J[:, 0]
    d2 = gu @ J[:, 1]
    d11 = J[:, 0] @ guu @ J[:, 0] + gu @ H[0]
    d12 = J[:, 0] @ guu @ J[:, 1] + gu @ H[1]
    d22 = J[:, 1] @ guu @ J[:, 1] + gu @ H[2]
    return lam, np.array([d1, d2]), np.array([d11, d12, d22])


def _embedded_plane_metric(geom: PlaneGeometry, x1, x2, R1, R2):
    q1, q1v, q1w, q1vv, q1vw, q1ww = _pullback.q11_derivs(x2, geom.w0, R1, R2)
    q2, _, _ = _pullback.q22_derivs(geom.w0, R2)
    g = np.array([q1, 0.0, q2])
    dg = np.zeros((2, 3))
    dg[1, 0] = q1v
    d2g = np.zeros((3, 3))
    d2g[2, 0] = q1vv
    return g, dg, d2g


def _embedded_tube_metric_first(geom: TubeGeometry, x1, x2, R1, R2):
    """Analytic g and dg for a tube chart under the pullback matrix."""
    pos, J, H = _immersion(geom, x1, x2)
    _, v, w = pos
    q1, q1v, q1w, *_ = _pullback.q11_derivs(v, w, R1, R2)
    q2, q2w, _ = _pullback.q22_derivs(w, R2)
    Q = np.array([q1, q2, 1.0])

    # chart-direction derivatives of the Q entries through the immersion
    dQ = np.zeros((2, 3))
    for l in range(2):
        dQ[l, 0] = q1v * J[1, l] + q1w * J[2, l]
        dQ[l, 1] = q2w * J[2, l]

    # H slot of d/dx^l applied to column J[:, a]
    slot = ((0, 1), (1, 2))
    g = np.empty(3)
    dg = np.zeros((2, 3))
    for e, (a, b) in enumerate(((0, 0), (0, 1), (1, 1))):
        g[e] = float((Q * J[:, a] * J[:, b]).sum())
        for l in range(2):
            dg[l, e] = float(
                (dQ[l] * J[:, a] * J[:, b]).sum()
                + (Q * H[slot[l][a]] * J[:, b]).sum()
                + (Q * J[:, a] * H[slot[l][b]]).sum())
    return g, dg


def chart_metric(atlas: Atlas, chart_index: int, x1: float, x2: float):
    """Reference metric evaluation: g, dg, d2g at a chart point.

    This is the authoritative (unoptimized) implementation; the compiled
    kernels mirror it and are cross-checked against it in the test suite.
    """
    chart = atlas.charts[chart_index]
    geom = chart.geometry
    mode = atlas.mode

    if isinstance(geom, HalfPlaneGeometry):
        y = x2
        g = np.array([1.0 / y ** 2, 0.0, 1.0 / y ** 2])
        dg = np.zeros((2, 3))
        dg[1, 0] = dg[1, 2] = -2.0 / y ** 3
        d2g = np.zeros((3, 3))
        d2g[2, 0] = d2g[2, 2] = 6.0 / y ** 4
        return g, dg, d2g

    if isinstance(geom, PlaneGeometry):
        if mode.kind == "embedded":
            return _embedded_plane_metric(geom, x1, x2, mode.R1, mode.R2)
        g = np.array([1.0, 0.0, 1.0])
        dg = np.zeros((2, 3))
        d2g = np.zeros((3, 3))
    else:
        if mode.kind == "embedded":
            g, dg = _embedded_tube_metric_first(geom, x1, x2, mode.R1, mode.R2)
            d2g = np.empty((3, 3))
            h = FD_STEP
            gp = _embedded_tube_metric_first(geom, x1 + h, x2, mode.R1, mode.R2)[1]
            gm = _embedded_tube_metric_first(geom, x1 - h, x2, mode.R1, mode.R2)[1]
            d2g[0] = (gp[0] - gm[0]) / (2.0 * h)
            d2g[1] = (gp[1] - gm[1]) / (2.0 * h)
            gp = _embedded_tube_metric_first(geom, x1, x2 + h, mode.R1, mode.R2)[1]
            gm = _embedded_tube_metric_first(geom, x1, x2 - h, mode.R1, mode.R2)[1]
            d2g[2] = (gp[1] - gm[1]) / (2.0 * h)
            return g, dg, d2g
        g, dg, d2g = _tube_base_metric(geom, x1)

    if mode.kind == "perturbed":
        lam, dlam, d2lam = _conformal_lift(geom, x1, x2, mode.eps)
        d2gl = np.empty((3, 3))
        pair = {0: (0, 0), 1: (0, 1), 2: (1, 1)}
        for s in range(3):
            l, m = pair[s]
            d2gl[s] = (d2lam[s] * g + dlam[l] * dg[m] + dlam[m] * dg[l]
                       + lam * d2g[s])
        dgl = np.stack([dlam[0] * g + lam * dg[0], dlam[1] * g + lam * dg[1]])
        return lam * g, dgl, d2gl
    return g, dg, d2g


# ---------------------------------------------------------------------------
# Levi-Civita symbols and Brioschi curvature from (g, dg, d2g)


def christoffel_from_metric(g, dg):
    """Gamma^k_ij from metric entries and first derivatives.

    Input layout matches :func:`chart_metric`; output is a (2, 2, 2) array
    indexed [k, i, j], symmetric in (i, j).
    """
    g11, g12, g22 = g
    det = g11 * g22 - g12 * g12
    ginv = np.array([[g22, -g12], [-g12, g11]]) / det
    gm = np.empty((2, 2, 2))     # dg[l][i][j]
    for l in range(2):
        gm[l] = np.array([[dg[l, 0], dg[l, 1]], [dg[l, 1], dg[l, 2]]])
    gamma = np.empty((2, 2, 2))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                s = 0.0
                for l in range(2):
                    s += ginv[k, l] * (gm[i][j, l] + gm[j][i, l] - gm[l][i, j])
                gamma[k, i, j] = 0.5 * s
    return gamma


def brioschi_curvature(g, dg, d2g):
    """Gaussian curvature of a 2-metric from entries and derivatives."""
    E, F, G = g
    E_u, F_u, G_u = dg[0]
    E_v, F_v, G_v = dg[1]
    E_vv = d2g[2, 0]
    F_uv = d2g[1, 1]
    G_uu = d2g[0, 2]
    m1 = np.array([
        [-0.5 * E_vv + F_uv - 0.5 * G_uu, 0.5 * E_u, F_u - 0.5 * E_v],
        [F_v - 0.5 * G_u, E, F],
        [0.5 * G_v, F, G],
    ])
    m2 = np.array([
        [0.0, 0.5 * E_v, 0.5 * G_u],
        [0.5 * E_v, E, F],
        [0.5 * G_u, F, G],
    ])
    den = (E * G - F * F) ** 2
    return float((np.linalg.det(m1) - np.linalg.det(m2)) / den)


# ---------------------------------------------------------------------------
# domain checks


def _min_image(dx, period):
    return dx - period * round(dx / period)


def in_domain(atlas: Atlas, p: ChartPoint, inflated: bool = True) -> bool:
    chart = atlas.chart(p.chart)
    geom = chart.geometry
    x1, x2 = p.coords
    pad = atlas.collar if inflated else 0.0
    if isinstance(geom, HalfPlaneGeometry):
        return x2 > 0.0
    if isinstance(geom, PlaneGeometry):
        for hole in geom.holes:
            dx = _min_image(x1 - hole.center[0], geom.cell[0])
            dy = _min_image(x2 - hole.center[1], geom.cell[1])
            if hypot(dx, dy) < hole.radius - pad:
                return False
        return True
    if geom.analytic == PROFILE_TABULATED:
        return -pad <= x1 <= geom.profile.L + pad
    if geom.analytic == PROFILE_SIN:
        return 0.0 < x1 < pi
    return True


def _require_domain(atlas, p):
    if not in_domain(atlas, p, inflated=True):
        raise OutOfDomain(f"{p.coords} outside inflated domain of {p.chart}")


# ---------------------------------------------------------------------------
# public chart-geometry operations


def metric_at(atlas: Atlas, p: ChartPoint) -> np.ndarray:
    """Metric tensor at a chart point as a symmetric 2x2 matrix."""
    _require_domain(atlas, p)
    g, _, _ = chart_metric(atlas, atlas.index_of(p.chart), *p.coords)
    m = np.array([[g[0], g[1]], [g[1], g[2]]])
    tr, det = m[0, 0] + m[1, 1], m[0, 0] * m[1, 1] - m[0, 1] ** 2
    if det <= 0.0 or tr <= 0.0:
        raise NotPositiveDefinite(f"metric at {p.coords} on {p.chart}: det={det}, tr={tr}")
    return m


def christoffel(atlas: Atlas, p: ChartPoint) -> np.ndarray:
    """Levi-Civita symbols Gamma^k_ij at a point, shape (2, 2, 2)."""
    _require_domain(atlas, p)
    g, dg, _ = chart_metric(atlas, atlas.index_of(p.chart), *p.coords)
    return christoffel_from_metric(g, dg)


def gaussian_curvature(atlas: Atlas, p: ChartPoint) -> float:
    """Gaussian curvature at a chart point (chart-independent on overlaps)."""
    _require_domain(atlas, p)
    g, dg, d2g = chart_metric(atlas, atlas.index_of(p.chart), *p.coords)
    return brioschi_curvature(g, dg, d2g)


def transition(atlas: Atlas, p: ChartPoint, vec) -> tuple[ChartPoint, np.ndarray]:
    """Express a point and tangent vector in the adjacent overlapping chart."""
    chart = atlas.chart(p.chart)
    geom = chart.geometry
    x1, x2 = p.coords
    vec = np.asarray(vec, dtype=float)
    col = atlas.collar

    if isinstance(geom, PlaneGeometry):
        for hole in geom.holes:
            dx = _min_image(x1 - hole.center[0], geom.cell[0])
            dy = _min_image(x2 - hole.center[1], geom.cell[1])
            r = hypot(dx, dy)
            if abs(r - hole.radius) <= col:
                tube = atlas.charts[hole.tube_index]
                phi = atan2(dy, dx)
                vr = (vec[0] * dx + vec[1] * dy) / r
                vphi = (dx * vec[1] - dy * vec[0]) / (r * r)
                if chart.id.kind is ChartKind.PLANE_BOTTOM:
                    t, vt = hole.radius - r, -vr
                else:
                    L = tube.geometry.profile.L
                    t, vt = L - (hole.radius - r), vr
                return (ChartPoint(tube.id, (t, phi)), np.array([vt, vphi]))
        raise NoOverlap(f"{p.coords} not in any collar of {p.chart}")

    if isinstance(geom, TubeGeometry) and geom.analytic == PROFILE_TABULATED:
        L = geom.profile.L
        r_att = geom.profile.attachment_radius
        if abs(x1) <= col or abs(x1 - L) <= col:
            bottom = abs(x1) <= col
            plane = atlas.charts[geom.bottom_plane if bottom else geom.top_plane]
            r = r_att - x1 if bottom else r_att - (L - x1)
            vr = -vec[0] if bottom else vec[0]
            cth, sth = cos(x2), sin(x2)
            x = (geom.center[0] + r * cth) % plane.geometry.cell[0]
            y = (geom.center[1] + r * sth) % plane.geometry.cell[1]
            vx = vr * cth - r * sth * vec[1]
            vy = vr * sth + r * cth * vec[1]
            return (ChartPoint(plane.id, (x, y)), np.array([vx, vy]))
        raise NoOverlap(f"t={x1} not within a collar of {p.chart}")

    raise NoOverlap(f"chart {p.chart} has no transitions")
