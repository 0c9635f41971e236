"""Assembly of the model surface and its compact quotients.

The model surface consists of two horizontal planes joined by one negatively
curved revolution tube per lattice disk.  Quotients by an integer sublattice
give compact surfaces; the (1,1) quotient (one fundamental cell) is the
default everywhere.  This module also provides the small stable of synthetic
single-chart surfaces used as analytic references in the tests: the flat
plane, the flat torus, constant-curvature revolution charts, the hyperbolic
half-plane, and the tube-free embedded torus.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import atan2, cos, hypot, pi, sin

import numpy as np

from .charts import (
    COLLAR_WIDTH, Atlas, Chart, ChartId, ChartKind, ChartPoint, HalfPlaneGeometry,
    Hole, MetricMode, PlaneGeometry, PROFILE_CONST, PROFILE_COSH, PROFILE_SIN,
    TubeGeometry, Transition, chart_metric, brioschi_curvature, conformal_factor,
    _min_image,
)
from .errors import ConstructionError
from .lattice import DiskLattice, default_lattice
from .profile import TubeProfile, build_tube_profile


@dataclass(frozen=True)
class QuotientSpec:
    a: int = 1
    b: int = 1

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ConstructionError("quotient factors must be >= 1")


def quotient_genus(spec: QuotientSpec, disks_per_cell: int) -> int:
    """Genus of the quotient surface: one handle per tube, plus one.

    Two parallel tori joined by n tubes form a closed surface of genus n+1;
    the quotient has ``disks_per_cell * a * b`` tubes.
    """
    if disks_per_cell < 0:
        raise ValueError("disks_per_cell must be non-negative")
    return disks_per_cell * spec.a * spec.b + 1


# ---------------------------------------------------------------------------
# transitions between a plane chart and one tube


def _plane_to_tube(hole, cell, L, bottom):
    cx, cy = hole.center
    r_att = hole.radius

    def apply(coords, vec):
        dx = _min_image(coords[0] - cx, cell[0])
        dy = _min_image(coords[1] - cy, cell[1])
        r = hypot(dx, dy)
        phi = atan2(dy, dx)
        vr = (vec[0] * dx + vec[1] * dy) / r
        vphi = (dx * vec[1] - dy * vec[0]) / (r * r)
        t = r_att - r if bottom else L - (r_att - r)
        vt = -vr if bottom else vr
        return (t, phi), np.array([vt, vphi])

    def jacobian(coords):
        dx = _min_image(coords[0] - cx, cell[0])
        dy = _min_image(coords[1] - cy, cell[1])
        r = hypot(dx, dy)
        s = -1.0 if bottom else 1.0
        return np.array([[s * dx / r, s * dy / r],
                         [-dy / (r * r), dx / (r * r)]])

    return apply, jacobian


def _tube_to_plane(hole, cell, L, bottom):
    cx, cy = hole.center
    r_att = hole.radius

    def apply(coords, vec):
        t, th = coords
        r = r_att - t if bottom else r_att - (L - t)
        vr = -vec[0] if bottom else vec[0]
        x = (cx + r * cos(th)) % cell[0]
        y = (cy + r * sin(th)) % cell[1]
        vx = vr * cos(th) - r * sin(th) * vec[1]
        vy = vr * sin(th) + r * cos(th) * vec[1]
        return (x, y), np.array([vx, vy])

    def jacobian(coords):
        t, th = coords
        r = r_att - t if bottom else r_att - (L - t)
        s = -1.0 if bottom else 1.0
        return np.array([[s * cos(th), -r * sin(th)],
                         [s * sin(th), r * cos(th)]])

    return apply, jacobian


# ---------------------------------------------------------------------------
# model atlas assembly


def assemble_model_atlas(lattice: DiskLattice | None = None,
                         quotient: QuotientSpec | None = None,
                         mode: MetricMode = MetricMode(),
                         collar: float = COLLAR_WIDTH,
                         depth: float = 0.55) -> Atlas:
    """Build the atlas of the model surface over one compact quotient.

    Parameters
    ----------
    lattice : DiskLattice or None
        Disks per unit cell; ``None`` uses the shipped default.  An empty
        lattice yields the tube-free flat slab (two disjoint flat tori).
    quotient : QuotientSpec or None
        Sublattice (a, b); ``None`` means the single fundamental cell (1, 1).
    mode : MetricMode
        Metric carried by every chart (model / perturbed / embedded).
    collar : float
        Overlap collar width; also the flat-collar length of each profile.
    depth : float
        Dip fraction forwarded to the profile builder.
    """
    if lattice is None:
        lattice = default_lattice()
    quotient = quotient or QuotientSpec(1, 1)
    a, b = quotient.a, quotient.b
    cell = (float(a), float(b))

    profiles: dict[float, TubeProfile] = {}
    for d in lattice.disks:
        if d.radius not in profiles:
            profiles[d.radius] = build_tube_profile(d.radius, depth, collar)

    bottom = Chart(ChartId(ChartKind.PLANE_BOTTOM, 0),
                   f"[0,{a})x[0,{b}) periodic, disk interiors removed",
                   PlaneGeometry(cell=cell, w0=0.0))
    top = Chart(ChartId(ChartKind.PLANE_TOP, 0),
                f"[0,{a})x[0,{b}) periodic, disk interiors removed",
                PlaneGeometry(cell=cell, w0=1.0))
    charts = [bottom, top]

    tube_index = 2
    for i in range(a):
        for j in range(b):
            for k, d in enumerate(lattice.disks):
                center = (d.center[0] + i, d.center[1] + j)
                prof = profiles[d.radius]
                geom = TubeGeometry(center=center, profile=prof,
                                    bottom_plane=0, top_plane=1,
                                    disk_index=len(bottom.geometry.holes))
                charts.append(Chart(
                    ChartId(ChartKind.TUBE, tube_index - 2),
                    f"t in [0,{prof.L:.4f}] x theta periodic at {center}",
                    geom))
                hole = Hole(center=center, radius=d.radius, tube_index=tube_index)
                bottom.geometry.holes.append(hole)
                top.geometry.holes.append(hole)
                tube_index += 1

    transitions = []
    for hole in bottom.geometry.holes:
        tube = charts[hole.tube_index]
        L = tube.geometry.profile.L
        for plane, is_bottom in ((bottom, True), (top, False)):
            fwd, fwd_jac = _plane_to_tube(hole, cell, L, is_bottom)
            rev, rev_jac = _tube_to_plane(hole, cell, L, is_bottom)
            side = "t=0" if is_bottom else f"t={L:.4f}"
            transitions.append(Transition(
                plane.id, tube.id,
                f"annulus |r - {hole.radius}| <= {collar} at {hole.center} ({side})",
                fwd, fwd_jac))
            transitions.append(Transition(
                tube.id, plane.id,
                f"collar {side} of tube at {hole.center}",
                rev, rev_jac))

    atlas = Atlas(charts=charts, transitions=transitions, mode=mode,
                  lattice=lattice, quotient=(a, b), collar=collar)
    _attach_metric_fields(atlas)
    return atlas


def _attach_metric_fields(atlas: Atlas):
    from .charts import make_metric_field
    for i, chart in enumerate(atlas.charts):
        chart.metric = make_metric_field(atlas, i)


# ---------------------------------------------------------------------------
# synthetic single-chart surfaces used as analytic references


def flat_torus_atlas(a: int = 1, b: int = 1, mode: MetricMode = MetricMode()) -> Atlas:
    """Tube-free flat slab: the empty-lattice model space."""
    return assemble_model_atlas(DiskLattice([]), QuotientSpec(a, b), mode=mode)


def plane_atlas(extent: float = 1e9) -> Atlas:
    """A single flat plane chart with an effectively infinite cell."""
    chart = Chart(ChartId(ChartKind.PLANE_BOTTOM, 0), "flat plane",
                  PlaneGeometry(cell=(extent, extent), w0=0.0))
    atlas = Atlas([chart], [], MetricMode(), lattice=None, quotient=(1, 1))
    _attach_metric_fields(atlas)
    return atlas


def constant_curvature_atlas(curvature: int) -> Atlas:
    """Single revolution chart of constant curvature -1, 0, or +1.

    +1 is the unit sphere (rho = sin t); -1 is the abstract metric
    dt^2 + cosh(t)^2 dtheta^2; 0 is a flat cylinder.
    """
    if curvature == 0:
        geom = TubeGeometry(center=(0.0, 0.0), profile=None,
                            analytic=PROFILE_CONST, const_rho=1.0)
        desc = "flat cylinder chart"
    elif curvature > 0:
        geom = TubeGeometry(center=(0.0, 0.0), profile=None, analytic=PROFILE_SIN)
        desc = "unit sphere revolution chart, t in (0, pi)"
    else:
        geom = TubeGeometry(center=(0.0, 0.0), profile=None, analytic=PROFILE_COSH)
        desc = "curvature -1 revolution chart"
    chart = Chart(ChartId(ChartKind.TUBE, 0), desc, geom)
    atlas = Atlas([chart], [], MetricMode(), lattice=None, quotient=(1, 1))
    _attach_metric_fields(atlas)
    return atlas


def half_plane_atlas() -> Atlas:
    chart = Chart(ChartId(ChartKind.HALF_PLANE, 0), "upper half plane y > 0",
                  HalfPlaneGeometry())
    atlas = Atlas([chart], [], MetricMode(), lattice=None, quotient=(1, 1))
    _attach_metric_fields(atlas)
    return atlas


def embedded_torus_atlas(R1: float, R2: float) -> Atlas:
    """Tube-free torus chart carrying the nested-torus induced metric."""
    cell = (2.0 * pi * R1, 2.0 * pi * R2)
    chart = Chart(ChartId(ChartKind.PLANE_BOTTOM, 0),
                  f"[0,{cell[0]:.4f})x[0,{cell[1]:.4f}) periodic",
                  PlaneGeometry(cell=cell, w0=0.0))
    atlas = Atlas([chart], [], MetricMode("embedded", R1=R1, R2=R2),
                  lattice=None, quotient=(1, 1))
    _attach_metric_fields(atlas)
    return atlas


# ---------------------------------------------------------------------------
# total-curvature diagnostic


def _gauss_legendre_panels(a, b, n_panels, order=12):
    xs, ws = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    h = edges[1] - edges[0]
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + xs[None, :] * h / 2.0).ravel()
    weights = np.broadcast_to(ws[None, :] * h / 2.0, (n_panels, order)).ravel()
    return nodes, weights


def _tube_curvature_integral_model(geom: TubeGeometry) -> float:
    prof = geom.profile
    t, wts = _gauss_legendre_panels(0.0, prof.L, 256)
    # K * sqrt(det g) = (-rho''/rho) * rho = -rho''
    return float(2.0 * pi * np.sum(-prof.d2rho(t) * wts))


def _tube_curvature_integral_generic(atlas, idx, n_t=96, n_th=48) -> float:
    geom = atlas.charts[idx].geometry
    t, wt = _gauss_legendre_panels(0.0, geom.profile.L, n_t, order=6)
    th, wth = _gauss_legendre_panels(0.0, 2.0 * pi, n_th, order=6)
    total = 0.0
    for ti, wi in zip(t, wt):
        for hj, wj in zip(th, wth):
            g, dg, d2g = chart_metric(atlas, idx, ti, hj)
            K = brioschi_curvature(g, dg, d2g)
            total += K * np.sqrt(g[0] * g[2] - g[1] ** 2) * wi * wj
    return float(total)


def _plane_curvature_integral_perturbed(atlas, idx, n_circle=4096) -> float:
    """Conformally flat plane with holes: reduce Int K dA to hole-boundary data.

    For the metric lambda * (dx^2 + dy^2), K dA = -(1/2) Lap(log lambda) dxdy;
    the cell boundary cancels by periodicity, leaving circle integrals of the
    radial derivative of log lambda around each hole.
    """
    geom = atlas.charts[idx].geometry
    eps = atlas.mode.eps
    total = 0.0
    for hole in geom.holes:
        th = np.arange(n_circle) * (2.0 * pi / n_circle)
        ds = hole.radius * (2.0 * pi / n_circle)
        x = hole.center[0] + hole.radius * np.cos(th)
        y = hole.center[1] + hole.radius * np.sin(th)
        lam, l_u, l_v, *_ = conformal_factor(x, y, eps)
        dlog_r = (l_u * np.cos(th) + l_v * np.sin(th)) / lam
        total += 0.5 * float(np.sum(dlog_r) * ds)
    return total


def _plane_curvature_integral_embedded(atlas, idx, n_grid=512) -> float:
    geom = atlas.charts[idx].geometry
    a, b = geom.cell
    from . import _pullback
    v, wv = _gauss_legendre_panels(0.0, b, 64, order=8)
    q1v = _pullback.q11_derivs(v, geom.w0, atlas.mode.R1, atlas.mode.R2)
    q2 = _pullback.q22_derivs(geom.w0, atlas.mode.R2)[0]
    # revolution form in v: K = -d2(sqrt(Q11))/dv2 / sqrt(Q11) per unit u-length
    rt = np.sqrt(q1v[0])
    if geom.holes:
        # no closed form with holes removed; midpoint grid with indicator
        xs = (np.arange(n_grid) + 0.5) * (a / n_grid)
        ys = (np.arange(n_grid) + 0.5) * (b / n_grid)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        mask = np.ones_like(X, dtype=bool)
        for hole in geom.holes:
            dx = X - hole.center[0] - np.round((X - hole.center[0]) / a) * a
            dy = Y - hole.center[1] - np.round((Y - hole.center[1]) / b) * b
            mask &= dx * dx + dy * dy >= hole.radius ** 2
        q, qv, qw, qvv, qvw, qww = _pullback.q11_derivs(Y, geom.w0, atlas.mode.R1, atlas.mode.R2)
        rtY = np.sqrt(q)
        d2rt = (qvv - qv * qv / (2.0 * q)) / (2.0 * rtY)
        K = -d2rt / (rtY * q2)
        dA = np.sqrt(q * q2) * (a / n_grid) * (b / n_grid)
        return float(np.sum(K * dA * mask))
    # d2/dv2 sqrt(q) = (q_vv - q_v^2/(2q)) / (2 sqrt(q));  K = -(sqrt q)''/(sqrt(q) Q22)
    q, qv, qw, qvv, qvw, qww = q1v
    d2rt = (qvv - qv * qv / (2.0 * q)) / (2.0 * rt)
    K = -d2rt / (rt * q2)
    dA = np.sqrt(q * q2)
    return float(a * np.sum(K * dA * wv))


def gauss_bonnet_integral(atlas: Atlas) -> float:
    """Numerical quadrature of K dA over all charts of a compact quotient.

    Under the standard normalization the result equals 2*pi*(2 - 2g) with
    g the genus, i.e. -4*pi per tube for the model metric.
    """
    total = 0.0
    for idx, chart in enumerate(atlas.charts):
        geom = chart.geometry
        if isinstance(geom, PlaneGeometry):
            if atlas.mode.kind == "model":
                continue                      # exactly flat
            if atlas.mode.kind == "perturbed":
                total += _plane_curvature_integral_perturbed(atlas, idx)
            else:
                total += _plane_curvature_integral_embedded(atlas, idx)
        elif isinstance(geom, TubeGeometry):
            if atlas.mode.kind == "model":
                total += _tube_curvature_integral_model(geom)
            else:
                total += _tube_curvature_integral_generic(atlas, idx)
        else:
            raise ConstructionError("gauss_bonnet_integral needs a compact quotient")
    return total
