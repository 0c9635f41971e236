"""Geodesic and Jacobi-field integration across charts.

The unit tangent bundle element x = (p, v) is advanced by an adaptive
embedded Runge-Kutta 5(4) scheme; the perpendicular Jacobi equation
j'' + K j = 0 is integrated as part of the same first-order system so the
curvature is sampled at exactly the geodesic's integration nodes.  Chart
handoff happens at collar midpoints, located by event bisection on the
integrator's dense interpolant.

A note on frames: the Jacobi pair (j, j') lives in the orthonormal frame
spanned by the horizontal and vertical lifts along the orbit.  That frame
is transported up to an overall sign (orientation-reversing chart handoffs
flip it), so matrices returned by :func:`dphi_perp` are canonical only up
to a global sign on multi-chart orbits.  Every quantity derived from them
here (determinants, cone images, norms, zeros of j) is sign-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import hypot
from typing import Optional

import numpy as np

from . import _kernels
from .charts import Atlas, ChartId, ChartPoint
from .errors import DomainEscape, NumericalFailure, StepFailure

#: integrator defaults (chart units / flow time)
RTOL = 1e-10
ATOL = 1e-12
MAX_STEP = 0.01
RENORM_TOL = 1e-8
DET_TOL = 1e-6
TIME_TOL = 1e-8


@dataclass(frozen=True)
class TangentState:
    """Point of the sphere bundle: a chart point plus unit chart velocity."""
    p: ChartPoint
    v: tuple[float, float]


@dataclass(frozen=True)
class JacobiState:
    j: float
    jp: float


@dataclass(frozen=True)
class PerpVector:
    """Components in the orthonormal (horizontal, vertical) frame."""
    c_h: float
    c_v: float


def sasaki_norm(omega) -> float:
    """Sasaki norm of a flow-perpendicular vector (Euclidean in the frame)."""
    if isinstance(omega, PerpVector):
        return hypot(omega.c_h, omega.c_v)
    if isinstance(omega, JacobiState):
        return hypot(omega.j, omega.jp)
    a = np.asarray(omega, dtype=float)
    return float(np.sqrt((a * a).sum()))


@dataclass
class FlowSegment:
    """Discretized orbit: accepted integrator steps with curvature samples."""
    atlas: Atlas
    times: np.ndarray
    chart_indices: np.ndarray
    states: np.ndarray          # (n, 8) rows (x1, x2, v1, v2, ja, ja', jb, jb')
    curvatures: np.ndarray
    total_time: float
    speed_drift: float

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> TangentState:
        cid = self.atlas.charts[int(self.chart_indices[i])].id
        row = self.states[i]
        return TangentState(ChartPoint(cid, (row[0], row[1])), (row[2], row[3]))

    @property
    def samples(self):
        return [(float(self.times[i]), self.state(i), float(self.curvatures[i]))
                for i in range(len(self.times))]

    def endpoint(self) -> TangentState:
        return self.state(len(self.times) - 1)


# ---------------------------------------------------------------------------
# state packing


def unit_tangent(atlas: Atlas, chart: ChartId, coords, direction) -> TangentState:
    """Normalize a chart direction to unit metric norm at the given point."""
    from .charts import chart_metric
    i = atlas.index_of(chart)
    g, _, _ = chart_metric(atlas, i, *coords)
    v = np.asarray(direction, dtype=float)
    n = np.sqrt(g[0] * v[0] ** 2 + 2.0 * g[1] * v[0] * v[1] + g[2] * v[1] ** 2)
    v = v / n
    return TangentState(ChartPoint(chart, (float(coords[0]), float(coords[1]))),
                        (float(v[0]), float(v[1])))


def _pack(atlas: Atlas, x: TangentState, col_a=(1.0, 0.0), col_b=(0.0, 1.0),
          flip=False):
    scene = atlas.scene()
    c = atlas.index_of(x.p.chart)
    y = np.empty(8)
    y[0], y[1] = x.p.coords
    s = -1.0 if flip else 1.0
    y[2], y[3] = s * x.v[0], s * x.v[1]
    y[4], y[5] = col_a
    y[6], y[7] = col_b
    return scene, c, y


def _raise_status(status, context):
    if status == _kernels.STATUS_DOMAIN_ESCAPE:
        raise DomainEscape(f"{context}: trajectory left the atlas (construction bug)")
    if status == _kernels.STATUS_STEP_FAILURE:
        raise StepFailure(f"{context}: adaptive step control failed")
    if status == _kernels.STATUS_NONFINITE:
        raise NumericalFailure(f"{context}: state became non-finite")
    if status == _kernels.STATUS_CAPACITY:
        raise NumericalFailure(f"{context}: sample buffer overflow")


def _run(atlas, c, y, T, record, rtol, atol, max_step):
    scene = atlas.scene()
    if record:
        n_max = int(T / 2.5e-4) + 64
        rec_t = np.empty(n_max)
        rec_c = np.empty(n_max, dtype=np.int64)
        rec_y = np.empty((n_max, 8))
        rec_K = np.empty(n_max)
    else:
        rec_t = np.empty(1)
        rec_c = np.empty(1, dtype=np.int64)
        rec_y = np.empty((1, 8))
        rec_K = np.empty(1)
    status, c_end, t_end, nrec, drift = _kernels.kern_segment(
        scene, c, y, T, rtol, atol, max_step, atlas.collar,
        rec_t, rec_c, rec_y, rec_K, 1 if record else 0)
    _raise_status(status, "integrate")
    if record:
        return c_end, t_end, drift, (rec_t[:nrec], rec_c[:nrec], rec_y[:nrec], rec_K[:nrec])
    return c_end, t_end, drift, None


# ---------------------------------------------------------------------------
# public operations


def integrate_geodesic(atlas: Atlas, x: TangentState, T: float,
                       rtol: float = RTOL, atol: float = ATOL,
                       max_step: float = MAX_STEP) -> FlowSegment:
    """Integrate the unit-speed geodesic through x for time T >= 0."""
    if T < 0.0:
        raise ValueError("T must be non-negative; flip the velocity instead")
    scene, c, y = _pack(atlas, x)
    c_end, t_end, drift, rec = _run(atlas, c, y, T, True, rtol, atol, max_step)
    rec_t, rec_c, rec_y, rec_K = rec
    return FlowSegment(atlas=atlas, times=rec_t, chart_indices=rec_c,
                       states=rec_y, curvatures=rec_K, total_time=t_end,
                       speed_drift=drift)


def jacobi_transport(atlas: Atlas, x: TangentState, T: float,
                     xi0: JacobiState, rtol: float = RTOL, atol: float = ATOL,
                     max_step: float = MAX_STEP) -> JacobiState:
    """Transport a perpendicular Jacobi initial condition along the orbit.

    Negative T is handled by the velocity-flip conjugation
    (j, j')(-T along x) = S . (j, j')(T along flipped x) with S = diag(1,-1).
    """
    flip = T < 0.0
    sgn = -1.0 if flip else 1.0
    scene, c, y = _pack(atlas, x, col_a=(xi0.j, sgn * xi0.jp), flip=flip)
    _run(atlas, c, y, abs(T), False, rtol, atol, max_step)
    return JacobiState(float(y[4]), float(sgn * y[5]))


def dphi_perp(atlas: Atlas, x: TangentState, T: float,
              rtol: float = RTOL, atol: float = ATOL,
              max_step: float = MAX_STEP) -> np.ndarray:
    """Derivative of the time-T flow on the perpendicular (j, j') plane.

    Columns are the transports of (1, 0) and (0, 1); det = 1 up to
    integration error.  Negative T is conjugated through a velocity flip.
    """
    flip = T < 0.0
    scene, c, y = _pack(atlas, x, flip=flip)
    _run(atlas, c, y, abs(T), False, rtol, atol, max_step)
    M = np.array([[y[4], y[6]], [y[5], y[7]]])
    if flip:
        M = np.array([[M[0, 0], -M[0, 1]], [-M[1, 0], M[1, 1]]])
    return M


def detect_conjugate_point(atlas: Atlas, x: TangentState, T: float,
                           rtol: float = RTOL, atol: float = ATOL,
                           max_step: float = MAX_STEP,
                           time_tol: float = TIME_TOL) -> Optional[float]:
    """First zero in (0, T] of the Jacobi field with (j, j')(0) = (0, 1).

    Located by sign-change bracketing over the accepted steps followed by
    bisection (re-integrating from the bracket's recorded state), to
    ``time_tol``.  Returns None when no conjugate point occurs.
    """
    if T <= 0.0:
        raise ValueError("T must be positive")
    scene, c, y = _pack(atlas, x)
    _, _, _, rec = _run(atlas, c, y, T, True, rtol, atol, max_step)
    rec_t, rec_c, rec_y, rec_K = rec
    jb = rec_y[:, 6]
    idx = None
    for i in range(1, len(rec_t) - 1):
        if jb[i] == 0.0 or jb[i] * jb[i + 1] < 0.0:
            idx = i
            break
    if idx is None:
        return None
    if jb[idx] == 0.0:
        return float(rec_t[idx])

    t_lo, t_hi = float(rec_t[idx]), float(rec_t[idx + 1])
    c0 = int(rec_c[idx])
    y0 = rec_y[idx].copy()
    sign_lo = np.sign(jb[idx])
    while t_hi - t_lo > time_tol:
        t_mid = 0.5 * (t_lo + t_hi)
        yy = y0.copy()
        status, *_ = _kernels.kern_segment(
            scene, c0, yy, t_mid - float(rec_t[idx]), rtol, atol, max_step,
            atlas.collar, np.empty(1), np.empty(1, dtype=np.int64),
            np.empty((1, 8)), np.empty(1), 0)
        _raise_status(status, "conjugate refinement")
        if np.sign(yy[6]) == sign_lo:
            t_lo = t_mid
        else:
            t_hi = t_mid
    return 0.5 * (t_lo + t_hi)
