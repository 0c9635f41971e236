"""Construction of the negatively curved tube profile.

A tube is a surface of revolution joining the two horizontal planes of the
model surface.  Its generating curve is parametrized by arclength t: at t=0
the profile leaves the lower plane tangentially at the attachment circle,
dips inward to a waist, and reattaches tangentially to the upper plane at
t=L, one unit higher.  Writing the tangent direction as
(rho', w') = (-cos(pi*G(x)), sin(pi*G(x))) with x = (t-collar)/ell the
rescaled interior coordinate, everything reduces to one C-infinity monotone
step G: [0,1] -> [0,1] that is flat (all derivatives zero) at both endpoints.
Flatness at the endpoints is what makes the junction with the planes smooth
to all orders; strict monotonicity of G in the interior is what makes the
convexity rho'' positive, i.e. the Gaussian curvature -rho''/rho strictly
negative on the interior band.

G' is assembled from three compactly supported bumps: one "foot" of width m
at each end (they do almost all the turning, keeping the horizontal dip
small) and a low-amplitude full-width bump that keeps G' > 0 across the
middle.  The foot width m is solved so the inward dip matches the requested
fraction of the attachment radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProfile

# Mass of the middle bump relative to the feet; small enough that the profile
# is nearly vertical through the middle, large enough that rho'' is safely
# positive at every interior quadrature node.
MIDDLE_MASS_RATIO = 0.05

# Table resolution for the cumulative quadratures (nodes = _N_TABLE + 1).
_N_TABLE = 8192
_GAUSS_ORDER = 8


def smooth_bump(x):
    """C-infinity bump exp(-1/(x(1-x))) on (0,1), zero (flatly) outside."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (xi * (1.0 - xi)))
    return out


def smooth_bump_prime(x):
    """Derivative of :func:`smooth_bump`."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (xi * (1.0 - xi))) * (2.0 * xi - 1.0) / (xi * xi * (1.0 - xi) ** 2)
    return out


def step_slope_raw(x, foot_width, middle_weight):
    """Unnormalized G'(x): two feet of width ``foot_width`` plus a middle bump."""
    x = np.asarray(x, dtype=float)
    v = middle_weight * smooth_bump(x)
    v = v + smooth_bump(x / foot_width)
    v = v + smooth_bump((x - (1.0 - foot_width)) / foot_width)
    return v


def step_slope_raw_prime(x, foot_width, middle_weight):
    x = np.asarray(x, dtype=float)
    v = middle_weight * smooth_bump_prime(x)
    v = v + smooth_bump_prime(x / foot_width) / foot_width
    v = v + smooth_bump_prime((x - (1.0 - foot_width)) / foot_width) / foot_width
    return v


def _gauss_panels(n_panels, a=0.0, b=1.0):
    xs, ws = np.polynomial.legendre.leggauss(_GAUSS_ORDER)
    edges = np.linspace(a, b, n_panels + 1)
    h = edges[1] - edges[0]
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = mid[:, None] + xs[None, :] * (h / 2.0)
    weights = np.broadcast_to(ws[None, :] * (h / 2.0), nodes.shape)
    return nodes, weights


def _hermite_eval(xg, yg, dy, x):
    """Cubic Hermite interpolation on the uniform grid xg (vectorized)."""
    x = np.asarray(x, dtype=float)
    h = xg[1] - xg[0]
    i = np.clip(((x - xg[0]) / h).astype(int), 0, len(xg) - 2)
    s = (x - xg[i]) / h
    h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
    h10 = s * (1.0 - s) ** 2
    h01 = s * s * (3.0 - 2.0 * s)
    h11 = s * s * (s - 1.0)
    return h00 * yg[i] + h10 * h * dy[i] + h01 * yg[i + 1] + h11 * h * dy[i + 1]


@dataclass
class TubeProfile:
    """Arclength profile of one tube.

    Parameters are all in chart-length units.  ``rho`` and ``w`` accept the
    arclength coordinate t on the inflated interval [-collar, L+collar]
    (the extension beyond [0, L] continues the flat annulus of the adjacent
    plane and exists for chart-overlap evaluation only).

    Attributes
    ----------
    attachment_radius : float
        Radius of the boundary circles where the tube meets the planes.
    L : float
        Total profile arclength from lower to upper attachment circle.
    collar : float
        Length of the exactly flat segment at each end of the profile.
    waist : float
        Minimum radius rho(L/2).
    """

    attachment_radius: float
    collar: float
    foot_width: float
    middle_weight: float
    ell: float                      # interior (curved) arclength L - 2*collar
    slope_norm: float               # integral of the raw slope, normalizes G'
    x_grid: np.ndarray = field(repr=False)
    G_table: np.ndarray = field(repr=False)
    P_table: np.ndarray = field(repr=False)   # int_0^x -cos(pi G)
    W_table: np.ndarray = field(repr=False)   # int_0^x  sin(pi G)

    @property
    def L(self) -> float:
        return self.ell + 2.0 * self.collar

    @property
    def waist(self) -> float:
        return float(self.rho(self.L / 2.0))

    # -- step function and its exact slope ---------------------------------

    def G(self, x):
        return _hermite_eval(self.x_grid, self.G_table, self._Gp_grid(), x)

    def Gprime(self, x):
        return step_slope_raw(x, self.foot_width, self.middle_weight) / self.slope_norm

    def _Gp_grid(self):
        if not hasattr(self, "_gp_cache"):
            self._gp_cache = self.Gprime(self.x_grid)
        return self._gp_cache

    def _P(self, x):
        return _hermite_eval(self.x_grid, self.P_table, -np.cos(np.pi * self.G_table), x)

    def _W(self, x):
        return _hermite_eval(self.x_grid, self.W_table, np.sin(np.pi * self.G_table), x)

    # -- profile quantities as functions of arclength t ---------------------

    def _split(self, t):
        """Clip t into (flat-extension, interior-x) pieces."""
        t = np.asarray(t, dtype=float)
        x = (t - self.collar) / self.ell
        return t, np.clip(x, 0.0, 1.0)

    def rho(self, t):
        t, x = self._split(t)
        r = np.where(
            t <= self.collar,
            self.attachment_radius - t,
            np.where(
                t >= self.L - self.collar,
                self.attachment_radius - (self.L - t),
                self.attachment_radius - self.collar + self.ell * self._P(x),
            ),
        )
        return r if r.ndim else float(r)

    def drho(self, t):
        t, x = self._split(t)
        d = np.where(
            t <= self.collar, -1.0,
            np.where(t >= self.L - self.collar, 1.0, -np.cos(np.pi * self.G(x))),
        )
        return d if d.ndim else float(d)

    def d2rho(self, t):
        t, x = self._split(t)
        interior = (t > self.collar) & (t < self.L - self.collar)
        out = np.zeros_like(t)
        xi = x[interior] if x.ndim else x
        val = np.sin(np.pi * self.G(xi)) * np.pi * self.Gprime(xi) / self.ell
        if out.ndim:
            out[interior] = val
        else:
            out = val if interior else 0.0
        return out if np.ndim(out) else float(out)

    def w(self, t):
        t, x = self._split(t)
        h = np.where(
            t <= self.collar, 0.0,
            np.where(t >= self.L - self.collar, 1.0, self.ell * self._W(x) / self._w_scale()),
        )
        return h if h.ndim else float(h)

    def dw(self, t):
        t, x = self._split(t)
        d = np.where(
            (t <= self.collar) | (t >= self.L - self.collar),
            0.0,
            np.sin(np.pi * self.G(x)),
        )
        return d if d.ndim else float(d)

    def d2w(self, t):
        t, x = self._split(t)
        interior = (t > self.collar) & (t < self.L - self.collar)
        out = np.zeros_like(t)
        xi = x[interior] if x.ndim else x
        val = np.cos(np.pi * self.G(xi)) * np.pi * self.Gprime(xi) / self.ell
        if out.ndim:
            out[interior] = val
        else:
            out = val if interior else 0.0
        return out if np.ndim(out) else float(out)

    def _w_scale(self):
        # W_table[-1] * ell == 1 by construction of ell; kept explicit so the
        # height is exactly 1 regardless of quadrature residue.
        return self.ell * self.W_table[-1]

    def curvature(self, t):
        """Gaussian curvature -rho''/rho of the revolution metric."""
        return -np.asarray(self.d2rho(t)) / np.asarray(self.rho(t))


def _build_tables(foot_width, middle_weight):
    """Cumulative quadrature tables for G, P, W on a uniform grid of [0,1].

    The grid has an even panel count so the midpoint is a node; the second
    half of every table is filled by the mirror identities G(1-x) = 1-G(x),
    P(1-x) = P(x), W(1-x) = W(1)-W(x), which makes the profile symmetric
    about t = L/2 to the last bit.
    """
    n = _N_TABLE
    half = n // 2
    xg = np.linspace(0.0, 1.0, n + 1)

    nodes, weights = _gauss_panels(half, 0.0, 0.5)
    raw = step_slope_raw(nodes, foot_width, middle_weight)
    per_panel = (raw * weights).sum(axis=1)
    half_mass = per_panel.sum()
    slope_norm = 2.0 * half_mass

    G = np.empty(n + 1)
    G[: half + 1] = np.concatenate([[0.0], np.cumsum(per_panel)]) / slope_norm
    G[half] = 0.5
    G[half + 1:] = 1.0 - G[half - 1::-1]

    # G at the quadrature nodes via Hermite on the half-table just built
    gp_grid = step_slope_raw(xg, foot_width, middle_weight) / slope_norm
    G_nodes = _hermite_eval(xg, G, gp_grid, nodes)

    P_per = (-np.cos(np.pi * G_nodes) * weights).sum(axis=1)
    W_per = (np.sin(np.pi * G_nodes) * weights).sum(axis=1)

    P = np.empty(n + 1)
    P[: half + 1] = np.concatenate([[0.0], np.cumsum(P_per)])
    P[half + 1:] = P[half - 1::-1]           # P even about 1/2, P(1) = 0

    W = np.empty(n + 1)
    W[: half + 1] = np.concatenate([[0.0], np.cumsum(W_per)])
    W[half + 1:] = 2.0 * W[half] - W[half - 1::-1]

    return xg, G, P, W, slope_norm


def _profile_for_foot(foot_width, collar):
    middle_weight = MIDDLE_MASS_RATIO * 2.0 * foot_width
    xg, G, P, W, slope_norm = _build_tables(foot_width, middle_weight)
    ell = 1.0 / W[-1]          # interior length giving total height exactly 1
    dip = -ell * P[len(P) // 2]
    return middle_weight, xg, G, P, W, slope_norm, ell, dip


def build_tube_profile(attachment_radius: float,
                       neg_curvature_depth: float = 0.55,
                       collar: float = 0.05) -> TubeProfile:
    """Construct the tube profile for one attachment radius.

    Parameters
    ----------
    attachment_radius : float
        Radius of the disk the tube is attached along.
    neg_curvature_depth : float
        Fraction of the radius budget (attachment_radius - collar) consumed
        by the inward dip of the curved part; the waist radius is the
        remaining fraction.  Must lie strictly in (0, 1).
    collar : float
        Arclength of the exactly flat segment at each profile end.

    Returns
    -------
    TubeProfile

    Raises
    ------
    InfeasibleProfile
        If no foot width in the searchable range produces the requested dip,
        or the constraints leave no room for a positive waist.
    """
    if attachment_radius <= 0.0:
        raise InfeasibleProfile("attachment radius must be positive")
    if not 0.0 < neg_curvature_depth < 1.0:
        raise InfeasibleProfile("neg_curvature_depth must lie in (0, 1)")
    budget = attachment_radius - collar
    if budget <= 0.0:
        raise InfeasibleProfile(
            f"attachment radius {attachment_radius} does not exceed collar {collar}")

    target_dip = neg_curvature_depth * budget
    lo, hi = 0.005, 0.49
    dip_lo = _profile_for_foot(lo, collar)[-1]
    dip_hi = _profile_for_foot(hi, collar)[-1]
    if not dip_lo <= target_dip <= dip_hi:
        raise InfeasibleProfile(
            f"requested dip {target_dip:.4f} outside achievable range "
            f"[{dip_lo:.4f}, {dip_hi:.4f}] for radius {attachment_radius}")

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _profile_for_foot(mid, collar)[-1] < target_dip:
            lo = mid
        else:
            hi = mid
    foot = 0.5 * (lo + hi)
    middle_weight, xg, G, P, W, slope_norm, ell, dip = _profile_for_foot(foot, collar)

    profile = TubeProfile(
        attachment_radius=attachment_radius,
        collar=collar,
        foot_width=foot,
        middle_weight=middle_weight,
        ell=ell,
        slope_norm=slope_norm,
        x_grid=xg,
        G_table=G,
        P_table=P,
        W_table=W,
    )
    if profile.waist <= 1e-6:
        raise InfeasibleProfile(
            f"profile waist {profile.waist:.2e} not positive for radius {attachment_radius}")
    return profile
