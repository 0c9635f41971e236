"""Compiled numerical kernels: metric dispatch, the adaptive RK5(4) geodesic
plus Jacobi integrator with chart handoff, the phase-space scan loop, and the
Lyapunov segment loop.

Everything here mirrors the reference numpy implementations in ``charts``;
the test suite cross-checks the two.  The integrator state vector is

    y = (x1, x2, v1, v2, ja, ja', jb, jb')

where (ja, ja') and (jb, jb') are two independent solutions of the
perpendicular Jacobi equation transported along the geodesic.  The Jacobi
pairs are frame components along the orbit and pass through chart
transitions unchanged; the transported frame is defined up to an overall
sign (flips with orientation-reversing handoffs), which every consumer here
is invariant under.
"""

import numpy as np
from numba import njit, prange

from ._scene import (
    S_KIND, S_CI, S_CF, S_HX, S_HY, S_HR, S_HT, S_PI, S_PF,
    S_PG, S_PGP, S_PP, S_PPP, S_PW, S_PWP, S_MODE, S_MF,
    K_PLANE, K_TUBE, K_HALFPLANE, M_MODEL, M_PERTURBED, M_EMBEDDED,
)

STATUS_OK = 0
STATUS_DOMAIN_ESCAPE = 1
STATUS_STEP_FAILURE = 2
STATUS_NONFINITE = 3
STATUS_CAPACITY = 4

_TWO_PI = 2.0 * np.pi
_EV_IN = 1e-9          # bisection lands this far inside the new region
_FD_H = 1e-5


# ---------------------------------------------------------------------------
# profile evaluation


@njit(cache=True)
def _bump(x):
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return np.exp(-1.0 / (x * (1.0 - x)))


@njit(cache=True)
def _slope_raw(x, foot, midw):
    v = midw * _bump(x)
    v += _bump(x / foot)
    v += _bump((x - (1.0 - foot)) / foot)
    return v


@njit(cache=True)
def _hermite(tab, tabp, off, n, x):
    h = 1.0 / (n - 1)
    i = int(x / h)
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    s = (x - i * h) / h
    s2 = s * s
    h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s)
    h10 = s * (1.0 - s) * (1.0 - s)
    h01 = s2 * (3.0 - 2.0 * s)
    h11 = s2 * (s - 1.0)
    return (h00 * tab[off + i] + h10 * h * tabp[off + i]
            + h01 * tab[off + i + 1] + h11 * h * tabp[off + i + 1])


@njit(cache=True)
def _tube_rho(scene, c, t):
    """(rho, rho', rho'') for a tube chart at arclength t."""
    ci = scene[S_CI]
    ana = ci[c, 3]
    if ana == 1:                       # unit sphere
        return np.sin(t), np.cos(t), -np.sin(t)
    if ana == 2:                       # curvature -1
        return np.cosh(t), np.sinh(t), np.cosh(t)
    if ana == 3:                       # cylinder
        return scene[S_CF][c, 5], 0.0, 0.0
    cf = scene[S_CF]
    r_att = cf[c, 2]
    L = cf[c, 3]
    col = cf[c, 4]
    if t <= col:
        return r_att - t, -1.0, 0.0
    if t >= L - col:
        return r_att - (L - t), 1.0, 0.0
    p = ci[c, 0]
    off = scene[S_PI][p, 0]
    n = scene[S_PI][p, 1]
    foot = scene[S_PF][p, 0]
    midw = scene[S_PF][p, 1]
    norm = scene[S_PF][p, 2]
    ell = scene[S_PF][p, 3]
    x = (t - col) / ell
    G = _hermite(scene[S_PG], scene[S_PGP], off, n, x)
    P = _hermite(scene[S_PP], scene[S_PPP], off, n, x)
    rho = r_att - col + ell * P
    drho = -np.cos(np.pi * G)
    gp = _slope_raw(x, foot, midw) / norm
    d2rho = np.sin(np.pi * G) * np.pi * gp / ell
    return rho, drho, d2rho


@njit(cache=True)
def _tube_w(scene, c, t):
    """(w, w', w'') for a tube chart (slab height along the profile)."""
    ci = scene[S_CI]
    ana = ci[c, 3]
    if ana == 1:
        return 1.0 - np.cos(t), np.sin(t), np.cos(t)
    if ana == 2 or ana == 3:
        return t, 1.0, 0.0
    cf = scene[S_CF]
    L = cf[c, 3]
    col = cf[c, 4]
    if t <= col:
        return 0.0, 0.0, 0.0
    if t >= L - col:
        return 1.0, 0.0, 0.0
    p = ci[c, 0]
    off = scene[S_PI][p, 0]
    n = scene[S_PI][p, 1]
    foot = scene[S_PF][p, 0]
    midw = scene[S_PF][p, 1]
    norm = scene[S_PF][p, 2]
    ell = scene[S_PF][p, 3]
    x = (t - col) / ell
    G = _hermite(scene[S_PG], scene[S_PGP], off, n, x)
    W = _hermite(scene[S_PW], scene[S_PWP], off, n, x)
    wend = scene[S_PW][off + n - 1]
    gp = _slope_raw(x, foot, midw) / norm
    return W / wend, np.sin(np.pi * G), np.cos(np.pi * G) * np.pi * gp / ell


# ---------------------------------------------------------------------------
# pullback matrix and conformal factor


@njit(cache=True)
def _q11_derivs(v, w, R1, R2):
    c = np.cos(v / R2)
    s = np.sin(v / R2)
    a = 1.0 + (R2 + w) * c / R1
    a_v = -(R2 + w) * s / (R1 * R2)
    a_w = c / R1
    a_vv = -(R2 + w) * c / (R1 * R2 * R2)
    a_vw = -s / (R1 * R2)
    return (a * a, 2.0 * a * a_v, 2.0 * a * a_w,
            2.0 * (a_v * a_v + a * a_vv),
            2.0 * (a_w * a_v + a * a_vw),
            2.0 * a_w * a_w)


@njit(cache=True)
def _q22_derivs(w, R2):
    b = 1.0 + w / R2
    return b * b, 2.0 * b / R2, 2.0 / (R2 * R2)


@njit(cache=True)
def _conformal(u, v, eps):
    tp = _TWO_PI
    su = np.sin(tp * u)
    cu = np.cos(tp * u)
    sv = np.sin(tp * v)
    cv = np.cos(tp * v)
    lam = 1.0 + eps * su * sv
    return (lam, eps * tp * cu * sv, eps * tp * su * cv,
            -eps * tp * tp * su * sv, eps * tp * tp * cu * cv,
            -eps * tp * tp * su * sv)


# ---------------------------------------------------------------------------
# metric evaluation
#
# flat layouts: g[3] = (g11, g12, g22); dg[6]: dg[l*3+e]; d2g[9]: d2g[s*3+e]
# with slots s in (d11, d12, d22).


@njit(cache=True)
def _immersion_tube(scene, c, t, th, pos, J, H):
    rho, drho, d2rho = _tube_rho(scene, c, t)
    w, dw, d2w = _tube_w(scene, c, t)
    cf = scene[S_CF]
    ct = np.cos(th)
    st = np.sin(th)
    pos[0] = cf[c, 0] + rho * ct
    pos[1] = cf[c, 1] + rho * st
    pos[2] = w
    J[0, 0] = drho * ct
    J[0, 1] = -rho * st
    J[1, 0] = drho * st
    J[1, 1] = rho * ct
    J[2, 0] = dw
    J[2, 1] = 0.0
    H[0, 0] = d2rho * ct
    H[0, 1] = d2rho * st
    H[0, 2] = d2w
    H[1, 0] = -drho * st
    H[1, 1] = drho * ct
    H[1, 2] = 0.0
    H[2, 0] = -rho * ct
    H[2, 1] = -rho * st
    H[2, 2] = 0.0


@njit(cache=True)
def _metric_base(scene, c, x1, x2, g, dg, d2g):
    """Mode-independent base metric of the chart (model geometry)."""
    kind = scene[S_KIND][c]
    for i in range(3):
        g[i] = 0.0
    for i in range(6):
        dg[i] = 0.0
    for i in range(9):
        d2g[i] = 0.0
    if kind == K_PLANE:
        g[0] = 1.0
        g[2] = 1.0
    elif kind == K_TUBE:
        rho, drho, d2rho = _tube_rho(scene, c, x1)
        g[0] = 1.0
        g[2] = rho * rho
        dg[0 * 3 + 2] = 2.0 * rho * drho
        d2g[0 * 3 + 2] = 2.0 * (drho * drho + rho * d2rho)
    else:                               # half plane
        y = x2
        g[0] = 1.0 / (y * y)
        g[2] = g[0]
        dg[1 * 3 + 0] = -2.0 / (y * y * y)
        dg[1 * 3 + 2] = dg[1 * 3 + 0]
        d2g[2 * 3 + 0] = 6.0 / (y * y * y * y)
        d2g[2 * 3 + 2] = d2g[2 * 3 + 0]


@njit(cache=True)
def _metric_embedded_g_dg(scene, c, x1, x2, g, dg):
    """Analytic g and dg under the pullback matrix (plane and tube charts)."""
    kind = scene[S_KIND][c]
    R1 = scene[S_MF][1]
    R2 = scene[S_MF][2]
    cf = scene[S_CF]
    for i in range(6):
        dg[i] = 0.0
    if kind == K_PLANE:
        q1, q1v, q1w, q1vv, q1vw, q1ww = _q11_derivs(x2, cf[c, 2], R1, R2)
        q2, q2w, q2ww = _q22_derivs(cf[c, 2], R2)
        g[0] = q1
        g[1] = 0.0
        g[2] = q2
        dg[1 * 3 + 0] = q1v
        return
    pos = np.empty(3)
    J = np.empty((3, 2))
    H = np.empty((3, 3))
    _immersion_tube(scene, c, x1, x2, pos, J, H)
    q1, q1v, q1w, q1vv, q1vw, q1ww = _q11_derivs(pos[1], pos[2], R1, R2)
    q2, q2w, q2ww = _q22_derivs(pos[2], R2)
    Q0, Q1, Q2 = q1, q2, 1.0
    # chart derivatives of Q entries
    dQ = np.empty((2, 3))
    for l in range(2):
        dQ[l, 0] = q1v * J[1, l] + q1w * J[2, l]
        dQ[l, 1] = q2w * J[2, l]
        dQ[l, 2] = 0.0
    e = 0
    for a in range(2):
        for b in range(a, 2):
            s = 0.0
            for k in range(3):
                s += (Q0 if k == 0 else (Q1 if k == 1 else Q2)) * J[k, a] * J[k, b]
            g[e] = s
            for l in range(2):
                sa = l + a          # H slot of d_l J[:,a] (0:tt, 1:ttheta, 2:thth)
                sb = l + b
                acc = 0.0
                for k in range(3):
                    Qk = Q0 if k == 0 else (Q1 if k == 1 else Q2)
                    acc += dQ[l, k] * J[k, a] * J[k, b]
                    acc += Qk * (H[sa, k] * J[k, b] + J[k, a] * H[sb, k])
                dg[l * 3 + e] = acc
            e += 1


@njit(cache=True)
def _metric_full(scene, c, x1, x2, g, dg, d2g):
    mode = scene[S_MODE][0]
    kind = scene[S_KIND][c]
    if mode == M_EMBEDDED and kind != K_HALFPLANE:
        if kind == K_PLANE:
            R1 = scene[S_MF][1]
            R2 = scene[S_MF][2]
            w0 = scene[S_CF][c, 2]
            q1, q1v, q1w, q1vv, q1vw, q1ww = _q11_derivs(x2, w0, R1, R2)
            q2, q2w, q2ww = _q22_derivs(w0, R2)
            g[0] = q1
            g[1] = 0.0
            g[2] = q2
            for i in range(6):
                dg[i] = 0.0
            for i in range(9):
                d2g[i] = 0.0
            dg[1 * 3 + 0] = q1v
            d2g[2 * 3 + 0] = q1vv
            return
        # tube: analytic first derivatives, centered differences for second
        _metric_embedded_g_dg(scene, c, x1, x2, g, dg)
        dp = np.empty(6)
        dm = np.empty(6)
        gt = np.empty(3)
        _metric_embedded_g_dg(scene, c, x1 + _FD_H, x2, gt, dp)
        _metric_embedded_g_dg(scene, c, x1 - _FD_H, x2, gt, dm)
        for e in range(3):
            d2g[0 * 3 + e] = (dp[0 * 3 + e] - dm[0 * 3 + e]) / (2.0 * _FD_H)
            d2g[1 * 3 + e] = (dp[1 * 3 + e] - dm[1 * 3 + e]) / (2.0 * _FD_H)
        _metric_embedded_g_dg(scene, c, x1, x2 + _FD_H, gt, dp)
        _metric_embedded_g_dg(scene, c, x1, x2 - _FD_H, gt, dm)
        for e in range(3):
            d2g[2 * 3 + e] = (dp[1 * 3 + e] - dm[1 * 3 + e]) / (2.0 * _FD_H)
        return

    _metric_base(scene, c, x1, x2, g, dg, d2g)
    if mode != M_PERTURBED or kind == K_HALFPLANE:
        return

    # conformal factor through the slab immersion
    eps = scene[S_MF][0]
    if kind == K_PLANE:
        lam, lu, lv, luu, luv, lvv = _conformal(x1, x2, eps)
        d1, d2_, d11, d12, d22 = lu, lv, luu, luv, lvv
    else:
        pos = np.empty(3)
        J = np.empty((3, 2))
        H = np.empty((3, 3))
        _immersion_tube(scene, c, x1, x2, pos, J, H)
        lam, lu, lv, luu, luv, lvv = _conformal(pos[0], pos[1], eps)
        d1 = lu * J[0, 0] + lv * J[1, 0]
        d2_ = lu * J[0, 1] + lv * J[1, 1]
        d11 = (luu * J[0, 0] * J[0, 0] + 2.0 * luv * J[0, 0] * J[1, 0]
               + lvv * J[1, 0] * J[1, 0] + lu * H[0, 0] + lv * H[0, 1])
        d12 = (luu * J[0, 0] * J[0, 1] + luv * (J[0, 0] * J[1, 1] + J[0, 1] * J[1, 0])
               + lvv * J[1, 0] * J[1, 1] + lu * H[1, 0] + lv * H[1, 1])
        d22 = (luu * J[0, 1] * J[0, 1] + 2.0 * luv * J[0, 1] * J[1, 1]
               + lvv * J[1, 1] * J[1, 1] + lu * H[2, 0] + lv * H[2, 1])
    dl = (d1, d2_)
    d2l = (d11, d12, d22)
    pair_l = (0, 0, 1)
    pair_m = (0, 1, 1)
    for s in range(3):
        l = pair_l[s]
        m = pair_m[s]
        for e in range(3):
            d2g[s * 3 + e] = (d2l[s] * g[e] + dl[l] * dg[m * 3 + e]
                              + dl[m] * dg[l * 3 + e] + lam * d2g[s * 3 + e])
    for l in range(2):
        for e in range(3):
            dg[l * 3 + e] = dl[l] * g[e] + lam * dg[l * 3 + e]
    for e in range(3):
        g[e] = lam * g[e]


@njit(cache=True)
def _metric_g_only(scene, c, x1, x2):
    """(g11, g12, g22) fast path."""
    mode = scene[S_MODE][0]
    kind = scene[S_KIND][c]
    if mode == M_MODEL:
        if kind == K_PLANE:
            return 1.0, 0.0, 1.0
        if kind == K_TUBE:
            rho, _, _ = _tube_rho(scene, c, x1)
            return 1.0, 0.0, rho * rho
        y = x2
        return 1.0 / (y * y), 0.0, 1.0 / (y * y)
    g = np.empty(3)
    dg = np.empty(6)
    d2g = np.empty(9)
    _metric_full(scene, c, x1, x2, g, dg, d2g)
    return g[0], g[1], g[2]


@njit(cache=True)
def _chr_K_generic(g, dg, d2g):
    g11, g12, g22 = g[0], g[1], g[2]
    det = g11 * g22 - g12 * g12
    i11 = g22 / det
    i12 = -g12 / det
    i22 = g11 / det
    d1g11, d1g12, d1g22 = dg[0], dg[1], dg[2]
    d2g11, d2g12, d2g22 = dg[3], dg[4], dg[5]
    # Gamma^k_11
    t1 = d1g11
    t2 = 2.0 * d1g12 - d2g11
    G111 = 0.5 * (i11 * t1 + i12 * t2)
    G211 = 0.5 * (i12 * t1 + i22 * t2)
    # Gamma^k_12
    t1 = d2g11
    t2 = d1g22
    G112 = 0.5 * (i11 * t1 + i12 * t2)
    G212 = 0.5 * (i12 * t1 + i22 * t2)
    # Gamma^k_22
    t1 = 2.0 * d2g12 - d1g22
    t2 = d2g22
    G122 = 0.5 * (i11 * t1 + i12 * t2)
    G222 = 0.5 * (i12 * t1 + i22 * t2)
    # Brioschi
    E, F, G_ = g11, g12, g22
    E_u, F_u, G_u = dg[0], dg[1], dg[2]
    E_v, F_v, G_v = dg[3], dg[4], dg[5]
    E_vv = d2g[2 * 3 + 0]
    F_uv = d2g[1 * 3 + 1]
    G_uu = d2g[0 * 3 + 2]
    a11 = -0.5 * E_vv + F_uv - 0.5 * G_uu
    a12 = 0.5 * E_u
    a13 = F_u - 0.5 * E_v
    a21 = F_v - 0.5 * G_u
    a31 = 0.5 * G_v
    det1 = (a11 * (E * G_ - F * F) - a12 * (a21 * G_ - F * a31)
            + a13 * (a21 * F - E * a31))
    b12 = 0.5 * E_v
    b13 = 0.5 * G_u
    det2 = (0.0 * (E * G_ - F * F) - b12 * (b12 * G_ - F * b13)
            + b13 * (b12 * F - E * b13))
    K = (det1 - det2) / (det * det)
    return G111, G112, G122, G211, G212, G222, K


@njit(cache=True)
def _chr_K(scene, c, x1, x2):
    """Christoffel symbols and Gaussian curvature, fast paths first."""
    mode = scene[S_MODE][0]
    kind = scene[S_KIND][c]
    if mode == M_MODEL:
        if kind == K_PLANE:
            return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        if kind == K_TUBE:
            rho, drho, d2rho = _tube_rho(scene, c, x1)
            return (0.0, 0.0, -rho * drho,
                    0.0, drho / rho, 0.0,
                    -d2rho / rho)
        y = x2
        return (0.0, -1.0 / y, 0.0,
                1.0 / y, 0.0, -1.0 / y,
                -1.0)
    g = np.empty(3)
    dg = np.empty(6)
    d2g = np.empty(9)
    _metric_full(scene, c, x1, x2, g, dg, d2g)
    return _chr_K_generic(g, dg, d2g)


@njit(cache=True)
def _rhs(scene, c, y, out):
    v1 = y[2]
    v2 = y[3]
    G111, G112, G122, G211, G212, G222, K = _chr_K(scene, c, y[0], y[1])
    out[0] = v1
    out[1] = v2
    out[2] = -(G111 * v1 * v1 + 2.0 * G112 * v1 * v2 + G122 * v2 * v2)
    out[3] = -(G211 * v1 * v1 + 2.0 * G212 * v1 * v2 + G222 * v2 * v2)
    out[4] = y[5]
    out[5] = -K * y[4]
    out[6] = y[7]
    out[7] = -K * y[6]
    return K


# ---------------------------------------------------------------------------
# events and transitions


@njit(cache=True)
def _event_value(scene, c, ev, x1, x2):
    """Signed clearance of boundary ``ev``; negative means crossed."""
    kind = scene[S_KIND][c]
    cf = scene[S_CF]
    if kind == K_PLANE:
        a = cf[c, 0]
        b = cf[c, 1]
        dx = x1 - scene[S_HX][ev]
        dx -= a * np.round(dx / a)
        dy = x2 - scene[S_HY][ev]
        dy -= b * np.round(dy / b)
        r = scene[S_HR][ev]
        return dx * dx + dy * dy - r * r
    if ev == 0:
        return x1                     # bottom exit
    return cf[c, 3] - x1              # top exit


@njit(cache=True)
def _n_events(scene, c):
    kind = scene[S_KIND][c]
    if kind == K_PLANE:
        return scene[S_CI][c, 0]
    if kind == K_TUBE and scene[S_CI][c, 3] == 0 and scene[S_CI][c, 1] >= 0:
        return 2
    return 0


@njit(cache=True)
def _apply_transition(scene, c, y, ev):
    """Cross the boundary ``ev``; returns the new chart index."""
    cf = scene[S_CF]
    kind = scene[S_KIND][c]
    if kind == K_PLANE:
        a = cf[c, 0]
        b = cf[c, 1]
        tube = scene[S_HT][ev]
        dx = y[0] - scene[S_HX][ev]
        dx -= a * np.round(dx / a)
        dy = y[1] - scene[S_HY][ev]
        dy -= b * np.round(dy / b)
        r = np.sqrt(dx * dx + dy * dy)
        phi = np.arctan2(dy, dx)
        vr = (y[2] * dx + y[3] * dy) / r
        vphi = (dx * y[3] - dy * y[2]) / (r * r)
        r_att = cf[tube, 2]
        if cf[c, 2] == 0.0:           # bottom plane
            y[0] = r_att - r
            y[2] = -vr
        else:
            y[0] = cf[tube, 3] - (r_att - r)
            y[2] = vr
        y[1] = phi
        y[3] = vphi
        return tube
    # tube -> plane
    r_att = cf[c, 2]
    L = cf[c, 3]
    t = y[0]
    th = y[1]
    if ev == 0:
        plane = scene[S_CI][c, 1]
        r = r_att - t
        vr = -y[2]
    else:
        plane = scene[S_CI][c, 2]
        r = r_att - (L - t)
        vr = y[2]
    ct = np.cos(th)
    st = np.sin(th)
    a = cf[plane, 0]
    b = cf[plane, 1]
    y[0] = (cf[c, 0] + r * ct) % a
    y[1] = (cf[c, 1] + r * st) % b
    vth = y[3]
    y[2] = vr * ct - r * st * vth
    y[3] = vr * st + r * ct * vth
    return plane


@njit(cache=True)
def _in_inflated_domain(scene, c, x1, x2, collar):
    kind = scene[S_KIND][c]
    cf = scene[S_CF]
    if kind == K_PLANE:
        n = scene[S_CI][c, 0]
        a = cf[c, 0]
        b = cf[c, 1]
        for ev in range(n):
            dx = x1 - scene[S_HX][ev]
            dx -= a * np.round(dx / a)
            dy = x2 - scene[S_HY][ev]
            dy -= b * np.round(dy / b)
            r_in = scene[S_HR][ev] - collar
            if dx * dx + dy * dy < r_in * r_in:
                return False
        return True
    if kind == K_TUBE:
        ana = scene[S_CI][c, 3]
        if ana == 1:
            return 1e-9 < x1 < np.pi - 1e-9
        if ana != 0:
            return True
        return -collar <= x1 <= cf[c, 3] + collar
    return x2 > 0.0


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) with event-located chart handoff


@njit(cache=True)
def _advance(scene, c, y, T, rtol, atol, max_step, collar, events_on,
             rec_t, rec_c, rec_y, rec_K, record):
    """Integrate the coupled geodesic + Jacobi system for time T.

    Mutates ``y`` in place; returns (status, chart, t_reached, n_samples,
    max unit-speed drift).  With ``record`` nonzero, accepted steps land in
    the rec_* arrays (initial point included).
    """
    k = np.empty((7, 8))
    ytmp = np.empty(8)
    ynew = np.empty(8)

    t = 0.0
    h = min(1e-4, max_step, T) if T > 0.0 else 0.0
    drift = 0.0
    nrec = 0
    fsal = False
    pending_ev = -1
    event_target = -1.0
    h_free = h

    if record != 0:
        if nrec >= rec_t.shape[0]:
            return STATUS_CAPACITY, c, t, nrec, drift
        rec_t[nrec] = 0.0
        rec_c[nrec] = c
        for i in range(8):
            rec_y[nrec, i] = y[i]
        rec_K[nrec] = _chr_K(scene, c, y[0], y[1])[6]
        nrec += 1

    if T <= 0.0:
        return STATUS_OK, c, t, nrec, drift

    n_ev = _n_events(scene, c) if events_on != 0 else 0
    it_guard = 0
    while t < T - 1e-14:
        it_guard += 1
        if it_guard > 50_000_000:
            return STATUS_STEP_FAILURE, c, t, nrec, drift
        stop = T
        if pending_ev >= 0 and event_target < stop:
            stop = event_target
        if h > stop - t:
            h = stop - t
        if h > max_step:
            h = max_step

        if not fsal:
            _rhs(scene, c, y, k[0])
            fsal = True

        # stages (Dormand-Prince)
        for i in range(8):
            ytmp[i] = y[i] + h * 0.2 * k[0, i]
        _rhs(scene, c, ytmp, k[1])
        for i in range(8):
            ytmp[i] = y[i] + h * (3.0 / 40.0 * k[0, i] + 9.0 / 40.0 * k[1, i])
        _rhs(scene, c, ytmp, k[2])
        for i in range(8):
            ytmp[i] = y[i] + h * (44.0 / 45.0 * k[0, i] - 56.0 / 15.0 * k[1, i]
                                  + 32.0 / 9.0 * k[2, i])
        _rhs(scene, c, ytmp, k[3])
        for i in range(8):
            ytmp[i] = y[i] + h * (19372.0 / 6561.0 * k[0, i] - 25360.0 / 2187.0 * k[1, i]
                                  + 64448.0 / 6561.0 * k[2, i] - 212.0 / 729.0 * k[3, i])
        _rhs(scene, c, ytmp, k[4])
        for i in range(8):
            ytmp[i] = y[i] + h * (9017.0 / 3168.0 * k[0, i] - 355.0 / 33.0 * k[1, i]
                                  + 46732.0 / 5247.0 * k[2, i] + 49.0 / 176.0 * k[3, i]
                                  - 5103.0 / 18656.0 * k[4, i])
        _rhs(scene, c, ytmp, k[5])
        for i in range(8):
            ynew[i] = y[i] + h * (35.0 / 384.0 * k[0, i] + 500.0 / 1113.0 * k[2, i]
                                  + 125.0 / 192.0 * k[3, i] - 2187.0 / 6784.0 * k[4, i]
                                  + 11.0 / 84.0 * k[5, i])
        _rhs(scene, c, ynew, k[6])

        err = 0.0
        ok = True
        for i in range(8):
            e = h * (71.0 / 57600.0 * k[0, i] - 71.0 / 16695.0 * k[2, i]
                     + 71.0 / 1920.0 * k[3, i] - 17253.0 / 339200.0 * k[4, i]
                     + 22.0 / 525.0 * k[5, i] - 1.0 / 40.0 * k[6, i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
            if not np.isfinite(ynew[i]):
                ok = False
        err = np.sqrt(err / 8.0)

        if not ok:
            h *= 0.25
            fsal = True               # k[0] still valid at y
            if h < 1e-13:
                return STATUS_NONFINITE, c, t, nrec, drift
            continue
        if err > 1.0:
            fac = 0.9 * err ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            if h < 1e-13:
                return STATUS_STEP_FAILURE, c, t, nrec, drift
            continue

        # accepted candidate [t, t+h]
        if n_ev > 0 and pending_ev < 0:
            s_min = 2.0
            ev_min = -1
            for ev in range(n_ev):
                f0 = _event_value(scene, c, ev, y[0], y[1])
                f1 = _event_value(scene, c, ev, ynew[0], ynew[1])
                if f1 < -_EV_IN and f0 >= -1e-12:
                    # bisect hermite interpolant of (x1, x2) for f = -_EV_IN
                    lo = 0.0
                    hi = 1.0
                    for _ in range(60):
                        mid = 0.5 * (lo + hi)
                        s = mid
                        s2 = s * s
                        h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s)
                        h10 = s * (1.0 - s) * (1.0 - s)
                        h01 = s2 * (3.0 - 2.0 * s)
                        h11 = s2 * (s - 1.0)
                        xa = (h00 * y[0] + h10 * h * k[0, 0]
                              + h01 * ynew[0] + h11 * h * k[6, 0])
                        xb = (h00 * y[1] + h10 * h * k[0, 1]
                              + h01 * ynew[1] + h11 * h * k[6, 1])
                        fm = _event_value(scene, c, ev, xa, xb)
                        if fm > -_EV_IN:
                            lo = mid
                        else:
                            hi = mid
                    if hi < s_min:
                        s_min = hi
                        ev_min = ev
            if ev_min >= 0 and s_min > 1e-14:
                pending_ev = ev_min
                event_target = t + s_min * h
                h_free = h
                h = s_min * h
                fsal = True
                continue
            # s_min tiny: fall through and let the transition apply at once
            if ev_min >= 0:
                pending_ev = ev_min
                event_target = t

        # commit the step
        for i in range(8):
            y[i] = ynew[i]
        t += h
        fsal = True
        for i in range(8):
            k[0, i] = k[6, i]

        # wrap periodic coordinates
        kind = scene[S_KIND][c]
        if kind == K_PLANE:
            y[0] = y[0] % scene[S_CF][c, 0]
            y[1] = y[1] % scene[S_CF][c, 1]
        elif kind == K_TUBE:
            y[1] = y[1] % _TWO_PI

        # renormalize to unit speed
        g11, g12, g22 = _metric_g_only(scene, c, y[0], y[1])
        gvv = g11 * y[2] * y[2] + 2.0 * g12 * y[2] * y[3] + g22 * y[3] * y[3]
        dv = abs(gvv - 1.0)
        if dv > drift:
            drift = dv
        inv = 1.0 / np.sqrt(gvv)
        y[2] *= inv
        y[3] *= inv

        transitioned = False
        if pending_ev >= 0 and t >= event_target - 1e-14:
            c = _apply_transition(scene, c, y, pending_ev)
            pending_ev = -1
            event_target = -1.0
            h = h_free
            fsal = False
            n_ev = _n_events(scene, c) if events_on != 0 else 0
            transitioned = True

        if not _in_inflated_domain(scene, c, y[0], y[1], collar):
            return STATUS_DOMAIN_ESCAPE, c, t, nrec, drift

        if record != 0:
            if nrec >= rec_t.shape[0]:
                return STATUS_CAPACITY, c, t, nrec, drift
            rec_t[nrec] = t
            rec_c[nrec] = c
            for i in range(8):
                rec_y[nrec, i] = y[i]
            rec_K[nrec] = _chr_K(scene, c, y[0], y[1])[6]
            nrec += 1

        if not transitioned:
            fac = 0.9 * err ** -0.2 if err > 1e-30 else 5.0
            if fac > 5.0:
                fac = 5.0
            h *= fac

    return STATUS_OK, c, t, nrec, drift


@njit(cache=True)
def kern_segment(scene, c, y, T, rtol, atol, max_step, collar,
                 rec_t, rec_c, rec_y, rec_K, record):
    return _advance(scene, c, y, T, rtol, atol, max_step, collar, 1,
                    rec_t, rec_c, rec_y, rec_K, record)


# ---------------------------------------------------------------------------
# cone evaluation


@njit(cache=True)
def _cone_eval(a11, a12, a21, a22, Xx, Xy, Yx, Yy):
    """(delta_theta, margin) for the image of cone (X, Y) under A vs itself."""
    Ux = a11 * Xx + a12 * Xy
    Uy = a21 * Xx + a22 * Xy
    Vx = a11 * Yx + a12 * Yy
    Vy = a21 * Yx + a22 * Yy
    cross_uv = Ux * Vy - Uy * Vx
    dot_uv = Ux * Vx + Uy * Vy
    th_img = np.arctan2(abs(cross_uv), dot_uv)
    cross_xy = Xx * Yy - Xy * Yx
    dot_xy = Xx * Yx + Xy * Yy
    th_host = np.arctan2(abs(cross_xy), dot_xy)
    dth = th_img / th_host

    margin = 1e30
    for edge in range(2):
        Wx = Ux if edge == 0 else Vx
        Wy = Uy if edge == 0 else Vy
        alpha = (Wx * Yy - Wy * Yx) / cross_xy
        beta = (Xx * Wy - Xy * Wx) / cross_xy
        ax = np.arctan2(abs(Wx * Xy - Wy * Xx), abs(Wx * Xx + Wy * Xy))
        ay = np.arctan2(abs(Wx * Yy - Wy * Yx), abs(Wx * Yx + Wy * Yy))
        m = ax if ax < ay else ay
        if alpha * beta <= 0.0:
            m = -m
        if m < margin:
            margin = m
    return dth, margin


@njit(cache=True, parallel=True)
def kern_scan(scene, sc_c, sc_x1, sc_x2, sc_psi, tau, rtol, atol, max_step,
              collar, Xx, Xy, Yx, Yy, out_dth, out_margin, out_status):
    n = sc_c.shape[0]
    for i in prange(n):
        y = np.empty(8)
        y[0] = sc_x1[i]
        y[1] = sc_x2[i]
        c = sc_c[i]
        g11, g12, g22 = _metric_g_only(scene, c, y[0], y[1])
        s1 = 1.0 / np.sqrt(g11)
        det = g11 * g22 - g12 * g12
        s2 = 1.0 / np.sqrt(g11 * det)
        cp = np.cos(sc_psi[i])
        sp = np.sin(sc_psi[i])
        v1 = cp * s1 + sp * (-g12 * s2)
        v2 = sp * (g11 * s2)
        # backward orbit: integrate the flipped state forward
        y[2] = -v1
        y[3] = -v2
        y[4] = 1.0
        y[5] = 0.0
        y[6] = 0.0
        y[7] = 1.0
        rt = np.empty(1)
        rc = np.empty(1, dtype=np.int64)
        ry = np.empty((1, 8))
        rK = np.empty(1)
        status, cend, tend, nr, dr = _advance(
            scene, c, y, tau, rtol, atol, max_step, collar, 1,
            rt, rc, ry, rK, 0)
        out_status[i] = status
        if status != STATUS_OK:
            out_dth[i] = np.nan
            out_margin[i] = np.nan
            continue
        # M = dphi_perp(x, -tau) = S Mtilde S; A = dphi_perp(phi^-tau x, tau) = M^-1
        ja = y[4]
        jap = y[5]
        jb = y[6]
        jbp = y[7]
        a11 = jbp
        a12 = jb
        a21 = jap
        a22 = ja
        dth, margin = _cone_eval(a11, a12, a21, a22, Xx, Xy, Yx, Yy)
        out_dth[i] = dth
        out_margin[i] = margin


@njit(cache=True)
def kern_lyapunov(scene, c, y, tau, nseg, rtol, atol, max_step, collar, logs):
    dummy_t = np.empty(1)
    dummy_c = np.empty(1, dtype=np.int64)
    dummy_y = np.empty((1, 8))
    dummy_K = np.empty(1)
    for s in range(nseg):
        status, c, t, nr, dr = _advance(
            scene, c, y, tau, rtol, atol, max_step, collar, 1,
            dummy_t, dummy_c, dummy_y, dummy_K, 0)
        if status != STATUS_OK:
            return status, c
        growth = np.sqrt(y[4] * y[4] + y[5] * y[5])
        logs[s] = np.log(growth)
        y[4] /= growth
        y[5] /= growth
        y[6] = 0.0
        y[7] = 0.0
    return STATUS_OK, c
