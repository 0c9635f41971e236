"""Packing of an Atlas into the flat array bundle consumed by the kernels.

The compiled integrator cannot walk Python objects, so the atlas is lowered
once into a tuple of numpy arrays (the "scene").  Field meanings are fixed
by position; the index constants here are shared with ``_kernels``.
"""

from __future__ import annotations

import numpy as np

from .charts import (
    Atlas, HalfPlaneGeometry, PlaneGeometry, TubeGeometry, PROFILE_TABULATED,
)

# chart kinds in the scene
K_PLANE = 0
K_TUBE = 1
K_HALFPLANE = 2

# metric modes
M_MODEL = 0
M_PERTURBED = 1
M_EMBEDDED = 2

# scene tuple slots
S_KIND = 0      # int64[C]
S_CI = 1        # int64[C, 4]   plane: (n_holes, hole_off, 0, 0)
                #               tube: (profile_idx, bottom_plane, top_plane, analytic)
S_CF = 2        # float64[C, 8] plane: (cell_a, cell_b, w0, ...)
                #               tube: (cx, cy, r_att, L, collar, const_rho, ...)
S_HX = 3        # float64[H] hole centers x
S_HY = 4        # float64[H] hole centers y
S_HR = 5        # float64[H] hole attachment radii
S_HT = 6        # int64[H] tube chart index per hole
S_PI = 7        # int64[P, 2] (offset, n_nodes)
S_PF = 8        # float64[P, 4] (foot, middle_weight, slope_norm, ell)
S_PG = 9        # float64[sum n] G table
S_PGP = 10      # float64[sum n] exact G' at nodes
S_PP = 11       # float64[sum n] P table
S_PPP = 12      # float64[sum n] P' at nodes
S_PW = 13       # float64[sum n] W table
S_PWP = 14      # float64[sum n] W' at nodes
S_MODE = 15     # int64[1]
S_MF = 16       # float64[3] (eps, R1, R2)

_MODE_CODE = {"model": M_MODEL, "perturbed": M_PERTURBED, "embedded": M_EMBEDDED}


def build_scene(atlas: Atlas):
    charts = atlas.charts
    C = len(charts)
    kind = np.zeros(C, dtype=np.int64)
    ci = np.zeros((C, 4), dtype=np.int64)
    cf = np.zeros((C, 8), dtype=np.float64)

    profiles = []          # distinct TubeProfile objects in first-seen order
    prof_index = {}

    holes_src = None
    for c in charts:
        if isinstance(c.geometry, PlaneGeometry) and c.geometry.holes:
            holes_src = c.geometry.holes
            break
    holes_src = holes_src or []
    hx = np.array([h.center[0] for h in holes_src], dtype=np.float64)
    hy = np.array([h.center[1] for h in holes_src], dtype=np.float64)
    hr = np.array([h.radius for h in holes_src], dtype=np.float64)
    ht = np.array([h.tube_index for h in holes_src], dtype=np.int64)

    for i, c in enumerate(charts):
        g = c.geometry
        if isinstance(g, PlaneGeometry):
            kind[i] = K_PLANE
            ci[i] = (len(holes_src) if g.holes else 0, 0, 0, 0)
            cf[i, 0], cf[i, 1], cf[i, 2] = g.cell[0], g.cell[1], g.w0
        elif isinstance(g, TubeGeometry):
            kind[i] = K_TUBE
            pidx = -1
            if g.analytic == PROFILE_TABULATED:
                key = id(g.profile)
                if key not in prof_index:
                    prof_index[key] = len(profiles)
                    profiles.append(g.profile)
                pidx = prof_index[key]
                cf[i, 2] = g.profile.attachment_radius
                cf[i, 3] = g.profile.L
                cf[i, 4] = g.profile.collar
            ci[i] = (pidx, g.bottom_plane, g.top_plane, g.analytic)
            cf[i, 0], cf[i, 1] = g.center
            cf[i, 5] = g.const_rho
        elif isinstance(g, HalfPlaneGeometry):
            kind[i] = K_HALFPLANE
        else:
            raise TypeError(f"cannot lower chart geometry {type(g)}")

    P = len(profiles)
    pi = np.zeros((P, 2), dtype=np.int64)
    pf = np.zeros((P, 4), dtype=np.float64)
    pg, pgp, pp, ppp, pw, pwp = [], [], [], [], [], []
    off = 0
    for j, prof in enumerate(profiles):
        n = len(prof.x_grid)
        pi[j] = (off, n)
        pf[j] = (prof.foot_width, prof.middle_weight, prof.slope_norm, prof.ell)
        gp = prof.Gprime(prof.x_grid)
        pg.append(prof.G_table)
        pgp.append(gp)
        pp.append(prof.P_table)
        ppp.append(-np.cos(np.pi * prof.G_table))
        pw.append(prof.W_table)
        pwp.append(np.sin(np.pi * prof.G_table))
        off += n

    def cat(parts):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.float64)

    mode = np.array([_MODE_CODE[atlas.mode.kind]], dtype=np.int64)
    mf = np.array([atlas.mode.eps, atlas.mode.R1, atlas.mode.R2], dtype=np.float64)

    return (kind, ci, cf, hx, hy, hr, ht, pi, pf,
            cat(pg), cat(pgp), cat(pp), cat(ppp), cat(pw), cat(pwp),
            mode, mf)
