"""Closed-form components of the nested-torus pullback matrix and derivatives.

The ambient map wraps (u, v, w) around a torus of ring radius R1 and tube
radius R2 + w; measuring Euclidean lengths of images gives a diagonal metric
on (u, v, w)-space:

    Q11 = (1 + (R2 + w) cos(v / R2) / R1)^2
    Q22 = (1 + w / R2)^2
    Q33 = 1

Everything here is elementary calculus on those three entries; the functions
return component values together with coordinate derivatives up to second
order so chart metrics induced by Q can expose analytic Christoffel symbols.
"""

from __future__ import annotations

import numpy as np


def q11(v, w, R1, R2):
    return (1.0 + (R2 + w) * np.cos(v / R2) / R1) ** 2


def q22(w, R2):
    return (1.0 + w / R2) ** 2


def q11_derivs(v, w, R1, R2):
    """Q11 with derivatives wrt (v, w) up to order 2.

    Returns (q, q_v, q_w, q_vv, q_vw, q_ww).
    """
    c = np.cos(v / R2)
    s = np.sin(v / R2)
    a = 1.0 + (R2 + w) * c / R1          # sqrt(Q11)
    a_v = -(R2 + w) * s / (R1 * R2)
    a_w = c / R1
    a_vv = -(R2 + w) * c / (R1 * R2 * R2)
    a_vw = -s / (R1 * R2)
    a_ww = 0.0 * a
    q = a * a
    q_v = 2.0 * a * a_v
    q_w = 2.0 * a * a_w
    q_vv = 2.0 * (a_v * a_v + a * a_vv)
    q_vw = 2.0 * (a_w * a_v + a * a_vw)
    q_ww = 2.0 * (a_w * a_w + a * a_ww)
    return q, q_v, q_w, q_vv, q_vw, q_ww


def q22_derivs(w, R2):
    """Q22 with derivatives wrt w up to order 2: (q, q_w, q_ww)."""
    b = 1.0 + w / R2
    return b * b, 2.0 * b / R2, 2.0 / (R2 * R2) + 0.0 * b
