"""Periodic disk lattices and the finite-horizon checker.

The lattice is a finite set of disks in the unit cell, repeated with full
integer translational symmetry.  The finite-horizon property asks that every
straight ray in the plane enters the interior of some disk within a uniform
time.  It is probed two ways: an exact covering test over rational
directions (corridors in a periodic array are always parallel to a rational
direction), and a numerical ray trace that measures the empirical entry-time
bound over a dense grid of rays plus a random batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import atan2, gcd, sqrt
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConstructionError

#: rays closer to a disk rim than this are counted as grazes, not entries
_RIM_EPS = 1e-12


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class DiskLattice:
    """Disks in the unit cell, interpreted with integer translational symmetry."""

    disks: tuple[Disk, ...]

    def __init__(self, disks):
        object.__setattr__(self, "disks", tuple(
            Disk(tuple(map(float, d.center)), float(d.radius)) if isinstance(d, Disk)
            else Disk((float(d[0][0]), float(d[0][1])), float(d[1]))
            for d in disks))
        self._validate()

    def _validate(self):
        for d in self.disks:
            if not (0.0 < d.radius < 0.5):
                raise ConstructionError(f"disk radius {d.radius} outside (0, 0.5)")
            if not (0.0 <= d.center[0] < 1.0 and 0.0 <= d.center[1] < 1.0):
                raise ConstructionError(f"disk center {d.center} outside [0,1)^2")
        # pairwise disjointness over all translates within reach
        for i, a in enumerate(self.disks):
            for j, b in enumerate(self.disks):
                for m in (-1, 0, 1):
                    for n in (-1, 0, 1):
                        if i == j and m == 0 and n == 0:
                            continue
                        dx = a.center[0] - b.center[0] - m
                        dy = a.center[1] - b.center[1] - n
                        if sqrt(dx * dx + dy * dy) <= a.radius + b.radius:
                            raise ConstructionError(
                                f"disks {i} and {j} (translate {m},{n}) are not disjoint")

    def shrunk(self, delta: float) -> "DiskLattice":
        """Lattice with every radius reduced by ``delta`` (must stay positive)."""
        return DiskLattice([Disk(d.center, d.radius - delta) for d in self.disks])

    def arrays(self):
        cx = np.array([d.center[0] for d in self.disks])
        cy = np.array([d.center[1] for d in self.disks])
        r = np.array([d.radius for d in self.disks])
        return cx, cy, r


def default_lattice() -> DiskLattice:
    """The two-disk lattice shipped as the model-space default.

    One large disk blocks every direction with spacing below its diameter on
    its own; the small disk at the cell corner closes the two axis-parallel
    corridors.  The configuration stays corridor-free even after shrinking
    every radius by the flat-collar width, which is what the cone-scan time
    horizon actually requires.
    """
    return DiskLattice([Disk((0.5, 0.5), 0.43), Disk((0.0, 0.0), 0.22)])


@dataclass
class HorizonReport:
    bound_T: float
    worst_ray: tuple[tuple[float, float], float]
    violated: bool
    corridor_witness: Optional[tuple[float, float]]   # (angle, signed line offset)
    n_rays: int = 0
    n_escaped: int = 0

    @property
    def finite(self) -> bool:
        return not self.violated


def rational_corridors(lattice: DiskLattice, q_max: int = 20):
    """Exact covering test over rational directions (p, q), |p|, |q| <= q_max.

    For direction (p, q) the lines x*(-q) + y*p = c have their disk-blocked
    c-intervals computed exactly; an uncovered gap is an infinite corridor.
    Returns a list of (angle, offset, gap_width) for every gap found, where
    ``offset`` is the distance of the gap's central line from the origin.
    """
    dirs = []
    for p in range(0, q_max + 1):
        for q in range(-q_max, q_max + 1):
            if p == 0 and q != 1:
                continue
            if q == 0 and p != 1:
                continue
            if p > 0 and q != 0 and gcd(p, abs(q)) != 1:
                continue
            dirs.append((p, q))

    out = []
    for p, q in dirs:
        scale = sqrt(p * p + q * q)
        arcs = []
        covered = False
        for d in lattice.disks:
            c0 = (-q * d.center[0] + p * d.center[1]) % 1.0
            half = d.radius * scale
            if 2.0 * half >= 1.0:
                covered = True
                break
            a, b = (c0 - half) % 1.0, (c0 + half) % 1.0
            if a <= b:
                arcs.append((a, b))
            else:
                arcs.extend([(a, 1.0), (0.0, b)])
        if covered:
            continue
        if not arcs:
            out.append((atan2(q, p), 0.0, 1.0 / scale))
            continue
        arcs.sort()
        merged = [list(arcs[0])]
        for a, b in arcs[1:]:
            if a <= merged[-1][1] + 1e-15:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        for i, (a, b) in enumerate(merged):
            nxt = merged[(i + 1) % len(merged)][0] + (1.0 if i == len(merged) - 1 else 0.0)
            gap = nxt - b
            if gap > 1e-12:
                mid = ((b + nxt) / 2.0) % 1.0
                out.append((atan2(q, p), mid / scale, gap / scale))
    return out


@njit(cache=True)
def _first_entry_time(px, py, dx, dy, cx, cy, cr, t_max):
    """First time the ray (px,py) + t(dx,dy) enters an open lattice disk."""
    ci0 = np.floor(px)
    cj0 = np.floor(py)
    for k in range(cx.shape[0]):
        for mi in range(-1, 2):
            for mj in range(-1, 2):
                rx = px - (cx[k] + ci0 + mi)
                ry = py - (cy[k] + cj0 + mj)
                if rx * rx + ry * ry < cr[k] * cr[k] - _RIM_EPS:
                    return 0.0
    t_cur = 0.0
    x, y = px, py
    for _ in range(100000):
        if t_cur >= t_max:
            return -1.0
        ci = np.floor(x)
        cj = np.floor(y)
        # exit time of the current unit cell
        if dx > 0.0:
            tx = (ci + 1.0 - x) / dx
        elif dx < 0.0:
            tx = (ci - x) / dx
        else:
            tx = 1e30
        if dy > 0.0:
            ty = (cj + 1.0 - y) / dy
        elif dy < 0.0:
            ty = (cj - y) / dy
        else:
            ty = 1e30
        t_exit = min(tx, ty) + 1e-12

        best = 1e30
        for k in range(cx.shape[0]):
            for mi in range(-1, 2):
                for mj in range(-1, 2):
                    ox = cx[k] + ci + mi
                    oy = cy[k] + cj + mj
                    rx = x - ox
                    ry = y - oy
                    b = rx * dx + ry * dy
                    c = rx * rx + ry * ry - cr[k] * cr[k]
                    disc = b * b - c
                    if disc <= _RIM_EPS:
                        continue
                    root = -b - np.sqrt(disc)
                    if -1e-12 < root < t_exit and root < best:
                        best = root
        if best < t_exit:
            t = t_cur + max(best, 0.0)
            return t if t <= t_max else -1.0
        x += dx * t_exit
        y += dy * t_exit
        t_cur += t_exit
    return -1.0


@njit(cache=True)
def _trace_batch(px, py, dx, dy, cx, cy, cr, t_max):
    out = np.empty(px.shape[0])
    for i in range(px.shape[0]):
        out[i] = _first_entry_time(px[i], py[i], dx[i], dy[i], cx, cy, cr, t_max)
    return out


def finite_horizon_bound(lattice: DiskLattice,
                         angular_samples: int = 4096,
                         offset_samples: int = 64,
                         T_max: float = 50.0,
                         q_max: int = 20,
                         random_rays: int = 10000,
                         rng_seed: int = 0) -> HorizonReport:
    """Measure the empirical horizon bound and check for exact corridors.

    Parameters
    ----------
    angular_samples, offset_samples : int
        The deterministic ray grid: directions uniform on [0, 2*pi), line
        offsets uniform per direction.
    T_max : float
        Rays surviving this long without entering a disk count as violations.
    q_max : int
        Range of the exact rational-direction corridor test.
    random_rays : int
        Extra rays with random start and direction (counter-based generator).
    """
    if angular_samples < 8 or offset_samples < 1:
        raise ValueError("need at least 8 angular and 1 offset samples")
    if T_max <= 0.0:
        raise ValueError("T_max must be positive")

    corridors = rational_corridors(lattice, q_max)
    witness = None
    if corridors:
        corridors.sort(key=lambda c: -c[2])
        witness = (corridors[0][0], corridors[0][1])

    if not lattice.disks:
        return HorizonReport(bound_T=float("inf"), worst_ray=((0.0, 0.0), 0.0),
                             violated=True, corridor_witness=witness or (0.0, 0.0),
                             n_rays=0, n_escaped=0)

    cx, cy, cr = lattice.arrays()

    angles = (np.arange(angular_samples) + 0.5) * (2.0 * np.pi / angular_samples)
    offsets = (np.arange(offset_samples) + 0.5) / offset_samples
    aa, oo = np.meshgrid(angles, offsets, indexing="ij")
    aa = aa.ravel()
    oo = oo.ravel()
    px = (-np.sin(aa) * oo) % 1.0
    py = (np.cos(aa) * oo) % 1.0

    rng = np.random.Generator(np.random.Philox(rng_seed))
    ra = rng.uniform(0.0, 2.0 * np.pi, random_rays)
    px = np.concatenate([px, rng.uniform(0.0, 1.0, random_rays)])
    py = np.concatenate([py, rng.uniform(0.0, 1.0, random_rays)])
    aa = np.concatenate([aa, ra])

    times = _trace_batch(px, py, np.cos(aa), np.sin(aa), cx, cy, cr, T_max)
    escaped = times < 0.0
    n_escaped = int(escaped.sum())
    entered = times[~escaped]
    if entered.size:
        i_worst = int(np.argmax(np.where(escaped, -1.0, times)))
        bound = float(entered.max())
    else:
        i_worst = 0
        bound = float("inf")
    if n_escaped:
        i_worst = int(np.argmax(escaped))
        bound = float("inf")

    violated = bool(n_escaped > 0 or witness is not None)
    return HorizonReport(
        bound_T=bound,
        worst_ray=((float(px[i_worst]), float(py[i_worst])), float(aa[i_worst])),
        violated=violated,
        corridor_witness=witness,
        n_rays=int(times.size),
        n_escaped=n_escaped,
    )
