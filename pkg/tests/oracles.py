"""Reference values computed independently of the package internals."""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np


def disk_te_roots(alpha: float, kmax: float, dps: int = 30) -> list[float]:
    """Radially symmetric transmission eigenvalues of the unit disk, ``A = alpha I``, ``n = 1``.

    ``w = J0(k r / sqrt(alpha))``, ``v = c J0(k r)``; matching ``w = v`` and
    ``alpha w' = v'`` at ``r = 1`` gives
    ``sqrt(alpha) J1(k/sqrt(alpha)) J0(k) - J0(k/sqrt(alpha)) J1(k) = 0``.
    """
    mp.mp.dps = dps
    s = mp.sqrt(alpha)

    def f(k):
        return s * mp.besselj(1, k / s) * mp.besselj(0, k) - mp.besselj(0, k / s) * mp.besselj(1, k)

    grid = [0.05 + i * 0.01 for i in range(int((kmax - 0.05) / 0.01))]
    roots = []
    for a, b in zip(grid, grid[1:]):
        if f(a) * f(b) < 0:
            roots.append(float(mp.findroot(f, (a, b), solver="anderson")))
    return roots


def ellipse_depolarization(a: float, a1: float, sa: float, sb: float) -> np.ndarray:
    """Polarization tensor of an axis-aligned ellipse from depolarization factors."""
    area = math.pi * sa * sb
    N = (sb / (sa + sb), sa / (sa + sb))
    return np.diag([a * (a1 - a) * area / (a + (a1 - a) * Ni) for Ni in N])


def plane_wave_probe(points, directions, k: float):
    """Free-space total field ``e^{ik z.d}`` and its gradient."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    u = np.exp(1j * k * P @ D.T)
    g = 1j * k * u[:, :, None] * D[None, :, :]
    return u, g


def manufactured(p):
    """``u = cos(x) cos(2y)``, so ``-Delta u + u = 6 u``."""
    return np.cos(p[..., 0]) * np.cos(2 * p[..., 1])
