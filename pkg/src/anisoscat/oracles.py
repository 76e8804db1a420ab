"""Closed-form reference solutions used to validate the numerical solvers.

All of them concern a centered isotropic disk of radius ``rho`` with
``A = a I`` and index ``n`` inside, free space outside.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import hankel1, h1vp, jv, jvp


def disk_scattering_coefficients(k: float, rho: float, a: float, n: float, m_max: int | None = None):
    """Coefficients ``b_m`` of ``u^s = sum b_m H_m(k r) e^{i m (theta - theta_d)}``.

    The incident plane wave is ``e^{ik x.d} = sum i^m J_m(k r) e^{i m (theta - theta_d)}``.
    Matching ``u`` and ``a du/dr`` at ``r = rho`` with the interior
    ``c_m J_m(k_in r)``, ``k_in = k sqrt(n / a)``.
    """
    if m_max is None:
        m_max = int(k * rho * max(1.0, math.sqrt(n / a))) + 25
    m = np.arange(-m_max, m_max + 1)
    kin = k * math.sqrt(n / a)
    J, dJ = jv(m, k * rho), jvp(m, k * rho)
    H, dH = hankel1(m, k * rho), h1vp(m, k * rho)
    Ji, dJi = jv(m, kin * rho), jvp(m, kin * rho)
    im = 1j**m
    # [H  -Ji] [b]   = -i^m [J]
    # [kH' -a kin Ji'] [c] = -i^m [k J']
    det = H * (-a * kin * dJi) + Ji * k * dH
    b = (-im * J * (-a * kin * dJi) - (-Ji) * (-im * k * dJ)) / det
    c = (H * (-im * k * dJ) - k * dH * (-im * J)) / det
    return m, b, c


def disk_scattered_field(k, rho, a, n, d, x):
    """Scattered field of the disk at points ``x`` (outside the disk)."""
    m, b, _ = disk_scattering_coefficients(k, rho, a, n)
    x = np.atleast_2d(x)
    r = np.hypot(x[:, 0], x[:, 1])
    th = np.arctan2(x[:, 1], x[:, 0]) - math.atan2(d[1], d[0])
    return (b[None, :] * hankel1(m[None, :], k * r[:, None]) * np.exp(1j * m[None, :] * th[:, None])).sum(1)


def disk_far_field(k, rho, a, n, d, xhat):
    """Far-field pattern ``u^infty(xhat, d)`` of the disk."""
    m, b, _ = disk_scattering_coefficients(k, rho, a, n)
    xhat = np.atleast_2d(xhat)
    th = np.arctan2(xhat[:, 1], xhat[:, 0]) - math.atan2(d[1], d[0])
    s = (b[None, :] * (-1j) ** m[None, :] * np.exp(1j * m[None, :] * th[:, None])).sum(1)
    return math.sqrt(2 / (math.pi * k)) * np.exp(-1j * math.pi / 4) * s
