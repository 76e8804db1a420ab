"""Far-field patterns, multistatic response matrices and the noise model.

Far fields are computed from near fields with the Kirchhoff-Helmholtz
representation on a circle ``|y| = R`` enclosing ``D``:

    u^infty(xhat) = gamma * int_{|y|=R} [u^s d_nu e^{-ik xhat.y} - d_nu u^s e^{-ik xhat.y}] ds

with ``gamma = e^{i pi/4} / sqrt(8 pi k)`` in 2D, matching the asymptotics
``u^s(x) = e^{ik|x|} / sqrt(|x|) * u^infty(xhat) + O(|x|^{-3/2})``.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import hankel1

from .errors import GeometryError, ValidationError
from .fem import FESpace
from .forward import (BACKGROUND, PERTURBED, ComplexField, HelmholtzSolver, PmlSpec,
                      ProbeTable, background_fields, evaluate_many)
from .mesh import Mesh
from .scenario import Scenario

log = logging.getLogger(__name__)

NUMERIC = "numeric-difference"
ASYMPTOTIC = "asymptotic-oracle"
TOTAL = "numeric-total"

# Sign of the dipole term in the small-volume expansion for the polarization
# tensor M = int_B (A_m - A)(I + grad chi). Integrating the defect source
# div((A_m - A) grad u) against the Green's function by parts moves the
# derivative onto G and produces a minus sign; the numerical comparison with
# full FEM data confirms this convention.
DIPOLE_SIGN = -1.0

# points per panel of the composite Gauss rule on the measurement circle
_GAUSS_POINTS = 4


def gamma(k: float, d: int = 2) -> complex:
    """Far-field constant: ``e^{i pi/4}/sqrt(8 pi k)`` (d = 2) or ``1/(4 pi)`` (d = 3)."""
    if d == 2:
        return cmath.exp(1j * math.pi / 4) / math.sqrt(8 * math.pi * k)
    if d == 3:
        return 1 / (4 * math.pi)
    raise ValidationError(f"dimension must be 2 or 3, got {d}")


@dataclass(frozen=True)
class DirectionSet:
    """``N`` equispaced unit vectors starting at ``(1, 0)``."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"direction count must be a positive integer, got {self.N}")

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.N) / self.N

    @property
    def vectors(self) -> np.ndarray:
        a = self.angles
        return np.column_stack([np.cos(a), np.sin(a)])


@dataclass(frozen=True, eq=False)
class MultistaticMatrix:
    """``F[i, j]`` for observation ``xhat_i`` (row) and incidence ``yhat_j`` (column)."""

    entries: np.ndarray
    k: float
    provenance: str = NUMERIC
    noise_level: float = 0.0
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.entries.shape[0]

    @property
    def directions(self) -> DirectionSet:
        return DirectionSet(self.N)

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["N,k,delta,seed,provenance",
                 f"{self.N},{self.k:.17g},{self.noise_level:.17g},"
                 f"{'' if self.seed is None else self.seed},{self.provenance}",
                 "i,j,re,im"]
        for i in range(self.N):
            for j in range(self.N):
                z = self.entries[i, j]
                lines.append(f"{i},{j},{z.real:.17g},{z.imag:.17g}")
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "MultistaticMatrix":
        rows = Path(path).read_text().splitlines()
        if len(rows) < 3 or rows[0].strip() != "N,k,delta,seed,provenance":
            raise ValidationError(f"{path}: line 1: not a multistatic matrix file")
        try:
            N, k, delta, seed, prov = rows[1].split(",")
            N, k, delta = int(N), float(k), float(delta)
            seed = int(seed) if seed else None
        except ValueError:
            raise ValidationError(f"{path}: line 2: malformed header values") from None
        F = np.full((N, N), np.nan, dtype=complex)
        for ln, row in enumerate(rows[3:], start=4):
            try:
                i, j, re, im = row.split(",")
                F[int(i), int(j)] = complex(float(re), float(im))
            except (ValueError, IndexError):
                raise ValidationError(f"{path}: line {ln}: malformed entry {row!r}") from None
        if np.isnan(F).any():
            raise ValidationError(f"{path}: missing matrix entries")
        return cls(F, k, prov, delta, seed)


# ---------------------------------------------------------------- transforms


def default_radius(scenario: Scenario, mesh: Mesh) -> float:
    """Midpoint between the circumradius of ``D`` and the PML inner boundary."""
    return 0.5 * (_circumradius(scenario) + mesh.box_half_width)


def _circumradius(scenario: Scenario) -> float:
    dom = scenario.domain
    return dom.circumradius


def _check_radius(scenario, mesh, R):
    if mesh.box_half_width is None or R >= mesh.box_half_width:
        raise GeometryError(f"measurement circle R = {R:.4g} intersects the PML")
    if scenario is not None and R <= _circumradius(scenario):
        raise GeometryError(f"measurement circle R = {R:.4g} intersects D")


def circle_quadrature(R: float, k: float, h: float):
    """Composite Gauss-Legendre nodes and weights on ``|y| = R``."""
    circ = 2 * math.pi * R
    panels = max(math.ceil(10 * circ * k / (2 * math.pi)), 4 * math.ceil(circ / h), 16)
    g, gw = np.polynomial.legendre.leggauss(_GAUSS_POINTS)
    edges = 2 * math.pi * np.arange(panels + 1) / panels
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    th = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel() * R
    nu = np.column_stack([np.cos(th), np.sin(th)])
    return R * nu, nu, w


def far_field_from_traces(values, normal_derivs, y, nu, w, k, xhat) -> np.ndarray:
    """Kirchhoff-Helmholtz quadrature given traces on a closed curve.

    ``values`` and ``normal_derivs`` have shape ``(Q, N)``; returns ``(len(xhat), N)``.
    """
    E = np.exp(-1j * k * (np.atleast_2d(xhat) @ y.T))            # (M, Q)
    dE = -1j * k * (np.atleast_2d(xhat) @ nu.T) * E               # d_nu of the kernel
    return gamma(k) * ((dE * w) @ values - (E * w) @ normal_derivs)


def far_field_matrix(space: FESpace, coeffs: np.ndarray, k: float, R: float, xhat,
                     scenario: Scenario | None = None) -> np.ndarray:
    """Far fields of the columns of ``coeffs`` at observation directions ``xhat``."""
    _check_radius(scenario, space.mesh, R)
    h = space.mesh.metadata.get("h_exterior", space.mesh.h_max)
    y, nu, w = circle_quadrature(R, k, h)
    C = np.asarray(coeffs)
    if C.ndim == 1:
        C = C[:, None]
    val, grad = evaluate_many(space, C, y)
    dn = np.einsum("qnd,qd->qn", grad, nu)
    return far_field_from_traces(val, dn, y, nu, w, k, xhat)


def far_field_transform(scattered: ComplexField, k: float, circle_radius: float,
                        directions: DirectionSet, scenario: Scenario | None = None) -> np.ndarray:
    """Far-field pattern of one scattered field at the direction set."""
    return far_field_matrix(scattered.space, scattered.coeffs, k, circle_radius,
                            directions.vectors, scenario)[:, 0]


def far_field_fourier(scattered: ComplexField, k: float, R: float, xhat, n_samples: int = 512,
                      m_max: int | None = None) -> np.ndarray:
    """Independent far-field evaluation by a Fourier-Hankel expansion on ``|y| = R``.

    Uses only field values: ``u^s(R, theta) = sum a_m H_m(kR) e^{i m theta}``
    and ``u^infty = sqrt(2/(pi k)) e^{-i pi/4} sum a_m (-i)^m e^{i m theta}``.
    """
    _check_radius(None, scattered.mesh, R)
    th = 2 * np.pi * np.arange(n_samples) / n_samples
    y = R * np.column_stack([np.cos(th), np.sin(th)])
    u, _ = scattered.space.evaluate(scattered.coeffs, y)
    c = np.fft.fft(u) / n_samples
    if m_max is None:
        m_max = min(int(k * R) + 15, n_samples // 2 - 1)
    m = np.arange(-m_max, m_max + 1)
    a = c[m % n_samples] / hankel1(m, k * R)
    xhat = np.atleast_2d(xhat)
    phi = np.arctan2(xhat[:, 1], xhat[:, 0])
    s = (a[None, :] * (-1j) ** m[None, :] * np.exp(1j * m[None, :] * phi[:, None])).sum(1)
    return math.sqrt(2 / (math.pi * k)) * cmath.exp(-1j * math.pi / 4) * s


# ---------------------------------------------------------------- multistatic data


def multistatic_numeric(scenario: Scenario, mesh: Mesh, pml: PmlSpec,
                        directions: DirectionSet | None = None, R: float | None = None,
                        k: float | None = None) -> MultistaticMatrix:
    """``F[i, j] = u^infty_eps(xhat_i, yhat_j) - u^infty_b(xhat_i, yhat_j)`` from FEM solves."""
    if k is not None:
        scenario = scenario.with_wavenumber(k)
    k = scenario.wavenumber
    dirs = directions or DirectionSet(scenario.n_directions)
    Y = dirs.vectors
    R = R or default_radius(scenario, mesh)
    bg = HelmholtzSolver(scenario, mesh, pml, BACKGROUND)
    Ub = background_fields(scenario, mesh, pml, Y, solver=bg)
    if scenario.defects:
        pert = HelmholtzSolver(scenario, mesh, pml, PERTURBED)
        Ue = pert.scattered(Y)
        diff = Ue - Ub
    else:
        diff = np.zeros_like(Ub)
    F = far_field_matrix(bg.space, diff, k, R, Y, scenario)
    meta = {"R": R, "n_dofs": bg.n_dofs, "scenario_hash": scenario.hash}
    return MultistaticMatrix(F, k, NUMERIC, 0.0, None, meta)


def multistatic_total(scenario: Scenario, mesh: Mesh, pml: PmlSpec, variant: str = PERTURBED,
                      directions: DirectionSet | None = None, R: float | None = None,
                      k: float | None = None, solver: HelmholtzSolver | None = None) -> MultistaticMatrix:
    """Far-field matrix of the whole inhomogeneity ``D`` (free-space reference).

    This is the data used by the linear sampling method, as opposed to the
    background-subtracted matrix of :func:`multistatic_numeric`.
    """
    if k is not None:
        scenario = scenario.with_wavenumber(k)
    k = scenario.wavenumber
    dirs = directions or DirectionSet(scenario.n_directions)
    Y = dirs.vectors
    R = R or default_radius(scenario, mesh)
    if solver is None:
        solver = HelmholtzSolver(scenario, mesh, pml, variant)
    F = far_field_matrix(solver.space, solver.scattered(Y), k, R, Y, scenario)
    meta = {"R": R, "n_dofs": solver.n_dofs, "scenario_hash": scenario.hash, "variant": variant}
    return MultistaticMatrix(F, k, TOTAL, 0.0, None, meta)


def _probe_lookup(table: ProbeTable, z, dirs):
    iz = np.nonzero(np.all(np.abs(table.points - np.asarray(z)) < 1e-12, axis=1))[0]
    if not len(iz):
        raise ValidationError(f"probe table has no entry for point {tuple(z)}")
    d = np.abs(table.directions[None, :, :] - dirs[:, None, :]).max(-1)
    j = d.argmin(1)
    if np.any(d[np.arange(len(dirs)), j] > 1e-12):
        raise ValidationError("probe table misses some of the required directions")
    return table.values[iz[0], j], table.gradients[iz[0], j]


def multistatic_asymptotic(scenario: Scenario, table: ProbeTable, polarization,
                           directions: DirectionSet | None = None,
                           dipole_sign: float = DIPOLE_SIGN) -> MultistaticMatrix:
    """Leading-order small-volume multistatic matrix.

    ``polarization[m]`` is the 2x2 tensor of the reference shape ``B_m``;
    the defect is ``z_m + eps_m B_m``. Each defect contributes
    ``gamma eps^2 [k^2 |B| (n_m - n) u_b(z, -xhat) u_b(z, yhat)
    + s M grad u_b(z, -xhat) . grad u_b(z, yhat)]`` with ``s = dipole_sign``.
    """
    k = scenario.wavenumber
    dirs = directions or DirectionSet(scenario.n_directions)
    Y = dirs.vectors
    if len(polarization) != len(scenario.defects):
        raise ValidationError("one polarization tensor per defect is required")
    F = np.zeros((dirs.N, dirs.N), dtype=complex)
    for d, M in zip(scenario.defects, polarization):
        uo, go = _probe_lookup(table, d.center, -Y)
        ui, gi = _probe_lookup(table, d.center, Y)
        mono = k**2 * d.reference_area * (d.index - scenario.index) * np.outer(uo, ui)
        dip = np.einsum("id,de,je->ij", go, np.asarray(M), gi)
        F += d.epsilon**2 * (mono + dipole_sign * dip)
    return MultistaticMatrix(gamma(k) * F, k, ASYMPTOTIC, 0.0, None,
                             {"scenario_hash": scenario.hash})


# ---------------------------------------------------------------- noise


def spectral_norm(E: np.ndarray, iterations: int = 500, tol: float = 1e-15) -> float:
    """Largest singular value by power iteration on ``E^* E``."""
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(E.shape[1]) + 1j * rng.standard_normal(E.shape[1])
    x /= np.linalg.norm(x)
    s = 0.0
    for _ in range(iterations):
        y = E.conj().T @ (E @ x)
        s_new = math.sqrt(np.linalg.norm(y))
        x = y / np.linalg.norm(y)
        if abs(s_new - s) <= tol * s_new:
            s = s_new
            break
        s = s_new
    return float(np.linalg.norm(E @ x))


def noise_matrix(N: int, seed: int) -> np.ndarray:
    """Complex Gaussian matrix rescaled to unit spectral norm."""
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    E /= np.linalg.norm(E, 2)
    check = spectral_norm(E)
    if abs(check - 1) > 1e-10:
        # power iteration disagrees with the SVD: rescale once more by the SVD value
        E /= np.linalg.norm(E, 2)
    return E


def add_noise(F: MultistaticMatrix, delta: float, seed: int) -> MultistaticMatrix:
    """Return ``F + delta * E`` with ``||E||_2 = 1``; ``delta = 0`` leaves ``F`` untouched."""
    if not delta >= 0:
        raise ValidationError(f"noise level must be non-negative, got {delta}")
    if delta == 0:
        return replace(F, entries=F.entries.copy(), seed=seed)
    E = noise_matrix(F.N, seed)
    meta = dict(F.metadata, noise_entries="complex")
    return replace(F, entries=F.entries + delta * E, noise_level=delta, seed=seed, metadata=meta)


def add_relative_noise(F: MultistaticMatrix, level: float, seed: int) -> MultistaticMatrix:
    """Noise of spectral size ``level * ||F||_2``."""
    out = add_noise(F, level * float(np.linalg.norm(F.entries, 2)), seed)
    return replace(out, metadata=dict(out.metadata, relative_noise=level))

