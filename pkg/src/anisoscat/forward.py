"""Scattering by an anisotropic medium: FEM with a perfectly matched layer.

The total field ``u = u^s + e^{ik x.y}`` solves ``div(A_b grad u) + k^2 n_b u = 0``
with ``A_b = I``, ``n_b = 1`` outside ``D``. The scattered field solves the
bilinear weak problem

    int A_b grad(u^s).grad(phi) - k^2 n_b u^s phi
        = -int (A_b - I) grad(u^i).grad(phi) + k^2 int (n_b - 1) u^i phi

on the computational box. Outside the physical square ``|x|_inf < b`` the
coordinates are stretched, ``s_j = 1 + i sigma_j(x_j) / k`` with
``sigma_j = sigma_0 ((|x_j| - b) / w)^p``, and the field vanishes on the outer
boundary.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla
from scipy.special import hankel1

from .errors import GeometryError, SolverError, ValidationError
from .fem import FESpace
from .mesh import EDGE_OUTER, TAG_D, Mesh, defect_tag
from .scenario import Scenario

log = logging.getLogger(__name__)

BACKGROUND = "background"
PERTURBED = "perturbed"

_CACHE_SIZE = 1024
_probe_cache: "OrderedDict[tuple, tuple]" = OrderedDict()


@dataclass(frozen=True)
class PmlSpec:
    """Polynomially graded PML. ``sigma0=None`` picks a 1e-6 reflection target."""

    width: float
    sigma0: float | None = None
    power: float = 2.0
    reflection: float = 1e-6

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError(f"PML width must be positive, got {self.width}")
        if self.power < 1:
            raise ValidationError(f"PML grading exponent must be >= 1, got {self.power}")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ValidationError(f"PML strength must be positive, got {self.sigma0}")

    @property
    def strength(self) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        # round trip attenuation exp(-2 sigma0 w / (p + 1)) = reflection
        return (self.power + 1) * math.log(1 / self.reflection) / (2 * self.width)

    def sigma(self, x: np.ndarray, b: float) -> np.ndarray:
        d = np.clip((np.abs(x) - b) / self.width, 0.0, None)
        return self.strength * d**self.power

    def stretch(self, x: np.ndarray, b: float, k: float) -> tuple[np.ndarray, np.ndarray]:
        """Complex stretching factors ``(s_x, s_y)``; identically 1 inside the box."""
        return 1 + 1j * self.sigma(x[..., 0], b) / k, 1 + 1j * self.sigma(x[..., 1], b) / k


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Discrete complex field: coefficients in a finite element space."""

    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        if len(self.coeffs) != self.space.n_dofs:
            raise ValidationError(
                f"field has {len(self.coeffs)} coefficients, space has {self.space.n_dofs} DOFs")

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def __add__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.space, self.coeffs - other.coeffs)

    def __mul__(self, c) -> "ComplexField":
        return ComplexField(self.space, c * self.coeffs)

    __rmul__ = __mul__


def plane_wave(k: float, d) -> callable:
    d = np.asarray(d, dtype=float)
    return lambda x: np.exp(1j * k * (x[..., 0] * d[0] + x[..., 1] * d[1]))


def medium_tables(scenario: Scenario, variant: str, n_tags: int):
    """Per-tag tensors ``(n_tags, 2, 2)`` and indices ``(n_tags,)``."""
    if variant not in (BACKGROUND, PERTURBED):
        raise ValidationError(f"variant must be {BACKGROUND!r} or {PERTURBED!r}, got {variant!r}")
    A = np.tile(np.eye(2), (n_tags, 1, 1))
    n = np.ones(n_tags)
    A[TAG_D] = scenario.background.matrix
    n[TAG_D] = scenario.index
    for m, d in enumerate(scenario.defects):
        t = defect_tag(m)
        if variant == PERTURBED:
            A[t], n[t] = d.tensor.matrix, d.index
        else:
            A[t], n[t] = scenario.background.matrix, scenario.index
    return A, n


class HelmholtzSolver:
    """Factorized PML system for one scenario variant and wavenumber.

    The factorization is computed once; :meth:`solve_load` and
    :meth:`scattered` then cost one pair of triangular solves per right-hand
    side.
    """

    def __init__(self, scenario: Scenario, mesh: Mesh, pml: PmlSpec, variant: str = BACKGROUND,
                 k: float | None = None):
        if mesh.box_half_width is None:
            raise GeometryError("forward solves need a box mesh with a PML frame")
        if len(scenario.defects) != mesh.n_defects:
            raise GeometryError("mesh was not built for this scenario (defect count differs)")
        self.scenario = scenario
        self.mesh = mesh
        self.pml = pml
        self.variant = variant
        self.k = float(k if k is not None else scenario.wavenumber)
        self.space = FESpace(mesh)
        n_tags = int(mesh.tags.max()) + 1
        self.A_tab, self.n_tab = medium_tables(scenario, variant, max(n_tags, TAG_D + 1))
        b = mesh.box_half_width
        k_ = self.k
        A_tab, n_tab = self.A_tab, self.n_tab

        def acoef(x, tags):
            C = np.broadcast_to(A_tab[tags][:, None], x.shape[:2] + (2, 2)).astype(complex)
            sx, sy = pml.stretch(x, b, k_)
            C[..., 0, 0] *= sy / sx
            C[..., 1, 1] *= sx / sy
            return C

        def ncoef(x, tags):
            sx, sy = pml.stretch(x, b, k_)
            return n_tab[tags][:, None] * sx * sy

        t0 = time.perf_counter()
        S = self.space.stiffness(acoef) - k_**2 * self.space.mass(ncoef)
        bd = self.space.boundary_dofs(EDGE_OUTER)
        free = np.ones(self.space.n_dofs, dtype=bool)
        free[bd] = False
        self.free = np.nonzero(free)[0]
        Sf = S[self.free][:, self.free].tocsc()
        self._Sf = Sf
        try:
            self._lu = spla.splu(Sf, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"PML system is singular: {exc}") from None
        diag = np.abs(self._lu.U.diagonal())
        self.pivot_ratio = float(diag.min() / diag.max())
        if not np.isfinite(self.pivot_ratio) or self.pivot_ratio < 1e-14:
            raise SolverError(f"PML system is numerically singular (pivot ratio {self.pivot_ratio:.2e})")
        self.factor_time = time.perf_counter() - t0
        log.debug("factorized %s system: %d DOFs in %.3fs", variant, len(self.free), self.factor_time)

    @property
    def n_dofs(self) -> int:
        return self.space.n_dofs

    def solve_load(self, rhs: np.ndarray) -> np.ndarray:
        """Solve with homogeneous Dirichlet data; ``rhs`` may hold several columns."""
        rhs = np.asarray(rhs, dtype=complex)
        out = np.zeros(rhs.shape, dtype=complex)
        out[self.free] = self._lu.solve(np.ascontiguousarray(rhs[self.free]))
        res = self._Sf @ out[self.free] - rhs[self.free]
        nr = np.linalg.norm(res, axis=0) / np.maximum(np.linalg.norm(rhs[self.free], axis=0), 1e-300)
        self.last_residual = float(np.max(nr)) if np.size(nr) else 0.0
        return out

    def incident_load(self, directions) -> np.ndarray:
        """Right-hand sides generated by plane waves for each direction (columns)."""
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        A_tab, n_tab, k = self.A_tab, self.n_tab, self.k
        dA = A_tab - np.eye(2)
        dn = n_tab - 1.0
        active = np.nonzero((np.abs(dA).reshape(len(dA), -1).max(1) > 0) | (dn != 0))[0]
        keep = np.isin(self.mesh.tags, active)
        sub_cells = np.nonzero(keep)[0]
        cols = []
        x, w, phi, g = self.space.quad()
        x, w, g = x[sub_cells], w[sub_cells], g[sub_cells]
        tags = self.mesh.tags[sub_cells]
        for d in dirs:
            ui = np.exp(1j * k * (x[..., 0] * d[0] + x[..., 1] * d[1]))
            grad_ui = 1j * k * ui[..., None] * d
            F = -np.einsum("tde,tqe->tqd", dA[tags], grad_ui)
            f = k**2 * dn[tags][:, None] * ui
            local = np.einsum("tq,tqd,tqad->ta", w, F, g) + np.einsum("tq,tq,qa->ta", w, f, phi)
            out = np.zeros(self.n_dofs, dtype=complex)
            np.add.at(out, self.space.cell_dofs[sub_cells].ravel(), local.ravel())
            cols.append(out)
        return np.column_stack(cols) if cols else np.zeros((self.n_dofs, 0), complex)

    def scattered(self, directions) -> np.ndarray:
        """Scattered-field coefficients, one column per incident direction."""
        t0 = time.perf_counter()
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        U = self.solve_load(self.incident_load(dirs))
        log.info("solve variant=%s k=%.6g directions=%d residual=%.2e factor=%.3fs solve=%.3fs",
                 self.variant, self.k, len(dirs), self.last_residual, self.factor_time,
                 time.perf_counter() - t0)
        return U

    def field(self, coeffs) -> ComplexField:
        return ComplexField(self.space, np.asarray(coeffs))


def solve_scattered(scenario: Scenario, variant: str, incident_direction, mesh: Mesh,
                    pml: PmlSpec) -> ComplexField:
    """Scattered field ``u^s`` for one incident direction."""
    d = np.asarray(incident_direction, dtype=float)
    if abs(np.linalg.norm(d) - 1) > 1e-12:
        raise ValidationError("incident direction must be a unit vector")
    solver = HelmholtzSolver(scenario, mesh, pml, variant)
    return solver.field(solver.scattered(d)[:, 0])


def _check_physical(mesh: Mesh, pts: np.ndarray):
    b = mesh.box_half_width
    if b is not None and np.any(np.abs(pts).max(axis=1) > b + 1e-12):
        bad = pts[np.abs(pts).max(axis=1) > b + 1e-12][0]
        raise GeometryError(f"point {tuple(bad)} lies in the PML where fields are unphysical")


def eval_field_and_gradient(field: ComplexField, points) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(P,)`` and gradients ``(P, 2)`` of a field at physical points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _check_physical(field.mesh, pts)
    return field.space.evaluate(field.coeffs, pts)


def evaluate_many(space: FESpace, coeffs: np.ndarray, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate several fields (columns of ``coeffs``) at the same points.

    Returns values ``(P, N)`` and gradients ``(P, N, 2)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = space.mesh.locate_points(pts)
    if np.any(tri < 0):
        raise GeometryError("evaluation point outside the mesh")
    lam = space.mesh.barycentric(tri, pts)
    phi, dphi = space._basis_many(lam)
    c = coeffs[space.cell_dofs[tri]]  # (P, nloc, N)
    val = np.einsum("pa,pan->pn", phi, c)
    gphi = np.einsum("paj,pjd->pad", dphi, space.grad_lambda[tri])
    grad = np.einsum("pad,pan->pnd", gphi, c)
    return val, grad


@dataclass(frozen=True)
class ProbeTable:
    """Background total fields ``u_b(z, d)`` and gradients at probe points."""

    points: np.ndarray       # (P, 2)
    directions: np.ndarray   # (N, 2)
    values: np.ndarray       # (P, N)
    gradients: np.ndarray    # (P, N, 2)

    def permuted(self, order) -> "ProbeTable":
        order = np.asarray(order)
        return ProbeTable(self.points, self.directions[order], self.values[:, order],
                          self.gradients[:, order])


def mesh_fingerprint(mesh: Mesh) -> str:
    h = hashlib.sha256()
    for a in (mesh.nodes, mesh.triangles, mesh.tags):
        h.update(np.ascontiguousarray(a).tobytes())
    h.update(str(mesh.element_degree).encode())
    return h.hexdigest()[:16]


def background_fields(scenario: Scenario, mesh: Mesh, pml: PmlSpec, directions,
                      solver: HelmholtzSolver | None = None) -> np.ndarray:
    """Background scattered-field coefficients per direction, with caching.

    The cache key is ``(background hash, mesh fingerprint, PML, k, direction)``.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    base = (scenario.without_defects().hash, mesh_fingerprint(mesh), pml, scenario.wavenumber)
    keys = [base + (round(float(d[0]), 14), round(float(d[1]), 14)) for d in dirs]
    missing = [i for i, key in enumerate(keys) if key not in _probe_cache]
    if missing:
        if solver is None:
            solver = HelmholtzSolver(scenario, mesh, pml, BACKGROUND)
        U = solver.scattered(dirs[missing])
        for j, i in enumerate(missing):
            _probe_cache[keys[i]] = U[:, j].copy()
            while len(_probe_cache) > _CACHE_SIZE:
                _probe_cache.popitem(last=False)
    for key in keys:
        _probe_cache.move_to_end(key)
    return np.column_stack([_probe_cache[key] for key in keys])


def clear_cache() -> None:
    _probe_cache.clear()


def background_probe(scenario: Scenario, mesh: Mesh, pml: PmlSpec, points, directions) -> ProbeTable:
    """Table of background total fields ``u_b(z, d)`` and ``grad u_b(z, d)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    _check_physical(mesh, pts)
    space = FESpace(mesh)
    U = background_fields(scenario, mesh, pml, dirs)
    val, grad = evaluate_many(space, U, pts)
    k = scenario.wavenumber
    ui = np.exp(1j * k * pts @ dirs.T)
    val = val + ui
    grad = grad + 1j * k * ui[..., None] * dirs[None, :, :]
    return ProbeTable(pts, dirs, val, grad)


# ---------------------------------------------------------------- point sources


def anisotropic_fundamental(A: np.ndarray, n: float, k: float, x: np.ndarray, z) -> tuple[np.ndarray, np.ndarray]:
    """Radiating solution of ``div(A grad G) + k^2 n G = -delta_z`` in a homogeneous medium.

    Returns values and gradients at ``x`` (shape ``(..., 2)``).
    """
    A = np.asarray(A, dtype=float)
    Ainv = np.linalg.inv(A)
    r = x - np.asarray(z, dtype=float)
    rho = np.sqrt(np.einsum("...i,ij,...j->...", r, Ainv, r))
    kk = k * math.sqrt(n)
    c = 0.25j / math.sqrt(np.linalg.det(A))
    val = c * hankel1(0, kk * rho)
    drho = np.einsum("ij,...j->...i", Ainv, r) / rho[..., None]
    grad = (-c * kk * hankel1(1, kk * rho))[..., None] * drho
    return val, grad


def _smoothstep(r, r1, r2):
    """C2 cutoff: 1 for r <= r1, 0 for r >= r2, with first and second radial derivatives."""
    t = np.clip((r - r1) / (r2 - r1), 0.0, 1.0)
    s = 1 - (10 * t**3 - 15 * t**4 + 6 * t**5)
    ds = -(30 * t**2 - 60 * t**3 + 30 * t**4) / (r2 - r1)
    d2s = -(60 * t - 180 * t**2 + 120 * t**3) / (r2 - r1) ** 2
    return s, ds, d2s


def solve_point_source(scenario: Scenario, mesh: Mesh, pml: PmlSpec, z,
                       cutoff: tuple[float, float] | None = None,
                       solver: HelmholtzSolver | None = None) -> ComplexField:
    """Background Green's function with source at ``z`` inside ``D`` (no defects).

    ``G = chi * Phi_A + W`` where ``Phi_A`` is the homogeneous-medium
    fundamental solution and ``chi`` a smooth radial cutoff supported in
    ``D``. ``W`` solves the PML problem with the smooth commutator load
    ``2 A grad(chi).grad(Phi_A) + Phi_A div(A grad chi)``. Outside the
    cutoff support ``G = W``, so ``W`` carries the far field.
    """
    z = np.asarray(z, dtype=float)
    dom = scenario.domain
    if not dom.contains(z[None])[0]:
        raise GeometryError("point source must lie inside D")
    if cutoff is None:
        # distance from z to dD, estimated from a dense boundary sample
        t = np.arange(4096) / 4096
        dist = float(np.linalg.norm(dom.boundary_point(t) - z, axis=1).min())
        cutoff = (0.3 * dist, 0.8 * dist)
    r1, r2 = cutoff
    A = scenario.background.matrix
    n = scenario.index
    k = scenario.wavenumber
    if solver is None:
        solver = HelmholtzSolver(scenario.without_defects(), mesh, pml, BACKGROUND)
    space = solver.space
    x, w, phi, _ = space.quad(4)
    r = x - z
    rr = np.linalg.norm(r, axis=-1)
    cells = np.nonzero(((rr > r1) & (rr < r2)).any(axis=1))[0]
    x, w, rv, rr = x[cells], w[cells], r[cells], rr[cells]
    s, ds, d2s = _smoothstep(rr, r1, r2)
    e = rv / rr[..., None]
    grad_chi = ds[..., None] * e
    # Hessian of a radial function: s'' e e^T + s'/r (I - e e^T)
    H = (d2s - ds / rr)[..., None, None] * e[..., :, None] * e[..., None, :] \
        + (ds / rr)[..., None, None] * np.eye(2)
    div_A_grad_chi = np.einsum("ij,...ij->...", A, H)
    Phi, gPhi = anisotropic_fundamental(A, n, k, x, z)
    h = 2 * np.einsum("...i,ij,...j->...", grad_chi, A, gPhi) + Phi * div_A_grad_chi
    local = np.einsum("tq,tq,qa->ta", w, h, phi)
    rhs = np.zeros(space.n_dofs, dtype=complex)
    np.add.at(rhs, space.cell_dofs[cells].ravel(), local.ravel())
    W = solver.solve_load(rhs)
    return ComplexField(space, W)
