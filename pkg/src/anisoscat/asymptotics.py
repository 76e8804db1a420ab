"""Small-defect asymptotics: cell problems, polarization data and eigenvalue shifts.

Cell problems are posed in local coordinates ``y = (x - z) / eps`` around a
reference inclusion ``B`` on a truncated disk ``|y| < R_t`` with zero
Dirichlet data. With ``At = A_m`` in ``B`` and ``A`` outside they read

    int At grad u . grad phi + s u phi = int_B (A_m - A) g . grad phi
                                       = int_dB [(A_m - A) g . nu] phi ds.

``s = A_min`` and ``g = grad w(z)`` give the screened corrector ``w^(1)``;
``s = 0`` and ``g = -e_i`` give the potentials ``chi_i`` of the polarization
tensor ``M = int_B (A_m - A)(I + grad chi)``.

Sign conventions of the eigenvalue formula are documented at
:func:`predict_eigenvalue_shift`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla
from scipy.special import i0, i1, j0, j1

from .errors import NumericalError, SolverError, ValidationError
from .fem import FESpace
from .mesh import EDGE_OUTER, TAG_DEFECT0, Mesh, build_inclusion_mesh, defect_tag
from .scenario import AnisotropicTensor, Disk, Ellipse
from .tev import TevSystem, TransmissionEigenpair, apply_A_inverse, bessel_disk_eigenvalues

log = logging.getLogger(__name__)

CORRECTOR_RT_FACTOR = 10.0
POLARIZATION_RT_FACTOR = 20.0
DECAY_TOL = 1e-6
Q_STABILITY_TOL = 5e-3
M_STABILITY_TOL = 2e-2


def _matrix(a) -> np.ndarray:
    if isinstance(a, AnisotropicTensor):
        return a.matrix
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(2)
    return a


def _check_spd(a, name):
    if abs(a[0, 1] - a[1, 0]) > 1e-14 * abs(a).max() or np.linalg.eigvalsh(a).min() <= 0:
        raise ValidationError(f"{name} must be symmetric positive definite")


def _diameter(shape) -> float:
    return 2.0 * shape.circumradius


# ---------------------------------------------------------------- cell problems


@dataclass(frozen=True, eq=False)
class CellSolution:
    """FEM solution of one cell problem on a truncated disk."""

    space: FESpace
    coeffs: np.ndarray
    shape: Disk | Ellipse
    A: np.ndarray
    A_m: np.ndarray
    g: np.ndarray
    screening: float
    R_t: float
    metadata: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def evaluate(self, points):
        return self.space.evaluate(self.coeffs, points)

    @property
    def decay_ratio(self) -> float:
        """Max of ``|u|`` on the outermost layer over the max on the whole disk."""
        r = np.hypot(*self.space.dof_coords.T)
        h_out = self.mesh.metadata.get("h_outer", self.mesh.h_max)
        ring = r >= self.R_t - 2.0 * h_out
        top = np.abs(self.coeffs).max()
        return float(np.abs(self.coeffs[ring]).max() / top) if top > 0 else 0.0


def cell_mesh(shape, R_t: float, h: float, h_outer: float | None = None, degree: int = 2) -> Mesh:
    if h_outer is None:
        h_outer = min(max(4 * h, 0.02 * R_t), 0.05 * R_t)
    mesh = build_inclusion_mesh(shape, R_t, h, h_outer, degree=degree)
    mesh.metadata["h_outer"] = h_outer
    return mesh


def solve_cell(shape, A, A_m, g, screening: float, R_t: float, h: float,
               h_outer: float | None = None, mesh: Mesh | None = None) -> CellSolution:
    """Solve the cell problem with data ``g`` (a vector or a ``(2, c)`` block of columns)."""
    A, A_m = _matrix(A), _matrix(A_m)
    _check_spd(A, "A")
    _check_spd(A_m, "A_m")
    g = np.asarray(g, dtype=complex if np.iscomplexobj(g) else float)
    if not np.all(np.isfinite(g)):
        raise ValidationError("cell problem data must be finite")
    if mesh is None:
        mesh = cell_mesh(shape, R_t, h, h_outer)
    space = FESpace(mesh)
    tab = np.stack([A, A_m])
    inside = (mesh.tags == TAG_DEFECT0).astype(int)
    S = space.stiffness(tab[inside])
    if screening:
        S = S + screening * space.mass()
    G = g.reshape(2, -1)
    dA = A_m - A
    loads = []
    for c in range(G.shape[1]):
        vec = dA @ G[:, c]

        def F(x, tags, vec=vec):
            out = np.zeros(x.shape, dtype=vec.dtype)
            out[tags == TAG_DEFECT0] = vec
            return out

        loads.append(space.load_grad(F))
    rhs = np.column_stack(loads)
    bd = space.boundary_dofs(EDGE_OUTER)
    free = np.setdiff1d(np.arange(space.n_dofs), bd)
    u = np.zeros(rhs.shape, dtype=rhs.dtype)
    if np.any(rhs):
        try:
            lu = spla.splu(S[free][:, free].tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"cell problem is singular: {exc}") from None
        u[free] = lu.solve(np.ascontiguousarray(rhs[free]))
    coeffs = u[:, 0] if g.ndim == 1 else u
    return CellSolution(space, coeffs, shape, A, A_m, g, float(screening), float(R_t),
                        {"n_dofs": space.n_dofs})


def solve_corrector(shape, A, A_m, grad_data, R_t: float | None = None, h: float = 0.1,
                    A_min: float | None = None, check: bool = True, **kw) -> CellSolution:
    """Screened corrector ``w^(1)`` for the gradient ``grad_data`` of the background field.

    ``A_min`` defaults to the smallest eigenvalue of ``A`` and ``R_t`` to ten
    inclusion diameters. With ``check`` the solution must have decayed to
    ``DECAY_TOL`` of its maximum in the outermost element layer.
    """
    A = _matrix(A)
    if A_min is None:
        A_min = float(np.linalg.eigvalsh(A).min())
    if R_t is None:
        R_t = CORRECTOR_RT_FACTOR * _diameter(shape)
    sol = solve_cell(shape, A, A_m, grad_data, A_min, R_t, h, **kw)
    if check:
        ratio = sol.decay_ratio
        sol.metadata["decay_ratio"] = ratio
        if ratio > DECAY_TOL:
            raise NumericalError(f"corrector has not decayed at R_t = {R_t:.4g} "
                                 f"(ratio {ratio:.2e}); use a larger truncation radius")
    return sol


def _interface_edges(mesh: Mesh):
    """Interface edges with the inclusion triangle on their inner side."""
    e = mesh.edges_with_tag(TAG_DEFECT0)
    n = mesh.n_nodes
    tri = mesh.triangles
    ins = np.nonzero(mesh.tags == TAG_DEFECT0)[0]
    lookup = {}
    for t in ins:
        a, b, c = tri[t]
        for p, q in ((a, b), (b, c), (c, a)):
            lookup[min(p, q) * n + max(p, q)] = t
    owner = np.array([lookup[min(p, q) * n + max(p, q)] for p, q in e])
    return e, owner


def boundary_flux_integral(sol: CellSolution, C) -> np.ndarray:
    """``int_dB [C grad u^- . nu] ds`` with the trace from inside ``B``."""
    C = _matrix(C)
    mesh = sol.mesh
    e, owner = _interface_edges(mesh)
    P0, P1 = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    L = np.hypot(*(P1 - P0).T)
    nu = np.column_stack([(P1 - P0)[:, 1], -(P1 - P0)[:, 0]]) / L[:, None]
    third = mesh.nodes[mesh.triangles[owner]].mean(1)
    flip = np.einsum("ed,ed->e", nu, 0.5 * (P0 + P1) - third) < 0
    nu[flip] *= -1
    gx, gw = np.polynomial.legendre.leggauss(3)
    s = 0.5 * (gx + 1)
    coeffs = sol.coeffs if sol.coeffs.ndim == 2 else sol.coeffs[:, None]
    total = np.zeros(coeffs.shape[1], dtype=coeffs.dtype)
    for si, wi in zip(s, gw):
        pts = P0 + si * (P1 - P0)
        for c in range(coeffs.shape[1]):
            _, grad = sol.space.evaluate(coeffs[:, c], pts, owner)
            flux = ((grad @ C.T) * nu).sum(1)
            total[c] += np.sum(0.5 * wi * L * flux)
    return total if sol.coeffs.ndim == 2 else total[0]


def polarization_q(sol: CellSolution) -> complex:
    """``q = int_dB [(A - A_m) grad conj(w^(1)) . nu] ds`` (inner trace)."""
    conj = CellSolution(sol.space, np.conj(sol.coeffs), sol.shape, sol.A, sol.A_m, sol.g,
                        sol.screening, sol.R_t, sol.metadata)
    return complex(boundary_flux_integral(conj, sol.A - sol.A_m))


def corrector_q(shape, A, A_m, grad_data, R_t=None, h=0.1, check_doubling=True, **kw) -> dict:
    """``q`` together with the change under doubling of ``R_t``."""
    R_t = R_t or CORRECTOR_RT_FACTOR * _diameter(shape)
    sol = solve_corrector(shape, A, A_m, grad_data, R_t, h, **kw)
    q = polarization_q(sol)
    out = {"q": q, "R_t": R_t, "stability": None, "corrector": sol}
    if check_doubling and abs(q) > 0:
        q2 = polarization_q(solve_corrector(shape, A, A_m, grad_data, 2 * R_t, h, **kw))
        out["stability"] = abs(q2 - q) / abs(q2)
        if out["stability"] > Q_STABILITY_TOL:
            raise NumericalError(f"q changes by {100 * out['stability']:.2f}% when R_t is doubled")
    return out


# ---------------------------------------------------------------- polarization tensor


@dataclass(frozen=True)
class PolarizationData:
    M: np.ndarray
    q: complex | None = None
    index: int = 0
    provenance: str = "numeric"
    R_t: float | None = None
    stability: float | None = None

    def to_row(self) -> str:
        q = self.q if self.q is not None else complex("nan")
        st = float("nan") if self.stability is None else 100 * self.stability
        rt = float("nan") if self.R_t is None else self.R_t
        vals = [self.M[0, 0], self.M[0, 1], self.M[1, 1], q.real, q.imag, rt, st]
        return f"{self.index}," + ",".join(f"{v:.17g}" for v in vals)


def polarization_to_csv(items, path) -> Path:
    path = Path(path)
    lines = ["m,M11,M12,M22,re_q,im_q,R_t,stability_percent"] + [p.to_row() for p in items]
    path.write_text("\n".join(lines) + "\n")
    return path


def _tensor_from_cell(sol: CellSolution, area: float) -> np.ndarray:
    dA = sol.A_m - sol.A
    _, w, _, g = sol.space.quad(4)
    ins = sol.mesh.tags == TAG_DEFECT0
    M = area * dA.copy()
    for j in range(2):
        c = sol.coeffs[:, j]
        gc = np.einsum("ta,tqad->tqd", c[sol.space.cell_dofs], g)
        M[:, j] += dA @ np.einsum("tq,tqd->d", w[ins], gc[ins])
    return M


def polarization_tensor(shape, A, A_m, R_t: float | None = None, h: float | None = None,
                        check: bool = True, index: int = 0, **kw) -> PolarizationData:
    """Polarization tensor ``M = int_B (A_m - A)(I + grad chi)`` of the reference inclusion.

    ``chi_j`` solves the unscreened cell problem with ``g = -e_j``; the
    far-field decay is emulated by zero data at ``R_t`` (default twenty
    diameters), and with ``check`` the result must change by less than 2 %
    when ``R_t`` is doubled.
    """
    A, A_m = _matrix(A), _matrix(A_m)
    diam = _diameter(shape)
    R_t = R_t or POLARIZATION_RT_FACTOR * diam
    h = h or shape.inradius / 8
    if np.array_equal(A, A_m):
        return PolarizationData(np.zeros((2, 2)), None, index, "numeric", R_t, 0.0)
    sol = solve_cell(shape, A, A_m, -np.eye(2), 0.0, R_t, h, **kw)
    M = _tensor_from_cell(sol, shape.area)
    stability = None
    if check:
        sol2 = solve_cell(shape, A, A_m, -np.eye(2), 0.0, 2 * R_t, h, **kw)
        M2 = _tensor_from_cell(sol2, shape.area)
        stability = float(np.abs(M2 - M).max() / np.abs(M2).max())
        if stability > M_STABILITY_TOL:
            raise NumericalError(f"polarization tensor changes by {100 * stability:.2f}% "
                                 "when R_t is doubled")
    return PolarizationData(M, None, index, "numeric", R_t, stability)


def disk_polarization(a: float, a1: float, radius: float = 1.0) -> np.ndarray:
    """Closed form ``2 a (a1 - a) / (a1 + a) |B| I`` for isotropic media."""
    return 2 * a * (a1 - a) / (a1 + a) * math.pi * radius**2 * np.eye(2)


def ellipse_polarization(a: float, a1: float, semi_a: float, semi_b: float,
                         rotation: float = 0.0) -> np.ndarray:
    """Closed form for an isotropic ellipse in an isotropic background."""
    k = a1 / a
    area = math.pi * semi_a * semi_b
    s = semi_a + semi_b
    D = a * (k - 1) * area * np.diag([s / (semi_a + k * semi_b), s / (semi_b + k * semi_a)])
    c, sn = math.cos(rotation), math.sin(rotation)
    R = np.array([[c, -sn], [sn, c]])
    return R @ D @ R.T


def boundary_integral_polarization(shape, a: float, a1: float, n_points: int = 256) -> np.ndarray:
    """Polarization tensor of an isotropic smooth inclusion by a Nystrom method.

    With the single-layer potential ``chi_i = S[mu_i]``, the transmission
    conditions give ``(lam I - K^*) mu_i = nu_i``, ``lam = (a1 + a) / (2 (a1 - a))``,
    and ``M_ij = a int_dB y_j mu_i ds``. The kernel of ``K^*`` is smooth
    with diagonal value ``curvature / (4 pi)``, so the trapezoidal rule
    converges spectrally.
    """
    if a1 == a:
        return np.zeros((2, 2))
    if not isinstance(shape, (Disk, Ellipse)):
        raise ValidationError("boundary integral oracle needs a smooth (disk or ellipse) inclusion")
    t = np.arange(n_points) / n_points
    y = shape.boundary_point(t)
    dt = 1e-6
    dy = (shape.boundary_point(t + dt) - shape.boundary_point(t - dt)) / (2 * dt)
    ddy = (shape.boundary_point(t + dt) - 2 * y + shape.boundary_point(t - dt)) / dt**2
    speed = np.hypot(*dy.T)
    nu = np.column_stack([dy[:, 1], -dy[:, 0]]) / speed[:, None]
    curv = (dy[:, 0] * ddy[:, 1] - dy[:, 1] * ddy[:, 0]) / speed**3
    ds = speed / n_points
    diff = y[:, None, :] - y[None, :, :]
    r2 = (diff**2).sum(-1)
    np.fill_diagonal(r2, 1.0)
    Kmat = np.einsum("ijd,id->ij", diff, nu) / (2 * math.pi * r2)
    np.fill_diagonal(Kmat, curv / (4 * math.pi))
    Kmat = Kmat * ds[None, :]
    lam = (a1 + a) / (2 * (a1 - a))
    mu = np.linalg.solve(lam * np.eye(n_points) - Kmat, nu)
    return a * np.einsum("pj,pi,p->ij", y, mu, ds)


# ---------------------------------------------------------------- eigenvalue formula


@dataclass(frozen=True)
class PointData:
    """Background eigendata at one defect center."""

    w_tau: complex
    grad_w_tau: np.ndarray
    w: complex
    grad_w: np.ndarray


@dataclass(frozen=True)
class EigenData:
    """``tau``, point values at the centers and the denominator ``1 - C(x_tau; A0^{-1} x_tau)``."""

    tau: float
    points: tuple
    denominator: float
    centers: tuple = ()
    flag: str = "simple"


def fem_eigendata(system: TevSystem, pair: TransmissionEigenpair, centers) -> EigenData:
    """Eigendata from a FEM eigenpair, normalized to ``||(w_tau, v_tau)||_X = 1``."""
    x = pair.x / math.sqrt(system.inner(pair.x, pair.x).real)
    y = apply_A_inverse(system, x)
    den = 1.0 - float(x @ (system.C_mat @ y))
    field_t = system.field(x)
    field_a = system.field(y)
    pts = np.atleast_2d(np.asarray(centers, dtype=float))
    wt, gwt, _, _ = field_t.evaluate(pts)
    wa, gwa, _, _ = field_a.evaluate(pts)
    data = tuple(PointData(wt[i], gwt[i], wa[i], gwa[i]) for i in range(len(pts)))
    return EigenData(pair.tau, data, den, tuple(map(tuple, pts)), pair.flag)


@dataclass(frozen=True)
class DiskEigendata:
    """Closed-form radial eigendata of the unit disk with ``A = alpha I``, ``n = 1``."""

    alpha: float
    k: float
    c1: float
    c2: float
    scale: float = 1.0

    def w_k(self, r):
        s = math.sqrt(self.alpha)
        return self.scale * j0(self.k) * j0(self.k * r / s)

    def v_k(self, r):
        s = math.sqrt(self.alpha)
        return self.scale * j0(self.k / s) * j0(self.k * r)

    def dw_k(self, r):
        s = math.sqrt(self.alpha)
        return -self.scale * j0(self.k) * j1(self.k * r / s) * self.k / s

    def dv_k(self, r):
        s = math.sqrt(self.alpha)
        return -self.scale * j0(self.k / s) * j1(self.k * r) * self.k

    def w(self, r):
        return self.c1 * i0(r) + self.w_k(r) / self.alpha

    def v(self, r):
        return self.c2 * i0(r) - self.v_k(r)

    def dw(self, r):
        return self.c1 * i1(r) + self.dw_k(r) / self.alpha

    def dv(self, r):
        return self.c2 * i1(r) - self.dv_k(r)

    def boundary_residuals(self) -> tuple[float, float]:
        """Residuals of ``w - v = 0`` and ``alpha w' - v' = w_k' + v_k'`` at ``r = 1``."""
        return (float(self.w(1.0) - self.v(1.0)),
                float(self.alpha * self.dw(1.0) - self.dv(1.0) - self.dw_k(1.0) - self.dv_k(1.0)))


def _radial_quad(n=200):
    x, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * (x + 1)
    return r, 0.5 * w * 2 * math.pi * r


def disk_background_eigendata(alpha: float, k: float, normalize: bool = True) -> DiskEigendata:
    """Radial eigenfunctions and ``(w, v) = A0^{-1}(w_k, v_k)`` for the unit disk.

    Here ``A_min = alpha`` and ``(w, v) = (c1 I0 + w_k / alpha, c2 I0 - v_k)``
    where ``I0`` is the modified Bessel function of the first kind. The
    constants solve the boundary conditions of the auxiliary problem,

        [I0(1)          -I0(1) ] [c1]   [-(1/alpha + 1) w_k(1)]
        [alpha I0'(1)  -I0'(1) ] [c2] = [ 0                   ]

    where the zero in the second row follows from the flux condition
    ``alpha w_k'(1) = v_k'(1)`` of the eigenfunction. With ``normalize`` the
    eigenfunction pair has unit ``H^1 x H^1`` norm.
    """
    if alpha == 1:
        raise ValidationError("no contrast: alpha = 1")
    base = DiskEigendata(alpha, k, 0.0, 0.0)
    scale = 1.0
    if normalize:
        r, w = _radial_quad()
        nrm = np.sum(w * (base.w_k(r)**2 + base.dw_k(r)**2 + base.v_k(r)**2 + base.dv_k(r)**2))
        scale = 1.0 / math.sqrt(nrm)
    base = DiskEigendata(alpha, k, 0.0, 0.0, scale)
    Mx = np.array([[i0(1.0), -i0(1.0)], [alpha * i1(1.0), -i1(1.0)]])
    if abs(np.linalg.det(Mx)) < 1e-14:
        raise NumericalError("boundary system of the disk auxiliary problem is singular")
    rhs = np.array([-(1 / alpha + 1) * base.w_k(1.0), 0.0])
    c1, c2 = np.linalg.solve(Mx, rhs)
    return DiskEigendata(alpha, k, float(c1), float(c2), scale)


def disk_eigendata(alpha: float, k: float, centers) -> EigenData:
    """:class:`EigenData` of the closed-form radial pair at the given centers."""
    d = disk_background_eigendata(alpha, k)
    r, wq = _radial_quad()
    C = np.sum(wq * (alpha * d.w_k(r) * d.w(r) - d.v_k(r) * d.v(r)))
    pts = []
    for z in np.atleast_2d(np.asarray(centers, dtype=float)):
        rz = float(np.hypot(*z))
        e = z / rz if rz > 0 else np.zeros(2)
        pts.append(PointData(d.w_k(rz), d.dw_k(rz) * e, d.w(rz), d.dw(rz) * e))
    cs = tuple(map(tuple, np.atleast_2d(centers)))
    return EigenData(k * k, tuple(pts), float(1.0 - C), cs)


def disk_radial_eigendata(alpha: float, centers, count: int = 2, window=(0.0, 20.0)) -> list[EigenData]:
    ks = bessel_disk_eigenvalues(alpha, window)[:count]
    return [disk_eigendata(alpha, k, centers) for k in ks]


@dataclass(frozen=True)
class DefectStrength:
    """Strength of one defect as it enters the eigenvalue formula."""

    contrast: np.ndarray        # (A_m - A) |B_m|, a 2x2 tensor
    q: complex = 0.0


def _terms(pd: PointData):
    grad_pair = np.outer(pd.grad_w_tau, np.conj(pd.grad_w))
    return grad_pair, pd.w_tau * np.conj(pd.w)


# The eigenvalue formula pairs the weighted contrast (A_m - A)|B| with this
# sign, i.e. the gradient term reads (A - A_m)|B| grad w_tau . grad conj(w).
# Both signs scale as eps^2; only this one agrees in sign with directly
# computed FEM eigenvalue shifts (see :func:`shift_audit`).
CONTRAST_SIGN = -1.0


def predict_eigenvalue_shift(data: EigenData, strengths, eps: float, d: int = 2,
                             index_contrast: bool = False) -> tuple[float, float]:
    """Predicted perturbed eigenvalue ``tau_eps`` and the evaluated denominator.

    ``tau_eps = tau + tau eps^d sum_m [grad w_tau(z_m) . (A - A_m)|B_m| grad conj(w(z_m))
    + q_m w_tau(z_m) conj(w(z_m))] / (1 - C((w_tau, v_tau); (w, v)))``

    ``strengths[m].contrast`` is the weighted contrast ``(A_m - A)|B_m|``;
    it enters with :data:`CONTRAST_SIGN`.
    """
    if data.flag != "simple":
        raise ValidationError("formula requires simple eigenvalue")
    if index_contrast:
        raise ValidationError("index contrast is not covered by the formula: "
                              "the adjoint convergence rate is too slow when n_m != n")
    if abs(data.denominator) < 1e-6:
        raise NumericalError(f"denominator {data.denominator:.3e} is too small")
    if len(strengths) != len(data.points):
        raise ValidationError("one strength per defect center is required")
    s = 0.0
    for pd, st in zip(data.points, strengths):
        gp, vp = _terms(pd)
        s += CONTRAST_SIGN * np.sum(np.asarray(st.contrast) * gp) + st.q * vp
    shift = data.tau * eps**d * s / data.denominator
    if abs(np.imag(shift)) > 1e-10 * max(abs(shift), 1e-300):
        log.warning("predicted shift has imaginary part %.3e", np.imag(shift))
    return float(data.tau + np.real(shift)), float(data.denominator)


def pencil_first_order_shift(system: TevSystem, pair: TransmissionEigenpair, centers,
                             polarization, eps: float) -> float:
    """First-order shift of a simple eigenvalue of the symmetric pencil ``K x = tau M x``.

    ``delta tau = eps^2 sum_m grad w_tau(z_m) . M_m grad w_tau(z_m) / (x . M x)``
    with the polarization tensors ``M_m`` of the reference shapes.
    """
    x = pair.x
    den = float(np.real(x @ (system.M @ x)))
    if abs(den) < 1e-14 * float(np.real(np.vdot(x, x))):
        raise NumericalError("eigenvector is nearly M-isotropic; first-order term undefined")
    _, g, _, _ = system.field(x).evaluate(np.atleast_2d(np.asarray(centers, dtype=float)))
    num = sum(gi @ np.asarray(Mm) @ gi for gi, Mm in zip(g, polarization))
    return float(np.real(eps**2 * num / den))


def shift_audit(measured: float, data: EigenData, contrast, eps: float, d: int = 2) -> dict:
    """Compare a measured shift with both sign conventions of the gradient term (``q = 0``)."""
    out = {"measured": measured - data.tau}
    for name, sign in (("A_m-A", 1.0), ("A-A_m", -1.0)):
        s = sum(sign * np.sum(np.asarray(c) * _terms(pd)[0]) for pd, c in zip(data.points, contrast))
        out[name] = float(np.real(data.tau * eps**d * s / data.denominator))
    out["agrees"] = "A-A_m" if np.sign(out["A-A_m"]) == np.sign(out["measured"]) else "A_m-A"
    return out


@dataclass(frozen=True)
class StrengthEstimate:
    contrast: float             # X1 = (A_m - a)|B|, isotropic reduction
    q: float                    # X2
    residual: float
    cond: float
    area: float | None = None
    ill_conditioned: bool = False

    @property
    def contrast_per_area(self) -> float:
        """``X1 / |B|``: the material contrast ``A_m - A`` itself."""
        if not self.area:
            raise ValidationError("reference area unknown")
        return self.contrast / self.area

    def to_csv(self, path) -> Path:
        path = Path(path)
        vals = [self.contrast, self.q, self.residual, self.cond]
        extra = [self.contrast_per_area] if self.area else [float("nan")]
        path.write_text("X1,X2,residual,cond,X1_per_area\n"
                        + ",".join(f"{v:.17g}" for v in vals + extra) + "\n")
        return path


def recover_strength(measured, data: list[EigenData], eps: float, d: int = 2,
                     area: float | None = None) -> StrengthEstimate:
    """Solve the eigenvalue-shift equations for ``X1 = (A_m - A)|B|`` and ``X2 = q``.

    One defect (the first center of each :class:`EigenData`); the gradient
    pairing is taken in the isotropic reduction ``X1 grad w_tau . grad w``
    with the sign :data:`CONTRAST_SIGN`.
    Two eigenvalues give a square system, more give least squares.
    """
    measured = np.asarray(measured, dtype=float)
    if len(measured) != len(data) or len(data) < 2:
        raise ValidationError("need at least two measured eigenvalues with matching eigendata")
    rows, rhs = [], []
    for tm, ed in zip(measured, data):
        if ed.flag != "simple":
            raise ValidationError("formula requires simple eigenvalue")
        pd = ed.points[0]
        gp, vp = _terms(pd)
        f = ed.tau * eps**d / ed.denominator
        rows.append([CONTRAST_SIGN * np.real(f * np.trace(gp)), np.real(f * vp)])
        rhs.append(tm - ed.tau)
    G = np.array(rows)
    b = np.array(rhs)
    nr = np.linalg.norm(G, axis=1)
    if np.any(nr == 0):
        raise ValidationError("an equation has no dependence on the unknowns")
    cos = abs(G[0] @ G[1]) / (nr[0] * nr[1])
    if 1 - cos < 1e-12:
        raise ValidationError("equations are nearly identical; choose other eigenvalues")
    cond = float(np.linalg.cond(G))
    sol, *_ = np.linalg.lstsq(G, b, rcond=None)
    res = float(np.linalg.norm(G @ sol - b))
    if cond > 1e8:
        log.warning("strength recovery is ill-conditioned (cond %.2e)", cond)
    return StrengthEstimate(float(sol[0]), float(sol[1]), res, cond, area, cond > 1e8)


# ---------------------------------------------------------------- correctors in D


def h1_norm(space: FESpace, coeffs) -> float:
    return math.hypot(space.l2_norm(coeffs), space.h1_seminorm(coeffs))


def defect_corrector(system: TevSystem, scenario, w) -> np.ndarray:
    """First-order correction of ``A_eps^{-1}`` around the background solution ``w``.

    ``system`` is the perturbed pencil. The correction solves
    ``A_eps c = sum_m int_{D_m} (A - A_m) grad w(z_m) . grad phi1`` on X(D),
    i.e. the corrector with the gradient frozen at each defect center.
    Returns the packed vector ``(w1, v1)``.
    """
    space = system.space
    A = scenario.background.matrix
    loads = []
    for m, d in enumerate(scenario.defects):
        _, gz = space.evaluate(w, np.asarray([d.center]))
        loads.append((defect_tag(m), (A - d.tensor.matrix) @ gz[0]))

    def F(x, tags):
        out = np.zeros(x.shape, dtype=complex if np.iscomplexobj(w) else float)
        for tag, vec in loads:
            out[tags == tag] = vec
        return out

    load_w = space.load_grad(F)
    full = np.concatenate([load_w, np.zeros(space.n_dofs, dtype=load_w.dtype)])
    return spla.spsolve(system.A_mat.tocsc(), system.P.T @ full)


def cell_corrector_in_d(space: FESpace, scenario, w, h: float = 0.1) -> np.ndarray:
    """Corrector ``eps w(z) w^(1)((x - z)/eps)`` built from the screened cell problem.

    This is the cell corrector with unscaled screening ``A_min`` and the
    factor ``w(z)``, transplanted into ``D``; it is kept for comparison with
    :func:`defect_corrector`. Returns nodal coefficients of ``w1`` on ``space``.
    """
    A = scenario.background.matrix
    X = space.dof_coords
    out = np.zeros(space.n_dofs, dtype=complex if np.iscomplexobj(w) else float)
    for d in scenario.defects:
        z = np.asarray(d.center)
        wz, gz = space.evaluate(w, z[None])
        ref = _reference_shape(d)
        sol = solve_corrector(ref, A, d.tensor.matrix, np.real(gz[0]), h=h, check=False)
        Y = (X - z) / d.epsilon
        inside = np.hypot(Y[:, 0], Y[:, 1]) < 0.999 * sol.R_t
        vals, _ = sol.evaluate(Y[inside])
        out[inside] += d.epsilon * wz[0] * vals
    return out


def _reference_shape(d):
    s = d.shape
    if isinstance(s, Disk):
        return Disk(s.radius / d.epsilon)
    return Ellipse(s.a / d.epsilon, s.b / d.epsilon, s.rotation)


def eoc(errors) -> list[float]:
    """``log2(E_j / E_{j+1})`` for errors at parameters halved at each step."""
    E = np.asarray(errors, dtype=float)
    if len(E) < 2:
        raise ValidationError("need at least two errors")
    if np.any(~(E > 0)):
        raise ValidationError("errors must be positive")
    return [float(v) for v in np.log2(E[:-1] / E[1:])]
