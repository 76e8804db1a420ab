"""Transmission eigenvalues of an anisotropic medium.

The interior transmission problem

    div(A grad w) + k^2 n w = 0,   Delta v + k^2 v = 0   in D,
    w = v,   nu . A grad w = d_nu v                      on dD,

is discretized on the space ``X(D) = {(w, v) in H^1 x H^1 : w - v in H^1_0}``
by Lagrange elements, with ``w`` and ``v`` sharing one unknown per boundary
DOF. With ``tau = k^2`` the weak form is the linear pencil ``K x = tau M x``:

    K = int A grad w . grad phi1 - grad v . grad phi2
    M = int n w phi1 - v phi2

The module also holds the coercive auxiliary operator used by the
perturbation theory (``A_mat``, ``C_mat``), the Bessel oracle for isotropic
disks, and the linear-sampling wavenumber sweep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import bisect, newton
from scipy.special import j0, j1

from .errors import BudgetExceeded, SolverError, ValidationError
from .farfield import MultistaticMatrix
from .fem import FESpace
from .forward import BACKGROUND, medium_tables
from .mesh import EDGE_D, Mesh
from .scenario import Scenario

log = logging.getLogger(__name__)

SIMPLE = "simple"
CLUSTERED = "clustered"

REAL_TOL = 1e-6
RESIDUAL_TOL = 1e-8
# relative gap below which neighbouring eigenvalues are flagged as a cluster
CLUSTER_TOL = 1e-3
# dense QZ is used up to this dimension, shift-and-invert Arnoldi above
DENSE_CAP = 500


@dataclass(frozen=True, eq=False)
class TevSystem:
    """Reduced matrices on ``X(D)``; unknowns are ``[w (all DOFs), v (interior DOFs)]``."""

    space: FESpace
    K: sp.csr_matrix
    M: sp.csr_matrix
    A_mat: sp.csr_matrix
    C_mat: sp.csr_matrix
    R: sp.csr_matrix
    P: sp.csr_matrix
    interior: np.ndarray
    boundary: np.ndarray
    A_min: float
    metadata: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.space.n_dofs

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Full coefficient vectors ``(w, v)`` of a reduced vector."""
        y = self.P @ np.asarray(x)
        return y[:self.n], y[self.n:]

    def pack(self, w, v) -> np.ndarray:
        """Reduced vector of ``(w, v)``; the boundary values are taken from ``w``."""
        w, v = np.asarray(w), np.asarray(v)
        return np.concatenate([w, v[self.interior]])

    def field(self, x) -> "PairedField":
        w, v = self.split(x)
        return PairedField(self.space, w, v)

    def inner(self, x, y) -> complex:
        """``(x, y)_X`` in ``H^1 x H^1`` (conjugate-linear in ``y``)."""
        return complex(np.asarray(x) @ (self.R @ np.conj(y)))


@dataclass(frozen=True, eq=False)
class PairedField:
    """A pair ``(w, v)`` on the mesh of ``D`` with ``w = v`` on ``dD``."""

    space: FESpace
    w: np.ndarray
    v: np.ndarray

    def evaluate(self, points):
        """Values and gradients of ``w`` and ``v``: ``(w, grad w, v, grad v)``."""
        tri = self.space.mesh.locate_points(np.atleast_2d(points))
        wv, wg = self.space.evaluate(self.w, points, tri)
        vv, vg = self.space.evaluate(self.v, points, tri)
        return wv, wg, vv, vg


@dataclass(frozen=True, eq=False)
class TransmissionEigenpair:
    tau: float
    x: np.ndarray
    residual: float
    flag: str
    index: int = 0

    @property
    def k(self) -> float:
        return math.sqrt(self.tau)

    @property
    def simple(self) -> bool:
        return self.flag == SIMPLE


def assemble_tev(mesh: Mesh, A_tab, n_tab, A_min: float, degree: int | None = None) -> TevSystem:
    """Assemble ``K``, ``M``, ``A_mat``, ``C_mat`` and the ``X(D)`` Riesz matrix.

    ``A_tab[tag]`` and ``n_tab[tag]`` hold the coefficients per region tag.
    ``A_mat`` is the form ``int A grad w . grad phi1 + A_min w phi1 -
    (grad v . grad phi2 + v phi2)`` and ``C_mat`` is ``int A_min w phi1 -
    v phi2``, so that ``K = A_mat - C_mat``.
    """
    if not A_min > 0:
        raise ValidationError(f"A_min must be positive, got {A_min}")
    A_tab = np.asarray(A_tab, dtype=float)
    n_tab = np.asarray(n_tab, dtype=float)
    used = np.unique(mesh.tags)
    for t in used:
        a = A_tab[t]
        if abs(a[0, 1] - a[1, 0]) > 1e-14 * abs(a).max() or np.linalg.eigvalsh(a).min() <= 0:
            raise ValidationError(f"coefficient tensor of region {t} is not symmetric positive definite")
        if not n_tab[t] > 0:
            raise ValidationError(f"index of region {t} must be positive")
    space = FESpace(mesh, degree)
    S_A = space.stiffness(A_tab[mesh.tags])
    S_I = space.stiffness()
    M_n = space.mass(n_tab[mesh.tags])
    M_1 = space.mass()
    n = space.n_dofs
    boundary = space.boundary_dofs(EDGE_D)
    is_b = np.zeros(n, dtype=bool)
    is_b[boundary] = True
    interior = np.nonzero(~is_b)[0]
    ni = len(interior)
    # prolongation [w; v_int] -> [w; v]
    rows = np.concatenate([np.arange(n), n + interior, n + boundary])
    cols = np.concatenate([np.arange(n), n + np.arange(ni), boundary])
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(2 * n, n + ni))

    def reduce(a, b):
        return (P.T @ sp.block_diag([a, b], format="csr") @ P).tocsr()

    K = reduce(S_A, -S_I)
    M = reduce(M_n, -M_1)
    A_mat = reduce(S_A + A_min * M_1, -(S_I + M_1))
    C_mat = reduce(A_min * M_1, -M_1)
    R = reduce(S_I + M_1, S_I + M_1)
    meta = {"n_dofs": n, "interior": ni, "boundary": len(boundary), "degree": space.degree}
    log.debug("TEV system: dim %d (%d interior, %d boundary DOFs)", n + ni, ni, len(boundary))
    return TevSystem(space, K, M, A_mat, C_mat, R, P, interior, boundary, float(A_min), meta)


def scenario_tables(scenario: Scenario, mesh: Mesh, variant: str = BACKGROUND):
    n_tags = max(int(mesh.tags.max()) + 1, 3)
    return medium_tables(scenario, variant, n_tags)


def assemble_scenario(scenario: Scenario, mesh: Mesh, variant: str = BACKGROUND,
                      degree: int | None = None) -> TevSystem:
    """:func:`assemble_tev` with ``A_min`` the smallest eigenvalue of the background ``A``."""
    if len(scenario.defects) != mesh.n_defects:
        raise ValidationError("mesh was not built for this scenario (defect count differs)")
    A_tab, n_tab = scenario_tables(scenario, mesh, variant)
    system = assemble_tev(mesh, A_tab, n_tab, scenario.background.min_eig, degree)
    system.metadata.update(variant=variant, regime=scenario.regime)
    return system


# ---------------------------------------------------------------- eigenvalues


def real_eigenvalues(system: TevSystem, window, count: int | None = None,
                     method: str = "auto", cluster_tol: float = CLUSTER_TOL) -> list[TransmissionEigenpair]:
    """Real eigenvalues ``tau`` of ``K x = tau M x`` inside ``window = (lo, hi)``.

    Pairs with ``|Im tau| / |tau| > REAL_TOL`` are discarded. Eigenvectors are
    real, of unit Euclidean norm, with the first entry above ``1e-8``
    positive. At most ``count`` of the smallest values are returned.
    """
    lo, hi = (float(t) for t in window)
    if not 0 < lo < hi:
        raise ValidationError(f"eigenvalue window must satisfy 0 < lo < hi, got ({lo}, {hi})")
    if method == "auto":
        method = "dense" if system.dim <= DENSE_CAP else "shift-invert"
    if method == "dense":
        if system.dim > DENSE_CAP:
            raise BudgetExceeded(f"dense eigensolve refused: dimension {system.dim} > {DENSE_CAP}")
        taus, X = _dense_eigs(system)
    elif method == "shift-invert":
        taus, X = _shift_invert_eigs(system, lo, hi)
    else:
        raise ValidationError(f"unknown eigen method {method!r}")
    keep = (np.abs(taus.imag) <= REAL_TOL * np.abs(taus)) & (taus.real >= lo) & (taus.real <= hi)
    pairs = []
    for tau, x in zip(taus[keep].real, X[:, keep].T):
        x = _realify(x)
        tau, x, res = _polish(system, tau, x)
        pairs.append((tau, x, res))
    pairs.sort(key=lambda p: p[0])
    pairs = _dedupe(pairs)
    out = []
    for i, (tau, x, res) in enumerate(pairs):
        near = [abs(tau - t) <= cluster_tol * abs(tau) for j, (t, _, _) in enumerate(pairs) if j != i]
        flag = CLUSTERED if any(near) else SIMPLE
        if res > RESIDUAL_TOL:
            log.warning("eigenpair tau = %.10g has residual %.2e", tau, res)
        out.append(TransmissionEigenpair(float(tau), x, float(res), flag, i))
    if count is not None:
        out = out[:count]
    log.info("found %d real transmission eigenvalues in (%.6g, %.6g)", len(out), lo, hi)
    return out


def _dense_eigs(system):
    K = system.K.toarray()
    M = system.M.toarray()
    w, V = sla.eig(K, M, homogeneous_eigvals=True)
    alpha, beta = w
    finite = np.abs(beta) > 1e-12 * np.abs(alpha).clip(1e-300)
    taus = np.full(alpha.shape, np.inf, dtype=complex)
    taus[finite] = alpha[finite] / beta[finite]
    return taus[finite], V[:, finite]


def _shift_invert_eigs(system, lo, hi, nev: int = 24):
    """Eigenvalues of the pencil nearest to shifts covering ``[lo, hi]``.

    For a shift ``s`` the operator ``(K - s M)^{-1} M`` has eigenvalues
    ``1/(tau - s)``; the ``nev`` largest give every ``tau`` within a disk
    around ``s``, and uncovered parts of the window are recursed on.
    """
    K, M = system.K.tocsc(), system.M.tocsc()
    taus, vecs = [], []
    todo = [(lo, hi)]
    solves = 0
    while todo:
        a, b = todo.pop()
        s = 0.5 * (a + b) * (1 + 1e-7)
        try:
            lu = spla.splu((K - s * M).tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"shifted pencil is singular at {s:.6g}: {exc}") from None
        op = spla.LinearOperator(K.shape, matvec=lambda x, lu=lu: lu.solve(M @ x), dtype=float)
        k = min(nev, system.dim - 2)
        mu, V = spla.eigs(op, k=k, which="LM", tol=1e-12, maxiter=5000)
        solves += 1
        nz = np.abs(mu) > 0
        t = s + 1.0 / mu[nz]
        taus.append(t)
        vecs.append(V[:, nz])
        radius = np.abs(t - s).max() if len(mu) == k else np.inf
        if radius < 0.5 * (b - a) and solves < 200:
            if s - radius > a:
                todo.append((a, s - radius))
            if s + radius < b:
                todo.append((s + radius, b))
    return np.concatenate(taus), np.hstack(vecs)


def _realify(x):
    i = np.argmax(np.abs(x))
    x = x * (abs(x[i]) / x[i])
    x = x.real
    return x / np.linalg.norm(x)


def _polish(system, tau, x):
    """Symmetric Rayleigh quotient and up to two inverse-iteration steps."""
    K, M = system.K, system.M

    def rq(x):
        return float(x @ (K @ x)) / float(x @ (M @ x))

    def resid(t, x):
        Kx = K @ x
        return float(np.linalg.norm(Kx - t * (M @ x)) / max(np.linalg.norm(Kx), 1e-300))

    t = rq(x)
    r = resid(t, x)
    for _ in range(2):
        if r <= 0.1 * RESIDUAL_TOL:
            break
        try:
            lu = spla.splu((K - t * (1 + 1e-12) * M).tocsc(), permc_spec="COLAMD")
            y = lu.solve(M @ x)
        except RuntimeError:
            break
        if not np.all(np.isfinite(y)):
            break
        y /= np.linalg.norm(y)
        t2 = rq(y)
        r2 = resid(t2, y)
        if r2 >= r:
            break
        t, x, r = t2, y, r2
    x = x / np.linalg.norm(x)
    nz = np.nonzero(np.abs(x) > 1e-8)[0]
    if len(nz) and x[nz[0]] < 0:
        x = -x
    return t, x, r


def _dedupe(pairs, tol=1e-9):
    out = []
    for p in pairs:
        if out and abs(p[0] - out[-1][0]) <= tol * abs(p[0]) and abs(abs(p[1] @ out[-1][1]) - 1) < 1e-6:
            continue
        out.append(p)
    return out


def eigenpairs_to_csv(pairs, path) -> Path:
    path = Path(path)
    lines = ["index,tau,k,residual,flag"]
    for i, p in enumerate(pairs):
        lines.append(f"{i},{p.tau:.17g},{p.k:.17g},{p.residual:.17g},{p.flag}")
    path.write_text("\n".join(lines) + "\n")
    return path


def match_eigenpair(system: TevSystem, reference: TransmissionEigenpair,
                    candidates: list[TransmissionEigenpair]) -> TransmissionEigenpair:
    """Candidate whose eigenvector overlaps most with the reference in the ``M`` pairing."""
    if not candidates:
        raise ValidationError("no candidate eigenpairs to match")
    ov = [abs(float(c.x @ (system.M @ reference.x))) / (1 + abs(c.tau - reference.tau) / reference.tau)
          for c in candidates]
    return candidates[int(np.argmax(ov))]


# ---------------------------------------------------------------- auxiliary solver


def apply_A_inverse(system: TevSystem, rhs) -> np.ndarray:
    """Reduced vector of ``A^{-1} rhs``: solves ``A_mat x = R rhs``.

    ``rhs`` is a reduced vector (or a matrix of columns). The result is the
    element ``x`` of ``X(D)`` with ``a(x, y) = (rhs, y)_X`` for every ``y``.
    """
    regime = system.metadata.get("regime")
    if regime not in (None, "min>1", "max<1"):
        log.warning("contrast is not uniformly above or below 1: the auxiliary problem may be ill-posed")
    lu = _A_factor(system)
    b = system.R @ np.asarray(rhs, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    return lu.solve(np.ascontiguousarray(b))


def _A_factor(system):
    lu = system._cache.get("A_lu")
    if lu is None:
        try:
            lu = spla.splu(system.A_mat.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"auxiliary operator is singular: {exc}") from None
        diag = np.abs(lu.U.diagonal())
        if diag.min() <= 1e-14 * diag.max():
            raise SolverError("auxiliary operator is numerically singular")
        system._cache["A_lu"] = lu
    return lu


# ---------------------------------------------------------------- Bessel oracle


def disk_determinant(k, alpha: float):
    """``d(k) = sqrt(a) J0(k) J1(k/sqrt(a)) - J0(k/sqrt(a)) J1(k)``; zero at radial eigenvalues."""
    s = math.sqrt(alpha)
    k = np.asarray(k, dtype=float)
    return s * j0(k) * j1(k / s) - j0(k / s) * j1(k)


def bessel_disk_eigenvalues(alpha: float, window=(0.0, 10.0), samples_per_unit: int = 200,
                            xtol: float = 1e-12) -> list[float]:
    """Radial transmission wavenumbers of the unit disk with ``A = alpha I``, ``n = 1``.

    Radial eigenfunctions are ``w = J0(k) J0(k r / sqrt(alpha))`` and
    ``v = J0(k / sqrt(alpha)) J0(k r)``; ``w(1) = v(1)`` holds for every ``k``
    and the flux condition ``alpha w'(1) = v'(1)`` reduces to ``d(k) = 0``.
    Roots are bracketed by sign changes and refined by bisection; each is
    cross-checked with the secant method.
    """
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if alpha == 1:
        raise ValidationError("no contrast: d = 0 identically for alpha = 1")
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValidationError("empty wavenumber window")
    lo = max(lo, 1e-3)
    n = max(int((hi - lo) * samples_per_unit), 16)
    ks = np.linspace(lo, hi, n + 1)
    d = disk_determinant(ks, alpha)
    roots = []
    for a, b, da, db in zip(ks[:-1], ks[1:], d[:-1], d[1:]):
        if da == 0:
            roots.append(float(a))
            continue
        if da * db > 0:
            continue
        r = bisect(lambda k: float(disk_determinant(k, alpha)), a, b, xtol=xtol, maxiter=200)
        sec = newton(lambda k: float(disk_determinant(k, alpha)), 0.5 * (a + b), tol=1e-13, maxiter=100)
        if abs(sec - r) > 1e-9 * max(1.0, r):
            log.warning("secant and bisection disagree at k = %.12g (%.3e)", r, abs(sec - r))
        dd = (disk_determinant(r + 1e-6, alpha) - disk_determinant(r - 1e-6, alpha)) / 2e-6
        if abs(dd) < 1e-10:
            raise SolverError(f"root k = {r:.10g} of the disk determinant is not simple")
        roots.append(float(r))
    return roots


# ---------------------------------------------------------------- LSM sweep


@dataclass(frozen=True)
class KSweep:
    ks: np.ndarray
    norms: np.ndarray
    z: tuple
    alpha: float
    peaks: np.ndarray          # indices into ks

    @property
    def peak_wavenumbers(self) -> np.ndarray:
        return self.ks[self.peaks]

    def to_csv(self, path) -> Path:
        path = Path(path)
        is_peak = np.zeros(len(self.ks), dtype=int)
        is_peak[self.peaks] = 1
        lines = ["k,norm,is_peak"] + [f"{k:.17g},{g:.17g},{p}" for k, g, p in zip(self.ks, self.norms, is_peak)]
        path.write_text("\n".join(lines) + "\n")
        return path


def lsm_norm(F: MultistaticMatrix, z, alpha: float) -> float:
    """``||g||`` for ``(alpha + F^* F) g = F^* (e^{i k z . xhat_i})``."""
    Fm = F.entries
    xhat = F.directions.vectors
    rhs = np.exp(1j * F.k * (xhat @ np.asarray(z, dtype=float)))
    FH = Fm.conj().T
    g = np.linalg.solve(alpha * np.eye(F.N) + FH @ Fm, FH @ rhs)
    return float(np.linalg.norm(g))


def lsm_ksweep(matrices: list[MultistaticMatrix], z, alpha: float,
               prominence: float = 2.0) -> KSweep:
    """Regularized sampling norms over a wavenumber sweep and their peaks.

    A grid point is a peak when it is a strict local maximum and exceeds
    ``prominence`` times the larger of the minima on either side of it.
    """
    if not alpha > 0:
        raise ValidationError("regularization parameter must be positive")
    if not matrices:
        raise ValidationError("empty wavenumber sweep")
    N = matrices[0].N
    if any(F.N != N for F in matrices):
        raise ValidationError("all far-field matrices must share one direction set")
    ks = np.array([F.k for F in matrices], dtype=float)
    if np.any(np.diff(ks) <= 0):
        raise ValidationError("wavenumbers must be strictly increasing")
    norms = np.array([lsm_norm(F, z, alpha) for F in matrices])
    if not np.all(np.isfinite(norms)) or np.any(norms <= 0):
        raise SolverError("non-finite or zero sampling norm in the sweep")
    peaks = []
    for i in range(1, len(ks) - 1):
        if not (norms[i] > norms[i - 1] and norms[i] >= norms[i + 1]):
            continue
        left = norms[:i].min()
        right = norms[i + 1:].min()
        if norms[i] >= prominence * max(left, right):
            peaks.append(i)
    return KSweep(ks, norms, tuple(float(c) for c in z), float(alpha), np.asarray(peaks, dtype=int))
