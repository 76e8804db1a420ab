"""Lagrange P1/P2 finite elements on affine triangles.

Small vectorized toolkit used by the forward solver, the transmission
eigenvalue engine and the cell problems. Coefficients may be constants per
triangle or callables evaluated at quadrature points, which is how the PML
stretching enters.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .mesh import Mesh

# Dunavant rules in barycentric coordinates; weights sum to one.
_A4, _B4 = 0.445948490915965, 0.091576213509771
_W4A, _W4B = 0.223381589678011, 0.109951743655322
QUADRATURE = {
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
    4: (np.array([[1 - 2 * _A4, _A4, _A4], [_A4, 1 - 2 * _A4, _A4], [_A4, _A4, 1 - 2 * _A4],
                  [1 - 2 * _B4, _B4, _B4], [_B4, 1 - 2 * _B4, _B4], [_B4, _B4, 1 - 2 * _B4]]),
        np.array([_W4A] * 3 + [_W4B] * 3)),
}


def basis(degree: int, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shape functions and their derivatives with respect to barycentrics.

    Returns ``phi`` with shape ``(Q, nloc)`` and ``dphi`` with shape
    ``(Q, nloc, 3)``. Local P2 ordering: vertices 0, 1, 2 then edges
    (0, 1), (1, 2), (2, 0).
    """
    lam = np.atleast_2d(lam)
    Q = len(lam)
    if degree == 1:
        return lam.copy(), np.broadcast_to(np.eye(3), (Q, 3, 3)).copy()
    l0, l1, l2 = lam.T
    phi = np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                           4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0])
    d = np.zeros((Q, 6, 3))
    d[:, 0, 0] = 4 * l0 - 1
    d[:, 1, 1] = 4 * l1 - 1
    d[:, 2, 2] = 4 * l2 - 1
    d[:, 3, 0], d[:, 3, 1] = 4 * l1, 4 * l0
    d[:, 4, 1], d[:, 4, 2] = 4 * l2, 4 * l1
    d[:, 5, 2], d[:, 5, 0] = 4 * l0, 4 * l2
    return phi, d


class FESpace:
    """Continuous Lagrange space of degree 1 or 2 on a :class:`Mesh`."""

    def __init__(self, mesh: Mesh, degree: int | None = None):
        self.mesh = mesh
        self.degree = degree or mesh.element_degree
        if self.degree not in (1, 2):
            raise ValueError(f"unsupported degree {self.degree}")
        tri = mesh.triangles
        n = mesh.n_nodes
        if self.degree == 1:
            self.cell_dofs = tri.copy()
            self.n_dofs = n
            self._edge_keys = None
        else:
            e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
            es = np.sort(e, axis=1)
            keys, inv = np.unique(es[:, 0] * n + es[:, 1], return_inverse=True)
            inv = inv.ravel()
            T = len(tri)
            self._edge_keys = keys
            self.cell_dofs = np.column_stack([tri, n + inv[:T], n + inv[T:2 * T], n + inv[2 * T:]])
            self.n_dofs = n + len(keys)
        p = mesh.nodes[tri]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 0):
            raise GeometryError("mesh has triangles with non-positive signed area")
        self.area = 0.5 * det
        # gradients of barycentric coordinates, shape (T, 3, 2)
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        self.grad_lambda = np.stack([-g1 - g2, g1, g2], axis=1)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    @cached_property
    def dof_coords(self) -> np.ndarray:
        nodes = self.mesh.nodes
        if self.degree == 1:
            return nodes.copy()
        n = len(nodes)
        a, b = self._edge_keys // n, self._edge_keys % n
        return np.vstack([nodes, 0.5 * (nodes[a] + nodes[b])])

    def edge_dof(self, a, b) -> np.ndarray:
        """DOF index of the midpoint of mesh edges ``(a, b)`` (degree 2 only)."""
        n = self.mesh.n_nodes
        k = np.minimum(a, b) * n + np.maximum(a, b)
        pos = np.searchsorted(self._edge_keys, k)
        if np.any(self._edge_keys[pos.clip(0, len(self._edge_keys) - 1)] != k):
            raise KeyError("not a mesh edge")
        return n + pos

    def boundary_dofs(self, edge_tag: int) -> np.ndarray:
        e = self.mesh.edges_with_tag(edge_tag)
        d = [np.unique(e)]
        if self.degree == 2:
            d.append(self.edge_dof(e[:, 0], e[:, 1]))
        return np.unique(np.concatenate(d))

    # -- quadrature data

    def quad(self, qdeg: int | None = None):
        """Quadrature points ``(T, Q, 2)``, weights ``(T, Q)`` and basis data."""
        qdeg = qdeg or 2 * self.degree
        lam, w = QUADRATURE[2 if qdeg <= 2 else 4]
        p = self.mesh.nodes[self.mesh.triangles]
        x = np.einsum("qi,tid->tqd", lam, p)
        phi, dphi = basis(self.degree, lam)
        grad = np.einsum("qaj,tjd->tqad", dphi, self.grad_lambda)
        return x, w[None, :] * self.area[:, None], phi, grad

    def _coo(self, local: np.ndarray) -> sp.csr_matrix:
        cd = self.cell_dofs
        rows = np.repeat(cd, self.nloc, axis=1).ravel()
        cols = np.tile(cd, (1, self.nloc)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs,) * 2).tocsr()

    def stiffness(self, coef=None, qdeg: int | None = None) -> sp.csr_matrix:
        """Matrix of ``int C grad(u) . grad(v)``.

        ``coef`` is ``None`` (identity), an array ``(T, 2, 2)`` of constant
        tensors, or a callable ``coef(x, tags) -> (T, Q, 2, 2)`` evaluated at
        quadrature points ``x`` of shape ``(T, Q, 2)``.
        """
        x, w, _, g = self.quad(qdeg)
        if coef is None:
            local = np.einsum("tq,tqad,tqbd->tab", w, g, g)
        elif callable(coef):
            C = coef(x, self.mesh.tags)
            local = np.einsum("tq,tqad,tqde,tqbe->tab", w, g, C, g)
        else:
            C = np.asarray(coef)
            local = np.einsum("tq,tqad,tde,tqbe->tab", w, g, C, g)
        return self._coo(local)

    def mass(self, coef=None, qdeg: int | None = None) -> sp.csr_matrix:
        """Matrix of ``int c u v`` with ``c`` None, per-triangle ``(T,)`` or callable."""
        x, w, phi, _ = self.quad(qdeg)
        if coef is None:
            c = w
        elif callable(coef):
            c = w * coef(x, self.mesh.tags)
        else:
            c = w * np.asarray(coef)[:, None]
        local = np.einsum("tq,qa,qb->tab", c, phi, phi)
        return self._coo(local)

    def load(self, f, qdeg: int | None = None) -> np.ndarray:
        """Vector of ``int f v`` with ``f(x, tags) -> (T, Q)``."""
        x, w, phi, _ = self.quad(qdeg)
        local = np.einsum("tq,tq,qa->ta", w, f(x, self.mesh.tags), phi)
        return self._scatter(local)

    def load_grad(self, F, qdeg: int | None = None) -> np.ndarray:
        """Vector of ``int F . grad(v)`` with ``F(x, tags) -> (T, Q, 2)``."""
        x, w, _, g = self.quad(qdeg)
        local = np.einsum("tq,tqd,tqad->ta", w, F(x, self.mesh.tags), g)
        return self._scatter(local)

    def _scatter(self, local):
        out = np.zeros(self.n_dofs, dtype=np.result_type(local.dtype, float))
        np.add.at(out, self.cell_dofs.ravel(), local.ravel())
        return out

    # -- interpolation and evaluation

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f(points) -> values``."""
        return np.asarray(f(self.dof_coords))

    def evaluate(self, coeffs, points, triangles=None):
        """Values and gradients of a discrete function at arbitrary points.

        Returns ``(values, gradients)`` with shapes ``(P,)`` and ``(P, 2)``.
        Points outside the mesh raise :class:`GeometryError`.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if triangles is None:
            triangles = self.mesh.locate_points(pts)
        if np.any(triangles < 0):
            bad = pts[np.nonzero(triangles < 0)[0][0]]
            raise GeometryError(f"point {tuple(bad)} lies outside the mesh")
        lam = self.mesh.barycentric(triangles, pts)
        phi, dphi = self._basis_many(lam)
        c = np.asarray(coeffs)[self.cell_dofs[triangles]]
        val = np.einsum("pa,pa->p", phi, c)
        grad = np.einsum("paj,pjd,pa->pd", dphi, self.grad_lambda[triangles], c)
        return val, grad

    def _basis_many(self, lam):
        if self.degree == 1:
            return lam, np.broadcast_to(np.eye(3), (len(lam), 3, 3))
        return basis(2, lam)

    # -- norms

    def l2_norm(self, coeffs, mask=None) -> float:
        x, w, phi, _ = self.quad(4)
        u = np.asarray(coeffs)[self.cell_dofs] @ phi.T
        v = (w * np.abs(u) ** 2)
        if mask is not None:
            v = v[mask]
        return float(np.sqrt(v.sum()))

    def h1_seminorm(self, coeffs, mask=None) -> float:
        x, w, _, g = self.quad(4)
        du = np.einsum("ta,tqad->tqd", np.asarray(coeffs)[self.cell_dofs], g)
        v = w * (np.abs(du) ** 2).sum(-1)
        if mask is not None:
            v = v[mask]
        return float(np.sqrt(v.sum()))


def restrict_mesh(mesh: Mesh, keep: np.ndarray) -> tuple[Mesh, np.ndarray]:
    """Submesh of the triangles selected by ``keep`` and the node map old -> new."""
    tri = mesh.triangles[keep]
    used = np.unique(tri)
    remap = np.full(mesh.n_nodes, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    e = mesh.edges
    ok = np.all(remap[e] >= 0, axis=1)
    sub = Mesh(mesh.nodes[used], remap[tri], mesh.tags[keep], remap[e[ok]], mesh.edge_tags[ok],
               mesh.n_defects, mesh.element_degree, mesh.box_half_width, mesh.pml_width,
               dict(mesh.metadata))
    return sub, remap
