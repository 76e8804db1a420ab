"""Tagged, interface-fitted triangular meshes.

Meshes are generated by a small self-contained pipeline:

1. every interface (outer boundary, PML boundary, dD, defect boundaries) is
   a closed parametric curve sampled by a polygon with ``ceil(length / h)``
   segments;
2. interior points come from a 2:1 balanced quadtree graded by a size
   function (region sizes blended by ``h_curve + grading * distance``);
3. quadtree points that would encroach a curve segment are discarded, the
   curve vertices are added and the point set is Delaunay-triangulated;
4. any curve segment missing from the triangulation is split and the
   process repeats, so on exit every interface is a union of mesh edges.

Regions with only axis-aligned rectangles (rectangular ``D`` without
defects) take a structured tensor-grid path instead, which gives closed-form
node and element counts.

Region tags: ``0`` exterior, ``1`` PML, ``2`` background ``D``, ``3 + m``
defect ``m``. Edge tags: ``0`` outer boundary, ``1`` dD, ``2`` PML inner
boundary, ``3 + m`` boundary of defect ``m``. Tagged edges are stored in
counter-clockwise order around the region they enclose, so the outward
normal of an edge ``(p, q)`` is ``rot(q - p)`` rotated by -90 degrees.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import GeometryError
from .scenario import Disk, Ellipse, Rectangle, Scenario

log = logging.getLogger(__name__)

TAG_EXTERIOR = 0
TAG_PML = 1
TAG_D = 2
TAG_DEFECT0 = 3

EDGE_OUTER = 0
EDGE_D = 1
EDGE_PML = 2

GRADING = 0.35
# discard quadtree points closer than this fraction of a segment length
_ENCROACH = 0.55
_MAX_RECOVERY = 30


def defect_tag(m: int) -> int:
    return TAG_DEFECT0 + m


def tag_name(tag: int) -> str:
    if tag == TAG_EXTERIOR:
        return "exterior"
    if tag == TAG_PML:
        return "pml"
    if tag == TAG_D:
        return "background_D"
    return f"defect_{tag - TAG_DEFECT0}"


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with per-triangle region tags and tagged interface edges."""

    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    n_defects: int = 0
    element_degree: int = 2
    box_half_width: float | None = None
    pml_width: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def region_area(self, tag: int) -> float:
        return float(self.areas[self.tags == tag].sum())

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return self.edges[self.edge_tags == tag]

    def with_degree(self, degree: int) -> "Mesh":
        if degree not in (1, 2):
            raise ValueError(f"element degree must be 1 or 2, got {degree}")
        return Mesh(self.nodes, self.triangles, self.tags, self.edges, self.edge_tags,
                    self.n_defects, degree, self.box_half_width, self.pml_width,
                    dict(self.metadata))

    @property
    def h_max(self) -> float:
        p = self.nodes[self.triangles]
        e = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
        return float(e.max())

    def min_angle(self) -> float:
        """Smallest interior angle in degrees."""
        p = self.nodes[self.triangles]
        ang = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            c = (a * b).sum(1) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
            ang.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        return float(np.min(ang))

    # -- point location

    @cached_property
    def _buckets(self):
        lo = self.nodes.min(0)
        hi = self.nodes.max(0)
        nb = max(1, int(math.sqrt(self.n_triangles / 2)))
        size = (hi - lo) / nb
        p = self.nodes[self.triangles]
        tlo = np.floor((p.min(1) - lo) / size).astype(int).clip(0, nb - 1)
        thi = np.floor((p.max(1) - lo) / size).astype(int).clip(0, nb - 1)
        rows, cols = [], []
        for t in range(self.n_triangles):
            for i in range(tlo[t, 0], thi[t, 0] + 1):
                for j in range(tlo[t, 1], thi[t, 1] + 1):
                    rows.append(i * nb + j)
                    cols.append(t)
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        ptr = np.searchsorted(rows, np.arange(nb * nb + 1))
        return lo, size, nb, ptr, cols

    def locate_points(self, points, tol: float = 1e-12) -> np.ndarray:
        """Containing triangle per point (lowest index on ties), -1 if none."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, size, nb, ptr, cols = self._buckets
        ij = np.floor((pts - lo) / size).astype(int)
        inside_box = np.all((ij >= 0) & (ij <= nb), axis=1)
        ij = ij.clip(0, nb - 1)
        b = ij[:, 0] * nb + ij[:, 1]
        counts = np.where(inside_box, ptr[b + 1] - ptr[b], 0)
        which = np.repeat(np.arange(len(pts)), counts)
        starts = np.repeat(ptr[b], counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = cols[starts + offs]
        lam = self.barycentric(cand, pts[which])
        ok = np.all(lam >= -tol, axis=1)
        out = np.full(len(pts), self.n_triangles, dtype=np.int64)
        np.minimum.at(out, which[ok], cand[ok])
        out[out == self.n_triangles] = -1
        return out

    def barycentric(self, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
        p = self.nodes[self.triangles[tri]]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        r = pts - p[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.column_stack([1 - l1 - l2, l1, l2])

    def locate(self, p) -> tuple[int, int]:
        """Return ``(region_tag, triangle_index)`` of the triangle containing ``p``."""
        t = int(self.locate_points(np.asarray(p, dtype=float).reshape(1, 2))[0])
        if t < 0:
            raise GeometryError(f"point {tuple(np.ravel(p))} is outside the mesh")
        return int(self.tags[t]), t

    # -- export

    def to_csv(self, directory, prefix: str = "mesh") -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        fn = d / f"{prefix}_nodes.csv"
        ft = d / f"{prefix}_triangles.csv"
        idx = np.arange(self.n_nodes)
        with open(fn, "w") as f:
            f.write("index,x,y\n")
            for i, (x, y) in zip(idx, self.nodes):
                f.write(f"{i},{x:.17g},{y:.17g}\n")
        with open(ft, "w") as f:
            f.write("index,n0,n1,n2,tag\n")
            for i, (t, g) in enumerate(zip(self.triangles, self.tags)):
                f.write(f"{i},{t[0]},{t[1]},{t[2]},{tag_name(int(g))}\n")
        return [fn, ft]


# ---------------------------------------------------------------- geometry helpers


@dataclass
class _Curve:
    """Closed CCW parametric curve with a polygonal sampling."""

    point: Callable[[np.ndarray], np.ndarray]
    contains: Callable[[np.ndarray], np.ndarray]
    params: np.ndarray
    edge_tag: int
    inside_tag: int | None
    h_inside: float | None

    @property
    def vertices(self) -> np.ndarray:
        return self.point(self.params)

    def segment_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)

    def split(self, seg: np.ndarray) -> None:
        t = self.params
        t1 = np.append(t[1:], t[0] + 1.0)
        mids = 0.5 * (t[seg] + t1[seg]) % 1.0
        self.params = np.sort(np.concatenate([t, mids]))


def _shape_curve(shape, center, h, edge_tag, inside_tag, h_inside) -> _Curve:
    c = np.asarray(center, dtype=float)
    params = shape.boundary_params(h)
    scale = 1.0
    if isinstance(shape, (Disk, Ellipse)):
        # radial scaling so the regular polygon has the area of the curve
        n = len(params)
        scale = math.sqrt(2 * math.pi / (n * math.sin(2 * math.pi / n)))
    return _Curve(
        point=lambda t, s=shape, c=c, f=scale: f * s.boundary_point(t) + c,
        contains=lambda p, s=shape, c=c: s.contains(np.atleast_2d(p) - c),
        params=params,
        edge_tag=edge_tag,
        inside_tag=inside_tag,
        h_inside=h_inside,
    )


def points_in_polygon(points: np.ndarray, poly: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized."""
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    dy = np.where(y1 == y0, 1.0, y1 - y0)
    out = np.empty(len(points), dtype=bool)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        x, y = p[:, :1], p[:, 1:]
        cross = (y0 > y) != (y1 > y)
        xi = x0 + (y - y0) * (x1 - x0) / dy
        out[s:s + chunk] = (cross & (x < xi)).sum(1) % 2 == 1
    return out


def _segment_distance(p, a, b):
    ab = b - a
    t = ((p - a) * ab).sum(1) / (ab * ab).sum(1)
    q = a + t.clip(0, 1)[:, None] * ab
    return np.linalg.norm(p - q, axis=1)


# ---------------------------------------------------------------- quadtree


def _quadtree_points(lo, side, size_fn, max_level=16) -> np.ndarray:
    """Corners of a 2:1 balanced quadtree whose leaves satisfy side <= h(x)."""
    lo = np.asarray(lo, dtype=float)
    offs = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]])
    leaves: set[tuple[int, int, int]] = set()
    active = np.zeros((1, 2), dtype=np.int64)
    for level in range(max_level + 1):
        s = side / 2**level
        pts = lo + (active[:, None, :] + offs[None]) * s
        hmin = size_fn(pts.reshape(-1, 2)).reshape(len(active), 5).min(1)
        split = s > hmin
        if level == max_level:
            split[:] = False
        for i, j in active[~split]:
            leaves.add((level, int(i), int(j)))
        kids = active[split]
        if not len(kids):
            break
        active = (2 * kids[:, None, :] + np.array([[0, 0], [1, 0], [0, 1], [1, 1]])[None]).reshape(-1, 2)

    # 2:1 balance across edges
    def covering(level, i, j):
        for lv in range(level - 2, -1, -1):
            sh = level - lv
            key = (lv, i >> sh, j >> sh)
            if key in leaves:
                return key
        return None

    queue = sorted(leaves, reverse=True)
    while queue:
        nxt = []
        for (lv, i, j) in queue:
            if (lv, i, j) not in leaves:
                continue
            n = 2**lv
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < n and 0 <= b < n):
                    continue
                big = covering(lv, a, b)
                if big is None:
                    continue
                leaves.discard(big)
                bl, bi, bj = big
                for ci in (0, 1):
                    for cj in (0, 1):
                        kid = (bl + 1, 2 * bi + ci, 2 * bj + cj)
                        leaves.add(kid)
                        nxt.append(kid)
                nxt.append((lv, i, j))
        queue = sorted(set(nxt), reverse=True)

    top = max(k[0] for k in leaves)
    corners = set()
    for lv, i, j in leaves:
        sh = 1 << (top - lv)
        for ci in (0, 1):
            for cj in (0, 1):
                corners.add(((i + ci) * sh, (j + cj) * sh))
    ij = np.array(sorted(corners), dtype=float)
    return lo + ij * (side / 2**top)


# ---------------------------------------------------------------- generic generator


def _generate(outer: _Curve, regions: list[_Curve], base_tag: int, h_base: float,
              grading: float = GRADING) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    curves = [outer] + regions
    # sizes along each curve: the smaller of the two adjacent region sizes
    curve_h = []
    outside_h = h_base
    for c in curves:
        curve_h.append(c.segment_lengths().max())

    samples = [c.point(np.arange(4 * len(c.params)) / (4 * len(c.params))) for c in curves]
    trees = [cKDTree(s) for s in samples]

    def size_fn(p):
        h = np.full(len(p), outside_h)
        for c in regions:
            h[c.contains(p)] = c.h_inside
        for tree, hc in zip(trees, curve_h):
            d, _ = tree.query(p)
            h = np.minimum(h, hc + grading * d)
        return h

    ov = outer.vertices
    lo = ov.min(0)
    side = float((ov.max(0) - lo).max())
    grid = _quadtree_points(lo, side, size_fn)
    grid = grid[outer.contains(grid)]
    grid = grid[points_in_polygon(grid, ov)]

    for _ in range(_MAX_RECOVERY):
        keep = np.ones(len(grid), dtype=bool)
        tree = cKDTree(grid)
        for c in curves:
            v = c.vertices
            w = np.roll(v, -1, axis=0)
            ln = np.linalg.norm(w - v, axis=1)
            mid = 0.5 * (v + w)
            hits = tree.query_ball_point(mid, r=(0.5 + _ENCROACH) * ln.max())
            cnt = np.array([len(x) for x in hits])
            if not cnt.sum():
                continue
            seg = np.repeat(np.arange(len(v)), cnt)
            pid = np.concatenate([np.asarray(x, dtype=np.int64) for x in hits])
            dist = _segment_distance(grid[pid], v[seg], w[seg])
            keep[pid[dist < _ENCROACH * ln[seg]]] = False
        pts_grid = grid[keep]
        verts = [c.vertices for c in curves]
        offsets = np.cumsum([0] + [len(v) for v in verts])
        pts = np.vstack(verts + [pts_grid])
        pts, inv = _dedupe(pts)
        tri = Delaunay(pts).simplices.astype(np.int64)
        edge_set = _edge_keys(tri, len(pts))
        missing = False
        for k, c in enumerate(curves):
            idx = inv[offsets[k]:offsets[k + 1]]
            a, b = idx, np.roll(idx, -1)
            key = np.minimum(a, b) * len(pts) + np.maximum(a, b)
            miss = ~np.isin(key, edge_set)
            if miss.any():
                c.split(np.nonzero(miss)[0])
                missing = True
        if not missing:
            break
    else:
        raise GeometryError("interface recovery did not converge")

    # orient, drop exterior and degenerate triangles
    p = pts[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    area = np.abs(area)
    cen = p.mean(1)
    inside = points_in_polygon(cen, outer.vertices)
    tiny = area < 1e-12 * h_base**2
    if np.any(tiny & inside):
        raise GeometryError("degenerate triangle inside the meshed region")
    tri = tri[inside & ~tiny]
    cen = cen[inside & ~tiny]

    tags = np.full(len(tri), base_tag, dtype=np.int64)
    for c in regions:
        tags[points_in_polygon(cen, c.vertices)] = c.inside_tag

    used = np.unique(tri)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    nodes = pts[used]
    tri = remap[tri]

    edges, etags = [], []
    for k, c in enumerate(curves):
        idx = remap[inv[offsets[k]:offsets[k + 1]]]
        edges.append(np.column_stack([idx, np.roll(idx, -1)]))
        etags.append(np.full(len(idx), c.edge_tag, dtype=np.int64))
    return nodes, tri, tags, np.vstack(edges), np.concatenate(etags)


def _dedupe(pts):
    r = np.round(pts, 12)
    _, first, inv = np.unique(r, axis=0, return_index=True, return_inverse=True)
    order = np.sort(first)
    rank = np.empty(len(first), dtype=np.int64)
    # keep original ordering of first occurrences for determinism
    pos = np.argsort(first)
    rank[pos] = np.arange(len(first))
    return pts[order], rank[inv.ravel()]


def _edge_keys(tri, n):
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e[:, 0] * n + e[:, 1])


# ---------------------------------------------------------------- structured path


def _breaks(points_and_sizes):
    """Subdivide consecutive breakpoints [(x0, h0), (x1, h1), ...]."""
    xs = [points_and_sizes[0][0]]
    for (a, _), (b, h) in zip(points_and_sizes[:-1], points_and_sizes[1:]):
        m = max(math.ceil((b - a) / h - 1e-9), 1)
        xs.extend(a + (b - a) * np.arange(1, m + 1) / m)
    return np.asarray(xs)


def _structured(xs, ys, rects):
    """Tensor grid split along the ``(i, j) -> (i+1, j+1)`` diagonal.

    ``rects`` is a list of ``(hx, hy, edge_tag, inside_tag)`` rectangles,
    outermost first; the outermost supplies the outer boundary.
    """
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    nid = lambda i, j: i * (ny + 1) + j  # noqa: E731
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    n00, n10, n01, n11 = nid(I, J), nid(I + 1, J), nid(I, J + 1), nid(I + 1, J + 1)
    tri = np.vstack([np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01])])
    cen = nodes[tri].mean(1)
    tags = np.full(len(tri), rects[0][3], dtype=np.int64)
    for hx, hy, _, t in rects[1:]:
        tags[(np.abs(cen[:, 0]) < hx) & (np.abs(cen[:, 1]) < hy)] = t
    edges, etags = [], []
    tol = 1e-12
    for hx, hy, etag, _ in rects:
        i0 = int(np.argmin(np.abs(xs + hx)))
        i1 = int(np.argmin(np.abs(xs - hx)))
        j0 = int(np.argmin(np.abs(ys + hy)))
        j1 = int(np.argmin(np.abs(ys - hy)))
        assert abs(xs[i1] - hx) < tol and abs(ys[j1] - hy) < tol
        loop = ([nid(i1, j) for j in range(j0, j1)]
                + [nid(i, j1) for i in range(i1, i0, -1)]
                + [nid(i0, j) for j in range(j1, j0, -1)]
                + [nid(i, j0) for i in range(i0, i1)])
        loop = np.asarray(loop)
        edges.append(np.column_stack([loop, np.roll(loop, -1)]))
        etags.append(np.full(len(loop), etag, dtype=np.int64))
    return nodes, tri, tags, np.vstack(edges), np.concatenate(etags)


def structured_counts(xs_len: int, ys_len: int) -> tuple[int, int]:
    """Node and triangle counts of the structured generator for ``nx x ny`` cells."""
    return (xs_len + 1) * (ys_len + 1), 2 * xs_len * ys_len


# ---------------------------------------------------------------- public builders


def _check_defect_resolution(scenario: Scenario, defect_h):
    hs = []
    for m, d in enumerate(scenario.defects):
        hm = defect_h[m]
        r = d.shape.inradius
        if hm > r / 2:
            raise GeometryError(
                f"mesh too coarse to resolve defect {m}: local h = {hm:.4g} > radius/2 = {r / 2:.4g}"
            )
        hs.append(hm)
    return hs


def _defect_sizes(scenario, h, defect_h):
    M = len(scenario.defects)
    if defect_h is None:
        return [h] * M
    if np.isscalar(defect_h):
        return [float(defect_h)] * M
    if len(defect_h) != M:
        raise GeometryError("defect_h must be a scalar or one value per defect")
    return [float(x) for x in defect_h]


def build_mesh(scenario: Scenario, h: float, box_half_width: float, pml_width: float, *,
               h_exterior: float | None = None, defect_h=None, degree: int = 2,
               grading: float = GRADING) -> Mesh:
    """Mesh of the computational box ``[-L, L]^2`` with ``L = box_half_width + pml_width``.

    Parameters
    ----------
    scenario : Scenario
        Supplies ``D`` and the defects; coefficients are not used here.
    h : float
        Target edge length inside ``D``.
    box_half_width : float
        Half width ``b`` of the physical square; the PML occupies
        ``b < max(|x|, |y|) < b + pml_width``.
    pml_width : float
        Thickness of the PML frame.
    h_exterior : float, optional
        Target edge length outside ``D`` (defaults to ``h``).
    defect_h : float or sequence, optional
        Target edge length inside each defect (defaults to ``h``); must not
        exceed half the defect's smallest semi-axis.
    degree : {1, 2}
        Element degree carried by the mesh.

    Returns
    -------
    Mesh
    """
    if not h > 0:
        raise GeometryError(f"h must be positive, got {h}")
    if not pml_width > 0:
        raise GeometryError(f"pml_width must be positive, got {pml_width}")
    h_ext = float(h_exterior or h)
    dom = scenario.domain
    ext = dom.circumradius if not isinstance(dom, Rectangle) else max(dom.hx, dom.hy)
    margin = box_half_width - ext
    if margin < scenario.wavelength - 1e-12:
        raise GeometryError(
            f"box margin {margin:.4g} around D is below one wavelength ({scenario.wavelength:.4g})"
        )
    dh = _check_defect_resolution(scenario, _defect_sizes(scenario, h, defect_h))
    # gaps must be resolved by the finest size used around the defects
    meta = scenario.check_geometry(min([h] + dh))
    L = box_half_width + pml_width
    b = box_half_width

    if isinstance(dom, Rectangle) and not scenario.defects:
        xs = _breaks([(-L, h_ext), (-b, h_ext), (-dom.hx, h_ext), (dom.hx, h), (b, h_ext), (L, h_ext)])
        ys = _breaks([(-L, h_ext), (-b, h_ext), (-dom.hy, h_ext), (dom.hy, h), (b, h_ext), (L, h_ext)])
        nodes, tri, tags, edges, etags = _structured(
            xs, ys,
            [(L, L, EDGE_OUTER, TAG_PML), (b, b, EDGE_PML, TAG_EXTERIOR), (dom.hx, dom.hy, EDGE_D, TAG_D)])
        meta["generator"] = "structured"
        meta["grid_cells"] = [len(xs) - 1, len(ys) - 1]
    else:
        outer = _shape_curve(Rectangle(L, L), (0, 0), h_ext, EDGE_OUTER, None, None)
        regions = [
            _shape_curve(Rectangle(b, b), (0, 0), h_ext, EDGE_PML, TAG_EXTERIOR, h_ext),
            _shape_curve(dom, (0, 0), h, EDGE_D, TAG_D, h),
        ]
        for m, d in enumerate(scenario.defects):
            regions.append(_shape_curve(d.shape, d.center, dh[m], defect_tag(m), defect_tag(m), dh[m]))
        nodes, tri, tags, edges, etags = _generate(outer, regions, TAG_PML, h_ext, grading)
        meta["generator"] = "quadtree-delaunay"
    meta.update(h=h, h_exterior=h_ext, defect_h=dh)
    mesh = Mesh(nodes, tri, tags, edges, etags, len(scenario.defects), degree, b, pml_width, meta)
    log.debug("mesh: %d nodes, %d triangles (%s)", mesh.n_nodes, mesh.n_triangles, meta["generator"])
    return mesh


def build_domain_mesh(scenario: Scenario, h: float, *, defect_h=None, degree: int = 1,
                      grading: float = GRADING) -> Mesh:
    """Mesh of ``D`` alone (used by the transmission eigenvalue solver).

    Tags are ``TAG_D`` and the defect tags; the outer boundary edges carry
    ``EDGE_D``.
    """
    if not h > 0:
        raise GeometryError(f"h must be positive, got {h}")
    dom = scenario.domain
    dh = _check_defect_resolution(scenario, _defect_sizes(scenario, h, defect_h))
    # gaps must be resolved by the finest size used around the defects
    meta = scenario.check_geometry(min([h] + dh))
    if isinstance(dom, Rectangle) and not scenario.defects:
        xs = _breaks([(-dom.hx, h), (dom.hx, h)])
        ys = _breaks([(-dom.hy, h), (dom.hy, h)])
        nodes, tri, tags, edges, etags = _structured(xs, ys, [(dom.hx, dom.hy, EDGE_D, TAG_D)])
        meta["generator"] = "structured"
        meta["grid_cells"] = [len(xs) - 1, len(ys) - 1]
    else:
        outer = _shape_curve(dom, (0, 0), h, EDGE_D, None, None)
        regions = [_shape_curve(d.shape, d.center, dh[m], defect_tag(m), defect_tag(m), dh[m])
                   for m, d in enumerate(scenario.defects)]
        nodes, tri, tags, edges, etags = _generate(outer, regions, TAG_D, h, grading)
        meta["generator"] = "quadtree-delaunay"
    meta.update(h=h, defect_h=dh)
    return Mesh(nodes, tri, tags, edges, etags, len(scenario.defects), degree, None, None, meta)


def build_inclusion_mesh(inclusion: Disk | Ellipse, radius: float, h_inclusion: float,
                         h_outer: float, *, degree: int = 2, grading: float = GRADING) -> Mesh:
    """Disk of the given radius around one centered inclusion.

    Used by the cell problems for the corrector and polarization tensor:
    tag ``TAG_D`` outside the inclusion, ``TAG_DEFECT0`` inside; the
    circle ``|y| = radius`` carries ``EDGE_OUTER``.
    """
    if radius <= inclusion.circumradius + h_inclusion:
        raise GeometryError("truncation radius must exceed the inclusion size")
    outer = _shape_curve(Disk(radius), (0, 0), h_outer, EDGE_OUTER, None, None)
    regions = [_shape_curve(inclusion, (0, 0), h_inclusion, TAG_DEFECT0, TAG_DEFECT0, h_inclusion)]
    nodes, tri, tags, edges, etags = _generate(outer, regions, TAG_D, h_outer, grading)
    meta = {"generator": "quadtree-delaunay", "radius": radius,
            "h_inclusion": h_inclusion, "h_outer": h_outer}
    return Mesh(nodes, tri, tags, edges, etags, 1, degree, None, None, meta)


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement with straight midpoints; tags and interfaces carried over."""
    tri = mesh.triangles
    n = mesh.n_nodes
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    es = np.sort(e, axis=1)
    keys, inv = np.unique(es[:, 0] * n + es[:, 1], return_inverse=True)
    inv = inv.ravel()
    a, b = keys // n, keys % n
    mids = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
    nodes = np.vstack([mesh.nodes, mids])
    T = len(tri)
    m01, m12, m20 = (n + inv[:T], n + inv[T:2 * T], n + inv[2 * T:])
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    new = np.vstack([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ])
    tags = np.tile(mesh.tags, 4)
    ek = np.sort(mesh.edges, axis=1)
    pos = np.searchsorted(keys, ek[:, 0] * n + ek[:, 1])
    em = n + pos
    edges = np.empty((2 * len(mesh.edges), 2), dtype=np.int64)
    edges[0::2] = np.column_stack([mesh.edges[:, 0], em])
    edges[1::2] = np.column_stack([em, mesh.edges[:, 1]])
    etags = np.repeat(mesh.edge_tags, 2)
    meta = dict(mesh.metadata)
    meta["refinements"] = meta.get("refinements", 0) + 1
    return Mesh(nodes, new, tags, edges, etags, mesh.n_defects, mesh.element_degree,
                mesh.box_half_width, mesh.pml_width, meta)
