"""MUSIC imaging of small defects from a multistatic response matrix.

A probe point ``z`` is accepted when its test vector lies in the signal
space of ``F F^*``. Test vectors are built from the background total field:

* monopole ``g_z[i] = u_b(z, -xhat_i)``
* dipole ``g_{z,b}[i] = b . grad u_b(z, -xhat_i)``
* combined ``g_{z,(1,b)} = g_z + g_{z,b}``

and the indicator is ``I(z) = 1 / sum_{j > r} |(g, w_j)|^2`` over the noise
eigenvectors ``w_j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .farfield import MultistaticMatrix
from .forward import ProbeTable

log = logging.getLogger(__name__)

MONOPOLE = "monopole"
DIPOLE = "dipole"
COMBINED = "combined"
MODES = (MONOPOLE, DIPOLE, COMBINED)

# default accuracy floor of noiseless simulated data, relative to ||F||_2
REL_FLOOR = 1e-3


def signal_rank(eigenvalues: np.ndarray, floor: float = 0.0) -> int:
    """Largest relative gap ``lambda_r / lambda_{r+1}`` of a descending spectrum.

    Only ranks ``r`` with ``lambda_r > floor`` are candidates, so the rank
    never exceeds the number of eigenvalues above the floor.
    """
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    if lam[0] <= 0:
        raise ValidationError("no signal space: F is zero")
    above = int(np.sum(lam > floor))
    if above == 0:
        raise ValidationError("no signal space: all eigenvalues are below the noise floor")
    if len(lam) == 1:
        return 1
    tiny = lam[0] * 1e-300
    ratios = lam[:-1] / np.maximum(lam[1:], tiny)
    return int(np.argmax(ratios[:above])) + 1


def noise_subspace(F: MultistaticMatrix | np.ndarray, rank_rule="gap",
                   noise_level: float | None = None,
                   rel_floor: float = REL_FLOOR) -> tuple[np.ndarray, int]:
    """Orthonormal basis of the noise space of ``F F^*`` and the signal rank.

    ``rank_rule`` is ``"gap"`` or an integer fixing the rank. The gap rule
    considers eigenvalues above ``max(noise_level, rel_floor * ||F||_2)^2``,
    where ``noise_level`` is the spectral size of the added noise and
    ``rel_floor`` models the accuracy of noiseless simulated data.
    """
    if isinstance(F, MultistaticMatrix):
        if noise_level is None:
            noise_level = F.noise_level
        F = F.entries
    F = np.asarray(F, dtype=complex)
    N = F.shape[0]
    if N < 2:
        raise ValidationError("MUSIC needs at least two directions")
    if not np.any(F):
        raise ValidationError("no signal space: F is zero")
    lam, W = np.linalg.eigh(F @ F.conj().T)
    lam, W = lam[::-1], W[:, ::-1]
    if rank_rule == "gap":
        floor = max(noise_level or 0.0, rel_floor * np.sqrt(max(lam[0], 0.0)))
        r = signal_rank(lam, floor**2)
    elif isinstance(rank_rule, (int, np.integer)):
        r = int(rank_rule)
        if not 1 <= r < N:
            raise ValidationError(f"fixed rank must lie in [1, {N - 1}], got {r}")
    else:
        raise ValidationError(f"unknown rank rule {rank_rule!r}")
    return W[:, r:], r


def test_vectors(table: ProbeTable, mode: str = COMBINED, b=(1.0, 0.0)) -> np.ndarray:
    """Test vectors for every probe point, shape ``(P, N)``.

    ``table.directions`` must be the negated observation directions.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    b = np.asarray(b, dtype=float)
    if mode != MONOPOLE and abs(np.linalg.norm(b) - 1) > 1e-12:
        raise ValidationError("polarization b must be a unit vector")
    mono = table.values
    dip = np.einsum("pnd,d->pn", table.gradients, b)
    if mode == MONOPOLE:
        return mono
    if mode == DIPOLE:
        return dip
    return mono + dip


@dataclass(frozen=True, eq=False)
class IndicatorGrid:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray          # (len(xs), len(ys)); nan where invalid
    valid: np.ndarray
    rank: int
    b: tuple[float, float]
    mode: str
    metadata: dict = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return float(max(self.xs[1] - self.xs[0], self.ys[1] - self.ys[0]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["x,y,I"]
        for i, x in enumerate(self.xs):
            for j, y in enumerate(self.ys):
                lines.append(f"{x:.17g},{y:.17g},{self.values[i, j]:.17g}")
        path.write_text("\n".join(lines) + "\n")
        return path


def grid_points(window, resolution: int):
    (x0, x1), (y0, y1) = window
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return xs, ys, np.column_stack([X.ravel(), Y.ravel()])


def music_indicator(F: MultistaticMatrix, table: ProbeTable, window, resolution: int,
                    b=(1.0, 0.0), mode: str = COMBINED, rank_rule="gap",
                    inside=None) -> IndicatorGrid:
    """MUSIC indicator on a regular lattice over ``window = ((x0, x1), (y0, y1))``.

    ``table`` must hold the probe values at the lattice points (in the order
    of :func:`grid_points`) for the directions ``-xhat_i``. ``inside`` is an
    optional predicate marking lattice points inside ``D``; others are
    flagged invalid.
    """
    xs, ys, pts = grid_points(window, resolution)
    if table.values.shape != (len(pts), F.N):
        raise ValidationError("probe table does not match the grid and direction set")
    Wn, r = noise_subspace(F, rank_rule)
    G = test_vectors(table, mode, b)
    proj = G.conj() @ Wn
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        vals = np.where(denom > 0, 1.0 / denom, np.inf)
    valid = np.isfinite(vals)
    if inside is not None:
        valid &= np.asarray(inside(pts), dtype=bool)
    vals = np.where(valid, vals, np.nan)
    shape = (len(xs), len(ys))
    log.debug("MUSIC indicator: rank %d, mode %s, b = %s", r, mode, tuple(b))
    return IndicatorGrid(xs, ys, vals.reshape(shape), valid.reshape(shape), r,
                         tuple(float(x) for x in b), mode)


@dataclass(frozen=True)
class Peaks:
    points: np.ndarray
    scores: np.ndarray
    incomplete: bool = False

    def __len__(self):
        return len(self.scores)

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["x,y,score"] + [f"{p[0]:.17g},{p[1]:.17g},{s:.17g}"
                                 for p, s in zip(self.points, self.scores)]
        path.write_text("\n".join(lines) + "\n")
        return path


def estimate_centers(grid: IndicatorGrid, expected_count: int | None = None,
                     min_prominence: float = 2.0) -> Peaks:
    """Local maxima of the indicator with quadratic sub-grid refinement.

    A lattice point is a peak when it is at least as large as its eight
    neighbours and strictly larger than one of them, and its value exceeds
    ``min_prominence`` times the median of the valid values. The offset is
    refined by fitting parabolas to ``log I`` along each axis.
    """
    V = grid.values
    nx, ny = V.shape
    P = np.full((nx + 2, ny + 2), -np.inf)
    P[1:-1, 1:-1] = np.where(grid.valid, V, -np.inf)
    core = P[1:-1, 1:-1]
    ge = np.ones_like(core, dtype=bool)
    gt = np.zeros_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            nb = P[1 + di:nx + 1 + di, 1 + dj:ny + 1 + dj]
            ge &= core >= nb
            gt |= core > nb
    med = np.nanmedian(V[grid.valid]) if grid.valid.any() else np.inf
    cand = np.argwhere(ge & gt & grid.valid & (core > min_prominence * med))
    pts, scores = [], []
    dx = grid.xs[1] - grid.xs[0]
    dy = grid.ys[1] - grid.ys[0]
    for i, j in cand:
        x = grid.xs[i] + dx * _parabola_offset(P[i:i + 3, j + 1])
        y = grid.ys[j] + dy * _parabola_offset(P[i + 1, j:j + 3])
        pts.append((x, y))
        scores.append(V[i, j])
    order = np.argsort(scores, kind="stable")[::-1]
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)[order]
    scores = np.asarray(scores, dtype=float)[order]
    incomplete = False
    if expected_count is not None:
        if len(scores) < expected_count:
            incomplete = True
            log.warning("found %d peaks, %d requested", len(scores), expected_count)
        pts, scores = pts[:expected_count], scores[:expected_count]
    return Peaks(pts, scores, incomplete)


def _parabola_offset(f3) -> float:
    if not np.all(np.isfinite(f3)) or np.any(f3 <= 0):
        return 0.0
    a, b, c = np.log(f3)
    den = a - 2 * b + c
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
