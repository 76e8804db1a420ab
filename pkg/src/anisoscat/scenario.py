"""Scenario records: media, defects and the probing setup.

Everything here is immutable. A :class:`Scenario` describes a bounded
anisotropic medium ``D`` (constant tensor ``A`` and index ``n``) embedded in
free space, with a list of small defects, each carrying its own constant
coefficients. Outside ``D`` the medium is the identity / unity by
construction, so nothing outside ``D`` is ever stored.

Scenario files are JSON documents tagged with the schema string
``"anisoscat-scenario/1"``::

    {
      "schema": "anisoscat-scenario/1",
      "name": "two-voids",
      "domain": {"shape": "rectangle", "half_widths": [2, 2]},
      "background": {"A": [[0.5, 0], [0, 0.5]], "n": 5},
      "defects": [
        {"center": [1, 1], "shape": {"shape": "disk", "radius": 0.3},
         "A": [[1, 0], [0, 1]], "n": 1}
      ],
      "wavenumber": 1.0, "n_directions": 20, "noise_level": 0.0, "seed": 0
    }

Domains are centered at the origin.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, ValidationError

SCHEMA = "anisoscat-scenario/1"

REGIME_MIN_GT_1 = "min>1"
REGIME_MAX_LT_1 = "max<1"
REGIME_UNSUPPORTED = "tev_theory_unsupported"

# boundary samples used for distance checks between curves
_DISTANCE_SAMPLES = 2048


@dataclass(frozen=True)
class AnisotropicTensor:
    """Symmetric positive definite 2x2 tensor ``[[a11, a12], [a12, a22]]``."""

    a11: float
    a12: float
    a22: float

    def __post_init__(self):
        for name in ("a11", "a12", "a22"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"tensor entry {name} is not finite")
        if not (self.a11 > 0 and self.a11 * self.a22 - self.a12**2 > 0):
            raise ValidationError(
                "tensor is not positive definite "
                f"(a11={self.a11}, a12={self.a12}, a22={self.a22})"
            )

    @classmethod
    def isotropic(cls, a: float) -> "AnisotropicTensor":
        return cls(float(a), 0.0, float(a))

    @classmethod
    def from_matrix(cls, m) -> "AnisotropicTensor":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValidationError(f"tensor must be 2x2, got shape {m.shape}")
        if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, abs(m).max()):
            raise ValidationError("tensor is not symmetric")
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 1]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def min_eig(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def max_eig(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def is_isotropic(self) -> bool:
        return self.a12 == 0.0 and self.a11 == self.a22

    def to_list(self):
        return [[self.a11, self.a12], [self.a12, self.a22]]


IDENTITY = AnisotropicTensor.isotropic(1.0)


# ---------------------------------------------------------------- shapes
#
# Shapes live in local coordinates centered at the origin. Boundaries are
# parametrized by t in [0, 1), counter-clockwise.


@dataclass(frozen=True)
class Disk:
    radius: float

    kind = "disk"

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise GeometryError(f"degenerate defect: disk radius {self.radius}")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def perimeter(self) -> float:
        return 2 * math.pi * self.radius

    @property
    def circumradius(self) -> float:
        return self.radius

    @property
    def inradius(self) -> float:
        return self.radius

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        return np.hypot(p[:, 0], p[:, 1]) < self.radius

    def boundary_point(self, t) -> np.ndarray:
        th = 2 * np.pi * np.asarray(t, dtype=float)
        return self.radius * np.column_stack([np.cos(th), np.sin(th)])

    def boundary_params(self, h: float, min_segments: int = 12) -> np.ndarray:
        n = max(math.ceil(self.perimeter / h), min_segments)
        return np.arange(n) / n

    def to_dict(self):
        return {"shape": "disk", "radius": self.radius}


@dataclass(frozen=True)
class Ellipse:
    """Ellipse with semi-axes ``a`` (along the rotated x axis) and ``b``."""

    a: float
    b: float
    rotation: float = 0.0

    kind = "ellipse"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a * self.b)):
            raise GeometryError(f"degenerate defect: ellipse semi-axes {self.a}, {self.b}")

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b

    @property
    def perimeter(self) -> float:
        a, b = self.a, self.b
        hh = ((a - b) / (a + b)) ** 2
        return math.pi * (a + b) * (1 + 3 * hh / (10 + math.sqrt(4 - 3 * hh)))

    @property
    def circumradius(self) -> float:
        return max(self.a, self.b)

    @property
    def inradius(self) -> float:
        return min(self.a, self.b)

    def _to_axes(self, p):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x = c * p[:, 0] + s * p[:, 1]
        y = -s * p[:, 0] + c * p[:, 1]
        return x, y

    def contains(self, p) -> np.ndarray:
        x, y = self._to_axes(np.atleast_2d(p))
        return (x / self.a) ** 2 + (y / self.b) ** 2 < 1

    def boundary_point(self, t) -> np.ndarray:
        th = 2 * np.pi * np.asarray(t, dtype=float)
        x, y = self.a * np.cos(th), self.b * np.sin(th)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.column_stack([c * x - s * y, s * x + c * y])

    def boundary_params(self, h: float, min_segments: int = 12) -> np.ndarray:
        n = max(math.ceil(self.perimeter / h), min_segments)
        return np.arange(n) / n

    def to_dict(self):
        return {"shape": "ellipse", "semi_axes": [self.a, self.b], "rotation": self.rotation}


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle ``[-hx, hx] x [-hy, hy]`` (domains only)."""

    hx: float
    hy: float

    kind = "rectangle"

    def __post_init__(self):
        if not (self.hx > 0 and self.hy > 0 and math.isfinite(self.hx * self.hy)):
            raise GeometryError(f"degenerate rectangle half widths {self.hx}, {self.hy}")

    @property
    def area(self) -> float:
        return 4 * self.hx * self.hy

    @property
    def perimeter(self) -> float:
        return 4 * (self.hx + self.hy)

    @property
    def circumradius(self) -> float:
        return math.hypot(self.hx, self.hy)

    @property
    def inradius(self) -> float:
        return min(self.hx, self.hy)

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        return (np.abs(p[:, 0]) < self.hx) & (np.abs(p[:, 1]) < self.hy)

    def _corner_params(self):
        # arclength fractions of the corners, starting at (hx, -hy)
        L = self.perimeter
        return np.array([0.0, 2 * self.hy, 2 * self.hy + 2 * self.hx,
                         4 * self.hy + 2 * self.hx, L]) / L

    def boundary_point(self, t) -> np.ndarray:
        t = np.mod(np.asarray(t, dtype=float), 1.0)
        s = t * self.perimeter
        hx, hy = self.hx, self.hy
        out = np.empty((t.size, 2))
        for i, si in enumerate(np.ravel(s)):
            if si < 2 * hy:
                out[i] = (hx, -hy + si)
            elif si < 2 * hy + 2 * hx:
                out[i] = (hx - (si - 2 * hy), hy)
            elif si < 4 * hy + 2 * hx:
                out[i] = (-hx, hy - (si - 2 * hy - 2 * hx))
            else:
                out[i] = (-hx + (si - 4 * hy - 2 * hx), -hy)
        return out

    def boundary_params(self, h: float, min_segments: int = 4) -> np.ndarray:
        c = self._corner_params()
        parts = []
        for t0, t1, side in zip(c[:-1], c[1:], (2 * self.hy, 2 * self.hx) * 2):
            m = max(math.ceil(side / h - 1e-9), 1)
            parts.append(t0 + (t1 - t0) * np.arange(m) / m)
        return np.concatenate(parts)

    def to_dict(self):
        return {"shape": "rectangle", "half_widths": [self.hx, self.hy]}


Shape = Disk | Ellipse | Rectangle


def shape_from_dict(d: dict, path: str, allowed: Sequence[str]) -> Shape:
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: expected an object")
    kind = d.get("shape")
    if kind not in allowed:
        raise ValidationError(f"{path}.shape: expected one of {list(allowed)}, got {kind!r}")
    try:
        if kind == "disk":
            return Disk(_num(d, "radius", path))
        if kind == "ellipse":
            ax = d.get("semi_axes")
            if not (isinstance(ax, list) and len(ax) == 2):
                raise ValidationError(f"{path}.semi_axes: expected [a, b]")
            return Ellipse(float(ax[0]), float(ax[1]), float(d.get("rotation", 0.0)))
        hw = d.get("half_widths")
        if not (isinstance(hw, list) and len(hw) == 2):
            raise ValidationError(f"{path}.half_widths: expected [hx, hy]")
        return Rectangle(float(hw[0]), float(hw[1]))
    except GeometryError as exc:
        raise GeometryError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- defects


@dataclass(frozen=True)
class DefectSpec:
    """A small defect ``z + B`` with constant coefficients.

    ``shape`` is the actual (already scaled) defect shape. ``epsilon``
    records the scale relative to the reference shape ``B`` so that the
    asymptotic formulas can use ``epsilon**2 * |B|``; by default the defect
    is its own reference (``epsilon = 1``).
    """

    center: tuple[float, float]
    shape: Disk | Ellipse
    tensor: AnisotropicTensor = IDENTITY
    index: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        if len(c) != 2 or not all(math.isfinite(x) for x in c):
            raise ValidationError(f"defect center {self.center!r} is not a finite 2-vector")
        object.__setattr__(self, "center", c)
        if not isinstance(self.shape, (Disk, Ellipse)):
            raise ValidationError("defect shape must be a disk or an ellipse")
        if not (self.index > 0 and math.isfinite(self.index)):
            raise ValidationError(f"defect index must be positive, got {self.index}")
        if not (self.epsilon > 0):
            raise ValidationError(f"defect epsilon must be positive, got {self.epsilon}")

    @property
    def reference_area(self) -> float:
        """Area of the reference shape ``B``."""
        return self.shape.area / self.epsilon**2

    @property
    def area(self) -> float:
        return self.shape.area

    def contains(self, p) -> np.ndarray:
        return self.shape.contains(np.atleast_2d(p) - np.asarray(self.center))

    def boundary_point(self, t) -> np.ndarray:
        return self.shape.boundary_point(t) + np.asarray(self.center)

    def to_dict(self):
        d = {
            "center": list(self.center),
            "shape": self.shape.to_dict(),
            "A": self.tensor.to_list(),
            "n": self.index,
        }
        if self.epsilon != 1.0:
            d["epsilon"] = self.epsilon
        return d


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class Scenario:
    domain: Rectangle | Disk | Ellipse
    background: AnisotropicTensor
    index: float
    defects: tuple[DefectSpec, ...] = ()
    wavenumber: float = 1.0
    n_directions: int = 16
    noise_level: float = 0.0
    seed: int = 0
    name: str = ""
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(self.defects))
        if not (self.index > 0 and math.isfinite(self.index)):
            raise ValidationError(f"background index must be positive, got {self.index}")
        if not (self.wavenumber > 0 and math.isfinite(self.wavenumber)):
            raise ValidationError(f"wavenumber must be positive, got {self.wavenumber}")
        if int(self.n_directions) != self.n_directions or self.n_directions < 1:
            raise ValidationError(f"n_directions must be a positive integer, got {self.n_directions}")
        if not (self.noise_level >= 0):
            raise ValidationError(f"noise_level must be non-negative, got {self.noise_level}")
        object.__setattr__(self, "n_directions", int(self.n_directions))
        object.__setattr__(self, "seed", int(self.seed))

    # -- derived quantities

    @property
    def regime(self) -> str:
        """Coercivity regime used by the transmission eigenvalue theory."""
        A = self.background
        lo = min([A.min_eig] + [d.tensor.min_eig for d in self.defects])
        hi = max([A.max_eig] + [d.tensor.max_eig for d in self.defects])
        if lo > 1:
            return REGIME_MIN_GT_1
        if hi < 1:
            return REGIME_MAX_LT_1
        return REGIME_UNSUPPORTED

    @property
    def tev_theory_unsupported(self) -> bool:
        return self.regime == REGIME_UNSUPPORTED

    @property
    def wavelength(self) -> float:
        return 2 * math.pi / self.wavenumber

    def without_defects(self) -> "Scenario":
        return replace(self, defects=())

    def with_defects(self, defects) -> "Scenario":
        return replace(self, defects=tuple(defects))

    def with_wavenumber(self, k: float) -> "Scenario":
        return replace(self, wavenumber=float(k))

    # -- geometric constraints

    def check_geometry(self, h: float) -> dict:
        """Check containment and separation of the defects at mesh size ``h``.

        The minimum gap between a defect boundary and ``dD`` must be at least
        ``h``, and the gap between two defect boundaries at least ``h`` (so
        that center distances exceed ``max(h, r_i + r_j)``). Returns the
        enforced constants for the scenario metadata.
        """
        dom_t = np.arange(_DISTANCE_SAMPLES) / _DISTANCE_SAMPLES
        dom_tree = cKDTree(self.domain.boundary_point(dom_t))
        samples = []
        for m, d in enumerate(self.defects):
            pts = d.boundary_point(dom_t)
            samples.append(pts)
            if not np.all(self.domain.contains(np.vstack([pts, d.center]))):
                raise GeometryError(f"containment violated: defect {m} is not inside D")
            gap = float(dom_tree.query(pts)[0].min())
            if gap < h:
                raise GeometryError(
                    f"containment violated: defect {m} is {gap:.4g} from dD, need >= c0 = h = {h:.4g}"
                )
        for i in range(len(self.defects)):
            for j in range(i + 1, len(self.defects)):
                di, dj = self.defects[i], self.defects[j]
                sep = math.dist(di.center, dj.center)
                inside = np.any(dj.contains(samples[i])) or np.any(di.contains(samples[j]))
                gap = 0.0 if inside else float(cKDTree(samples[j]).query(samples[i])[0].min())
                if sep < max(h, di.shape.circumradius + dj.shape.circumradius) or gap < h:
                    raise GeometryError(
                        f"separation violated: defects {i} and {j} are {sep:.4g} apart "
                        f"(boundary gap {gap:.4g}, need >= c0 = h = {h:.4g})"
                    )
        return {"c0_boundary": h, "c0_separation": h}

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "name": self.name,
            "domain": self.domain.to_dict(),
            "background": {"A": self.background.to_list(), "n": self.index},
            "defects": [d.to_dict() for d in self.defects],
            "wavenumber": self.wavenumber,
            "n_directions": self.n_directions,
            "noise_level": self.noise_level,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @property
    def hash(self) -> str:
        """sha256 of the canonical JSON form (first 16 hex digits)."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ValidationError("scenario: expected a JSON object")
        if d.get("schema") != SCHEMA:
            raise ValidationError(f"schema: expected {SCHEMA!r}, got {d.get('schema')!r}")
        known = {"schema", "name", "domain", "background", "defects", "wavenumber",
                 "n_directions", "noise_level", "seed"}
        extra = sorted(set(d) - known)
        if extra:
            raise ValidationError(f"{extra[0]}: unknown field")
        if "domain" not in d:
            raise ValidationError("domain: missing field")
        domain = shape_from_dict(d["domain"], "domain", ("rectangle", "disk", "ellipse"))
        bg = d.get("background")
        if not isinstance(bg, dict):
            raise ValidationError("background: expected an object with fields A and n")
        A = _tensor(bg.get("A"), "background.A")
        n = _num(bg, "n", "background")
        defects = []
        raw = d.get("defects", [])
        if not isinstance(raw, list):
            raise ValidationError("defects: expected a list")
        for m, dd in enumerate(raw):
            path = f"defects[{m}]"
            if not isinstance(dd, dict):
                raise ValidationError(f"{path}: expected an object")
            c = dd.get("center")
            if not (isinstance(c, list) and len(c) == 2):
                raise ValidationError(f"{path}.center: expected [x, y]")
            shape = shape_from_dict(dd.get("shape"), f"{path}.shape", ("disk", "ellipse"))
            try:
                defects.append(DefectSpec(
                    center=(float(c[0]), float(c[1])),
                    shape=shape,
                    tensor=_tensor(dd.get("A", [[1, 0], [0, 1]]), f"{path}.A"),
                    index=_num(dd, "n", path, default=1.0),
                    epsilon=_num(dd, "epsilon", path, default=1.0),
                ))
            except ValidationError as exc:
                if str(exc).startswith(path):
                    raise
                raise ValidationError(f"{path}: {exc}") from None
        try:
            return cls(
                domain=domain,
                background=A,
                index=n,
                defects=tuple(defects),
                wavenumber=_num(d, "wavenumber", "", default=1.0),
                n_directions=_int(d, "n_directions", default=16),
                noise_level=_num(d, "noise_level", "", default=0.0),
                seed=_int(d, "seed", default=0),
                name=str(d.get("name", "")),
            )
        except ValidationError as exc:
            raise ValidationError(f"scenario: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        try:
            return cls.from_dict(d)
        except ValidationError as exc:
            line = _locate_field(text, str(exc))
            if line is not None:
                raise ValidationError(f"line {line}: {exc}") from None
            raise

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read scenario file {path}: {exc}") from None
        return cls.from_json(text)


def _num(d: dict, key: str, path: str, default=None) -> float:
    where = f"{path}.{key}" if path else key
    if key not in d:
        if default is None:
            raise ValidationError(f"{where}: missing field")
        return float(default)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _int(d: dict, key: str, default: int) -> int:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{key}: expected an integer, got {v!r}")
    return v


def _tensor(v, path: str) -> AnisotropicTensor:
    try:
        m = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: expected a 2x2 numeric matrix") from None
    try:
        return AnisotropicTensor.from_matrix(m)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _locate_field(text: str, message: str):
    """Best-effort line number of the first key named in an error message."""
    head = message.split(":", 1)[0].removeprefix("scenario").strip(" .")
    key = head.split(".")[-1].split("[")[0]
    if not key:
        return None
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None
