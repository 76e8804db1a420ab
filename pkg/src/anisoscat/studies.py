"""Versioned built-in studies.

Each study is a named pipeline with a frozen default configuration. Running
one returns a :class:`StudyReport` whose rows are written as CSV. A study
checks its wall-clock budget between stages; when the budget runs out the
rows computed so far are returned and the report is flagged incomplete.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asymptotics import (cell_corrector_in_d, defect_corrector, disk_eigendata,
                          disk_polarization, eoc, fem_eigendata, h1_norm,
                          pencil_first_order_shift, polarization_tensor, recover_strength,
                          shift_audit)
from .errors import BudgetExceeded, ValidationError
from .farfield import (DirectionSet, add_noise, far_field_matrix, gamma, default_radius,
                       multistatic_asymptotic, multistatic_numeric, multistatic_total)
from .forward import (BACKGROUND, PERTURBED, HelmholtzSolver, PmlSpec, background_probe,
                      solve_point_source)
from .mesh import build_domain_mesh, build_mesh
from .music import COMBINED, estimate_centers, grid_points, music_indicator
from .scenario import AnisotropicTensor, DefectSpec, Disk, Ellipse, Rectangle, Scenario
from .tev import (apply_A_inverse, assemble_scenario, bessel_disk_eigenvalues, lsm_ksweep,
                  match_eigenpair, real_eigenvalues)

log = logging.getLogger(__name__)


@dataclass
class StudyReport:
    name: str
    version: int
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    incomplete: bool = False
    artifacts: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        return path

    def summary_csv(self, path) -> Path:
        path = Path(path)
        lines = ["key,value", f"incomplete,{int(self.incomplete)}"]
        lines += [f"{k},{_fmt(v)}" for k, v in sorted(self.summary.items())]
        path.write_text("\n".join(lines) + "\n")
        return path

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


class _Clock:
    """Wall-clock budget shared by the stages of one study."""

    def __init__(self, budget: float | None):
        self.budget = budget
        self.start = time.perf_counter()
        self.stages: dict[str, float] = {}
        self._last = self.start

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def stage(self, name: str) -> None:
        now = time.perf_counter()
        self.stages[name] = now - self._last
        self._last = now
        if self.budget is not None and now - self.start > self.budget:
            raise BudgetExceeded(f"budget of {self.budget:g} s exhausted after stage {name!r}")


# ---------------------------------------------------------------- configurations


def square_two_disk_scenario(eps: float) -> Scenario:
    """Square ``[-1, 1]^2`` with ``A = [[10, 1], [1, 10]]`` and two soft disks."""
    ds = tuple(DefectSpec(center=c, shape=Disk(eps), tensor=AnisotropicTensor.isotropic(2.0),
                          index=1.0, epsilon=eps) for c in ((0.25, 0.0), (-0.25, -0.25)))
    return Scenario(Rectangle(1.0, 1.0), AnisotropicTensor(10.0, 1.0, 10.0), 1.0, ds,
                    name="square-two-disks")


def ellipse_centered_scenario(eps: float) -> Scenario:
    """Ellipse ``x^2/4 + y^2 < 1`` with ``A = 10 I`` and one centered soft disk."""
    d = DefectSpec(center=(0.0, 0.0), shape=Disk(eps), tensor=AnisotropicTensor.isotropic(2.0),
                   index=1.0, epsilon=eps)
    return Scenario(Ellipse(2.0, 1.0, 0.0), AnisotropicTensor.isotropic(10.0), 1.0, (d,),
                    name="ellipse-centered-disk")


def unit_disk_scenario(eps: float = 0.5, center=(0.25, 0.0), alpha: float = 10.0,
                       alpha_m: float = 2.0) -> Scenario:
    d = DefectSpec(center=center, shape=Disk(eps), tensor=AnisotropicTensor.isotropic(alpha_m),
                   index=1.0, epsilon=eps)
    return Scenario(Disk(1.0), AnisotropicTensor.isotropic(alpha), 1.0, (d,), name="unit-disk")


def _void(center, shape=None) -> DefectSpec:
    return DefectSpec(center, shape or Disk(0.3), AnisotropicTensor.isotropic(1.0), 1.0)


def imaging_scenario(which: str) -> Scenario:
    """MUSIC test configurations on ``D = [-2, 2]^2`` at ``k = 1``."""
    if which == "two-disks":
        return Scenario(Rectangle(2, 2), AnisotropicTensor.isotropic(0.5), 5.0,
                        (_void((1, 1)), _void((-1, -1))), wavenumber=1.0, n_directions=20,
                        name="two-disks")
    if which == "anisotropic":
        return Scenario(Rectangle(2, 2), AnisotropicTensor(10, 1, 10), 5.0,
                        (_void((-1, 1)), _void((1, -1))), wavenumber=1.0, n_directions=32,
                        name="anisotropic")
    if which == "ellipse":
        return Scenario(Rectangle(2, 2), AnisotropicTensor.isotropic(0.5), 5.0,
                        (_void((0.5, -1), Ellipse(0.5, 0.3, 0.0)),), wavenumber=1.0,
                        n_directions=64, name="ellipse")
    raise ValidationError(f"unknown imaging scenario {which!r}")


# ---------------------------------------------------------------- eigenvalue EOC


def _eoc_study(name, make, params, clock) -> StudyReport:
    idx = list(params["indices"])
    cols = ["eps"] + [f"{p}{j}" for j in idx for p in ("tau_b_", "tau_eps_", "E_", "EOC_")]
    rep = StudyReport(name, 1, cols, params=params)
    errs = {j: [] for j in idx}
    try:
        for eps in params["eps"]:
            sc = make(eps)
            mesh = build_domain_mesh(sc, params["h"], defect_h=params["defect_h_factor"] * eps,
                                     degree=params["degree"])
            Sb = assemble_scenario(sc, mesh, BACKGROUND)
            Sp = assemble_scenario(sc, mesh, PERTURBED)
            pb = real_eigenvalues(Sb, params["window"])
            pp = real_eigenvalues(Sp, params["window"])
            if len(pb) < max(idx):
                raise ValidationError(f"only {len(pb)} eigenvalues in the window")
            row = [eps]
            for j in idx:
                b = pb[j - 1]
                if not b.simple:
                    log.warning("eigenvalue %d is not simple at eps = %g", j, eps)
                p = match_eigenpair(Sb, b, pp)
                e = abs(b.tau - p.tau)
                errs[j].append(e)
                rate = eoc(errs[j][-2:])[0] if len(errs[j]) > 1 else math.nan
                row += [b.tau, p.tau, e, rate]
            rep.rows.append(row)
            clock.stage(f"eps={eps:g}")
    except BudgetExceeded as exc:
        log.warning("%s", exc)
        rep.incomplete = True
    for j in idx:
        if len(errs[j]) > 1:
            rep.summary[f"EOC_{j}"] = ";".join(f"{v:.6g}" for v in eoc(errs[j]))
    return rep


EOC_TABLE1 = {"eps": [1 / 4, 1 / 8, 1 / 16], "h": 0.1, "degree": 2, "defect_h_factor": 0.2,
              "window": [0.5, 60.0], "indices": [1, 2]}
EOC_TABLE2 = dict(EOC_TABLE1)


def eoc_table1(params, clock):
    return _eoc_study("eoc-table1", square_two_disk_scenario, params, clock)


def eoc_table2(params, clock):
    return _eoc_study("eoc-table2", ellipse_centered_scenario, params, clock)


SHIFT_AUDIT = {"eps": [1 / 8, 1 / 16, 1 / 32], "h": 0.1, "degree": 2, "defect_h_factor": 0.2,
               "window": [0.5, 30.0], "indices": [1, 2]}


def shift_audit_study(params, clock) -> StudyReport:
    """Measured shifts in the square two-disk configuration against both sign conventions and the pencil first-order term."""
    cols = ["eps", "index", "tau", "measured", "pred_Am_minus_A", "pred_A_minus_Am",
            "first_order", "agrees"]
    rep = StudyReport("shift-audit", 1, cols, params=params)
    sc0 = square_two_disk_scenario(params["eps"][0])
    A = sc0.background.matrix
    ref = Disk(1.0)
    pol = [polarization_tensor(ref, A, d.tensor.matrix, check=False).M for d in sc0.defects]
    contrast = [(d.tensor.matrix - A) * ref.area for d in sc0.defects]
    clock.stage("polarization")
    votes = []
    try:
        for eps in params["eps"]:
            sc = square_two_disk_scenario(eps)
            mesh = build_domain_mesh(sc, params["h"], defect_h=params["defect_h_factor"] * eps,
                                     degree=params["degree"])
            Sb = assemble_scenario(sc, mesh, BACKGROUND)
            Sp = assemble_scenario(sc, mesh, PERTURBED)
            pb = real_eigenvalues(Sb, params["window"])
            pp = real_eigenvalues(Sp, params["window"])
            centers = [d.center for d in sc.defects]
            for j in params["indices"]:
                b = pb[j - 1]
                p = match_eigenpair(Sb, b, pp)
                audit = shift_audit(p.tau, fem_eigendata(Sb, b, centers), contrast, eps)
                fo = pencil_first_order_shift(Sb, b, centers, pol, eps)
                votes.append(audit["agrees"])
                rep.rows.append([eps, j, b.tau, audit["measured"], audit["A_m-A"],
                                 audit["A-A_m"], fo, audit["agrees"]])
            clock.stage(f"eps={eps:g}")
    except BudgetExceeded as exc:
        log.warning("%s", exc)
        rep.incomplete = True
    if votes:
        rep.summary["convention"] = max(set(votes), key=votes.count)
        rep.summary["unanimous"] = len(set(votes)) == 1
    return rep


# ---------------------------------------------------------------- strength recovery


STRENGTH_RECOVERY = {"eps": 0.5, "alpha": 10.0, "alpha_m": 2.0, "true_center": [0.25, 0.0],
                     "centers": [[0.25, 0.0], [0.255, 0.005], [0.267, 0.017]],
                     "h": 0.05, "degree": 2, "k_window": [0.0, 10.0], "count": 2}


def strength_recovery(params, clock) -> StudyReport:
    """Recover ``(A_m - A)|B|`` and ``q`` from two measured eigenvalue shifts.

    The perturbed eigenvalues are measured by FEM on the exact geometry and
    paired with the background radial eigenvalues; the background eigendata
    are the closed-form Bessel solutions, evaluated at each candidate center.
    """
    eps, al = params["eps"], params["alpha"]
    sc = unit_disk_scenario(eps, tuple(params["true_center"]), al, params["alpha_m"])
    rep = StudyReport("strength-recovery", 1,
                      ["x", "y", "X1", "X2", "X1_per_area", "residual", "cond"], params=params)
    mesh = build_domain_mesh(sc, params["h"], degree=params["degree"])
    Sb = assemble_scenario(sc, mesh, BACKGROUND)
    Sp = assemble_scenario(sc, mesh, PERTURBED)
    ks = bessel_disk_eigenvalues(al, tuple(params["k_window"]))[:params["count"]]
    lo, hi = 0.5 * ks[0] ** 2, 1.1 * ks[-1] ** 2
    pb = real_eigenvalues(Sb, (lo, hi))
    pp = real_eigenvalues(Sp, (0.1 * lo, hi))
    measured = []
    for j, k in enumerate(ks):
        ref = min(pb, key=lambda p: abs(p.k - k))
        measured.append(match_eigenpair(Sb, ref, pp).tau)
        rep.summary[f"k_bessel_{j + 1}"] = float(k)
        rep.summary[f"k_fem_{j + 1}"] = ref.k
        rep.summary[f"k_eps_{j + 1}"] = math.sqrt(measured[-1])
    clock.stage("eigenvalues")
    area = sc.defects[0].reference_area
    for c in params["centers"]:
        data = [disk_eigendata(al, k, [tuple(c)]) for k in ks]
        est = recover_strength(measured, data, eps, area=area)
        rep.rows.append([c[0], c[1], est.contrast, est.q, est.contrast_per_area,
                         est.residual, est.cond])
    rep.summary["truth"] = params["alpha_m"] - al
    clock.stage("recovery")
    return rep


# ---------------------------------------------------------------- corrector rate


CORRECTOR_RATE = {"eps": [1 / 4, 1 / 8, 1 / 16], "center": [0.25, 0.0], "h": 0.1, "degree": 2,
                  "defect_h_factor": 0.2, "cell_h": 0.1}


def _smooth_data(X):
    return np.cos(X[:, 0] + 0.5 * X[:, 1]) + X[:, 0] * X[:, 1]


def corrector_rate(params, clock) -> StudyReport:
    """H^1 error of ``A_eps^{-1}(f, f)`` against ``A_0^{-1}(f, f)`` with and without correction.

    ``f`` is smooth and identical in both components, so it belongs to X(D).
    The corrected approximation adds :func:`defect_corrector`; the column
    ``err_cell`` uses the transplanted cell corrector instead.
    """
    cols = ["eps", "err_none", "err_corrected", "err_cell", "EOC_none", "EOC_corrected",
            "EOC_cell"]
    rep = StudyReport("corrector-rate", 1, cols, params=params)
    E = {"none": [], "corr": [], "cell": []}
    try:
        for eps in params["eps"]:
            d = DefectSpec(tuple(params["center"]), Disk(eps), AnisotropicTensor.isotropic(2.0),
                           1.0, epsilon=eps)
            sc = Scenario(Rectangle(1.0, 1.0), AnisotropicTensor(10.0, 1.0, 10.0), 1.0, (d,))
            mesh = build_domain_mesh(sc, params["h"], defect_h=params["defect_h_factor"] * eps,
                                     degree=params["degree"])
            Sb = assemble_scenario(sc, mesh, BACKGROUND)
            Sp = assemble_scenario(sc, mesh, PERTURBED)
            space = Sb.space
            f = _smooth_data(space.dof_coords)
            x = Sb.pack(f, f)
            w0, _ = Sb.split(apply_A_inverse(Sb, x))
            we, _ = Sp.split(apply_A_inverse(Sp, x))
            w1, _ = Sp.split(defect_corrector(Sp, sc, w0))
            cell = cell_corrector_in_d(space, sc, w0, h=params["cell_h"])
            E["none"].append(h1_norm(space, we - w0))
            E["corr"].append(h1_norm(space, we - w0 - w1))
            E["cell"].append(h1_norm(space, we - w0 - cell))
            rates = [eoc(E[key][-2:])[0] if len(E[key]) > 1 else math.nan
                     for key in ("none", "corr", "cell")]
            rep.rows.append([eps, E["none"][-1], E["corr"][-1], E["cell"][-1]] + rates)
            clock.stage(f"eps={eps:g}")
    except BudgetExceeded as exc:
        log.warning("%s", exc)
        rep.incomplete = True
    for key, name in (("none", "EOC_none"), ("corr", "EOC_corrected"), ("cell", "EOC_cell")):
        if len(E[key]) > 1:
            rep.summary[name] = ";".join(f"{v:.6g}" for v in eoc(E[key]))
    return rep


# ---------------------------------------------------------------- asymptotic vs numeric


ASYM_VS_NUMERIC = {"eps": [0.1, 0.05, 0.025], "center": [0.4, 0.3], "a": 0.5, "n": 5.0,
                   "k": 1.0, "N": 12, "half_width": 1.5, "h": 0.08, "h_exterior": 0.4,
                   "pml": 3.0, "defect_h_factor": 0.1}


def asym_vs_numeric(params, clock) -> StudyReport:
    """Relative Frobenius gap between FEM and leading-order multistatic matrices (void disk)."""
    rep = StudyReport("asym-vs-numeric", 1, ["eps", "gap", "norm_F", "ratio"], params=params)
    a, hw = params["a"], params["half_width"]
    M = disk_polarization(a, 1.0, 1.0)
    gaps = []
    try:
        for eps in params["eps"]:
            d = DefectSpec(tuple(params["center"]), Disk(eps), AnisotropicTensor.isotropic(1.0),
                           1.0, epsilon=eps)
            sc = Scenario(Rectangle(hw, hw), AnisotropicTensor.isotropic(a), params["n"], (d,),
                          wavenumber=params["k"], n_directions=params["N"])
            mesh = build_mesh(sc, params["h"], hw + sc.wavelength, params["pml"],
                              h_exterior=params["h_exterior"],
                              defect_h=params["defect_h_factor"] * eps)
            pml = PmlSpec(params["pml"])
            F = multistatic_numeric(sc, mesh, pml)
            Y = DirectionSet(params["N"]).vectors
            tab = background_probe(sc, mesh, pml, [d.center], np.vstack([Y, -Y]))
            Fa = multistatic_asymptotic(sc, tab, [M])
            nf = float(np.linalg.norm(F.entries))
            gaps.append(float(np.linalg.norm(F.entries - Fa.entries)) / nf)
            ratio = gaps[-2] / gaps[-1] if len(gaps) > 1 else math.nan
            rep.rows.append([eps, gaps[-1], nf, ratio])
            clock.stage(f"eps={eps:g}")
    except BudgetExceeded as exc:
        log.warning("%s", exc)
        rep.incomplete = True
    if len(gaps) > 1:
        rep.summary["min_ratio"] = min(g0 / g1 for g0, g1 in zip(gaps, gaps[1:]))
    return rep


# ---------------------------------------------------------------- MUSIC


MUSIC_TWO_DISKS = {"scenario": "two-disks", "deltas": [0.0, 0.1], "seeds": [0, 1, 2, 3, 4],
                   "h": 0.15, "h_exterior": 0.5, "pml": 3.0, "defect_h": 0.06,
                   "resolution": 64, "mode": COMBINED, "b": [1.0, 0.0], "rank_rule": "gap"}
MUSIC_ANISOTROPIC = dict(MUSIC_TWO_DISKS, scenario="anisotropic", deltas=[0.0, 0.02])
MUSIC_ELLIPSE = dict(MUSIC_TWO_DISKS, scenario="ellipse")


def music_study(params, clock, name="music") -> StudyReport:
    """Localization errors of MUSIC on FEM data, noiseless and with absolute noise ``delta``."""
    sc = imaging_scenario(params["scenario"])
    truth = np.array([d.center for d in sc.defects])
    hw = sc.domain.hx
    mesh = build_mesh(sc, params["h"], hw + sc.wavelength, params["pml"],
                      h_exterior=params["h_exterior"], defect_h=params["defect_h"])
    pml = PmlSpec(params["pml"])
    F = multistatic_numeric(sc, mesh, pml)
    clock.stage("data")
    win = ((-hw, hw), (-hw, hw))
    res = params["resolution"]
    _, _, pts = grid_points(win, res)
    tab = background_probe(sc, mesh, pml, pts, -F.directions.vectors)
    clock.stage("probe")
    rank_rule = params["rank_rule"]
    cols = ["delta", "seed", "rank", "found", "max_error"] + \
        [c for m in range(len(truth)) for c in (f"x{m}", f"y{m}", f"err{m}")]
    rep = StudyReport(name, 1, cols, params=params)
    rep.summary["norm_F"] = float(np.linalg.norm(F.entries, 2))
    for delta in params["deltas"]:
        seeds = params["seeds"] if delta > 0 else params["seeds"][:1]
        for seed in seeds:
            Fx = add_noise(F, delta, seed)
            g = music_indicator(Fx, tab, win, res, b=params["b"], mode=params["mode"],
                                rank_rule=rank_rule)
            peaks = estimate_centers(g, len(truth))
            row = [delta, seed, g.rank, len(peaks)]
            errs, cells = _match_peaks(peaks.points, truth)
            row.append(max(errs))
            row += cells
            rep.rows.append(row)
    clock.stage("imaging")
    return rep


def _match_peaks(points, truth):
    """Distance from each true center to the nearest estimated peak."""
    errs, cells = [], []
    for t in truth:
        if len(points) == 0:
            errs.append(math.inf)
            cells += [math.nan, math.nan, math.inf]
            continue
        dist = np.linalg.norm(points - t, axis=1)
        i = int(np.argmin(dist))
        errs.append(float(dist[i]))
        cells += [points[i, 0], points[i, 1], float(dist[i])]
    return errs, cells


# ---------------------------------------------------------------- reciprocity


RECIPROCITY = {"A": [[2.0, 0.5], [0.5, 1.0]], "n": 3.0, "k": 2.0, "half_width": 1.0,
               "h": 0.05, "h_exterior": 0.2, "pml": 2.0,
               "points": [[0.3, -0.2], [-0.5, 0.4], [0.1, 0.6], [-0.6, -0.5],
                          [0.7, 0.1], [0.0, 0.0], [-0.2, -0.7], [0.5, 0.5]]}


def reciprocity(params, clock) -> StudyReport:
    """``G^infty(xhat, z)`` against ``gamma u_b(z, -xhat)`` at paired samples."""
    A = AnisotropicTensor.from_matrix(params["A"])
    hw = params["half_width"]
    sc = Scenario(Rectangle(hw, hw), A, params["n"], wavenumber=params["k"])
    mesh = build_mesh(sc, params["h"], hw + sc.wavelength, params["pml"],
                      h_exterior=params["h_exterior"])
    pml = PmlSpec(params["pml"])
    solver = HelmholtzSolver(sc, mesh, pml, BACKGROUND)
    R = default_radius(sc, mesh)
    pts = params["points"]
    xh = DirectionSet(len(pts)).vectors
    rep = StudyReport("reciprocity", 1, ["zx", "zy", "xhat_x", "xhat_y", "rel_error"],
                      params=params)
    tab = background_probe(sc, mesh, pml, pts, -xh)
    for i, z in enumerate(pts):
        G = solve_point_source(sc, mesh, pml, z, solver=solver)
        ginf = far_field_matrix(solver.space, G.coeffs, sc.wavenumber, R, xh[i:i + 1], sc)[0, 0]
        ref = gamma(sc.wavenumber) * tab.values[i, i]
        rep.rows.append([z[0], z[1], xh[i, 0], xh[i, 1], abs(ginf - ref) / abs(ref)])
    rep.summary["max_rel_error"] = max(r[-1] for r in rep.rows)
    clock.stage("pairs")
    return rep


# ---------------------------------------------------------------- disk cross-validation


DISK_TEV = {"alpha": 10.0, "hs": [0.2, 0.1, 0.05], "degree": 1, "window": [20.0, 40.0],
            "sweep_k": [5.0, 5.6, 0.02], "sweep_alpha": 1e-4, "sweep_point": [0.0, 0.0],
            "sweep_N": 32, "sweep_h": 0.1, "sweep_h_exterior": 0.2, "sweep_box": 2.4,
            "sweep_pml": 1.0, "prominence": 2.0}


def disk_tev(params, clock) -> StudyReport:
    """FEM eigenvalues on the unit disk against Bessel roots, plus the LSM sweep."""
    al = params["alpha"]
    sc = Scenario(Disk(1.0), AnisotropicTensor.isotropic(al), 1.0, wavenumber=1.0,
                  n_directions=params["sweep_N"])
    kb = float(bessel_disk_eigenvalues(al, (0.0, 10.0))[0])
    rep = StudyReport("disk-tev", 1, ["h", "k_fem", "k_bessel", "rel_error", "order"],
                      params=params)
    errs = []
    lo, hi = params["window"]
    for h in params["hs"]:
        mesh = build_domain_mesh(sc, h, degree=params["degree"])
        S = assemble_scenario(sc, mesh, BACKGROUND)
        pairs = real_eigenvalues(S, (lo, hi))
        if not pairs:
            raise ValidationError(f"no eigenvalue in the window at h = {h}")
        k = min(pairs, key=lambda p: abs(p.k - kb)).k
        errs.append(abs(k - kb) / kb)
        order = eoc(errs[-2:])[0] if len(errs) > 1 else math.nan
        rep.rows.append([h, k, kb, errs[-1], order])
        clock.stage(f"h={h:g}")
    k_fem = rep.rows[-1][1]
    k0, k1, dk = params["sweep_k"]
    ks = k0 + dk * np.arange(int(round((k1 - k0) / dk)) + 1)
    mesh = build_mesh(sc.with_wavenumber(float(ks[0])), params["sweep_h"], params["sweep_box"],
                      params["sweep_pml"], h_exterior=params["sweep_h_exterior"])
    pml = PmlSpec(params["sweep_pml"])
    Fs = [multistatic_total(sc, mesh, pml, BACKGROUND, k=float(k)) for k in ks]
    sweep = lsm_ksweep(Fs, tuple(params["sweep_point"]), params["sweep_alpha"],
                       prominence=params["prominence"])
    peaks = sweep.peak_wavenumbers
    rep.summary["k_bessel"] = kb
    rep.summary["k_fem_finest"] = k_fem
    rep.summary["sweep_step"] = dk
    rep.summary["sweep_peaks"] = ";".join(f"{p:.6g}" for p in peaks)
    rep.summary["sweep_offset"] = float(np.min(np.abs(peaks - k_fem))) if len(peaks) else math.inf
    rep.artifacts["sweep"] = sweep
    clock.stage("sweep")
    return rep


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class StudySpec:
    name: str
    version: int
    run: callable
    defaults: dict


def _music(name, defaults):
    return StudySpec(name, 1, lambda p, c: music_study(p, c, name), defaults)


STUDIES = {s.name: s for s in (
    StudySpec("eoc-table1", 1, eoc_table1, EOC_TABLE1),
    StudySpec("eoc-table2", 1, eoc_table2, EOC_TABLE2),
    StudySpec("strength-recovery", 1, strength_recovery, STRENGTH_RECOVERY),
    StudySpec("corrector-rate", 1, corrector_rate, CORRECTOR_RATE),
    StudySpec("asym-vs-numeric", 1, asym_vs_numeric, ASYM_VS_NUMERIC),
    StudySpec("shift-audit", 1, shift_audit_study, SHIFT_AUDIT),
    _music("music-two-disks", MUSIC_TWO_DISKS),
    _music("music-anisotropic", MUSIC_ANISOTROPIC),
    _music("music-ellipse", MUSIC_ELLIPSE),
    StudySpec("reciprocity", 1, reciprocity, RECIPROCITY),
    StudySpec("disk-tev", 1, disk_tev, DISK_TEV),
)}


def run_study(name: str, overrides: dict | None = None, budget: float | None = None) -> StudyReport:
    """Run a built-in study with optional parameter overrides and a wall-clock budget."""
    if name not in STUDIES:
        raise ValidationError(f"unknown study {name!r}; choose from {sorted(STUDIES)}")
    spec = STUDIES[name]
    params = dict(spec.defaults)
    for key, val in (overrides or {}).items():
        if key not in params:
            raise ValidationError(f"study {name}: unknown parameter {key!r}")
        params[key] = val
    clock = _Clock(budget)
    log.info("study %s v%d", name, spec.version)
    try:
        rep = spec.run(params, clock)
    except BudgetExceeded as exc:
        log.warning("%s", exc)
        rep = StudyReport(name, spec.version, [], params=params, incomplete=True)
    rep.version = spec.version
    rep.timings = dict(clock.stages, total=clock.elapsed())
    return rep
