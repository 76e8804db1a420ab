"""Command-line interface.

Commands: ``simulate``, ``music``, ``tev``, ``study``, ``recover`` and
``replay``. Every command writes its outputs and a ``manifest.json`` to
``--out-dir``. Exit codes: 0 success, 2 validation error, 3 numerical
failure, 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (disk_eigendata, disk_polarization, ellipse_polarization,
                          fem_eigendata, polarization_tensor, recover_strength)
from .errors import BudgetExceeded, NumericalError, ValidationError
from .farfield import (TOTAL, MultistaticMatrix, add_noise, multistatic_asymptotic,
                       multistatic_numeric, multistatic_total)
from .forward import BACKGROUND, PERTURBED, PmlSpec, background_probe
from .mesh import build_domain_mesh, build_mesh
from .music import MODES, COMBINED, estimate_centers, grid_points, music_indicator
from .scenario import Disk, Ellipse, Rectangle, Scenario
from .studies import STUDIES, run_study
from .tev import (assemble_scenario, bessel_disk_eigenvalues, eigenpairs_to_csv, lsm_ksweep,
                  real_eigenvalues)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_BUDGET = 0, 2, 3, 4
CACHE_ENV = "ANISOSCAT_CACHE_DIR"


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    scenario_hash: str | None = None
    params: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    version: str = __version__

    def add_output(self, path: Path) -> None:
        self.outputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


class _Stages:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.t = time.perf_counter()

    def done(self, name: str) -> None:
        now = time.perf_counter()
        self.manifest.timings[name] = now - self.t
        self.t = now


# ---------------------------------------------------------------- helpers


def _extent(domain) -> float:
    if isinstance(domain, Rectangle):
        return max(domain.hx, domain.hy)
    if isinstance(domain, Disk):
        return domain.radius
    return max(domain.a, domain.b)


def _scattering_mesh(sc: Scenario, args, k_min: float):
    margin = args.box if args.box is not None else 2 * math.pi / k_min
    box = _extent(sc.domain) + margin
    return build_mesh(sc.with_wavenumber(k_min), args.h, box, args.pml,
                      h_exterior=args.h_exterior, defect_h=args.defect_h)


def _cache_path(kind: str, payload: dict) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    key = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]
    path = Path(root) / f"{kind}-{key}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _k_values(sc: Scenario, args) -> list[float]:
    if args.k_grid:
        k0, k1, dk = args.k_grid
        if not (dk > 0 and k1 >= k0 > 0):
            raise ValidationError("--k-grid needs 0 < start <= stop and step > 0")
        n = int(math.floor((k1 - k0) / dk + 1e-9)) + 1
        return [float(k0 + i * dk) for i in range(n)]
    return [float(args.k if args.k is not None else sc.wavenumber)]


def reference_polarization(sc: Scenario) -> list[np.ndarray]:
    """Polarization tensors of the reference shapes, closed form when available."""
    out = []
    A = sc.background
    for d in sc.defects:
        s = d.shape
        e = d.epsilon
        iso = A.is_isotropic and d.tensor.is_isotropic
        if iso and isinstance(s, Disk):
            out.append(disk_polarization(A.a11, d.tensor.a11, s.radius / e))
        elif iso and isinstance(s, Ellipse):
            out.append(ellipse_polarization(A.a11, d.tensor.a11, s.a / e, s.b / e, s.rotation))
        else:
            ref = Disk(s.radius / e) if isinstance(s, Disk) else Ellipse(s.a / e, s.b / e, s.rotation)
            out.append(polarization_tensor(ref, A.matrix, d.tensor.matrix).M)
    return out


# ---------------------------------------------------------------- commands


def cmd_simulate(args, man: RunManifest, out: Path) -> int:
    sc = Scenario.load(args.scenario)
    if args.N is not None:
        sc = replace(sc, n_directions=args.N)
    delta = sc.noise_level if args.noise is None else args.noise
    seed = sc.seed if args.seed is None else args.seed
    ks = _k_values(sc, args)
    man.scenario_hash = sc.hash
    man.params.update(h=args.h, pml=args.pml, box=args.box, h_exterior=args.h_exterior,
                      defect_h=args.defect_h, N=sc.n_directions, ks=ks, noise=delta,
                      data=args.data, oracle=args.oracle)
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(len(ks))]
    man.seeds = [seed] + seeds
    st = _Stages(man)
    mesh = _scattering_mesh(sc, args, min(ks))
    pml = PmlSpec(args.pml)
    st.done("mesh")
    for i, k in enumerate(ks):
        payload = {"scenario": sc.to_dict(), "k": k, "mesh": man.params, "version": __version__}
        cache = _cache_path(args.data, payload)
        if cache is not None and cache.exists():
            F = MultistaticMatrix.from_csv(cache)
        else:
            if args.data == "total":
                F = multistatic_total(sc, mesh, pml, PERTURBED, k=k)
            else:
                F = multistatic_numeric(sc, mesh, pml, k=k)
            if cache is not None:
                F.to_csv(cache)
        F = add_noise(F, delta, seeds[i]) if delta > 0 else F
        man.add_output(F.to_csv(out / f"F_{i:03d}.csv"))
        if args.oracle:
            if args.data == "total" or not sc.defects:
                raise ValidationError("--oracle needs defects and difference data")
            skk = sc.with_wavenumber(k)
            Y = F.directions.vectors
            tab = background_probe(skk, mesh, pml, [d.center for d in sc.defects],
                                   np.vstack([Y, -Y]))
            Fa = multistatic_asymptotic(skk, tab, reference_polarization(sc))
            man.add_output(Fa.to_csv(out / f"F_{i:03d}_oracle.csv"))
    st.done("simulate")
    return EXIT_OK


def _window(sc: Scenario, values):
    if values:
        x0, x1, y0, y1 = values
        return ((x0, x1), (y0, y1))
    e = _extent(sc.domain)
    return ((-e, e), (-e, e))


def cmd_music(args, man: RunManifest, out: Path) -> int:
    sc = Scenario.load(args.scenario)
    F = MultistaticMatrix.from_csv(args.F)
    if F.provenance == TOTAL:
        raise ValidationError("MUSIC needs background-subtracted data, got total far fields")
    if F.N != sc.n_directions:
        raise ValidationError(f"direction mismatch: F has N = {F.N}, scenario has "
                              f"n_directions = {sc.n_directions}")
    sc = sc.with_wavenumber(F.k)
    rank = args.rank_rule if args.rank_rule == "gap" else int(args.rank_rule)
    win = _window(sc, args.window)
    man.scenario_hash = sc.hash
    man.params.update(window=win, resolution=args.resolution, b=args.b, mode=args.mode,
                      rank_rule=args.rank_rule, expected=args.expected, h=args.h, pml=args.pml)
    st = _Stages(man)
    mesh = _scattering_mesh(sc, args, F.k)
    pml = PmlSpec(args.pml)
    _, _, pts = grid_points(win, args.resolution)
    tab = background_probe(sc, mesh, pml, pts, -F.directions.vectors)
    st.done("probe")
    grid = music_indicator(F, tab, win, args.resolution, b=args.b, mode=args.mode,
                           rank_rule=rank, inside=sc.domain.contains)
    peaks = estimate_centers(grid, args.expected)
    man.params["rank"] = grid.rank
    man.add_output(grid.to_csv(out / "indicator.csv"))
    man.add_output(peaks.to_csv(out / "peaks.csv"))
    st.done("imaging")
    log.info("rank %d, %d peaks", grid.rank, len(peaks))
    return EXIT_OK


def _require_disk(sc: Scenario) -> float:
    dom = sc.domain
    A = sc.background
    if not (isinstance(dom, Disk) and abs(dom.radius - 1) < 1e-12 and A.is_isotropic
            and sc.index == 1.0):
        raise ValidationError("bessel mode needs the unit disk with A = alpha I and n = 1")
    return float(A.a11)


def cmd_tev(args, man: RunManifest, out: Path) -> int:
    sc = Scenario.load(args.scenario)
    man.scenario_hash = sc.hash
    lo, hi = args.window
    man.params.update(mode=args.mode, window=[lo, hi])
    st = _Stages(man)
    if args.mode == "bessel":
        alpha = _require_disk(sc)
        ks = bessel_disk_eigenvalues(alpha, (lo, hi))
        path = out / "eigenvalues.csv"
        path.write_text("index,k,tau\n" + "".join(
            f"{i},{k:.17g},{k * k:.17g}\n" for i, k in enumerate(ks)))
        man.add_output(path)
    elif args.mode == "fem":
        man.params.update(h=args.h, degree=args.degree, variant=args.variant)
        mesh = build_domain_mesh(sc, args.h, defect_h=args.defect_h, degree=args.degree)
        S = assemble_scenario(sc, mesh, args.variant)
        pairs = real_eigenvalues(S, (lo * lo, hi * hi))
        man.add_output(eigenpairs_to_csv(pairs, out / "eigenvalues.csv"))
    else:
        if not args.matrices:
            raise ValidationError("sweep mode needs --matrices with total far-field files")
        Fs = [MultistaticMatrix.from_csv(p) for p in args.matrices]
        if any(F.provenance != TOTAL for F in Fs):
            raise ValidationError("sweep mode needs total far fields (simulate --data total)")
        Fs = [F for F in Fs if lo <= F.k <= hi]
        man.params.update(alpha_reg=args.alpha_reg, point=args.point)
        sweep = lsm_ksweep(Fs, tuple(args.point), args.alpha_reg, prominence=args.prominence)
        man.add_output(sweep.to_csv(out / "ksweep.csv"))
    st.done(args.mode)
    return EXIT_OK


def _load_study(spec: str):
    p = Path(spec)
    if p.suffix == ".json":
        try:
            d = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read study file {spec}: {exc}") from None
        if not isinstance(d, dict) or "study" not in d:
            raise ValidationError(f"{spec}: expected an object with field 'study'")
        return d["study"], d.get("params", {}), d.get("budget")
    return spec, {}, None


def cmd_study(args, man: RunManifest, out: Path) -> int:
    name, overrides, budget = _load_study(args.study)
    for item in args.set or []:
        key, _, val = item.partition("=")
        try:
            overrides[key] = json.loads(val)
        except json.JSONDecodeError:
            raise ValidationError(f"--set {item}: value must be JSON") from None
    budget = args.budget if args.budget is not None else budget
    rep = run_study(name, overrides, budget)
    man.params.update(study=name, version=rep.version, params=rep.params, budget=budget,
                      incomplete=rep.incomplete, summary=rep.summary)
    man.timings.update(rep.timings)
    man.add_output(rep.to_csv(out / "report.csv"))
    man.add_output(rep.summary_csv(out / "summary.csv"))
    if "sweep" in rep.artifacts:
        man.add_output(rep.artifacts["sweep"].to_csv(out / "ksweep.csv"))
    return EXIT_BUDGET if rep.incomplete else EXIT_OK


def cmd_recover(args, man: RunManifest, out: Path) -> int:
    sc = Scenario.load(args.scenario)
    if len(sc.defects) != 1:
        raise ValidationError("recovery needs exactly one defect in the scenario")
    d = sc.defects[0]
    eps = args.eps if args.eps is not None else d.epsilon
    center = tuple(args.center) if args.center else d.center
    measured = [k * k for k in args.measured_k] if args.measured_k else list(args.measured or [])
    if len(measured) < 2:
        raise ValidationError("need at least two measured eigenvalues (--measured or --measured-k)")
    man.scenario_hash = sc.hash
    man.params.update(eps=eps, center=center, measured=measured, eigendata=args.eigendata)
    st = _Stages(man)
    if args.eigendata == "bessel":
        alpha = _require_disk(sc)
        ks = bessel_disk_eigenvalues(alpha, tuple(args.k_window))[:len(measured)]
        if len(ks) < len(measured):
            raise ValidationError("not enough background eigenvalues in --k-window")
        data = [disk_eigendata(alpha, k, [center]) for k in ks]
    else:
        mesh = build_domain_mesh(sc, args.h, degree=args.degree)
        S = assemble_scenario(sc, mesh, BACKGROUND)
        lo, hi = args.k_window
        pairs = real_eigenvalues(S, (lo * lo, hi * hi))
        if len(pairs) < len(measured):
            raise ValidationError("not enough background eigenvalues in --k-window")
        chosen = [min(pairs, key=lambda p, t=t: abs(p.tau - t)) for t in measured]
        data = [fem_eigendata(S, p, [center]) for p in chosen]
    st.done("eigendata")
    est = recover_strength(measured, data, eps, area=d.reference_area)
    man.add_output(est.to_csv(out / "strength.csv"))
    st.done("recover")
    return EXIT_OK


def cmd_replay(args, man: RunManifest, out: Path) -> int:
    """Re-run a manifest's command into ``out`` and compare output hashes."""
    try:
        old = json.loads(Path(args.manifest).read_text())
        argv = list(old["argv"])
        expected = old["outputs"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"cannot read manifest {args.manifest}: {exc}") from None
    i = argv.index("--out-dir")
    argv[i + 1] = str(out / "replay")
    code = main(argv)
    if code != EXIT_OK:
        return code
    new = json.loads((out / "replay" / "manifest.json").read_text())["outputs"]
    diff = sorted(k for k in set(expected) | set(new) if expected.get(k) != new.get(k))
    man.params.update(replayed=args.manifest, mismatched=diff)
    if diff:
        log.error("replay differs in %s", ", ".join(diff))
        return EXIT_NUMERICAL
    log.info("replay identical (%d files)", len(new))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_mesh_flags(p, h=0.15):
    g = p.add_argument_group("mesh")
    g.add_argument("--h", type=float, default=h, help="mesh size in D (default %(default)s)")
    g.add_argument("--h-exterior", type=float, default=None,
                   help="mesh size outside D (default: graded from --h)")
    g.add_argument("--defect-h", type=float, default=None,
                   help="mesh size inside defects (default: --h)")
    g.add_argument("--box", type=float, default=None,
                   help="margin between D and the PML (default: one wavelength)")
    g.add_argument("--pml", type=float, default=3.0, help="PML width (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anisoscat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="multistatic far-field matrices from FEM")
    s.add_argument("scenario", help="scenario JSON file")
    s.add_argument("--out-dir", required=True)
    _add_mesh_flags(s)
    s.add_argument("--N", type=int, default=None, help="number of directions (default: scenario)")
    s.add_argument("--k", type=float, default=None, help="wavenumber (default: scenario)")
    s.add_argument("--k-grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"),
                   help="wavenumber grid, inclusive")
    s.add_argument("--noise", type=float, default=None,
                   help="absolute noise level delta, ||E||_2 = 1 (default: scenario)")
    s.add_argument("--seed", type=int, default=None, help="noise seed (default: scenario)")
    s.add_argument("--data", choices=("difference", "total"), default="difference",
                   help="background-subtracted or total far fields (default %(default)s)")
    s.add_argument("--oracle", action="store_true",
                   help="also write the leading-order asymptotic matrix")

    m = sub.add_parser("music", help="MUSIC indicator and center estimates")
    m.add_argument("F", help="multistatic matrix CSV")
    m.add_argument("scenario", help="scenario JSON file (background and directions)")
    m.add_argument("--out-dir", required=True)
    _add_mesh_flags(m)
    m.add_argument("--window", type=float, nargs=4, metavar=("X0", "X1", "Y0", "Y1"),
                   help="imaging window (default: bounding box of D)")
    m.add_argument("--resolution", type=int, default=64, help="lattice points per axis")
    m.add_argument("--b", type=float, nargs=2, default=[1.0, 0.0], help="dipole direction")
    m.add_argument("--mode", choices=MODES, default=COMBINED, help="test vector")
    m.add_argument("--rank-rule", default="gap", help="'gap' or a fixed integer rank")
    m.add_argument("--expected", type=int, default=None, help="number of defects to report")

    t = sub.add_parser("tev", help="transmission eigenvalues")
    t.add_argument("scenario", help="scenario JSON file")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--mode", choices=("fem", "sweep", "bessel"), default="fem")
    t.add_argument("--window", type=float, nargs=2, default=[0.5, 10.0], metavar=("KMIN", "KMAX"),
                   help="wavenumber window (default %(default)s)")
    t.add_argument("--h", type=float, default=0.05, help="FEM mesh size (default %(default)s)")
    t.add_argument("--defect-h", type=float, default=None)
    t.add_argument("--degree", type=int, choices=(1, 2), default=2)
    t.add_argument("--variant", choices=(BACKGROUND, PERTURBED), default=BACKGROUND)
    t.add_argument("--matrices", nargs="*", help="total far-field CSVs for sweep mode")
    t.add_argument("--point", type=float, nargs=2, default=[0.0, 0.0], help="LSM sampling point")
    t.add_argument("--alpha-reg", type=float, default=1e-4, help="Tikhonov parameter")
    t.add_argument("--prominence", type=float, default=2.0)

    st = sub.add_parser("study", help="run a built-in study")
    st.add_argument("study", help=f"study name ({', '.join(sorted(STUDIES))}) or study JSON")
    st.add_argument("--out-dir", required=True)
    st.add_argument("--set", action="append", metavar="KEY=JSON", help="override a parameter")
    st.add_argument("--budget", type=float, default=None, help="wall-clock cap in seconds")

    r = sub.add_parser("recover", help="defect strength from measured eigenvalue shifts")
    r.add_argument("scenario", help="scenario JSON with the background and one defect")
    r.add_argument("--out-dir", required=True)
    r.add_argument("--measured", type=float, nargs="+", help="perturbed tau = k^2 values")
    r.add_argument("--measured-k", type=float, nargs="+", help="perturbed wavenumbers")
    r.add_argument("--eps", type=float, default=None, help="defect scale (default: scenario)")
    r.add_argument("--center", type=float, nargs=2, default=None, help="estimated center")
    r.add_argument("--eigendata", choices=("bessel", "fem"), default="bessel")
    r.add_argument("--k-window", type=float, nargs=2, default=[0.0, 10.0])
    r.add_argument("--h", type=float, default=0.05)
    r.add_argument("--degree", type=int, choices=(1, 2), default=2)

    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    rp.add_argument("manifest")
    rp.add_argument("--out-dir", required=True)
    return ap


COMMANDS = {"simulate": cmd_simulate, "music": cmd_music, "tev": cmd_tev, "study": cmd_study,
            "recover": cmd_recover, "replay": cmd_replay}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(args.command, argv)
    try:
        code = COMMANDS[args.command](args, man, out)
    except BudgetExceeded as exc:
        log.error("%s", exc)
        code = EXIT_BUDGET
    except ValidationError as exc:
        log.error("%s", exc)
        code = EXIT_VALIDATION
    except NumericalError as exc:
        log.error("%s", exc)
        code = EXIT_NUMERICAL
    man.params["exit_code"] = code
    man.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
