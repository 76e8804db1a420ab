import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisoscat.errors import GeometryError, ValidationError
from anisoscat.farfield import (DirectionSet, MultistaticMatrix, add_noise, gamma,
                                multistatic_numeric, multistatic_total, noise_matrix,
                                spectral_norm)
from anisoscat.forward import BACKGROUND, HelmholtzSolver, PmlSpec, background_probe
from anisoscat.mesh import build_mesh
from anisoscat.oracles import disk_far_field, disk_scattered_field
from anisoscat.scenario import AnisotropicTensor, DefectSpec, Disk, Scenario

ISO = AnisotropicTensor.isotropic


@pytest.fixture(scope="module")
def disk_setup():
    sc = Scenario(Disk(1.0), ISO(0.5), 5.0, wavenumber=1.0, n_directions=8)
    mesh = build_mesh(sc, 0.2, 7.3, 3.0, h_exterior=0.6)
    return sc, mesh, PmlSpec(3.0)


def test_disk_far_field_matches_series(disk_setup):
    sc, mesh, pml = disk_setup
    F = multistatic_total(sc, mesh, pml, variant=BACKGROUND)
    X = DirectionSet(8).vectors
    ref = np.column_stack([disk_far_field(1.0, 1.0, 0.5, 5.0, d, X) for d in X])
    assert np.abs(F.entries - ref).max() / np.abs(ref).max() < 1e-2


def test_disk_near_field_matches_series(disk_setup):
    sc, mesh, pml = disk_setup
    solver = HelmholtzSolver(sc, mesh, pml, BACKGROUND)
    d = np.array([math.cos(0.4), math.sin(0.4)])
    us = solver.field(solver.scattered(d)[:, 0])
    pts = np.array([[2.0, 0.5], [-1.5, 1.5], [0.0, -3.0]])
    val, _ = us.space.evaluate(us.coeffs, pts)
    ref = disk_scattered_field(1.0, 1.0, 0.5, 5.0, d, pts)
    assert np.abs(val - ref).max() / np.abs(ref).max() < 1e-2


def test_gamma_constant():
    assert gamma(2.0) == pytest.approx(cmath.exp(1j * math.pi / 4) / math.sqrt(16 * math.pi))
    assert gamma(2.0, d=3) == pytest.approx(1 / (4 * math.pi))
    with pytest.raises(ValidationError):
        gamma(1.0, d=4)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_noise_matrix_has_unit_spectral_norm(N, seed):
    E = noise_matrix(N, seed)
    assert abs(np.linalg.norm(E, 2) - 1) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 20), st.integers(0, 1000))
def test_spectral_norm_agrees_with_svd(N, seed):
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    assert spectral_norm(E) == pytest.approx(np.linalg.norm(E, 2), rel=1e-8)


def _random_F(N=6, seed=3):
    rng = np.random.default_rng(seed)
    return MultistaticMatrix(rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N)), 1.5)


def test_zero_noise_is_identity_and_seeded_noise_repeats():
    F = _random_F()
    assert np.array_equal(add_noise(F, 0.0, 7).entries, F.entries)
    a, b = add_noise(F, 0.1, 7), add_noise(F, 0.1, 7)
    assert np.array_equal(a.entries, b.entries)
    assert not np.array_equal(a.entries, add_noise(F, 0.1, 8).entries)
    assert np.linalg.norm(a.entries - F.entries, 2) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(ValidationError):
        add_noise(F, -1.0, 0)


def test_csv_round_trip_is_exact(tmp_path):
    F = add_noise(_random_F(), 0.05, 11)
    back = MultistaticMatrix.from_csv(F.to_csv(tmp_path / "F.csv"))
    assert np.array_equal(back.entries, F.entries)
    assert (back.k, back.noise_level, back.seed, back.provenance) == (F.k, F.noise_level, F.seed,
                                                                       F.provenance)


def test_malformed_csv_reports_line(tmp_path):
    p = _random_F().to_csv(tmp_path / "F.csv")
    lines = p.read_text().splitlines()
    lines[5] = "0,2,abc,1"
    p.write_text("\n".join(lines))
    with pytest.raises(ValidationError, match="line 6"):
        MultistaticMatrix.from_csv(p)


def test_zero_contrast_defect_gives_vanishing_data():
    A = AnisotropicTensor(2.0, 0.3, 1.0)
    d = DefectSpec((0.1, -0.1), Disk(0.15), A, 3.0)
    sc = Scenario(Disk(1.0), A, 3.0, (d,), wavenumber=1.5, n_directions=6)
    mesh = build_mesh(sc, 0.15, 1 + sc.wavelength, 1.5, h_exterior=0.5, defect_h=0.05)
    F = multistatic_numeric(sc, mesh, PmlSpec(1.5))
    assert np.abs(F.entries).max() <= 1e-6


def test_probe_in_pml_rejected(disk_setup):
    sc, mesh, pml = disk_setup
    with pytest.raises(GeometryError, match="PML"):
        background_probe(sc, mesh, pml, [[9.0, 0.0]], [[1.0, 0.0]])
