import numpy as np
import pytest

from anisoscat.errors import ValidationError
from anisoscat.farfield import MultistaticMatrix
from anisoscat.mesh import TAG_D, build_domain_mesh
from anisoscat.scenario import AnisotropicTensor, DefectSpec, Disk, Rectangle, Scenario
from anisoscat.forward import BACKGROUND, PERTURBED
from anisoscat.tev import (assemble_scenario, assemble_tev,
                           bessel_disk_eigenvalues, eigenpairs_to_csv, lsm_ksweep,
                           real_eigenvalues)
from oracles import disk_te_roots

ISO = AnisotropicTensor.isotropic


@pytest.mark.parametrize("alpha", [10.0, 4.0, 0.25])
def test_bessel_roots_match_high_precision(alpha):
    ours = bessel_disk_eigenvalues(alpha, (0.1, 12.0))
    ref = disk_te_roots(alpha, 12.0)
    assert len(ours) == len(ref) > 0
    assert np.allclose(ours, ref, atol=1e-9, rtol=0)


def test_bessel_rejects_no_contrast():
    with pytest.raises(ValidationError, match="contrast"):
        bessel_disk_eigenvalues(1.0)


def test_p2_disk_eigenvalue_close_to_bessel_root():
    sc = Scenario(Disk(1.0), ISO(10.0), 1.0)
    system = assemble_scenario(sc, build_domain_mesh(sc, 0.2, degree=2))
    k_ref = bessel_disk_eigenvalues(10.0, (5.0, 5.6))[0]
    pairs = real_eigenvalues(system, (5.0**2, 5.6**2))
    assert pairs
    assert min(abs(p.k - k_ref) for p in pairs) / k_ref < 5e-3
    assert all(p.residual < 1e-8 for p in pairs)


def test_pencil_splits_into_auxiliary_and_compact_parts():
    sc = Scenario(Rectangle(1.0, 0.7), AnisotropicTensor(4.0, 0.5, 3.0), 1.5)
    s = assemble_scenario(sc, build_domain_mesh(sc, 0.2, degree=2))
    diff = s.K - (s.A_mat - s.C_mat)
    assert abs(diff).max() <= 1e-12 * abs(s.K).max()


def test_defect_without_contrast_leaves_spectrum_unchanged():
    A = AnisotropicTensor(6.0, 0.5, 5.0)
    d = DefectSpec((0.2, 0.1), Disk(0.2), A, 1.0)
    sc = Scenario(Disk(1.0), A, 1.0, (d,))
    mesh = build_domain_mesh(sc, 0.25, defect_h=0.08, degree=1)
    window = (1.0, 60.0)
    bg = [p.tau for p in real_eigenvalues(assemble_scenario(sc, mesh, BACKGROUND), window)]
    pe = [p.tau for p in real_eigenvalues(assemble_scenario(sc, mesh, PERTURBED), window)]
    assert bg and np.allclose(bg, pe, rtol=1e-10)


def test_non_spd_coefficients_rejected():
    sc = Scenario(Disk(1.0), ISO(2.0), 1.0)
    mesh = build_domain_mesh(sc, 0.3)
    A_tab = np.array([np.eye(2)] * 3)
    A_tab[TAG_D] = [[1.0, 2.0], [2.0, 1.0]]
    with pytest.raises(ValidationError, match="positive definite"):
        assemble_tev(mesh, A_tab, np.ones(3), 1.0)
    with pytest.raises(ValidationError):
        assemble_tev(mesh, np.array([np.eye(2)] * 3), np.ones(3), 0.0)


def test_window_validation():
    sc = Scenario(Disk(1.0), ISO(2.0), 1.0)
    s = assemble_scenario(sc, build_domain_mesh(sc, 0.3))
    with pytest.raises(ValidationError):
        real_eigenvalues(s, (5.0, 1.0))


def test_sampling_sweep_peaks_where_data_degenerates():
    ks = np.round(np.arange(5.0, 5.61, 0.02), 10)
    Fs = [MultistaticMatrix((0.1 + abs(k - 5.3)) * np.eye(16, dtype=complex), k) for k in ks]
    sweep = lsm_ksweep(Fs, (0.0, 0.0), 1e-4)
    assert sweep.peak_wavenumbers == pytest.approx([5.3])
    with pytest.raises(ValidationError):
        lsm_ksweep(Fs[::-1], (0.0, 0.0), 1e-4)


def test_eigenpair_csv_columns(tmp_path):
    sc = Scenario(Disk(1.0), ISO(10.0), 1.0)
    s = assemble_scenario(sc, build_domain_mesh(sc, 0.3, degree=1))
    pairs = real_eigenvalues(s, (20.0, 40.0))
    rows = eigenpairs_to_csv(pairs, tmp_path / "ev.csv").read_text().splitlines()
    assert rows[0] == "index,tau,k,residual,flag"
    assert len(rows) == len(pairs) + 1
    tau, k = map(float, rows[1].split(",")[1:3])
    assert k == pytest.approx(np.sqrt(tau), rel=1e-15)
