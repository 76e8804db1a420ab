import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisoscat.asymptotics import (CONTRAST_SIGN, DefectStrength, EigenData, PointData,
                                   boundary_integral_polarization, corrector_q, disk_polarization,
                                   ellipse_polarization, eoc, polarization_tensor,
                                   predict_eigenvalue_shift, recover_strength)
from anisoscat.errors import ValidationError
from anisoscat.mesh import build_domain_mesh
from anisoscat.scenario import AnisotropicTensor, Disk, Ellipse, Scenario
from anisoscat.studies import run_study
from anisoscat.tev import apply_A_inverse, assemble_scenario
from oracles import ellipse_depolarization


@pytest.mark.parametrize("a,a1", [(2.0, 5.0), (10.0, 2.0)])
def test_fem_polarization_of_disk_matches_closed_form(a, a1):
    M = polarization_tensor(Disk(1.0), a * np.eye(2), a1 * np.eye(2)).M
    ref = disk_polarization(a, a1)
    assert np.abs(M - ref).max() <= 0.02 * np.abs(ref).max()


@pytest.mark.parametrize("sa,sb,a,a1", [(1.0, 0.5, 1.0, 4.0), (2.0, 1.0, 3.0, 0.5),
                                        (1.0, 1.0, 10.0, 2.0)])
def test_boundary_integral_and_closed_form_match_depolarization(sa, sb, a, a1):
    ref = ellipse_depolarization(a, a1, sa, sb)
    bie = boundary_integral_polarization(Ellipse(sa, sb, 0.0), a, a1, n_points=256)
    assert np.allclose(bie, ref, rtol=1e-8, atol=1e-10 * np.abs(ref).max())
    assert np.allclose(ellipse_polarization(a, a1, sa, sb), ref, rtol=1e-12)


def test_rotated_ellipse_polarization_is_similar():
    M0 = ellipse_polarization(2.0, 6.0, 1.0, 0.4)
    M = ellipse_polarization(2.0, 6.0, 1.0, 0.4, rotation=0.7)
    assert np.allclose(np.linalg.eigvalsh(M), np.sort(np.diag(M0)))
    bie = boundary_integral_polarization(Ellipse(1.0, 0.4, 0.7), 2.0, 6.0, n_points=256)
    assert np.allclose(bie, M, rtol=1e-7, atol=1e-9)


def test_auxiliary_solve_is_riesz_representer():
    sc = Scenario(Disk(1.0), AnisotropicTensor.isotropic(4.0), 1.0)
    s = assemble_scenario(sc, build_domain_mesh(sc, 0.25))
    rhs = np.random.default_rng(1).standard_normal(s.dim)
    y = apply_A_inverse(s, rhs)
    assert np.linalg.norm(s.A_mat @ y - s.R @ rhs) <= 1e-10 * np.linalg.norm(s.R @ rhs)
    assert not np.any(apply_A_inverse(s, np.zeros(s.dim)))


def _point(rng):
    g1, g2 = rng.standard_normal(2), rng.standard_normal(2)
    return PointData(rng.standard_normal(), g1, rng.standard_normal(), g2)


@settings(max_examples=30, deadline=None)
@given(st.floats(-9, 9), st.floats(-50, 50), st.integers(0, 10**6))
def test_strength_recovery_inverts_the_shift_formula(x1, q, seed):
    rng = np.random.default_rng(seed)
    data = [EigenData(tau, (_point(rng),), rng.uniform(0.5, 2)) for tau in (20.0, 70.0)]
    eps = 0.1
    measured = [predict_eigenvalue_shift(ed, [DefectStrength(x1 * np.eye(2), q)], eps)[0]
                for ed in data]
    try:
        est = recover_strength(measured, data, eps)
    except ValidationError:
        return
    if est.cond > 1e6:
        return
    assert est.contrast == pytest.approx(x1, abs=1e-6 * est.cond)
    assert est.q == pytest.approx(q, abs=1e-6 * est.cond * (1 + abs(q)))


def test_formula_uses_audited_sign():
    pd = PointData(0.0, np.array([1.0, 0.0]), 0.0, np.array([1.0, 0.0]))
    ed = EigenData(10.0, (pd,), 1.0)
    tau, _ = predict_eigenvalue_shift(ed, [DefectStrength(-8 * np.eye(2))], 0.5)
    assert CONTRAST_SIGN == -1.0
    assert tau - 10.0 == pytest.approx(10.0 * 0.25 * 8)


def test_formula_guards():
    pd = PointData(1.0, np.ones(2), 1.0, np.ones(2))
    st_ = [DefectStrength(np.eye(2))]
    with pytest.raises(ValidationError, match="simple"):
        predict_eigenvalue_shift(EigenData(1.0, (pd,), 1.0, flag="clustered"), st_, 0.1)
    with pytest.raises(ValidationError, match="index"):
        predict_eigenvalue_shift(EigenData(1.0, (pd,), 1.0), st_, 0.1, index_contrast=True)
    with pytest.raises(ValidationError, match="at least two"):
        recover_strength([1.0], [EigenData(1.0, (pd,), 1.0)], 0.1)


def test_eoc():
    assert eoc([1.0, 0.25, 0.0625]) == pytest.approx([2.0, 2.0])
    with pytest.raises(ValidationError):
        eoc([1.0, 0.0])


def test_measured_shifts_follow_audited_sign_and_first_order_term():
    rep = run_study("shift-audit", {"eps": [1 / 8]})
    assert rep.summary["convention"] == "A-A_m" and rep.summary["unanimous"]
    for meas, fo in zip(rep.column("measured"), rep.column("first_order")):
        assert meas > 0
        assert abs(fo - meas) <= 0.25 * meas


def test_boundary_flux_constant_vanishes_for_symmetric_defect():
    g = np.array([1.0, 0.5])
    q = corrector_q(Disk(1.0), 10 * np.eye(2), 2 * np.eye(2), g, check_doubling=False)["q"]
    scale = 8 * np.linalg.norm(g) * 2 * np.pi
    assert abs(q) <= 1e-4 * scale
