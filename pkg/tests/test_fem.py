import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from anisoscat.fem import FESpace
from anisoscat.mesh import (EDGE_D, TAG_D, TAG_DEFECT0, TAG_PML, build_domain_mesh, build_mesh,
                            refine)
from anisoscat.scenario import AnisotropicTensor, DefectSpec, Disk, Ellipse, Rectangle, Scenario
from anisoscat.errors import GeometryError
from oracles import manufactured

ISO = AnisotropicTensor.isotropic


@pytest.mark.parametrize("domain", [Disk(1.0), Ellipse(2.0, 1.0, 0.3), Rectangle(1.0, 0.5)])
def test_domain_mesh_preserves_area(domain):
    m = build_domain_mesh(Scenario(domain, ISO(2), 1.0), 0.1)
    assert m.areas.sum() == pytest.approx(domain.area, rel=1e-12)
    assert m.min_angle() > 15


def test_defect_region_area_and_tags():
    d = DefectSpec((0.2, 0.1), Disk(0.2))
    m = build_domain_mesh(Scenario(Disk(1.0), ISO(2), 1.0, (d,)), 0.1, defect_h=0.04)
    assert m.region_area(TAG_DEFECT0) == pytest.approx(d.area, rel=1e-12)
    assert m.region_area(TAG_D) == pytest.approx(np.pi - d.area, rel=1e-12)


def test_scattering_mesh_layers():
    sc = Scenario(Rectangle(1, 1), ISO(2), 1.0, wavenumber=2.0)
    m = build_mesh(sc, 0.2, 1 + sc.wavelength, 1.0, h_exterior=0.4)
    assert m.region_area(TAG_D) == pytest.approx(4.0)
    L = 1 + sc.wavelength + 1.0
    assert m.areas.sum() == pytest.approx((2 * L) ** 2)
    assert m.region_area(TAG_PML) == pytest.approx((2 * L) ** 2 - (2 * L - 2) ** 2)


def test_unresolved_defect_rejected():
    d = DefectSpec((0, 0), Disk(0.01))
    with pytest.raises(GeometryError):
        build_domain_mesh(Scenario(Disk(1.0), ISO(2), 1.0, (d,)), 0.1)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.3, 2.0), st.sampled_from([1, 2]))
def test_mass_matrix_integrates_constants(hx, hy, degree):
    m = build_domain_mesh(Scenario(Rectangle(hx, hy), ISO(2), 1.0), 0.25, degree=degree)
    V = FESpace(m)
    one = np.ones(V.n_dofs)
    assert one @ (V.mass() @ one) == pytest.approx(4 * hx * hy, rel=1e-12)
    assert np.abs(V.stiffness() @ one).max() < 1e-10


def _solve_reaction_diffusion(V):
    K = V.stiffness() + V.mass()
    b = V.load(lambda x, t: 6 * manufactured(x))
    bd = V.boundary_dofs(EDGE_D)
    u = np.zeros(V.n_dofs)
    u[bd] = manufactured(V.dof_coords[bd])
    free = np.setdiff1d(np.arange(V.n_dofs), bd)
    rhs = b - K @ u
    u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs[free])
    return u


@pytest.mark.parametrize("degree,order", [(1, 1.8), (2, 2.7)])
def test_manufactured_solution_converges(degree, order):
    m = build_domain_mesh(Scenario(Disk(1.0), ISO(2), 1.0), 0.2, degree=degree)
    errs = []
    for _ in range(4):
        V = FESpace(m)
        u = _solve_reaction_diffusion(V)
        errs.append(V.l2_norm(u - V.interpolate(manufactured)))
        m = refine(m)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates[-1] > order
    assert np.all(np.diff(errs) < 0)


def test_evaluate_gradient_of_linear_function_is_exact():
    m = build_domain_mesh(Scenario(Ellipse(1.5, 1.0, 0.2), ISO(2), 1.0), 0.2, degree=2)
    V = FESpace(m)
    u = V.interpolate(lambda p: 2 * p[:, 0] - 3 * p[:, 1] + 1)
    val, grad = V.evaluate(u, [[0.1, 0.2], [-0.4, 0.3]])
    assert np.allclose(val, [0.6, -0.7])
    assert np.allclose(grad, [[2, -3], [2, -3]])
