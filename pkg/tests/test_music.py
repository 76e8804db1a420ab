import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisoscat.errors import ValidationError
from anisoscat.farfield import DirectionSet, MultistaticMatrix, multistatic_asymptotic
from anisoscat.forward import ProbeTable
from anisoscat.music import (COMBINED, DIPOLE, MONOPOLE, estimate_centers, grid_points,
                             music_indicator, noise_subspace, signal_rank)
from anisoscat import music
from anisoscat.scenario import AnisotropicTensor, DefectSpec, Disk, Scenario
from oracles import plane_wave_probe

K = 2 * np.pi
N = 32
WINDOW = ((-1.5, 1.5), (-1.5, 1.5))
RES = 61
CENTERS = [(-0.6, 0.4), (0.5, -0.3)]


def _table(points, dirs):
    u, g = plane_wave_probe(points, dirs, K)
    return ProbeTable(np.atleast_2d(points), dirs, u, g)


def _free_space_data(centers=CENTERS, eps=0.02):
    iso = AnisotropicTensor.isotropic
    defects = tuple(DefectSpec(c, Disk(eps), iso(2.0), 3.0) for c in centers)
    sc = Scenario(Disk(2.0), iso(1.0), 1.0, defects, wavenumber=K, n_directions=N)
    X = DirectionSet(N).vectors
    table = _table(np.array(centers, dtype=float), np.vstack([X, -X]))
    M = [np.pi * eps**2 * 2 / 3 * np.eye(2) for _ in centers]
    F = multistatic_asymptotic(sc, table, M)
    return F, X


@pytest.fixture(scope="module")
def grid_table():
    X = DirectionSet(N).vectors
    _, _, pts = grid_points(WINDOW, RES)
    return _table(pts, -X)


def test_signal_rank_gap_rule():
    assert signal_rank(np.array([1.0, 0.5, 0.0, 0.0])) == 2
    assert signal_rank(np.array([4.0, 3.9, 1e-6, 1e-7, 1e-8]), floor=1e-4) == 2
    with pytest.raises(ValidationError, match="zero"):
        signal_rank(np.zeros(3))
    with pytest.raises(ValidationError, match="zero"):
        noise_subspace(np.zeros((4, 4)))


def test_fixed_rank_bounds():
    F = np.eye(4)
    assert noise_subspace(F, 3)[0].shape == (4, 1)
    with pytest.raises(ValidationError):
        noise_subspace(F, 4)
    with pytest.raises(ValidationError):
        noise_subspace(F, "largest")


@pytest.mark.parametrize("mode", [MONOPOLE, COMBINED])
def test_free_space_points_are_localized(grid_table, mode):
    F, _ = _free_space_data()
    grid = music_indicator(F, grid_table, WINDOW, RES, mode=mode)
    peaks = estimate_centers(grid, expected_count=2)
    assert not peaks.incomplete
    for c in CENTERS:
        assert np.min(np.linalg.norm(peaks.points - c, axis=1)) < grid.spacing


def test_peak_contrast_is_large(grid_table):
    F, _ = _free_space_data()
    grid = music_indicator(F, grid_table, WINDOW, RES)
    v = grid.values[grid.valid]
    assert v.max() >= 10 * np.median(v)


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0, 2 * np.pi))
def test_indicator_invariant_under_data_scaling(scale, phase):
    F, X = _free_space_data()
    window = ((-1, 1), (-1, 1))
    _, _, pts = grid_points(window, 9)
    table = _table(pts, -X)
    ref = music_indicator(F, table, window, 9)
    G = MultistaticMatrix(F.entries * scale * np.exp(1j * phase), F.k)
    out = music_indicator(G, table, window, 9)
    assert out.rank == ref.rank
    assert np.allclose(out.values, ref.values, rtol=1e-6)


def test_flat_indicator_has_no_peaks():
    from anisoscat.music import IndicatorGrid
    xs = np.linspace(0, 1, 5)
    g = IndicatorGrid(xs, xs, np.ones((5, 5)), np.ones((5, 5), bool), 1, (1.0, 0.0), COMBINED)
    assert len(estimate_centers(g)) == 0
    assert estimate_centers(g, expected_count=1).incomplete


def test_polarization_direction_must_be_unit(grid_table):
    with pytest.raises(ValidationError, match="unit"):
        music.test_vectors(grid_table, DIPOLE, b=(1.0, 1.0))
    with pytest.raises(ValidationError, match="mode"):
        music.test_vectors(grid_table, "quadrupole")
