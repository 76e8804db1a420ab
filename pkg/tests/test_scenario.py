import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisoscat.errors import GeometryError, ValidationError
from anisoscat.scenario import (REGIME_MAX_LT_1, REGIME_MIN_GT_1, REGIME_UNSUPPORTED,
                                AnisotropicTensor, DefectSpec, Disk, Ellipse, Rectangle,
                                Scenario)

spd = st.tuples(st.floats(0.2, 20), st.floats(-0.9, 0.9), st.floats(0.2, 20)).map(
    lambda t: AnisotropicTensor(t[0], t[1] * math.sqrt(t[0] * t[2]), t[2]))


@settings(max_examples=40, deadline=None)
@given(A=spd, Am=spd, n=st.floats(0.1, 10), x=st.floats(-0.5, 0.5), y=st.floats(-0.5, 0.5),
       r=st.floats(0.05, 0.3))
def test_json_round_trip_preserves_scenario_and_hash(A, Am, n, x, y, r):
    d = DefectSpec((x, y), Disk(r), Am, 2.0)
    sc = Scenario(Rectangle(1.0, 1.0), A, n, (d,), wavenumber=2.5, n_directions=12)
    back = Scenario.from_json(sc.to_json())
    assert back == sc
    assert back.hash == sc.hash


def test_unknown_field_is_reported_with_line():
    sc = Scenario(Disk(1.0), AnisotropicTensor.isotropic(2.0), 1.0)
    d = sc.to_dict()
    d["colour"] = "red"
    with pytest.raises(ValidationError, match="line .*colour"):
        Scenario.from_json(json.dumps(d, indent=2))


def test_schema_mismatch_rejected():
    with pytest.raises(ValidationError, match="schema"):
        Scenario.from_dict({"schema": "other/1"})


def test_malformed_json_reports_position():
    with pytest.raises(ValidationError, match="line 1"):
        Scenario.from_json("{")


@pytest.mark.parametrize("a11,a12,a22", [(1, 2, 1), (-1, 0, 1), (0, 0, 1)])
def test_non_spd_tensor_rejected(a11, a12, a22):
    with pytest.raises(ValidationError, match="positive definite"):
        AnisotropicTensor(a11, a12, a22)


def test_tensor_eigenvalues():
    A = AnisotropicTensor(10, 1, 10)
    assert np.allclose(A.eigenvalues, [9, 11])
    assert not A.is_isotropic and AnisotropicTensor.isotropic(3).is_isotropic


def test_regimes():
    iso = AnisotropicTensor.isotropic
    assert Scenario(Disk(1), iso(10), 1.0).regime == REGIME_MIN_GT_1
    assert Scenario(Disk(1), iso(0.5), 1.0).regime == REGIME_MAX_LT_1
    d = DefectSpec((0, 0), Disk(0.2), iso(0.5))
    assert Scenario(Disk(1), iso(10), 1.0, (d,)).regime == REGIME_UNSUPPORTED


def test_geometry_checks():
    iso = AnisotropicTensor.isotropic
    near_edge = DefectSpec((0.85, 0), Disk(0.1))
    with pytest.raises(GeometryError, match="containment"):
        Scenario(Disk(1), iso(2), 1.0, (near_edge,)).check_geometry(0.1)
    a, b = DefectSpec((0, 0), Disk(0.2)), DefectSpec((0.45, 0), Disk(0.2))
    with pytest.raises(GeometryError, match="separation"):
        Scenario(Disk(1), iso(2), 1.0, (a, b)).check_geometry(0.1)
    ok = Scenario(Disk(1), iso(2), 1.0, (a, DefectSpec((0.6, 0), Disk(0.2))))
    assert ok.check_geometry(0.1)["c0_separation"] == 0.1


@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0, math.pi))
def test_shape_areas(a, b, rot):
    assert Ellipse(a, b, rot).area == pytest.approx(math.pi * a * b)
    assert Rectangle(a, b).area == pytest.approx(4 * a * b)


def test_reference_area_uses_epsilon():
    d = DefectSpec((0, 0), Disk(0.25), epsilon=0.25)
    assert d.reference_area == pytest.approx(math.pi)
