import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastinv.grid import (
    BoundarySpec,
    EdgeSpec,
    GridGeom,
    ScalarField,
    Scales,
    SymTensorField,
    compute_scales,
    constitutive_stress,
    engineering_from_lame,
    lame_from_engineering,
    plane_stress_convert,
    redimensionalize,
)


def _lame_reference(E, nu):
    # invert E = mu(3l+2mu)/(l+mu), nu = l/(2(l+mu)) for (l, mu) with a generic root finder
    from scipy.optimize import fsolve

    def f(v):
        lam, mu = v
        return [mu * (3 * lam + 2 * mu) / (lam + mu) - E, lam / (2 * (lam + mu)) - nu]

    return fsolve(f, [E, E], xtol=1e-14)


def test_lame_unit_case():
    lam, mu = lame_from_engineering(2.5, 0.25)
    assert lam == pytest.approx(1.0, rel=1e-15)
    assert mu == pytest.approx(1.0, rel=1e-15)


def test_lame_white_matter():
    lam, mu = lame_from_engineering(2000.0, 0.35)
    ref = _lame_reference(2000.0, 0.35)
    assert lam == pytest.approx(ref[0], rel=1e-10)
    assert mu == pytest.approx(ref[1], rel=1e-10)
    assert lam == pytest.approx(1728.40, abs=5e-3)
    assert mu == pytest.approx(740.74, abs=5e-3)


def test_lame_small_nu_limit():
    lam, mu = lame_from_engineering(1.0, 1e-9)
    assert lam == pytest.approx(0.0, abs=1e-8)
    assert mu == pytest.approx(0.5, rel=1e-8)


@pytest.mark.parametrize("E,nu", [(1.0, 0.5), (1.0, 0.0), (1.0, -0.1), (0.0, 0.3), (-1.0, 0.3)])
def test_lame_rejects_inadmissible(E, nu):
    with pytest.raises(ValueError):
        lame_from_engineering(E, nu)


def test_engineering_examples():
    assert engineering_from_lame(1.0, 1.0) == pytest.approx((2.5, 0.25), rel=1e-15)
    E, nu = engineering_from_lame(0.0, 0.5)
    assert E == pytest.approx(1.0) and nu == 0.0
    E, nu = engineering_from_lame(1728.40, 740.74)
    assert E == pytest.approx(2000.0, rel=1e-4)
    assert nu == pytest.approx(0.35, rel=1e-4)


def test_engineering_rejects_nonpositive_denominator():
    with pytest.raises(ValueError):
        engineering_from_lame(-1.0, 1.0)


@given(st.floats(100.0, 100e3), st.floats(0.01, 0.49))
def test_round_trip(E, nu):
    E2, nu2 = engineering_from_lame(*lame_from_engineering(E, nu))
    assert abs(E2 - E) <= 1e-12 * E
    assert abs(nu2 - nu) <= 1e-12 * nu


def test_plane_stress_convert_examples():
    assert plane_stress_convert(1.0, 0.0) == (1.0, 0.0)
    E, nu = plane_stress_convert(2.0, 0.5)
    assert E == pytest.approx(2 / 0.75) and nu == pytest.approx(0.5 / 0.75)
    E, nu = plane_stress_convert(1.0, 0.3)
    assert E == pytest.approx(1.0989, abs=1e-4) and nu == pytest.approx(0.32967, abs=1e-5)
    with pytest.raises(ValueError):
        plane_stress_convert(1.0, 1.0)


def _fields(geom, M, L, exx, eyy, exy):
    def f(v):
        return ScalarField(geom, np.broadcast_to(v, geom.shape))

    return f(M), f(L), SymTensorField(f(exx), f(eyy), f(exy))


@pytest.mark.parametrize(
    "M,L,eps,expected",
    [
        (1.0, 1.0, (1.0, 1.0, 0.0), (4.0, 4.0, 0.0)),
        (3.7, -2.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        (1.0, 0.0, (0.0, 0.0, 0.5), (0.0, 0.0, 1.0)),
    ],
)
def test_constitutive_examples(M, L, eps, expected):
    geom = GridGeom(3, 2, 1.0, 1.0)
    S = constitutive_stress(*_fields(geom, M, L, *eps))
    np.testing.assert_allclose(S.stack()[:, 0, 0], expected, atol=1e-15)


def test_constitutive_swap_symmetry_and_linearity():
    rng = np.random.default_rng(0)
    geom = GridGeom(5, 4, 1.0, 1.0)
    M, L, a, b, c = (ScalarField(geom, rng.normal(size=geom.shape)) for _ in range(5))
    S = constitutive_stress(M, L, SymTensorField(a, b, c))
    Sw = constitutive_stress(M, L, SymTensorField(b, a, c))
    np.testing.assert_allclose(S.xx.values, Sw.yy.values, rtol=1e-14)
    np.testing.assert_allclose(S.xy.values, Sw.xy.values, rtol=1e-14)
    S2 = constitutive_stress(M, L, SymTensorField.from_arrays(geom, 2 * a.values, 2 * b.values, 2 * c.values))
    np.testing.assert_allclose(S2.stack(), 2 * S.stack(), rtol=1e-13)
    S3 = constitutive_stress(ScalarField(geom, 3 * M.values), ScalarField(geom, 3 * L.values),
                             SymTensorField(a, b, c))
    np.testing.assert_allclose(S3.stack(), 3 * S.stack(), rtol=1e-13)


def test_constitutive_shape_mismatch():
    g1, g2 = GridGeom(3, 3, 1, 1), GridGeom(4, 3, 1, 1)
    M, L, eps = _fields(g1, 1, 1, 0, 0, 0)
    with pytest.raises(ValueError):
        constitutive_stress(ScalarField.constant(g2, 1.0), L, eps)


def test_compute_scales_examples():
    bc = BoundarySpec(top=EdgeSpec(normal=100.0))
    s = compute_scales(GridGeom(5, 3, 2.0, 1.0), bc)
    assert (s.l0, s.sigma0) == (1.5, 100.0)
    bc = BoundarySpec(top=EdgeSpec(normal=50.0), bottom=EdgeSpec(normal=-80.0))
    assert compute_scales(GridGeom(3, 3, 1.0, 1.0), bc).sigma0 == 80.0
    s = compute_scales(GridGeom(3, 3, 0.3, 0.3), BoundarySpec(left=EdgeSpec(normal=-7.0)))
    assert s.l0 == pytest.approx(0.3) and s.sigma0 == 7.0


def test_compute_scales_needs_traction():
    bc = BoundarySpec(top=EdgeSpec(normal=0.0, shear=5.0))
    with pytest.raises(ValueError):
        compute_scales(GridGeom(3, 3, 1.0, 1.0), bc)


def test_redimensionalize_examples():
    E, nu, valid = redimensionalize(np.full((2, 2), 0.5), np.zeros((2, 2)), Scales(1.0, 1000.0))
    np.testing.assert_allclose(E, 1000.0)
    np.testing.assert_allclose(nu, 0.0)
    assert valid.all()
    E, nu, _ = redimensionalize(np.ones((2, 2)), np.ones((2, 2)), Scales(1.0, 2.0))
    np.testing.assert_allclose(E, 5.0)
    np.testing.assert_allclose(nu, 0.25)


def test_redimensionalize_scale_cancellation_and_mask():
    rng = np.random.default_rng(1)
    M = rng.uniform(0.5, 2, (4, 4))
    L = rng.uniform(0.1, 5, (4, 4))
    E1, nu1, _ = redimensionalize(M, L, Scales(1.0, 30.0))
    E2, nu2, _ = redimensionalize(10 * M, 10 * L, Scales(1.0, 3.0))
    np.testing.assert_allclose(E1, E2, rtol=1e-13)
    np.testing.assert_allclose(nu1, nu2, rtol=1e-13)
    M[0, 0] = -1.0
    L[1, 1] = -M[1, 1] - 0.1
    E, nu, valid = redimensionalize(M, L, Scales(1.0, 1.0))
    assert not valid[0, 0] and not valid[1, 1] and valid.sum() == 14
    assert np.isnan(E[0, 0]) and np.isnan(nu[1, 1])


def test_grid_geometry_invariants():
    with pytest.raises(ValueError):
        GridGeom(1, 4, 1.0, 1.0)
    with pytest.raises(ValueError):
        GridGeom(4, 4, 0.0, 1.0)
    g = GridGeom(5, 3, 2.0, 1.0)
    X, Y = g.coordinates()
    assert X.shape == (3, 5)
    assert X[0, 4] == pytest.approx(2.0) and Y[2, 0] == pytest.approx(1.0) and Y[0, 0] == 0.0


def test_scalar_field_rejects_nonfinite_and_is_immutable():
    g = GridGeom(2, 2, 1.0, 1.0)
    with pytest.raises(ValueError):
        ScalarField(g, [[0.0, np.nan], [0.0, 0.0]])
    f = ScalarField.constant(g, 1.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


@settings(max_examples=50)
@given(st.floats(0.1, 50.0), st.floats(0.1, 50.0), st.floats(0.01, 100.0))
def test_nu_invariant_under_joint_scaling(M, L, c):
    _, nu1, _ = redimensionalize(np.array([[M]]), np.array([[L]]), Scales(1.0, 1.0))
    _, nu2, _ = redimensionalize(np.array([[c * M]]), np.array([[c * L]]), Scales(1.0, 1.0))
    assert nu1[0, 0] == pytest.approx(nu2[0, 0], rel=1e-12)
