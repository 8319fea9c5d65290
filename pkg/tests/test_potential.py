import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volac.field import Field
from volac.potential import (Potential, critical_exponent, double_well, nemytskii_B,
                             nemytskii_dB, polynomial, potential_eval, validate_growth)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_double_well_values(pot):
    assert potential_eval(pot, 0.0, 0) == 0.25
    assert potential_eval(pot, 1.0, 1) == 0.0
    assert potential_eval(pot, 0.0, 2) == -1.0


def test_eval_rejects_order(pot):
    with pytest.raises(ValueError):
        potential_eval(pot, 0.0, 3)


def test_growth_double_well_planar(pot):
    assert validate_growth(pot, 2, (-10.0, 10.0)).ok


def test_growth_double_well_three_dimensions(pot):
    rep = validate_growth(pot, 3)
    assert rep.ok and rep.p_n == 6.0


def test_growth_exponential_fails():
    e = Potential(W=np.exp, dW=np.exp, d2W=np.exp, p=4.0, K1=3.0, K2=3.0)
    rep = validate_growth(e, 2, (-50.0, 50.0))
    assert not rep.ok
    assert rep.offending_t is not None and rep.offending_t > 0


def test_growth_exponent_above_critical():
    quintic = polynomial([0, 0, 0, 0, 0, 0, 1.0], p=7.0)
    assert not validate_growth(quintic, 3).ok


def test_critical_exponent():
    assert critical_exponent(2) == np.inf
    assert critical_exponent(3) == 6.0
    assert critical_exponent(4) == 4.0


def test_polynomial_matches_double_well(pot):
    poly = polynomial([0.25, 0, -0.5, 0, 0.25])
    t = np.linspace(-2, 2, 41)
    for order in range(3):
        np.testing.assert_allclose(poly(t, order), pot(t, order), atol=1e-14)
    assert validate_growth(poly, 2).ok


@pytest.mark.parametrize("which", ["double_well", "polynomial"])
@settings(max_examples=20, deadline=None)
@given(st.lists(finite, min_size=1, max_size=50))
def test_chain_rule_second_order(which, ts):
    p = double_well() if which == "double_well" else polynomial([0.1, -0.3, 0.2, 0.5, 0.3])
    t = np.array(ts)
    for f, df in ((p.W, p.dW), (p.dW, p.d2W)):
        errs = []
        for h in (1e-2, 5e-3):
            errs.append(np.abs((f(t + h) - f(t - h)) / (2 * h) - df(t)).max())
        if errs[0] > 1e-11:
            assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.03)


def test_B_examples(grid16, pot):
    zero = Field.zeros(grid16)
    assert np.abs(nemytskii_B(pot, zero, 0.0).values).max() == 0.0
    one = Field.constant(grid16, 1.0)
    np.testing.assert_allclose(nemytskii_B(pot, one, 2.0).values, 3.0, rtol=1e-15)


def test_B_on_cosine(grid16, pot):
    u = Field.from_function(grid16, lambda x, y: np.cos(2 * np.pi * x))
    c = np.cos(2 * np.pi * grid16.points[0])
    np.testing.assert_allclose(nemytskii_B(pot, u, 0.0).values, 2 * c - c ** 3, atol=1e-13)


def test_dB_examples(grid16, pot):
    zero = Field.zeros(grid16)
    one = Field.constant(grid16, 1.0)
    np.testing.assert_allclose(nemytskii_dB(pot, zero, 0.0, one, 0.0).values, 2.0, rtol=1e-15)
    u = Field.from_function(grid16, lambda x, y: np.cos(2 * np.pi * y))
    np.testing.assert_allclose(nemytskii_dB(pot, u, 0.0, zero, 0.7).values, 0.7, rtol=1e-15)


def test_dB_matches_central_difference(grid16, pot):
    u = Field.from_function(grid16, lambda x, y: np.cos(2 * np.pi * x))
    v = Field.from_function(grid16, lambda x, y: np.cos(2 * np.pi * (x + y)))
    h, lam, Lam = 1e-4, 0.3, -0.2
    fd = (nemytskii_B(pot, u + v * h, lam + h * Lam) - nemytskii_B(pot, u - v * h, lam - h * Lam)) / (2 * h)
    an = nemytskii_dB(pot, u, lam, v, Lam)
    assert (fd - an).norm() <= 1e-6 * an.norm()


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2 ** 32 - 1))
def test_dB_linear_in_direction(a, b, seed):
    from volac.field import TorusGrid
    grid = TorusGrid(2, 16)
    rng = np.random.default_rng(seed)
    pot = double_well()
    u, v, w = (Field.random(grid, rng) for _ in range(3))
    lhs = nemytskii_dB(pot, u, 0.0, v * a + w * b, a - b)
    rhs = nemytskii_dB(pot, u, 0.0, v, 1.0) * a + nemytskii_dB(pot, u, 0.0, w, -1.0) * b
    assert (lhs - rhs).norm() <= 1e-12 * max(1.0, lhs.norm())
