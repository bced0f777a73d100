import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumphedge.model import (
    CoefficientField,
    LevyMeasure,
    MisspecifiedModel,
    Payoff,
    RateCurve,
    SamplingGrid,
    TrueModel,
    check_domination,
    discount,
    fingerprint,
    payoff_slope,
    payoff_value,
    validate_models,
)

ZERO = RateCurve.constant(0.0)
GRID = SamplingGrid(1.0, 1.0, 400.0, 11, 41)


def bs_pair(sigma=0.2, gamma=0.2):
    true = TrueModel(100.0, ZERO, CoefficientField.constant(sigma, "true-vol"),
                     CoefficientField.zero("true-jump"), LevyMeasure.empty())
    mis = MisspecifiedModel(ZERO, CoefficientField.constant(gamma), CoefficientField.zero(),
                            LevyMeasure.empty())
    return true, mis


def jump_pair(eta, gt, sigma=0.0, gamma=0.0, w=0.5):
    lev = LevyMeasure.single(1.0, w)
    true = TrueModel(100.0, ZERO, CoefficientField.constant(sigma, "true-vol"),
                     CoefficientField.constant(eta, "true-jump"), lev)
    mis = MisspecifiedModel(ZERO, CoefficientField.constant(gamma),
                            CoefficientField.constant(gt, "model-jump"), lev)
    return true, mis


# ---------------------------------------------------------------- oracles


def test_discount_oracles():
    assert discount(ZERO, 0.3, 0.9) == 1.0
    assert discount(RateCurve.constant(0.02), 0.0, 1.0) == pytest.approx(math.exp(0.02), abs=1e-12)
    pw = RateCurve.piecewise([0.01, 0.03], [0.5])
    assert discount(pw, 0.0, 1.0) == pytest.approx(math.exp(0.02), abs=1e-12)
    assert math.exp(0.02) == pytest.approx(1.020201, abs=1e-6)


def test_discount_rejects_reversed_interval():
    with pytest.raises(ValueError):
        discount(ZERO, 1.0, 0.5)


def test_payoff_oracles():
    call = Payoff.call(100.0)
    assert payoff_value(call, 107.0) == 7.0
    assert payoff_slope(call, 107.0) == 1.0
    assert payoff_slope(call, 100.0, "left") == 0.0
    assert payoff_slope(call, 100.0, "right") == 1.0
    lin = Payoff.linear(1.0, 0.0)
    for x in (0.5, 42.0, 1e4):
        assert payoff_value(lin, x) == x
        assert payoff_slope(lin, x, "left") == payoff_slope(lin, x, "right") == 1.0


def test_payoff_rejects_nonpositive_price():
    with pytest.raises(ValueError):
        payoff_value(Payoff.call(100.0), 0.0)
    with pytest.raises(ValueError):
        payoff_slope(Payoff.put(100.0), -1.0)


def test_payoff_lipschitz_and_affine_flag():
    assert Payoff.call(100.0).lipschitz == 1.0
    assert Payoff.straddle(100.0).lipschitz == 1.0
    assert Payoff.linear(2.0).is_affine
    assert not Payoff.call(100.0).is_affine


def test_payoff_rejects_concave_kinks():
    with pytest.raises(ValueError):
        Payoff.piecewise_linear([100.0], [1.0, 0.0])


def test_validation_passes_for_black_scholes():
    true, mis = bs_pair()
    assert validate_models(true, mis, GRID).passed


def test_validation_flags_example_floor_with_worst_minus_two():
    mis = MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.rho_affine(4.0, -2.0),
                            LevyMeasure.single(1.0, 0.1))
    true = TrueModel(1.0, ZERO, CoefficientField.zero("true-vol"), CoefficientField.zero("true-jump"),
                     mis.levy)
    rep = validate_models(true, mis, SamplingGrid(5.0, 1.0, 3.0, 6, 21))
    chk = rep["rho_tilde_prime_floor"]
    assert not chk.passed
    assert chk.worst == pytest.approx(-2.0, abs=1e-9)


def test_log_moment_atom_sum():
    true, mis = jump_pair(0.1, 0.1)
    rep = validate_models(true, mis, GRID, log_moment_bound=1.0)
    chk = rep["log_moment_square"]
    assert chk.passed
    assert chk.worst == pytest.approx(0.5 * math.log(1.1) ** 2, rel=1e-9)
    assert chk.worst == pytest.approx(0.004543, abs=1e-6)


def test_domination_oracles():
    assert check_domination(*bs_pair(0.15, 0.25), GRID).passed
    assert check_domination(*jump_pair(0.1, 0.2), GRID).passed
    assert not check_domination(*jump_pair(-0.1, -0.05), GRID).passed


def test_domination_requires_shared_atoms():
    true, _ = jump_pair(0.1, 0.2)
    _, mis = bs_pair()
    with pytest.raises(ValueError):
        check_domination(true, mis, GRID)


def test_rho_prime_analytic_matches_finite_difference():
    f = CoefficientField.saturating(0.15, 0.1, 100.0)
    s = np.linspace(5.0, 300.0, 30)
    t = np.zeros_like(s)
    h = 1e-5 * s
    fd = (f.rho(t, s + h) - f.rho(t, s - h)) / (2 * h)
    np.testing.assert_allclose(f.rho_prime(t, s), fd, rtol=1e-7)


def test_levy_from_density_total_mass():
    lev = LevyMeasure.from_density(lambda z: np.exp(-z * z / 2) / math.sqrt(2 * math.pi), -6.0, 6.0, 40)
    assert lev.total_mass == pytest.approx(math.erf(6.0 / math.sqrt(2.0)), abs=1e-12)


def test_levy_scaled_drops_zero_weights():
    lev = LevyMeasure(((1.0, 0.5), (-1.0, 0.3)))
    assert lev.scaled([0.0, 2.0]).atoms == ((-1.0, 0.6),)


def test_fingerprint_is_order_independent():
    assert fingerprint({"a": 1, "b": [1, 2]}) == fingerprint({"b": [1, 2], "a": 1})
    true, mis = bs_pair()
    assert mis.fingerprint == bs_pair()[1].fingerprint
    assert mis.fingerprint != bs_pair(gamma=0.3)[1].fingerprint


# ---------------------------------------------------------------- properties


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.1, 0.1), min_size=1, max_size=4),
       st.lists(st.floats(0.05, 0.95), min_size=3, max_size=3, unique=True))
def test_discount_cocycle(rates, cut):
    bps = list(np.linspace(0.2, 0.8, len(rates) - 1))
    r = RateCurve.piecewise(rates, bps) if bps else RateCurve.constant(rates[0])
    t0, t1, t2 = sorted(cut)
    lhs = discount(r, t0, t1) * discount(r, t1, t2)
    assert abs(lhs - discount(r, t0, t2)) <= 1e-14 * discount(r, t0, t2) + 1e-15


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(1.0, 200.0), min_size=1, max_size=4, unique=True),
       st.lists(st.floats(-2.0, 2.0), min_size=5, max_size=5),
       st.floats(0.01, 500.0))
def test_payoff_slopes_bounded_and_one_sided(knots, slopes, x):
    knots = sorted(knots)
    p = Payoff.piecewise_linear(knots, sorted(slopes[: len(knots) + 1]))
    left, right = payoff_slope(p, x, "left"), payoff_slope(p, x, "right")
    assert abs(left) <= p.lipschitz and abs(right) <= p.lipschitz
    h = 1e-7 * x
    assert (payoff_value(p, x + h) - payoff_value(p, x)) / h == pytest.approx(right, abs=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1.0, 200.0), min_size=1, max_size=4, unique=True),
       st.lists(st.floats(-2.0, 2.0), min_size=5, max_size=5))
def test_convex_payoff_slopes_monotone(knots, slopes):
    knots = sorted(knots)
    p = Payoff.piecewise_linear(knots, sorted(slopes[: len(knots) + 1]))
    xs = np.linspace(0.5, 300.0, 400)
    d = p.slope(xs, "right")
    assert np.all(np.diff(d) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_domination_antisymmetry(a, b):
    forward = check_domination(*bs_pair(a, b), GRID).passed
    backward = check_domination(*bs_pair(b, a), GRID).passed
    assert forward or backward
    if a != b:
        assert forward != backward
