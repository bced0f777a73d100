import math

import numpy as np
import pytest

from jumphedge.hedge import (
    checkpoint_columns,
    hedging_error_decomposed,
    pi_monotonicity_check,
    price_domination_check,
    run_delta_hedge,
    submartingale_test,
)
from jumphedge.model import CoefficientField, LevyMeasure, MisspecifiedModel, Payoff, RateCurve, TrueModel
from jumphedge.oracles import black_scholes_call
from jumphedge.pide import SpaceGrid, solve_pide
from jumphedge.sim import MeasureChange, TimeGrid, simulate_true, summarize

ZERO = RateCurve.constant(0.0)
SEED = 20240601
CALL = Payoff.call(100.0)
CP = [0.0, 0.25, 0.5, 0.75, 1.0]
X = SpaceGrid(1.0, 400.0, 400)


def true_bs(sigma, rate=ZERO):
    return TrueModel(100.0, rate, CoefficientField.constant(sigma, "true-vol"),
                     CoefficientField.zero("true-jump"), LevyMeasure.empty())


def mis_bs(gamma, rate=ZERO):
    return MisspecifiedModel(rate, CoefficientField.constant(gamma), CoefficientField.zero(),
                             LevyMeasure.empty())


LEV = LevyMeasure.single(1.0, 1.0)


def true_jd(sigma=0.15, eta=0.1):
    return TrueModel(100.0, ZERO, CoefficientField.constant(sigma, "true-vol"),
                     CoefficientField.constant(eta, "true-jump"), LEV)


def mis_jd(gamma=0.2, gt=0.2):
    return MisspecifiedModel(ZERO, CoefficientField.constant(gamma),
                             CoefficientField.constant(gt, "model-jump"), LEV)


@pytest.fixture(scope="module")
def bs25():
    return solve_pide(mis_bs(0.25), CALL, TimeGrid(1.0, 400), X)


@pytest.fixture(scope="module")
def jd():
    return solve_pide(mis_jd(), CALL, TimeGrid(1.0, 200), X)


def test_linear_payoff_hedge_is_perfect():
    rate = RateCurve.constant(0.03)
    mm = MisspecifiedModel(rate, CoefficientField.constant(0.4),
                           CoefficientField.constant(0.3, "model-jump"), LEV)
    tm = TrueModel(100.0, rate, CoefficientField.constant(0.2, "true-vol"),
                   CoefficientField.constant(0.1, "true-jump"), LEV)
    vs = solve_pide(mm, Payoff.linear(1.0), TimeGrid(1.0, 40), X)
    ps = simulate_true(tm, TimeGrid(1.0, 40), 500, SEED)
    hr = run_delta_hedge(ps, vs, checkpoints=CP)
    assert np.max(np.abs(hr.disc_error_nodes)) <= 1e-10 * 100.0
    dec = hedging_error_decomposed(ps, vs, tm, mm)
    for term in (dec.term1, dec.term2, dec.term3):
        assert np.max(np.abs(term)) <= 1e-9


def test_terminal_identity_per_path(bs25):
    ps = simulate_true(true_bs(0.15), TimeGrid(1.0, 40), 2000, SEED)
    hr = run_delta_hedge(ps, bs25, checkpoints=CP)
    np.testing.assert_array_equal(hr.error_samples[:, -1], hr.portfolio_terminal - CALL(ps.terminal))
    assert hr.v0 == pytest.approx(bs25.price(100.0), rel=1e-14)


def test_black_scholes_pair_mean_error(bs25):
    ps = simulate_true(true_bs(0.15), TimeGrid(1.0, 100), 10000, SEED)
    hr = run_delta_hedge(ps, bs25, checkpoints=CP)
    mean, se = summarize(hr.terminal_error)
    exact = black_scholes_call(100.0, 100.0, 0.25, 1.0) - black_scholes_call(100.0, 100.0, 0.15, 1.0)
    assert exact == pytest.approx(3.9691, abs=1e-4)
    assert abs(mean - 3.9691) <= 3 * se
    assert hr.exclusion_rate == 0.0


def test_correct_model_hedge_converges():
    vs = solve_pide(mis_bs(0.2), CALL, TimeGrid(1.0, 400), X)
    rms = []
    for n in (128, 512):
        ps = simulate_true(true_bs(0.2), TimeGrid(1.0, n), 4000, SEED)
        rms.append(math.sqrt(np.mean(run_delta_hedge(ps, vs).terminal_error ** 2)))
    assert rms[1] < rms[0]
    assert 0.35 < math.log(rms[0] / rms[1]) / math.log(4) < 0.75


def test_checkpoints_must_be_grid_nodes():
    ps = simulate_true(true_bs(0.2), TimeGrid(1.0, 10), 5, SEED)
    with pytest.raises(ValueError):
        checkpoint_columns(ps, [0.0, 0.33])
    t, cols = checkpoint_columns(ps, [0.0, 0.5, 1.0])
    assert t.tolist() == [0.0, 0.5, 1.0] and cols.shape == (5, 3)


def test_decomposition_without_jumps(bs25):
    ps = simulate_true(true_bs(0.15), TimeGrid(1.0, 50), 200, SEED)
    dec = hedging_error_decomposed(ps, bs25, true_bs(0.15), mis_bs(0.25))
    assert np.all(dec.term2 == 0) and np.all(dec.term3 == 0)
    assert np.all(np.diff(dec.term1, axis=1) >= -1e-12)


def test_decomposition_jump_term_matches_direct_jump_loss():
    # pure-jump pair: between jumps both sides drift identically; at jumps term3 carries the loss
    lev = LevyMeasure.single(1.0, 0.5)
    tm = TrueModel(100.0, ZERO, CoefficientField.zero("true-vol"), CoefficientField.constant(0.1, "true-jump"), lev)
    mm = MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.constant(0.2, "model-jump"), lev)
    gaps = []
    for nt, nx in ((50, 101), (100, 201), (200, 401)):
        vs = solve_pide(mm, CALL, TimeGrid(1.0, nt), SpaceGrid(40.0, 300.0, nx))
        ps = simulate_true(tm, TimeGrid(1.0, nt), 2000, SEED)
        hr = run_delta_hedge(ps, vs)
        dec = hedging_error_decomposed(ps, vs, tm, mm)
        gaps.append(float(np.sqrt(np.mean(np.max(np.abs(dec.total - hr.disc_error_nodes), axis=1) ** 2))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_pi_monotone_under_domination(jd):
    ps = simulate_true(true_jd(), TimeGrid(1.0, 100), 2000, SEED)
    assert pi_monotonicity_check(ps, jd, true_jd(), mis_jd()).passed


def test_pi_vanishes_without_misspecification():
    vs = solve_pide(mis_jd(0.15, 0.1), CALL, TimeGrid(1.0, 100), X)
    ps = simulate_true(true_jd(), TimeGrid(1.0, 50), 500, SEED)
    dec = hedging_error_decomposed(ps, vs, true_jd(), mis_jd(0.15, 0.1))
    assert np.max(np.abs(dec.pi)) <= 1e-9


def test_pi_flips_when_domination_inverted():
    vs = solve_pide(mis_jd(0.1, 0.05), CALL, TimeGrid(1.0, 100), X)
    ps = simulate_true(true_jd(), TimeGrid(1.0, 50), 1000, SEED)
    assert not pi_monotonicity_check(ps, vs, true_jd(), mis_jd(0.1, 0.05)).passed
    assert pi_monotonicity_check(ps, vs, true_jd(), mis_jd(0.1, 0.05), direction="nonincreasing").passed


def test_submartingale_black_scholes_pair(bs25):
    rep = submartingale_test(true_bs(0.15), mis_bs(0.25), bs25, [MeasureChange.reference(0)], CP,
                             10000, SEED, TimeGrid(1.0, 100))
    assert rep.passed
    means = rep.measures[0]["means"]
    assert means[0] == 0.0 and all(b > a for a, b in zip(means, means[1:]))
    assert abs(means[-1] - 3.9691) <= 3 * rep.measures[0]["stderrs"][-1]


def test_submartingale_without_misspecification_is_centered():
    vs = solve_pide(mis_bs(0.2), CALL, TimeGrid(1.0, 400), X)
    rep = submartingale_test(true_bs(0.2), mis_bs(0.2), vs, [MeasureChange.reference(0)], CP, 10000,
                             SEED, TimeGrid(1.0, 100))
    m = rep.measures[0]
    assert all(abs(mu) <= 3 * se + 0.01 for mu, se in zip(m["means"], m["stderrs"]))


def test_submartingale_under_tilt(jd):
    q = MeasureChange.constant(-0.3, [0.3])
    rep = submartingale_test(true_jd(), mis_jd(), jd, [q], CP, 5000, SEED, TimeGrid(1.0, 100))
    assert rep.measures[0]["nonnegative"]
    assert rep.passed


def test_submartingale_rejects_measures_outside_Q0(jd):
    with pytest.raises(ValueError):
        submartingale_test(true_jd(), mis_jd(), jd, [MeasureChange.constant(0.1, [-0.1])], CP, 10,
                           SEED, TimeGrid(1.0, 10))
    with pytest.raises(ValueError):
        submartingale_test(true_jd(), mis_jd(), jd, [MeasureChange.constant(0.0, [0.3])], CP, 10,
                           SEED, TimeGrid(1.0, 10))


def test_price_domination(bs25, jd):
    d = price_domination_check(bs25, true_bs(0.15), 40000, SEED, n_steps=1)
    assert d.passed and d.model_price == pytest.approx(9.9476, abs=0.01)
    assert d.mc_price == pytest.approx(5.9785, abs=3 * d.mc_stderr)
    assert price_domination_check(jd, true_jd(), 20000, SEED).passed
    vs = solve_pide(mis_bs(0.15), CALL, TimeGrid(1.0, 400), X)
    same = price_domination_check(vs, true_bs(0.15), 40000, SEED, n_steps=1)
    assert abs(same.model_price - same.mc_price) <= 3 * same.mc_stderr + 0.01
