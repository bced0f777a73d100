import csv
import math

import numpy as np
import pytest

from jumphedge.model import (
    CoefficientField,
    LevyMeasure,
    MisspecifiedModel,
    Payoff,
    RateCurve,
    SamplingGrid,
    TrueModel,
)
from jumphedge.sim import (
    MeasureChange,
    SimulationError,
    TimeGrid,
    density_process,
    dump_paths_csv,
    mc_estimate,
    ordering_violations,
    set_default_threads,
    simulate_coupled,
    simulate_flow_derivative,
    simulate_misspecified,
    simulate_true,
    simulate_under_Q,
    summarize,
)

ZERO = RateCurve.constant(0.0)
SEED = 20240601
G1 = TimeGrid(1.0, 50)


def true_model(sigma=0.0, eta=0.0, levy=None, rate=ZERO, x0=100.0):
    levy = levy or LevyMeasure.empty()
    return TrueModel(x0, rate, CoefficientField.constant(sigma, "true-vol"),
                     CoefficientField.constant(eta, "true-jump"), levy)


def mis_model(gamma=0.0, gt=0.0, levy=None):
    levy = levy or LevyMeasure.empty()
    return MisspecifiedModel(ZERO, CoefficientField.constant(gamma),
                             CoefficientField.constant(gt, "model-jump"), levy)


def example_model():
    return MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.rho_affine(4.0, -2.0),
                             LevyMeasure.single(1.0, 0.1))


# ---------------------------------------------------------------- oracles


def test_deterministic_degenerate_paths():
    ps = simulate_true(true_model(), G1, 20, SEED)
    assert np.all(ps.right == 100.0) and np.all(ps.left == 100.0)


def test_pure_jump_closed_form():
    T = 2.0
    ps = simulate_true(true_model(eta=0.1, levy=LevyMeasure.single(1.0, 0.5)), TimeGrid(T, 40), 2000, SEED)
    expect = 100.0 * 1.1 ** ps.jump_counts * math.exp(-0.05 * T)
    np.testing.assert_allclose(ps.terminal, expect, rtol=1e-12)


def test_black_scholes_martingale():
    ps = simulate_true(true_model(sigma=0.2), TimeGrid(1.0, 1), 100000, SEED)
    mean, se = summarize(ps.terminal)
    assert abs(mean - 100.0) <= 3 * se


def test_example_model_fixed_point_at_two():
    ps = simulate_misspecified(example_model(), 2.0, TimeGrid(5.0, 50), 500, SEED)
    assert ps.jump_counts.sum() > 0
    np.testing.assert_allclose(ps.right, 2.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ps.left, 2.0, rtol=0, atol=1e-12)


def test_example_model_first_jump_value():
    # from x0=1 the pre-jump path solves dS = -(4 - 2S) 0.1 dt, i.e. S = 2 - e^{0.2 t};
    # the jump adds 4 - 2 S(tau-), landing on 2 + e^{0.2 tau}
    ps = simulate_misspecified(example_model(), 1.0, TimeGrid(5.0, 500), 2000, SEED,
                               positivity="allow", scheme="euler")
    tau = ps.first_jump_time()
    hit = np.isfinite(tau)
    assert hit.sum() > 100
    rows = np.nonzero(hit)[0]
    cols = np.argmax(ps.atom[rows] >= 0, axis=1)
    after = ps.right[rows, cols]
    np.testing.assert_allclose(after, 2.0 + np.exp(0.2 * tau[hit]), rtol=2e-3)


def test_misspecified_matches_true_on_coefficient_coincidence():
    a = simulate_true(true_model(sigma=0.2), G1, 200, SEED)
    b = simulate_misspecified(mis_model(gamma=0.2), 100.0, G1, 200, SEED)
    np.testing.assert_array_equal(a.right, b.right)


def test_coupled_flows_ordered_for_validated_model():
    levy = LevyMeasure(((1.0, 0.5), (-1.0, 0.3)))
    m = MisspecifiedModel(ZERO, CoefficientField.saturating(0.15, 0.1, 100.0),
                          CoefficientField.constant({1.0: 0.15, -1.0: -0.1}, "model-jump"), levy)
    a, b = simulate_coupled(m, 90.0, 110.0, G1, 2000, SEED)
    assert not ordering_violations(a, b).any()
    a, b = simulate_coupled(m, 100.0, 100.0001, G1, 2000, SEED)
    assert not ordering_violations(a, b).any()


def test_example_violation_frequency():
    x, y = simulate_coupled(example_model(), 1.0, 2.0, TimeGrid(5.0, 500), 10000, SEED,
                            positivity="allow", scheme="euler")
    freq, se = summarize(ordering_violations(x, y).astype(float))
    assert abs(freq - (1 - math.exp(-0.5))) <= 3 * se


def test_flow_derivative_black_scholes_homogeneity():
    m = mis_model(gamma=0.2)
    fl = simulate_flow_derivative(m, 100.0, G1, 500, SEED)
    np.testing.assert_allclose(fl.xi_right[:, -1], fl.terminal / 100.0, rtol=1e-12)


def test_flow_derivative_no_noise_is_one():
    fl = simulate_flow_derivative(mis_model(), 100.0, G1, 10, SEED)
    assert np.all(fl.xi_right == 1.0)


def test_flow_derivative_compound_poisson():
    T, gt, w = 1.0, 0.3, 2.0
    fl = simulate_flow_derivative(mis_model(gt=gt, levy=LevyMeasure.single(1.0, w)), 100.0,
                                  TimeGrid(T, 20), 40000, SEED)
    expect = (1 + gt) ** fl.jump_counts * math.exp(-gt * w * T)
    np.testing.assert_allclose(fl.xi_right[:, -1], expect, rtol=1e-12)
    mean, se = summarize(fl.xi_right[:, -1])
    assert abs(mean - 1.0) <= 3 * se


def test_density_identity_change():
    ps = simulate_misspecified(mis_model(0.2, 0.1, LevyMeasure.single(1.0, 1.0)), 100.0, G1, 50, SEED)
    assert np.all(density_process(MeasureChange.reference(1), ps) == 1.0)


def test_density_brownian_only():
    ps = simulate_misspecified(mis_model(0.2), 100.0, G1, 50, SEED)
    w1 = ps.dW[:, 1:].sum(axis=1)
    xi = density_process(MeasureChange.constant(0.1), ps)
    np.testing.assert_allclose(xi, np.exp(-0.1 * w1 - 0.005), rtol=1e-12)


def test_density_jump_tilt_without_jumps():
    # log xi = N_T ln(1 - theta) + theta w T; with no jumps this is 0.5
    ps = simulate_misspecified(mis_model(0.0, 0.1, LevyMeasure.single(1.0, 1.0)), 100.0, G1, 400, SEED)
    xi = density_process(MeasureChange.constant(0.0, [0.5]), ps)
    no_jump = ps.jump_counts == 0
    assert no_jump.any()
    np.testing.assert_allclose(xi[no_jump], math.exp(0.5), rtol=1e-12)
    np.testing.assert_allclose(xi, 0.5 ** ps.jump_counts * math.exp(0.5), rtol=1e-12)


def test_density_requires_reference_paths():
    m = mis_model(0.2, 0.1, LevyMeasure.single(1.0, 1.0))
    q = MeasureChange.constant(-0.05, [0.1])
    ps = simulate_under_Q(m, q, 100.0, G1, 10, SEED)
    with pytest.raises(ValueError):
        density_process(q, ps)


def test_under_Q_rejects_non_martingale_tilt():
    m = mis_model(0.2, 0.1, LevyMeasure.single(1.0, 1.0))
    with pytest.raises(ValueError):
        simulate_under_Q(m, MeasureChange.constant(0.0, [0.1]), 100.0, G1, 10, SEED)


def test_under_Q_intensity_and_importance_weights_agree():
    m = mis_model(0.2, 0.1, LevyMeasure.single(1.0, 1.0))
    q = MeasureChange.constant(-0.05, [0.1])
    assert q.martingale_residual(m, SamplingGrid(1.0, 10.0, 400.0, 5, 9)) <= 1e-12
    n = 40000
    qs = simulate_under_Q(m, q, 100.0, G1, n, SEED)
    assert abs(qs.jump_counts.mean() - 0.9) <= 3 * qs.jump_counts.std() / math.sqrt(n)
    call = Payoff.call(100.0)
    a, sa = summarize(call(qs.terminal))
    ps = simulate_misspecified(m, 100.0, G1, n, SEED + 1)
    b, sb = summarize(call(ps.terminal) * density_process(q, ps))
    assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_mc_estimate_constant_and_first_jump():
    ps = simulate_misspecified(mis_model(0.0, 0.1, LevyMeasure.single(1.0, 0.1)), 100.0,
                               TimeGrid(5.0, 10), 20000, SEED)
    assert mc_estimate(ps, lambda p: np.full(p.n, 7.0)) == (7.0, 0.0)
    mean, se = mc_estimate(ps, lambda p: (p.first_jump_time() < 5.0).astype(float))
    assert abs(mean - (1 - math.exp(-0.5))) <= 3 * se
    m2, s2 = mc_estimate(ps, lambda path: float(len(path.jumps) > 0), per_path=True)
    assert (m2, s2) == (mean, se)


def test_summarize_rejects_bad_input():
    with pytest.raises(ValueError):
        summarize([1.0, float("nan")])
    with pytest.raises(ValueError):
        summarize([1.0])


# ---------------------------------------------------------------- determinism and layout


def test_same_seed_same_paths_and_seed_sensitivity():
    m = true_model(0.2, 0.1, LevyMeasure(((1.0, 0.5), (-1.0, 0.3))))
    a = simulate_true(m, G1, 300, SEED)
    b = simulate_true(m, G1, 300, SEED)
    c = simulate_true(m, G1, 300, SEED + 1)
    np.testing.assert_array_equal(a.right, b.right)
    np.testing.assert_array_equal(a.times, b.times)
    assert not np.array_equal(a.terminal, c.terminal)


def test_results_independent_of_thread_count_and_path_count():
    m = true_model(0.2, 0.1, LevyMeasure(((1.0, 0.5), (-1.0, 0.3))))
    one = simulate_true(m, G1, 3000, SEED, threads=1)
    many = simulate_true(m, G1, 3000, SEED, threads=8)
    np.testing.assert_array_equal(one.right, many.right)
    set_default_threads(4)
    try:
        dflt = simulate_true(m, G1, 3000, SEED)
    finally:
        set_default_threads(1)
    np.testing.assert_array_equal(one.right, dflt.right)
    prefix = simulate_true(m, G1, 10, SEED)
    np.testing.assert_array_equal(prefix.terminal, one.terminal[:10])


def test_event_grid_contains_base_nodes_and_jump_times():
    m = true_model(0.2, 0.1, LevyMeasure.single(1.0, 3.0))
    ps = simulate_true(m, G1, 50, SEED)
    base_times = np.take_along_axis(ps.times, ps.base_cols, 1)
    np.testing.assert_allclose(base_times, np.broadcast_to(G1.nodes, base_times.shape), atol=1e-15)
    assert np.all(np.diff(ps.times, axis=1) >= 0)
    jumped = ps.atom >= 0
    assert np.all(ps.left[~jumped] == ps.right[~jumped])


def test_positivity_guard():
    # the Example model driven arithmetically from x0=1 crosses zero before t=5
    with pytest.raises(SimulationError):
        simulate_misspecified(example_model(), 1.0, TimeGrid(5.0, 500), 200, SEED, scheme="euler")
    ps = simulate_misspecified(example_model(), 1.0, TimeGrid(5.0, 500), 200, SEED, scheme="euler",
                               positivity="stop")
    assert ps.stopped.any()


def test_dump_paths_csv(tmp_path):
    ps = simulate_true(true_model(0.2, 0.1, LevyMeasure.single(1.0, 2.0)), TimeGrid(1.0, 4), 3, SEED)
    f = tmp_path / "paths.csv"
    dump_paths_csv(ps, f)
    rows = list(csv.reader(open(f)))
    assert rows[0] == ["path_id", "time", "value", "is_jump", "atom_index"]
    assert len(rows) - 1 == int(ps.n_nodes.sum())
    assert sum(int(r[3]) for r in rows[1:]) == int(ps.jump_counts.sum())
