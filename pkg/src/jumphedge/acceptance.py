"""Acceptance criteria as named, deterministic checks.

Each criterion returns a JSON-ready dict ``{id, name, passed, checks}`` where
every check records the measured value, the threshold and its verdict.
"""
from __future__ import annotations

import hashlib
import json
import math
from typing import Callable, Optional

import numpy as np

from .hedge import (
    hedging_error_decomposed,
    pi_monotonicity_check,
    price_domination_check,
    run_delta_hedge,
    submartingale_test,
)
from .model import (
    CoefficientField,
    LevyMeasure,
    MisspecifiedModel,
    Payoff,
    RateCurve,
    SamplingGrid,
    TrueModel,
    validate_models,
)
from .oracles import black_scholes_call, poisson_mixture_price
from .pide import SpaceGrid, convexity_report, delta_bound_report, mc_price, solve_pide
from .poisson import PoissonModel, pide_residual_certificate, replication_gaps, run_replication
from .robust import enumerate_family, robust_hedge_test, robust_price, solve_measure
from .sim import (
    TimeGrid,
    density_process,
    ordering_violations,
    set_default_threads,
    simulate_coupled,
    simulate_flow_derivative,
    simulate_misspecified,
    simulate_true,
    summarize,
)

__all__ = ["CRITERIA", "run_suite", "report_bytes", "DEFAULT_SEED"]

DEFAULT_SEED = 20240601
ZERO = RateCurve.constant(0.0)
CALL = Payoff.call(100.0)
CHECKPOINTS = [0.0, 0.25, 0.5, 0.75, 1.0]

# oracle values
BS_20 = 7.9656
BS_25 = 9.9476
BS_15 = 5.9785
BS_GAP = 3.9691
FIRST_JUMP_PROB = 1.0 - math.exp(-0.5)


def _check(name: str, value, threshold, ok: bool, **extra) -> dict:
    d = {"name": name, "value": _clean(value), "threshold": _clean(threshold), "passed": bool(ok)}
    d.update({k: _clean(v) for k, v in extra.items() if k != "passed"})
    return d


def _clean(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    return x


def _result(cid: int, name: str, checks: list[dict], **info) -> dict:
    return {"id": cid, "name": name, "passed": all(c["passed"] for c in checks),
            "checks": checks, **{k: _clean(v) for k, v in info.items()}}


def _orders(errors) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:]).tolist()


# --------------------------------------------------------------------------
# shared model fixtures
# --------------------------------------------------------------------------


def bs_model(vol: float) -> MisspecifiedModel:
    return MisspecifiedModel(ZERO, CoefficientField.constant(vol), CoefficientField.zero(),
                             LevyMeasure.empty())


def bs_true(vol: float, x0: float = 100.0) -> TrueModel:
    return TrueModel(x0, ZERO, CoefficientField.constant(vol, "true-vol"),
                     CoefficientField.zero("true-jump"), LevyMeasure.empty())


JD_LEVY = LevyMeasure.single(1.0, 1.0)


def jd_true() -> TrueModel:
    return TrueModel(100.0, ZERO, CoefficientField.constant(0.15, "true-vol"),
                     CoefficientField.constant(0.1, "true-jump"), JD_LEVY)


def jd_model() -> MisspecifiedModel:
    return MisspecifiedModel(ZERO, CoefficientField.constant(0.2),
                             CoefficientField.constant(0.2, "model-jump"), JD_LEVY)


POISSON = PoissonModel.constant(0.5, 0.2, 0.1)

BS_SPACE = SpaceGrid(1.0, 400.0, 400)
BS_TIME = TimeGrid(1.0, 400)
PJ_SPACE = SpaceGrid(50.0, 250.0, 400)
PJ_TIME = TimeGrid(1.0, 400)


class _Cache:
    def __init__(self):
        self.store: dict = {}

    def get(self, key, fn: Callable):
        if key not in self.store:
            self.store[key] = fn()
        return self.store[key]


# --------------------------------------------------------------------------
# criteria
# --------------------------------------------------------------------------


def c01_black_scholes(seed: int, cache: _Cache) -> dict:
    vs = cache.get("bs20", lambda: solve_pide(bs_model(0.2), CALL, BS_TIME, BS_SPACE))
    price = vs.price(100.0)
    mean, se = mc_price(bs_model(0.2), CALL, 0.0, 100.0, 100000, seed, T=1.0, n_steps=1)
    closed = black_scholes_call(100.0, 100.0, 0.2, 1.0)
    return _result(1, "Black-Scholes oracle", [
        _check("closed_form_oracle", closed, BS_20, abs(closed - BS_20) < 5e-5),
        _check("pide_vs_oracle_abs_err", abs(price - BS_20), 0.01, abs(price - BS_20) <= 0.01,
               pide_price=price),
        _check("mc_vs_pide_in_stderr", abs(mean - price) / se, 3.0, abs(mean - price) <= 3 * se,
               mc_mean=mean, mc_stderr=se),
    ])


def c02_poisson_mixture(seed: int, cache: _Cache) -> dict:
    model = MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.constant(0.1, "model-jump"),
                              LevyMeasure.single(1.0, 0.5))
    vs = cache.get("pj10", lambda: solve_pide(model, CALL, PJ_TIME, PJ_SPACE))
    oracle = poisson_mixture_price(CALL, 100.0, 0.1, 0.5, 1.0, k_max=30)
    price = vs.price(100.0)
    mean, se = mc_price(model, CALL, 0.0, 100.0, 100000, seed, T=1.0, n_steps=1)
    return _result(2, "Poisson-mixture oracle", [
        _check("pide_vs_mixture_abs_err", abs(price - oracle), 0.01, abs(price - oracle) <= 0.01,
               pide_price=price, oracle=oracle),
        _check("mc_vs_mixture_in_stderr", abs(mean - oracle) / se, 3.0, abs(mean - oracle) <= 3 * se,
               mc_mean=mean, mc_stderr=se),
    ])


def _acceptance_surfaces(cache: _Cache) -> dict:
    pj = MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.constant(0.1, "model-jump"),
                           LevyMeasure.single(1.0, 0.5))
    out = {
        "bs_gamma_0.20_call": (cache.get("bs20", lambda: solve_pide(bs_model(0.2), CALL, BS_TIME, BS_SPACE)), CALL),
        "bs_gamma_0.25_call": (cache.get("bs25", lambda: solve_pide(bs_model(0.25), CALL, BS_TIME, BS_SPACE)), CALL),
        "bs_gamma_0.20_put": (cache.get("bs20put", lambda: solve_pide(bs_model(0.2), Payoff.put(100.0), BS_TIME, BS_SPACE)), Payoff.put(100.0)),
        "pure_jump_0.1_call": (cache.get("pj10", lambda: solve_pide(pj, CALL, PJ_TIME, PJ_SPACE)), CALL),
        "jump_diffusion_call": (cache.get("jd", lambda: solve_pide(jd_model(), CALL, TimeGrid(1.0, 200), BS_SPACE)), CALL),
        "poisson_0.2_call": (cache.get("pois", lambda: solve_pide(POISSON.misspecified(), CALL, TimeGrid(1.0, 200), SpaceGrid(40.0, 300.0, 401))), CALL),
        "robust_good_deal_max": (cache.get("robust", lambda: _robust(cache)[-1]).surface, CALL),
    }
    return out


def c03_convexity(seed: int, cache: _Cache) -> dict:
    checks = []
    for name, (vs, _) in _acceptance_surfaces(cache).items():
        r = convexity_report(vs)
        checks.append(_check(name, r.worst, r.threshold, r.passed, at_t=r.location[0], at_x=r.location[1]))
    return _result(3, "Convexity of value surfaces", checks)


def c04_delta_bound(seed: int, cache: _Cache) -> dict:
    checks = []
    for name, (vs, payoff) in _acceptance_surfaces(cache).items():
        r = delta_bound_report(vs, payoff)
        checks.append(_check(name, r.worst, r.threshold, r.passed))
    return _result(4, "Delta bound", checks)


def validated_state_model() -> MisspecifiedModel:
    levy = LevyMeasure(((1.0, 0.5), (-1.0, 0.3)))
    return MisspecifiedModel(ZERO, CoefficientField.saturating(0.15, 0.1, 100.0),
                             CoefficientField.constant({1.0: 0.15, -1.0: -0.1}, "model-jump"), levy)


def example_model() -> MisspecifiedModel:
    return MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.rho_affine(4.0, -2.0),
                             LevyMeasure.single(1.0, 0.1))


def c05_flow_monotonicity(seed: int, cache: _Cache) -> dict:
    m = validated_state_model()
    tm = TrueModel(100.0, ZERO, CoefficientField.constant(0.1, "true-vol"),
                   CoefficientField.constant({1.0: 0.1, -1.0: -0.08}, "true-jump"), m.levy)
    rep = validate_models(tm, m, SamplingGrid(1.0, 10.0, 400.0))
    a, b = simulate_coupled(m, 90.0, 110.0, TimeGrid(1.0, 100), 10000, seed)
    v_ok = int(np.sum(ordering_violations(a, b)))
    ex = example_model()
    ex_rep = validate_models(TrueModel(1.0, ZERO, CoefficientField.zero("true-vol"),
                                       CoefficientField.zero("true-jump"), ex.levy),
                             ex, SamplingGrid(5.0, 1.0, 4.0, 11, 31))
    x, y = simulate_coupled(ex, 1.0, 2.0, TimeGrid(5.0, 500), 10000, seed, positivity="allow",
                            scheme="euler")
    freq, se = summarize(ordering_violations(x, y).astype(float))
    return _result(5, "Flow monotonicity", [
        _check("validated_model_passes_validation", rep.passed, True, rep.passed),
        _check("validated_model_violations", v_ok, 0, v_ok == 0, n_pairs=10000),
        _check("example_rho_tilde_prime_floor_fails", ex_rep["rho_tilde_prime_floor"].worst, -0.99,
               not ex_rep["rho_tilde_prime_floor"].passed),
        _check("example_violation_frequency", freq, FIRST_JUMP_PROB, abs(freq - FIRST_JUMP_PROB) <= 3 * se,
               stderr=se, n_pairs=10000),
    ])


def c06_martingales(seed: int, cache: _Cache) -> dict:
    n = 40000
    rate = RateCurve.constant(0.02)
    levy = LevyMeasure(((1.0, 0.5), (-1.0, 0.3)))
    tm = TrueModel(100.0, rate, CoefficientField.constant(0.2, "true-vol"),
                   CoefficientField.constant({1.0: 0.1, -1.0: -0.08}, "true-jump"), levy)
    g = TimeGrid(1.0, 100)
    ps = simulate_true(tm, g, n, seed)
    disc = math.exp(-0.02)
    s_mean, s_se = summarize(ps.terminal * disc)
    mm = MisspecifiedModel(rate, CoefficientField.saturating(0.15, 0.1, 100.0),
                           CoefficientField.constant({1.0: 0.15, -1.0: -0.1}, "model-jump"), levy)
    pm = simulate_misspecified(mm, 100.0, g, n, seed + 1)
    m_mean, m_se = summarize(pm.terminal * disc)
    fl = simulate_flow_derivative(mm, 100.0, g, n, seed + 2)
    x_mean, x_se = summarize(fl.xi_right[:, -1])
    dmodel = MisspecifiedModel(ZERO, CoefficientField.constant(0.2),
                               CoefficientField.constant(0.1, "model-jump"), LevyMeasure.single(1.0, 1.0))
    q = solve_measure(dmodel, [0.5])
    dp = simulate_misspecified(dmodel, 100.0, g, n, seed + 3)
    d_mean, d_se = summarize(density_process(q, dp))
    return _result(6, "Martingale audits", [
        _check("discounted_true_terminal", (s_mean - 100.0) / s_se, 3.0, abs(s_mean - 100.0) <= 3 * s_se,
               mean=s_mean, stderr=s_se),
        _check("discounted_model_terminal", (m_mean - 100.0) / m_se, 3.0, abs(m_mean - 100.0) <= 3 * m_se,
               mean=m_mean, stderr=m_se),
        _check("flow_derivative_terminal", (x_mean - 1.0) / x_se, 3.0, abs(x_mean - 1.0) <= 3 * x_se,
               mean=x_mean, stderr=x_se),
        _check("girsanov_density_terminal", (d_mean - 1.0) / d_se, 3.0, abs(d_mean - 1.0) <= 3 * d_se,
               mean=d_mean, stderr=d_se, tilt=q.describe()),
    ])


def c07_hedging_identity(seed: int, cache: _Cache) -> dict:
    vs = cache.get("bs25", lambda: solve_pide(bs_model(0.25), CALL, BS_TIME, BS_SPACE))
    ps = simulate_true(bs_true(0.15), TimeGrid(1.0, 100), 10000, seed)
    hr = run_delta_hedge(ps, vs, checkpoints=CHECKPOINTS)
    h = CALL(ps.terminal)
    e_t = hr.error_samples[:, -1]
    literal_gap = float(np.mean(e_t) - (hr.v0 - np.mean(h)))
    per_path = float(np.max(np.abs(e_t - (hr.portfolio_terminal - h))))
    mean, se = summarize(e_t)
    return _result(7, "Hedging-error identity", [
        _check("mean_identity_gap_literal", abs(literal_gap), 1e-12, abs(literal_gap) <= 1e-12,
               note="sample mean of the discounted hedging gains on the same paths"),
        _check("per_path_terminal_identity", per_path, 1e-12, per_path <= 1e-12),
        _check("mean_terminal_error_vs_oracle", abs(mean - BS_GAP) / se, 3.0,
               abs(mean - BS_GAP) <= 3 * se, mean=mean, stderr=se, oracle=BS_GAP),
        _check("excluded_paths", hr.n_excluded, 0.001 * ps.n, hr.exclusion_rate < 0.001),
    ])


def decomposition_gaps(levels=((50, 101), (100, 201), (200, 401)), n: int = 4000, seed: int = DEFAULT_SEED):
    """RMS over paths of the sup-in-time gap between direct and decomposed ``e_m / M``."""
    lev = LevyMeasure.single(1.0, 0.5)
    tm = TrueModel(100.0, ZERO, CoefficientField.zero("true-vol"), CoefficientField.constant(0.1, "true-jump"), lev)
    mm = MisspecifiedModel(ZERO, CoefficientField.zero(), CoefficientField.constant(0.2, "model-jump"), lev)
    rms, worst = [], []
    for nt, nx in levels:
        vs = solve_pide(mm, CALL, TimeGrid(1.0, nt), SpaceGrid(40.0, 300.0, nx))
        ps = simulate_true(tm, TimeGrid(1.0, nt), n, seed)
        hr = run_delta_hedge(ps, vs)
        dec = hedging_error_decomposed(ps, vs, tm, mm)
        sup = np.max(np.abs(dec.total - hr.disc_error_nodes), axis=1)
        rms.append(float(np.sqrt(np.mean(sup ** 2))))
        worst.append(float(np.max(sup)))
    return rms, worst


def c08_decomposition(seed: int, cache: _Cache) -> dict:
    rms, worst = decomposition_gaps(seed=seed)
    orders = _orders(rms)
    return _result(8, "Decomposition consistency", [
        _check("empirical_order_rms_sup_gap", min(orders), 1.0, min(orders) >= 1.0,
               gaps=rms, orders=orders, worst_path_gaps=worst, worst_path_orders=_orders(worst)),
    ])


def c09_pi_monotone(seed: int, cache: _Cache) -> dict:
    vs = cache.get("jd", lambda: solve_pide(jd_model(), CALL, TimeGrid(1.0, 200), BS_SPACE))
    ps = simulate_true(jd_true(), TimeGrid(1.0, 100), 10000, seed)
    rep = pi_monotonicity_check(ps, vs, jd_true(), jd_model())
    return _result(9, "Pi monotonicity", [
        _check("violating_paths", rep.n_violating_paths, 0, rep.passed, n_paths=rep.n_paths,
               worst_decrease=rep.worst_decrease, tolerance=rep.tolerance),
    ])


def c10_submartingale(seed: int, cache: _Cache) -> dict:
    vs = cache.get("jd", lambda: solve_pide(jd_model(), CALL, TimeGrid(1.0, 200), BS_SPACE))
    measures = [solve_measure(jd_model(), [th]) for th in (0.0, 0.2, 0.4)]
    rep = submartingale_test(jd_true(), jd_model(), vs, measures, CHECKPOINTS, 10000, seed,
                             TimeGrid(1.0, 100))
    checks = []
    for m in rep.measures:
        checks.append(_check(f"{m['measure']}_nonnegative", min(np.array(m["means"]) + 3 * np.array(m["stderrs"])),
                             0.0, m["nonnegative"], means=m["means"], stderrs=m["stderrs"]))
        checks.append(_check(f"{m['measure']}_nondecreasing",
                             min(np.array(m["increment_means"]) + 3 * np.array(m["increment_stderrs"])),
                             0.0, m["nondecreasing"], increment_means=m["increment_means"],
                             increment_stderrs=m["increment_stderrs"]))
    return _result(10, "Q0-submartingale", checks)


def c11_price_domination(seed: int, cache: _Cache) -> dict:
    vs = cache.get("bs25", lambda: solve_pide(bs_model(0.25), CALL, BS_TIME, BS_SPACE))
    a = price_domination_check(vs, bs_true(0.15), 40000, seed, n_steps=1)
    pvs = cache.get("pois", lambda: solve_pide(POISSON.misspecified(), CALL, TimeGrid(1.0, 200),
                                                SpaceGrid(40.0, 300.0, 401)))
    b = price_domination_check(pvs, POISSON.true_model(100.0), 40000, seed, n_steps=1)
    return _result(11, "Price domination", [
        _check("bs_pair", a.model_price - a.mc_price, -3 * a.mc_stderr, a.passed, **a.as_dict()),
        _check("jump_pair", b.model_price - b.mc_price, -3 * b.mc_stderr, b.passed, **b.as_dict()),
    ])


def _robust(cache: _Cache):
    m = jd_model()
    fams = [
        enumerate_family(m, "good_deal", theta_grid=[0.0], B=0.1),
        enumerate_family(m, "good_deal", theta_grid=[-0.1, 0.0, 0.1], B=0.1),
        enumerate_family(m, "good_deal", theta_grid=[-0.2, -0.1, 0.0, 0.1, 0.2], B=0.1),
    ]
    return [robust_price(m, CALL, f, TimeGrid(1.0, 200), BS_SPACE) for f in fams]


def c12_robust(seed: int, cache: _Cache) -> dict:
    m = jd_model()
    single = enumerate_family(m, "singleton")
    rs_single = robust_price(m, CALL, single, TimeGrid(1.0, 200), BS_SPACE)
    vs = cache.get("jd", lambda: solve_pide(jd_model(), CALL, TimeGrid(1.0, 200), BS_SPACE))
    diff = float(np.max(np.abs(rs_single.surface.values - vs.values)))
    nested = cache.get("robust_all", lambda: _robust(cache))
    cache.store.setdefault("robust", nested[-1])
    prices = [r.surface.price(100.0) for r in nested]
    ordered_pointwise = all(bool(np.all(nested[i + 1].surface.values >= nested[i].surface.values))
                            for i in range(len(nested) - 1))
    rep = robust_hedge_test(jd_true(), nested[-1], nested[-1].family, CHECKPOINTS, 10000, seed,
                            TimeGrid(1.0, 100))
    checks = [
        _check("singleton_equals_value_surface", diff, 0.0, diff == 0.0),
        _check("nested_prices_ordered", prices, "nondecreasing",
               all(p1 >= p0 for p0, p1 in zip(prices, prices[1:])) and ordered_pointwise),
    ]
    for mres in rep.measures:
        checks.append(_check(f"{mres['measure']}_nonnegative",
                             min(np.array(mres["means"]) + 3 * np.array(mres["stderrs"])), 0.0,
                             mres["nonnegative"], means=mres["means"], stderrs=mres["stderrs"]))
    return _result(12, "Robust pricing operator", checks,
                   candidate_prices=nested[-1].candidate_prices(100.0))


def c13_poisson(seed: int, cache: _Cache) -> dict:
    vs = cache.get("pois", lambda: solve_pide(POISSON.misspecified(), CALL, TimeGrid(1.0, 200),
                                               SpaceGrid(40.0, 300.0, 401)))
    _, rep = run_replication(POISSON, vs, 100.0, TimeGrid(1.0, 200), 10000, seed)
    cal = POISSON.calibration()
    rms, cert, ctrl = [], [], []
    for nt, nx in ((50, 101), (100, 201), (200, 401)):
        tg, xg = TimeGrid(1.0, nt), SpaceGrid(40.0, 300.0, nx)
        cvs = solve_pide(cal.misspecified(), CALL, tg, xg)
        ps = simulate_true(cal.true_model(100.0), tg, 4000, seed)
        g = replication_gaps(ps, cvs, cal)
        rms.append(float(np.sqrt(np.mean(g * g))))
        mvs = solve_pide(POISSON.misspecified(), CALL, tg, xg)
        cert.append(pide_residual_certificate(mvs, POISSON).mean_abs_residual)
        ctrl.append(pide_residual_certificate(mvs, POISSON, lam=POISSON.lam + 0.5).mean_abs_residual)
    rms_orders = _orders(rms)
    cert_orders = _orders(cert)
    return _result(13, "Poisson superhedge", [
        _check("superhedge_violations", rep.violation_count, 0, rep.passed, **rep.as_dict()),
        _check("mean_gap_positive", rep.mean_gap, 0.0, rep.mean_gap > 0),
        _check("replication_rms_order", min(rms_orders), 1.0, min(rms_orders) >= 1.0,
               rms=rms, orders=rms_orders),
        _check("certificate_decays", min(cert_orders), 0.5, all(o > 0.5 for o in cert_orders),
               mean_abs_residual=cert, orders=cert_orders),
        _check("negative_control_persists", ctrl[-1] / ctrl[0], 0.5, ctrl[-1] >= 0.5 * ctrl[0],
               mean_abs_residual=ctrl),
    ])


def c14_determinism(seed: int, cache: _Cache) -> dict:
    digests = []
    for threads in (1, 8, 1):
        set_default_threads(threads)
        try:
            sub = [c07_hedging_identity(seed, _Cache()), c05_flow_monotonicity(seed, _Cache())]
        finally:
            set_default_threads(1)
        digests.append(hashlib.sha256(report_bytes({"criteria": sub})).hexdigest())
    same = len(set(digests)) == 1
    return _result(14, "Determinism", [
        _check("identical_report_digests", digests[0], "equal across threads 1, 8, 1", same,
               digests=digests),
    ])


CRITERIA: list[tuple[int, str, Callable]] = [
    (1, "Black-Scholes oracle", c01_black_scholes),
    (2, "Poisson-mixture oracle", c02_poisson_mixture),
    (3, "Convexity", c03_convexity),
    (4, "Delta bound", c04_delta_bound),
    (5, "Flow monotonicity", c05_flow_monotonicity),
    (6, "Martingale audits", c06_martingales),
    (7, "Hedging-error identity", c07_hedging_identity),
    (8, "Decomposition consistency", c08_decomposition),
    (9, "Pi monotonicity", c09_pi_monotone),
    (10, "Q0-submartingale", c10_submartingale),
    (11, "Price domination", c11_price_domination),
    (12, "Robust pricing operator", c12_robust),
    (13, "Poisson superhedge", c13_poisson),
    (14, "Determinism", c14_determinism),
]


def run_suite(only: Optional[list[int]] = None, seed: int = DEFAULT_SEED,
              progress: Optional[Callable[[dict], None]] = None) -> dict:
    cache = _Cache()
    results = []
    for cid, _, fn in CRITERIA:
        if only and cid not in only:
            continue
        res = fn(seed, cache)
        results.append(res)
        if progress is not None:
            progress(res)
    return {"schema_version": "1", "kind": "acceptance-suite", "seed": seed,
            "passed": all(r["passed"] for r in results), "criteria": results}


def report_bytes(report: dict) -> bytes:
    return (json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=True) + "\n").encode()
