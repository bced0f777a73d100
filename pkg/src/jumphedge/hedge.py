"""Delta-hedge backtests of a model surface against true-market paths.

The discounted portfolio is ``v(0, x0) + sum Delta dS~`` on the event-augmented
grid. Between events the position is ``Delta(t_k, S(t_k))``; just before a
jump it is rebalanced to ``Delta(tau, S(tau-))``, so every jump is hedged with
the pre-jump Delta.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import MisspecifiedModel, SamplingGrid, TrueModel
from .pide import ValueSurface
from .sim import MeasureChange, PathSet, TimeGrid, simulate_true, summarize

__all__ = [
    "HedgeResult",
    "Decomposition",
    "SubmartingaleReport",
    "run_delta_hedge",
    "hedging_error_decomposed",
    "pi_monotonicity_check",
    "submartingale_test",
    "price_domination_check",
    "checkpoint_columns",
]


def checkpoint_columns(paths: PathSet, checkpoints: Optional[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    """Checkpoint times snapped to base-grid nodes, and their columns per path."""
    base = paths.grid.nodes
    if checkpoints is None:
        idx = np.arange(base.size)
    else:
        cp = np.asarray(checkpoints, dtype=float)
        idx = np.searchsorted(base, cp - 1e-12)
        idx = np.clip(idx, 0, base.size - 1)
        if np.any(np.abs(base[idx] - cp) > 1e-9):
            raise ValueError("checkpoints must be nodes of the simulation time grid")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("checkpoints must be strictly increasing")
    return base[idx], paths.base_cols[:, idx]


@dataclass(frozen=True, eq=False)
class HedgeResult:
    """Hedge outcome per path; statistics use ``included`` paths only."""

    checkpoints: np.ndarray
    error_samples: np.ndarray          # e_m(t_j), shape (n, n_checkpoints)
    disc_error_samples: np.ndarray     # e_m(t_j) / M(t_j)
    portfolio_terminal: np.ndarray     # P(T)
    disc_error_nodes: np.ndarray       # e_m / M at every node, shape (n, m)
    included: np.ndarray
    v0: float
    measure_label: str = "P"
    extra: dict = field(default_factory=dict)

    @property
    def n_excluded(self) -> int:
        return int(np.sum(~self.included))

    @property
    def exclusion_rate(self) -> float:
        return self.n_excluded / self.included.size

    @property
    def terminal_error(self) -> np.ndarray:
        return self.error_samples[self.included, -1]

    def checkpoint_stats(self, discounted: bool = True) -> tuple[np.ndarray, np.ndarray]:
        arr = (self.disc_error_samples if discounted else self.error_samples)[self.included]
        stats = [summarize(arr[:, j]) for j in range(arr.shape[1])]
        return np.array([s[0] for s in stats]), np.array([s[1] for s in stats])


def _escape_mask(paths: PathSet, vs: ValueSurface) -> np.ndarray:
    out = vs.outside(paths.left) | vs.outside(paths.right)
    return ~np.any(out, axis=1)


def run_delta_hedge(true_paths: PathSet, vs: ValueSurface, rate=None,
                    checkpoints: Optional[Sequence[float]] = None) -> HedgeResult:
    """Self-financing Delta hedge of the claim behind ``vs`` along ``true_paths``."""
    if abs(true_paths.grid.T - vs.T) > 1e-12:
        raise ValueError("paths and surface must share the horizon")
    rate = true_paths.rate if rate is None else rate
    t = true_paths.times
    M = np.exp(rate.integral(t))
    L = true_paths.left
    R = true_paths.right
    t_start = float(true_paths.grid.t0)
    x0 = R[:, 0]
    v0 = vs.value(np.full_like(x0, t_start), x0)
    delta_r = vs.delta(t[:, :-1], R[:, :-1])
    # diffusive leg (t_k, t_{k+1}-) held at Delta(t_k, S(t_k))
    gains = delta_r * (L[:, 1:] / M[:, 1:] - R[:, :-1] / M[:, :-1])
    jumped = true_paths.atom[:, 1:] >= 0
    if jumped.any():
        delta_l = vs.delta(t[:, 1:], L[:, 1:])
        gains = gains + np.where(jumped, delta_l * (R[:, 1:] - L[:, 1:]) / M[:, 1:], 0.0)
    disc_port = np.concatenate((v0[:, None], v0[:, None] + np.cumsum(gains, axis=1)), axis=1)
    disc_err = disc_port - vs.value(t, R) / M
    disc_err[:, 0] = 0.0
    cp_times, cols = checkpoint_columns(true_paths, checkpoints)
    de = np.take_along_axis(disc_err, cols, axis=1)
    Mc = np.take_along_axis(M, cols, axis=1)
    return HedgeResult(cp_times, de * Mc, de, disc_port[:, -1] * M[:, -1], disc_err,
                       _escape_mask(true_paths, vs), float(np.mean(v0)), true_paths.measure_label,
                       {"n_paths": true_paths.n})


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Cumulative discounted terms at every node, shape ``(n, m)``."""

    term1: np.ndarray
    term2: np.ndarray
    term3: np.ndarray
    pi: np.ndarray            # undiscounted term1 + term2 integrands, cumulated
    included: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.term1 + self.term2 + self.term3


def hedging_error_decomposed(true_paths: PathSet, vs: ValueSurface, true_model: TrueModel,
                             mis_model: MisspecifiedModel) -> Decomposition:
    """The three integrals of the discounted hedging error, by left-point quadrature."""
    if not np.array_equal(true_model.levy.marks, mis_model.levy.marks):
        raise ValueError("models must share Levy atoms")
    t = true_paths.times
    M = np.exp(true_paths.rate.integral(t))
    tk = t[:, :-1]
    sk = true_paths.right[:, :-1]
    mk = M[:, :-1]
    dt = np.diff(t, axis=1)
    d = vs.delta(tk, sk)
    v = vs.value(tk, sk)
    gam = mis_model.gamma(tk, sk)
    sig = true_model.sigma(tk, sk)
    i1 = 0.5 * vs.gamma(tk, sk) * sk * sk * (gam * gam - sig * sig)
    i2 = np.zeros_like(sk)
    c3 = np.zeros_like(sk)
    for (z, w) in true_model.levy.atoms:
        eta = true_model.eta(tk, sk, z)
        gt = mis_model.gamma_tilde(tk, sk, z)
        v_eta = vs.value(tk, sk * (1.0 + eta))
        i2 += w * (vs.value(tk, sk * (1.0 + gt)) - v_eta + d * sk * (eta - gt))
        c3 += w * (v_eta - v - sk * eta * d)
    j3 = np.zeros_like(sk)
    hit = true_paths.atom[:, 1:] >= 0
    if hit.any():
        tj = t[:, 1:][hit]
        sl = true_paths.left[:, 1:][hit]
        sr = true_paths.right[:, 1:][hit]
        j3[hit] = -(vs.value(tj, sr) - vs.value(tj, sl) - (sr - sl) * vs.delta(tj, sl)) / M[:, 1:][hit]

    def cum(x):
        return np.concatenate((np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)), axis=1)

    term1 = cum(i1 * dt / mk)
    term2 = cum(i2 * dt / mk)
    term3 = cum(c3 * dt / mk + j3)
    pi = cum((i1 + i2) * dt)
    return Decomposition(term1, term2, term3, pi, _escape_mask(true_paths, vs))


@dataclass(frozen=True)
class PiReport:
    n_paths: int
    n_violating_paths: int
    worst_decrease: float
    tolerance: float
    direction: str

    @property
    def passed(self) -> bool:
        return self.n_violating_paths == 0

    def as_dict(self) -> dict:
        return {"n_paths": self.n_paths, "n_violating_paths": self.n_violating_paths,
                "worst_decrease": self.worst_decrease, "tolerance": self.tolerance,
                "direction": self.direction, "passed": self.passed}


def pi_monotonicity_check(true_paths: PathSet, vs: ValueSurface, true_model: TrueModel,
                          mis_model: MisspecifiedModel, rel_tol: float = 1e-9,
                          direction: str = "nondecreasing") -> PiReport:
    """Count paths along which the process ``Pi`` moves against ``direction``."""
    dec = hedging_error_decomposed(true_paths, vs, true_model, mis_model)
    steps = np.diff(dec.pi[dec.included], axis=1)
    if direction == "nonincreasing":
        steps = -steps
    elif direction != "nondecreasing":
        raise ValueError("direction must be 'nondecreasing' or 'nonincreasing'")
    tol = rel_tol * max(float(np.max(np.abs(vs.values))), 1.0)
    bad = np.any(steps < -tol, axis=1)
    worst = float(-np.min(steps)) if steps.size else 0.0
    return PiReport(int(steps.shape[0]), int(np.sum(bad)), max(worst, 0.0), tol, direction)


@dataclass(frozen=True)
class SubmartingaleReport:
    checkpoints: tuple[float, ...]
    measures: tuple[dict, ...]

    @property
    def passed(self) -> bool:
        return all(m["nonnegative"] and m["nondecreasing"] for m in self.measures)

    def as_dict(self) -> dict:
        return {"checkpoints": list(self.checkpoints), "per_measure": list(self.measures),
                "passed": self.passed}


def submartingale_verdicts(res: HedgeResult, k: float = 3.0) -> dict:
    """Checkpoint means of ``e_m / M`` with the nonnegativity and monotonicity verdicts."""
    arr = res.disc_error_samples[res.included]
    means, ses = res.checkpoint_stats(True)
    diffs = np.diff(arr, axis=1)
    d_means = diffs.mean(axis=0) if diffs.size else np.empty(0)
    d_ses = diffs.std(axis=0, ddof=1) / np.sqrt(max(arr.shape[0], 1)) if diffs.size else np.empty(0)
    nonneg = bool(np.all(means >= -k * ses - 1e-12))
    nondec = bool(np.all(d_means >= -k * d_ses - 1e-12))
    return {"measure": res.measure_label, "means": means.tolist(), "stderrs": ses.tolist(),
            "increment_means": d_means.tolist(), "increment_stderrs": d_ses.tolist(),
            "nonnegative": nonneg, "nondecreasing": nondec, "excluded": res.n_excluded,
            "exclusion_rate": res.exclusion_rate}


def submartingale_test(true_model: TrueModel, mis_model: MisspecifiedModel, vs: ValueSurface,
                       measures: Sequence[MeasureChange], checkpoints: Sequence[float], n: int,
                       seed: int, grid: TimeGrid, require_Q0: bool = True,
                       check_grid: Optional[SamplingGrid] = None) -> SubmartingaleReport:
    """Hedge the true model simulated under each tilted measure; test the submartingale verdicts."""
    if check_grid is None:
        check_grid = SamplingGrid(grid.T, vs.x_min, vs.x_max, 11, 41)
    out = []
    for mc in measures:
        if require_Q0 and not mc.in_Q0:
            raise ValueError(f"measure {mc.label} is not in Q0 (theta must be >= 0)")
        res = mc.martingale_residual(mis_model, check_grid)
        if res > 1e-10:
            raise ValueError(f"measure {mc.label} violates the martingale condition ({res:.3g})")
        paths = simulate_true(true_model, grid, n, seed, measure=None if mc.is_reference else mc)
        hr = run_delta_hedge(paths, vs, checkpoints=checkpoints)
        v = submartingale_verdicts(hr)
        v["tilt"] = mc.describe()
        out.append(v)
    cp, _ = checkpoint_columns(simulate_true(true_model, grid, 1, seed), checkpoints)
    return SubmartingaleReport(tuple(float(c) for c in cp), tuple(out))


@dataclass(frozen=True)
class DominationCheck:
    model_price: float
    mc_price: float
    mc_stderr: float

    @property
    def passed(self) -> bool:
        return self.model_price >= self.mc_price - 3.0 * self.mc_stderr

    def as_dict(self) -> dict:
        return {"model_price": self.model_price, "mc_true_price": self.mc_price,
                "mc_stderr": self.mc_stderr, "passed": self.passed}


def price_domination_check(vs: ValueSurface, true_model: TrueModel, n: int, seed: int,
                           n_steps: int = 100) -> DominationCheck:
    """Model price at ``x0`` against the Monte Carlo true price ``E[h(S(T)) / M(T)]``."""
    grid = TimeGrid(vs.T, n_steps)
    paths = simulate_true(true_model, grid, n, seed)
    disc = np.exp(-true_model.rate.integral(vs.T))
    mean, se = summarize(vs.payoff(paths.terminal) * disc)
    return DominationCheck(vs.price(true_model.x0), mean, se)
