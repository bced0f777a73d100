"""The complete single-atom pure-jump market: replication and pathwise superhedging."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import CoefficientField, LevyMeasure, MisspecifiedModel, Payoff, RateCurve, TrueModel
from .pide import SpaceGrid, ValueSurface, solve_pide
from .sim import PathSet, TimeGrid, simulate_true

__all__ = [
    "PoissonModel",
    "replication_strategy",
    "pide_residual_certificate",
    "replication_gaps",
    "run_replication",
    "ReplicationReport",
]


def _as_field(c, kind: str) -> CoefficientField:
    if isinstance(c, CoefficientField):
        return c.with_kind(kind)
    return CoefficientField.constant(float(c), kind)


@dataclass(frozen=True, eq=False)
class PoissonModel:
    """One jump mark ``alpha`` at intensity ``lam``; no diffusion and zero rate."""

    lam: float
    alpha: float
    gamma_tilde: CoefficientField
    eta: CoefficientField

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError("intensity must be positive")
        if self.alpha == 0:
            raise ValueError("jump mark must be non-zero")
        object.__setattr__(self, "gamma_tilde", _as_field(self.gamma_tilde, "model-jump"))
        object.__setattr__(self, "eta", _as_field(self.eta, "true-jump"))

    @classmethod
    def constant(cls, lam: float, gamma_tilde: float, eta: float, alpha: float = 1.0) -> "PoissonModel":
        if gamma_tilde <= -1 or eta <= -1:
            raise ValueError("jump sensitivities must exceed -1")
        return cls(lam, alpha, CoefficientField.constant(gamma_tilde, "model-jump"),
                   CoefficientField.constant(eta, "true-jump"))

    @property
    def levy(self) -> LevyMeasure:
        return LevyMeasure.single(self.alpha, self.lam)

    def misspecified(self) -> MisspecifiedModel:
        return MisspecifiedModel(RateCurve.constant(0.0), CoefficientField.zero("model-vol"),
                                 self.gamma_tilde, self.levy)

    def true_model(self, x0: float) -> TrueModel:
        return TrueModel(x0, RateCurve.constant(0.0), CoefficientField.zero("true-vol"),
                         self.eta, self.levy)

    def calibration(self) -> "PoissonModel":
        """The same market with the model sensitivity set to the true one."""
        return PoissonModel(self.lam, self.alpha, self.eta.with_kind("model-jump"), self.eta)

    def with_lam(self, lam: float) -> "PoissonModel":
        return PoissonModel(lam, self.alpha, self.gamma_tilde, self.eta)

    def describe(self) -> dict:
        return {"lambda": self.lam, "alpha": self.alpha, "gamma_tilde": self.gamma_tilde.describe(),
                "eta": self.eta.describe()}


def replication_strategy(vs: ValueSurface, t, s_left, gamma_tilde) -> np.ndarray:
    """Difference quotient of the surface across the model's jump destination."""
    s_left = np.asarray(s_left, dtype=float)
    step = s_left * np.asarray(gamma_tilde, dtype=float)
    if np.any(step == 0):
        raise ValueError("zero jump size: the replication quotient is undefined")
    return (vs.value(t, s_left + step) - vs.value(t, s_left)) / step


@dataclass(frozen=True)
class Certificate:
    max_residual: float
    mean_abs_residual: float
    n_points: int
    h_max: float
    dt: float
    scale: float

    def as_dict(self) -> dict:
        return {"max_residual": self.max_residual, "mean_abs_residual": self.mean_abs_residual,
                "n_points": self.n_points, "h_max": self.h_max, "dt": self.dt, "scale": self.scale}


def pide_residual_certificate(vs: ValueSurface, model: PoissonModel,
                              lam: Optional[float] = None) -> Certificate:
    """Residual of ``C_t + lam (C(t, s + s gt) - C(t, s) - s gt C'(t, s))`` on the grid.

    Time derivative by forward difference, the jump bracket at the later time
    level with the right-hand Delta. Points whose jump destination leaves the
    grid are skipped. ``lam`` overrides the intensity (negative control).
    """
    lam = model.lam if lam is None else float(lam)
    x = vs.prices
    t = vs.times
    dt = np.diff(t)
    res = []
    for n in range(t.size - 1):
        t1 = t[n + 1]
        gt = model.gamma_tilde(np.full_like(x, t1), x, model.alpha)
        y = x * (1.0 + gt)
        keep = (y >= x[0]) & (y <= x[-1])
        keep[0] = keep[-1] = False
        c1 = vs.values[n + 1]
        dot = (c1 - vs.values[n]) / dt[n]
        target = np.interp(y, x, c1)
        bracket = target - c1 - x * gt * vs.deltas[n + 1]
        res.append((dot + lam * bracket)[keep])
    r = np.concatenate(res)
    scale = float(np.max(np.abs(vs.values)))
    return Certificate(float(np.max(np.abs(r))), float(np.mean(np.abs(r))), int(r.size),
                       float(np.max(np.diff(x))), float(np.max(dt)), scale)


def replication_gaps(paths: PathSet, vs: ValueSurface, model: PoissonModel) -> np.ndarray:
    """Terminal ``P(T) - h(S(T))`` per path for the replication strategy."""
    t = paths.times
    L, R = paths.left, paths.right
    a = model.alpha
    pi_r = replication_strategy(vs, t[:, :-1], R[:, :-1], model.gamma_tilde(t[:, :-1], R[:, :-1], a))
    gains = pi_r * (L[:, 1:] - R[:, :-1])
    hit = paths.atom[:, 1:] >= 0
    if hit.any():
        tj = t[:, 1:][hit]
        sl = L[:, 1:][hit]
        pi_j = replication_strategy(vs, tj, sl, model.gamma_tilde(tj, sl, a))
        jump_gain = np.zeros_like(gains)
        jump_gain[hit] = pi_j * (R[:, 1:][hit] - sl)
        gains = gains + jump_gain
    p_t = vs.price(float(R[0, 0])) + gains.sum(axis=1)
    return p_t - vs.payoff(paths.terminal)


@dataclass(frozen=True)
class ReplicationReport:
    min_gap: float
    mean_gap: float
    rms_gap: float
    violation_count: int
    tol_sh: float
    n_paths: int
    n_excluded: int

    @property
    def passed(self) -> bool:
        return self.violation_count == 0

    def as_dict(self) -> dict:
        return {"min_gap": self.min_gap, "mean_gap": self.mean_gap, "rms_gap": self.rms_gap,
                "violation_count": self.violation_count, "tol_sh": self.tol_sh,
                "n_paths": self.n_paths, "n_excluded": self.n_excluded, "passed": self.passed}


def _sign_condition(model: PoissonModel, vs: ValueSurface) -> bool:
    tt, xx = np.meshgrid(vs.times, vs.prices, indexing="ij")
    gt = model.gamma_tilde(tt, xx, model.alpha)
    eta = model.eta(tt, xx, model.alpha)
    return bool(np.all(np.sign(gt - eta) == np.sign(eta)))


def run_replication(model: PoissonModel, vs: ValueSurface, x0: float, grid: TimeGrid, n: int,
                    seed: int, tol_sh: Optional[float] = None,
                    calibration_surface: Optional[ValueSurface] = None,
                    require_sign: bool = True) -> tuple[np.ndarray, ReplicationReport]:
    """Replicate with the model surface along true paths and count pathwise shortfalls.

    Without ``tol_sh`` the tolerance is twice the largest ``|gap|`` of the
    replication run with the true sensitivity on the same grids.
    """
    if require_sign and not _sign_condition(model, vs):
        raise ValueError("sign condition sgn(gamma_tilde - eta) = sgn(eta) fails")
    paths = simulate_true(model.true_model(x0), grid, n, seed)
    inside = ~np.any(vs.outside(paths.left) | vs.outside(paths.right), axis=1)
    gaps = replication_gaps(paths, vs, model)
    if tol_sh is None:
        cal = model.calibration()
        if calibration_surface is None:
            tg = TimeGrid(vs.T, vs.times.size - 1, float(vs.times[0]))
            xg = SpaceGrid(vs.x_min, vs.x_max, vs.prices.size, vs.meta.get("spacing", "uniform"))
            calibration_surface = solve_pide(cal.misspecified(), vs.payoff, tg, xg)
        cal_gaps = replication_gaps(paths, calibration_surface, cal)
        tol_sh = 2.0 * float(np.max(np.abs(cal_gaps[inside])))
    g = gaps[inside]
    rep = ReplicationReport(float(np.min(g)), float(np.mean(g)), float(np.sqrt(np.mean(g * g))),
                            int(np.sum(g < -tol_sh)), float(tol_sh), int(n), int(np.sum(~inside)))
    return gaps, rep
