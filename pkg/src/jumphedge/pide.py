"""Finite-difference solver for the misspecified value surface.

Backward IMEX march: the local part (diffusion, drift, discounting and the
local share of the jump compensator) is implicit with Crank-Nicolson weights
after a fully implicit Rannacher start; the nonlocal jump term
``sum_a w_a g(x (1 + gamma_tilde_a))`` is explicit with linear interpolation.
Models without diffusion are stepped explicitly with an upwind drift and a
checked stability bound.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .model import MisspecifiedModel, Payoff, fingerprint
from .sim import TimeGrid, simulate_misspecified, summarize

__all__ = [
    "SpaceGrid",
    "ValueSurface",
    "StabilityError",
    "solve_pide",
    "mc_price",
    "convexity_report",
    "delta_bound_report",
    "export_surface_csv",
]


class StabilityError(RuntimeError):
    """The explicit step of a diffusion-free model violates its stability bound."""


@dataclass(frozen=True)
class SpaceGrid:
    x_min: float
    x_max: float
    n_points: int
    spacing: str = "uniform"

    def __post_init__(self) -> None:
        if not 0 < self.x_min < self.x_max:
            raise ValueError("need 0 < x_min < x_max")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if self.spacing not in ("uniform", "log"):
            raise ValueError("spacing must be 'uniform' or 'log'")

    @property
    def nodes(self) -> np.ndarray:
        if self.spacing == "uniform":
            return np.linspace(self.x_min, self.x_max, self.n_points)
        return np.exp(np.linspace(np.log(self.x_min), np.log(self.x_max), self.n_points))

    def contains(self, x: float) -> bool:
        return self.x_min < x < self.x_max

    def refined(self, factor: int = 2) -> "SpaceGrid":
        return SpaceGrid(self.x_min, self.x_max, (self.n_points - 1) * factor + 1, self.spacing)

    def describe(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points,
                "spacing": self.spacing}


def _cell_index(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Index ``i`` of the cell ``[x_i, x_{i+1})`` holding ``y``, clipped to the grid."""
    return np.clip(np.searchsorted(x, y, side="right") - 1, 0, x.size - 2)


def _interp_lin(x: np.ndarray, g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation with linear extrapolation past both ends."""
    i = _cell_index(x, y)
    slope = (g[..., i + 1] - g[..., i]) / (x[i + 1] - x[i])
    return g[..., i] + (y - x[i]) * slope


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Rows are times ascending, columns prices ascending.

    ``deltas`` hold right differences (the slope of the cell to the right of
    each node); ``gammas`` hold second differences, zero at both ends.
    """

    times: np.ndarray
    prices: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    gammas: np.ndarray
    payoff: Payoff
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def x_min(self) -> float:
        return float(self.prices[0])

    @property
    def x_max(self) -> float:
        return float(self.prices[-1])

    def _time_weights(self, t):
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0 = self.times[j]
        t1 = self.times[j + 1]
        lam = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
        return j, lam

    def _rows_at(self, arr: np.ndarray, t, x):
        """Linear-in-x (with extrapolation) and linear-in-t interpolation of ``arr``."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        j, lam = self._time_weights(t)
        i = _cell_index(self.prices, x)
        xi = self.prices[i]
        h = self.prices[i + 1] - xi

        def at(row):
            a = arr[row, i]
            b = arr[row, i + 1]
            return a + (x - xi) * (b - a) / h

        return (1.0 - lam) * at(j) + lam * at(j + 1)

    def value(self, t, x) -> np.ndarray:
        """``v(t, x)``; at the horizon the payoff itself is returned."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = self._rows_at(self.values, t, x)
        terminal = t >= self.T
        if np.any(terminal):
            out = np.where(terminal, self.payoff(x), out)
        return out

    def delta(self, t, x) -> np.ndarray:
        """Right-hand derivative in ``x`` of the interpolated surface."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        j, lam = self._time_weights(t)
        i = _cell_index(self.prices, x)
        d = self.deltas
        return (1.0 - lam) * d[j, i] + lam * d[j + 1, i]

    def gamma(self, t, x) -> np.ndarray:
        return self._rows_at(self.gammas, t, x)

    def outside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x < self.x_min) | (x > self.x_max)

    def price(self, x0: float) -> float:
        return float(self.value(self.times[0], x0))


def _fd_weights(x: np.ndarray):
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    s = hm + hp
    d2 = (2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s))
    d1c = (-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s))
    return hm, hp, d2, d1c


def _local_operator(x, a, b, c, upwind_only: bool = False):
    """Tridiagonal weights ``(lo, di, up)`` of ``a g'' + b g' + c g`` at interior nodes."""
    hm, hp, d2, d1c = _fd_weights(x)
    ai, bi, ci = a[1:-1], b[1:-1], c[1:-1]
    if upwind_only:
        central = np.zeros(ai.shape, dtype=bool)
    else:
        central = ai >= np.abs(bi) * np.maximum(hm, hp) / 2.0
    fwd = bi > 0
    d1m = np.where(central, d1c[0], np.where(fwd, 0.0, -1.0 / hm))
    d1o = np.where(central, d1c[1], np.where(fwd, -1.0 / hp, 1.0 / hm))
    d1p = np.where(central, d1c[2], np.where(fwd, 1.0 / hp, 0.0))
    lo = ai * d2[0] + bi * d1m
    di = ai * d2[1] + bi * d1o + ci
    up = ai * d2[2] + bi * d1p
    return lo, di, up, int(np.sum(~central))


def _apply(lo, di, up, g):
    out = np.zeros_like(g)
    out[1:-1] = lo * g[:-2] + di * g[1:-1] + up * g[2:]
    return out


def _extrapolate_ends(x, g):
    g[0] = g[1] - (x[1] - x[0]) * (g[2] - g[1]) / (x[2] - x[1])
    g[-1] = g[-2] + (x[-1] - x[-2]) * (g[-2] - g[-3]) / (x[-2] - x[-3])


def _coefficients(model: MisspecifiedModel, x: np.ndarray, t: float, r: float):
    tt = np.full_like(x, t)
    gam = model.gamma(tt, x)
    a = 0.5 * x * x * gam * gam
    w = model.levy.weights
    comp = np.zeros_like(x)
    targets = []
    for (z, wa) in model.levy.atoms:
        gt = model.gamma_tilde(tt, x, z)
        comp += wa * gt
        targets.append(x * (1.0 + gt))
    b = (r - comp) * x
    c = np.full_like(x, -(r + float(np.sum(w))))
    return a, b, c, targets


def _jump_term(x, g, targets, w):
    out = np.zeros_like(g)
    for y, wa in zip(targets, w):
        out += wa * _interp_lin(x, g, y)
    return out


def _banded_system(x, lo, di, up, theta_dt):
    n = x.size
    ab = np.zeros((5, n))
    # interior rows: (I - theta dt A)
    i = np.arange(1, n - 1)
    ab[2, i] = 1.0 - theta_dt * di
    ab[2 + 1, i - 1] = -theta_dt * lo     # sub-diagonal: M[i, i-1]
    ab[2 - 1, i + 1] = -theta_dt * up     # super-diagonal: M[i, i+1]
    # boundary rows: linear extrapolation (zero second derivative)
    r0 = (x[1] - x[0]) / (x[2] - x[1])
    ab[2, 0] = 1.0
    ab[1, 1] = -(1.0 + r0)
    ab[0, 2] = r0
    rn = (x[-1] - x[-2]) / (x[-2] - x[-3])
    ab[2, n - 1] = 1.0
    ab[3, n - 2] = -(1.0 + rn)
    ab[4, n - 3] = rn
    return ab


def _finish_surface(times, x, values, payoff, meta) -> ValueSurface:
    h = np.diff(x)
    slopes = np.diff(values, axis=1) / h
    deltas = np.concatenate((slopes, slopes[:, -1:]), axis=1)
    gammas = np.zeros_like(values)
    gammas[:, 1:-1] = 2.0 * (slopes[:, 1:] - slopes[:, :-1]) / (h[1:] + h[:-1])
    return ValueSurface(times, x, values, deltas, gammas, payoff, meta)


def _cache_key(model, payoff, tgrid, xgrid, rannacher) -> str:
    return fingerprint({"model": model.describe(), "payoff": payoff.describe(),
                        "tgrid": tgrid.describe(), "xgrid": xgrid.describe(),
                        "rannacher": rannacher})


def solve_pide(model: MisspecifiedModel, payoff: Payoff, tgrid: TimeGrid, xgrid: SpaceGrid,
               rannacher: bool = True, cache_dir: Optional[str] = None) -> ValueSurface:
    """Value surface ``v(t, x)`` on ``tgrid.nodes x xgrid.nodes``."""
    key = _cache_key(model, payoff, tgrid, xgrid, rannacher)
    if cache_dir is not None:
        fn = os.path.join(cache_dir, f"surface-{key}.npz")
        if os.path.exists(fn):
            d = np.load(fn)
            return ValueSurface(d["times"], d["prices"], d["values"], d["deltas"], d["gammas"],
                                payoff, {"cache": key, "spacing": xgrid.spacing,
                                         "xgrid": xgrid.describe(), "tgrid": tgrid.describe(),
                                         **_meta_from(d)})
    times = tgrid.nodes
    x = xgrid.nodes
    nt = times.size
    values = np.empty((nt, x.size))
    values[-1] = payoff(x)
    w = model.levy.weights
    degenerate = model.gamma.is_zero
    n_upwind = 0
    escaped = 0
    n_targets = 0
    for n in range(nt - 2, -1, -1):
        t0, t1 = times[n], times[n + 1]
        dt = t1 - t0
        r = float((model.rate.integral(t1) - model.rate.integral(t0)) / dt)
        g = values[n + 1]
        if degenerate:
            a, b, c, targets = _coefficients(model, x, t0 + 0.5 * dt, r)
            h_loc = np.where(b[1:-1] > 0, x[2:] - x[1:-1], x[1:-1] - x[:-2])
            cfl = dt * float(np.max(np.abs(b[1:-1]) / h_loc + np.abs(c[1:-1])))
            if cfl > 1.0 + 1e-12:
                raise StabilityError(
                    f"explicit step violates stability: dt*(|b|/h + |c|) = {cfl:.4g} > 1; "
                    "use more time steps")
            lo, di, up, nu = _local_operator(x, a, b, c, upwind_only=True)
            n_upwind += nu
            new = g + dt * (_apply(lo, di, up, g) + _jump_term(x, g, targets, w))
            _extrapolate_ends(x, new)
        else:
            a, b, c, targets = _coefficients(model, x, t0 + 0.5 * dt, r)
            lo, di, up, nu = _local_operator(x, a, b, c)
            n_upwind += nu
            steps = [(0.5 * dt, 1.0), (0.5 * dt, 1.0)] if (rannacher and n == nt - 2) else [(dt, 0.5)]
            cur = g
            for sdt, th in steps:
                jump = _jump_term(x, cur, targets, w)
                rhs = cur + (1.0 - th) * sdt * _apply(lo, di, up, cur) + sdt * jump
                rhs[0] = 0.0
                rhs[-1] = 0.0
                cur = solve_banded((2, 2), _banded_system(x, lo, di, up, th * sdt), rhs)
            new = cur
        for y in targets:
            n_targets += y[1:-1].size
            escaped += int(np.sum((y[1:-1] < x[0]) | (y[1:-1] > x[-1])))
        values[n] = new
    meta = {"scheme": "explicit-upwind" if degenerate else ("rannacher-cn" if rannacher else "cn"),
            "n_t": int(nt), "n_x": int(x.size), "upwind_nodes": int(n_upwind),
            "jump_target_escape_fraction": (escaped / n_targets) if n_targets else 0.0,
            "model": model.fingerprint, "cache": key, "spacing": xgrid.spacing,
            "xgrid": xgrid.describe(), "tgrid": tgrid.describe()}
    vs = _finish_surface(times, x, values, payoff, meta)
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(os.path.join(cache_dir, f"surface-{key}.npz"), times=vs.times, prices=vs.prices,
                 values=vs.values, deltas=vs.deltas, gammas=vs.gammas,
                 scheme=np.array(meta["scheme"]),
                 escape=np.array(meta["jump_target_escape_fraction"]))
    return vs


def _meta_from(d) -> dict:
    return {"scheme": str(d["scheme"]), "jump_target_escape_fraction": float(d["escape"]),
            "n_t": int(d["times"].size), "n_x": int(d["prices"].size)}


def mc_price(model: MisspecifiedModel, payoff: Payoff, t: float, x: float, n: int, seed: int,
             T: float, n_steps: int = 100, **sim_kwargs) -> tuple[float, float]:
    """Monte Carlo ``E[h(S_m^{t,x}(T)) exp(-int_t^T r)]`` as ``(mean, stderr)``."""
    if not x > 0:
        raise ValueError("x must be positive")
    if t >= T:
        return float(payoff(x)), 0.0
    ps = simulate_misspecified(model, x, TimeGrid(T, n_steps, t), n, seed, **sim_kwargs)
    disc = float(np.exp(-(model.rate.integral(T) - model.rate.integral(t))))
    return summarize(payoff(ps.terminal) * disc)


@dataclass(frozen=True)
class SurfaceReport:
    name: str
    passed: bool
    worst: float
    threshold: float
    location: tuple[float, float]

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "threshold": self.threshold, "at_t": self.location[0], "at_x": self.location[1]}


def second_differences(vs: ValueSurface) -> np.ndarray:
    """Undivided generalized second differences ``h_mean * (slope_right - slope_left)``."""
    x = vs.prices
    h = np.diff(x)
    slopes = np.diff(vs.values, axis=1) / h
    return 0.5 * (h[1:] + h[:-1]) * (slopes[:, 1:] - slopes[:, :-1])


def convexity_report(vs: ValueSurface, rel_tol: float = 1e-6) -> SurfaceReport:
    d2 = second_differences(vs)
    scale = float(np.max(np.abs(vs.values)))
    thr = -rel_tol * scale
    j, i = np.unravel_index(int(np.argmin(d2)), d2.shape)
    worst = float(d2[j, i])
    return SurfaceReport("convexity", worst >= thr, worst, thr,
                         (float(vs.times[j]), float(vs.prices[i + 1])))


def delta_bound_report(vs: ValueSurface, payoff: Payoff, tol: float = 1e-6) -> SurfaceReport:
    ad = np.abs(vs.deltas)
    j, i = np.unravel_index(int(np.argmax(ad)), ad.shape)
    worst = float(ad[j, i])
    thr = payoff.lipschitz + tol
    return SurfaceReport("delta_bound", worst <= thr, worst, thr,
                         (float(vs.times[j]), float(vs.prices[i])))


def export_surface_csv(vs: ValueSurface, path) -> None:
    """Columns ``t, x, value, delta, gamma``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "value", "delta", "gamma"])
        for j, t in enumerate(vs.times):
            for i, x in enumerate(vs.prices):
                wr.writerow([repr(float(t)), repr(float(x)), repr(float(vs.values[j, i])),
                             repr(float(vs.deltas[j, i])), repr(float(vs.gammas[j, i]))])
