"""Monte Carlo paths for the true and misspecified dynamics, under P or a tilted Q.

Jumps are drawn at exact exponential clock times per Levy atom and inserted
into the time grid of each path; between events prices follow a log-Euler
step. Every path owns a counter-based Philox stream keyed by ``(seed, path)``,
split into fixed substreams, so results do not depend on chunking or threads.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (
    LevyMeasure,
    MisspecifiedModel,
    RateCurve,
    SamplingGrid,
    TrueModel,
    fingerprint,
)

__all__ = [
    "TimeGrid",
    "Path",
    "PathSet",
    "MeasureChange",
    "simulate_true",
    "simulate_misspecified",
    "simulate_coupled",
    "simulate_flow_derivative",
    "simulate_under_Q",
    "density_process",
    "mc_estimate",
    "summarize",
    "dump_paths_csv",
    "ordering_violations",
    "set_default_threads",
    "SimulationError",
]

# substream selectors stored in the high counter word
BROWNIAN = 0
BRIDGE = 1
THIN = 2
CLOCK = 8

CHUNK = 1024
_MASK64 = (1 << 64) - 1
_default_threads = max(1, int(os.environ.get("JUMPHEDGE_THREADS", "1")))


def set_default_threads(n: int) -> None:
    """Cap the worker count used for path chunks (results do not depend on it)."""
    global _default_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _default_threads = int(n)


class SimulationError(RuntimeError):
    """A path left the positive half-line or a tilt became infeasible."""


# --------------------------------------------------------------------------
# grids and measure changes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = t_0 < ... < t_n = T``."""

    T: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.T > self.t0 >= 0.0:
            raise ValueError("need 0 <= t0 < T")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.n_steps + 1)

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def max_dt(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.n_steps * factor, self.t0)

    def describe(self) -> dict:
        return {"T": self.T, "n_steps": self.n_steps, "t0": self.t0}


def _const_fn(c: float) -> Callable:
    def f(t, s):
        return np.full(np.broadcast(np.asarray(t), np.asarray(s)).shape, c)

    return f


@dataclass(frozen=True, eq=False)
class MeasureChange:
    """Girsanov tilt ``(psi, theta_a)``: ``dW = dW_Q - psi dt``, Q-intensity ``(1 - theta_a) w_a``.

    ``psi(t, s)`` and each ``theta[a](t, s)`` must broadcast over arrays.
    ``theta_floor[a]`` is a lower bound for ``theta[a]``; it sets the
    dominating clock rate used for thinning when the tilt is state dependent.
    """

    psi: Callable
    theta: tuple[Callable, ...]
    theta_floor: tuple[float, ...]
    family_tag: str = "explicit"
    constants: Optional[tuple[float, tuple[float, ...]]] = None

    def __post_init__(self) -> None:
        if len(self.theta) != len(self.theta_floor):
            raise ValueError("one theta floor per atom required")
        if any(f >= 1.0 for f in self.theta_floor):
            raise ValueError("theta must stay below 1")

    @classmethod
    def constant(cls, psi: float, theta: Sequence[float] = (), family_tag: str = "explicit") -> "MeasureChange":
        theta = tuple(float(x) for x in theta)
        if any(x >= 1.0 for x in theta):
            raise ValueError("theta must stay below 1")
        return cls(_const_fn(float(psi)), tuple(_const_fn(x) for x in theta), theta, family_tag,
                   (float(psi), theta))

    @classmethod
    def reference(cls, n_atoms: int) -> "MeasureChange":
        return cls.constant(0.0, (0.0,) * n_atoms, "reference")

    @property
    def n_atoms(self) -> int:
        return len(self.theta)

    @property
    def is_constant(self) -> bool:
        return self.constants is not None

    @property
    def is_reference(self) -> bool:
        return self.constants is not None and self.constants[0] == 0.0 and all(
            x == 0.0 for x in self.constants[1])

    @property
    def in_Q0(self) -> bool:
        """``theta >= 0`` everywhere (checked via the floor)."""
        return all(f >= 0.0 for f in self.theta_floor)

    @property
    def label(self) -> str:
        if self.is_reference:
            return "P"
        if self.constants is not None:
            psi, th = self.constants
            return "Q(psi=%.6g;theta=%s)" % (psi, ",".join("%.6g" % x for x in th))
        return f"Q({self.family_tag})"

    def describe(self) -> dict:
        if self.constants is not None:
            return {"psi": self.constants[0], "theta": list(self.constants[1]),
                    "family_tag": self.family_tag}
        return {"family_tag": self.family_tag, "theta_floor": list(self.theta_floor),
                "state_dependent": True}

    def martingale_residual(self, model: MisspecifiedModel, grid: SamplingGrid) -> float:
        """``sup |gamma psi + sum_a gamma_tilde_a theta_a w_a|`` on the grid."""
        if self.n_atoms != model.levy.n_atoms:
            raise ValueError("measure change and model disagree on atom count")
        tt, ss = grid.mesh()
        res = model.gamma(tt, ss) * self.psi(tt, ss)
        for a, (z, w) in enumerate(model.levy.atoms):
            res = res + model.gamma_tilde(tt, ss, z) * self.theta[a](tt, ss) * w
        return float(np.max(np.abs(res)))

    def theta_min(self, grid: SamplingGrid) -> float:
        if not self.n_atoms:
            return 0.0
        tt, ss = grid.mesh()
        return float(min(np.min(th(tt, ss)) for th in self.theta))

    def theta_max(self, grid: SamplingGrid) -> float:
        if not self.n_atoms:
            return 0.0
        tt, ss = grid.mesh()
        return float(max(np.max(th(tt, ss)) for th in self.theta))


# --------------------------------------------------------------------------
# path containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Path:
    """One trajectory on its event-augmented grid."""

    times: np.ndarray
    values: np.ndarray
    left: np.ndarray
    jumps: tuple[tuple[float, int], ...]
    stream_id: int
    measure_label: str
    stopped: bool = False


@dataclass(frozen=True, eq=False)
class PathSet:
    """Padded arrays of shape ``(n, m)``; padding repeats the last state with ``dt = 0``.

    ``left[i, k]`` is the pre-jump price at node ``k``, ``right[i, k]`` the
    post-jump one; they differ only where ``atom[i, k] >= 0``. ``dW[i, k]``
    is the Brownian increment of the measure the path was simulated under on
    ``(times[i, k-1], times[i, k]]``.
    """

    times: np.ndarray
    left: np.ndarray
    right: np.ndarray
    atom: np.ndarray
    dW: np.ndarray
    n_nodes: np.ndarray
    base_cols: np.ndarray
    stream_ids: np.ndarray
    stopped: np.ndarray
    seed: int
    grid: TimeGrid
    rate: RateCurve
    levy: LevyMeasure
    fingerprint: str
    measure_label: str = "P"
    xi_left: Optional[np.ndarray] = None
    xi_right: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.left.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def terminal(self) -> np.ndarray:
        return self.right[:, -1]

    @property
    def jump_counts(self) -> np.ndarray:
        return np.sum(self.atom >= 0, axis=1)

    def on_base_grid(self, which: str = "right") -> np.ndarray:
        arr = self.right if which == "right" else self.left
        return np.take_along_axis(arr, self.base_cols, axis=1)

    def discount_factors(self) -> np.ndarray:
        """``M(t)`` at every node."""
        return np.exp(self.rate.integral(self.times))

    def first_jump_time(self) -> np.ndarray:
        has = self.atom >= 0
        idx = np.argmax(has, axis=1)
        out = self.times[np.arange(self.n), idx]
        return np.where(has.any(axis=1), out, np.inf)

    def path(self, i: int) -> Path:
        m = int(self.n_nodes[i])
        acc = self.atom[i, :m] >= 0
        jumps = tuple((float(t), int(a)) for t, a in zip(self.times[i, :m][acc], self.atom[i, :m][acc]))
        return Path(self.times[i, :m].copy(), self.right[i, :m].copy(), self.left[i, :m].copy(),
                    jumps, int(self.stream_ids[i]), self.measure_label, bool(self.stopped[i]))

    def __getitem__(self, i: int) -> Path:
        return self.path(i)

    @property
    def paths(self) -> list[Path]:
        return [self.path(i) for i in range(self.n)]


# --------------------------------------------------------------------------
# noise generation
# --------------------------------------------------------------------------


def _stream(seed: int, index: int, sub: int) -> np.random.Generator:
    key = (int(seed) & _MASK64) | (int(index) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, sub]))


def _clock_times(seed: int, index: int, atom: int, rate: float, t0: float, T: float) -> np.ndarray:
    if rate <= 0.0:
        return np.empty(0)
    g = _stream(seed, index, CLOCK + atom)
    span = T - t0
    batch = max(16, int(2 * rate * span) + 8)
    acc = np.empty(0)
    total = 0.0
    while True:
        e = g.standard_exponential(batch)
        cs = total + np.cumsum(e)
        acc = np.concatenate((acc, cs))
        total = cs[-1]
        if total / rate > span:
            break
    times = t0 + acc / rate
    return times[times <= T]


def _path_noise(seed: int, index: int, base: np.ndarray, clock_rates: np.ndarray, thin: bool):
    """Event-augmented nodes, Brownian increments, candidate atoms and thinning uniforms."""
    n_steps = base.size - 1
    dt = np.diff(base)
    dw_base = _stream(seed, index, BROWNIAN).standard_normal(n_steps) * np.sqrt(dt)
    jt_parts, ja_parts = [], []
    for a, lam in enumerate(clock_rates):
        ts = _clock_times(seed, index, a, float(lam), float(base[0]), float(base[-1]))
        ts = ts[ts > base[0]]
        jt_parts.append(ts)
        ja_parts.append(np.full(ts.size, a, dtype=np.int64))
    jt = np.concatenate(jt_parts) if jt_parts else np.empty(0)
    ja = np.concatenate(ja_parts) if ja_parts else np.empty(0, dtype=np.int64)
    order = np.lexsort((ja, jt))
    jt, ja = jt[order], ja[order]
    k = jt.size
    m = n_steps + 1 + k
    base_cols = np.arange(n_steps + 1) + np.searchsorted(jt, base, side="right")
    times = np.empty(m)
    atom = np.full(m, -1, dtype=np.int64)
    dw = np.zeros(m)
    times[base_cols] = base
    jump_cols = np.setdiff1d(np.arange(m), base_cols, assume_unique=True)
    times[jump_cols] = jt
    atom[jump_cols] = ja
    if k == 0:
        dw[1:] = dw_base
    else:
        z = _stream(seed, index, BRIDGE).standard_normal(k)
        zi = 0
        for j in range(n_steps):
            c0, c1 = base_cols[j], base_cols[j + 1]
            if c1 == c0 + 1:
                dw[c1] = dw_base[j]
                continue
            u, b, rem = base[j], base[j + 1], dw_base[j]
            for c in range(c0 + 1, c1):
                tau = times[c]
                if b > u:
                    frac = (tau - u) / (b - u)
                    var = (tau - u) * (b - tau) / (b - u)
                    inc = frac * rem + math.sqrt(max(var, 0.0)) * z[zi]
                else:
                    inc = 0.0
                zi += 1
                dw[c] = inc
                rem -= inc
                u = tau
            dw[c1] = rem
    uni = _stream(seed, index, THIN).random(k) if (thin and k) else None
    thin_u = np.zeros(m)
    if uni is not None:
        thin_u[jump_cols] = uni
    return times, dw, atom, base_cols, thin_u


# --------------------------------------------------------------------------
# stepping engine
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Dynamics:
    rate: RateCurve
    vol: Callable                      # (t, s) -> sigma or gamma
    jump: Callable                     # (t, s, a) -> eta_a or gamma_tilde_a
    comp_weights: np.ndarray           # compensator weights (reference measure)
    clock_rates: np.ndarray            # dominating clock rates
    accept: Optional[Callable] = None  # (t, s, a) -> acceptance probability
    psi: Optional[Callable] = None     # (t, s) -> Brownian drift shift
    vol_rp: Optional[Callable] = None  # flow derivative coefficients
    jump_rp: Optional[Callable] = None


def _step_chunk(dyn: _Dynamics, x0s: Sequence[float], grid: TimeGrid, seed: int,
                indices: np.ndarray, positivity: str, flow: bool, scheme: str = "log"):
    base = grid.nodes
    thin = dyn.accept is not None
    noise = [_path_noise(seed, int(i), base, dyn.clock_rates, thin) for i in indices]
    c = len(indices)
    m = max(nz[0].size for nz in noise)
    times = np.empty((c, m))
    dW = np.zeros((c, m))
    cand = np.full((c, m), -1, dtype=np.int64)
    uni = np.zeros((c, m))
    n_nodes = np.empty(c, dtype=np.int64)
    base_cols = np.empty((c, base.size), dtype=np.int64)
    for r, (t_, dw_, a_, bc_, u_) in enumerate(noise):
        k = t_.size
        n_nodes[r] = k
        times[r, :k] = t_
        times[r, k:] = t_[-1]
        dW[r, :k] = dw_
        cand[r, :k] = a_
        uni[r, :k] = u_
        base_cols[r] = bc_
    rint = np.diff(dyn.rate.integral(times), axis=1)
    n_atoms = dyn.comp_weights.size

    results = []
    for x0 in x0s:
        left = np.empty((c, m))
        right = np.empty((c, m))
        atom = np.full((c, m), -1, dtype=np.int64)
        stopped = np.zeros(c, dtype=bool)
        left[:, 0] = right[:, 0] = x0
        if flow:
            xl = np.empty((c, m))
            xr = np.empty((c, m))
            xl[:, 0] = xr[:, 0] = 1.0
        for k in range(1, m):
            s = right[:, k - 1]
            t = times[:, k - 1]
            dt = times[:, k] - t
            g = dyn.vol(t, s)
            comp = np.zeros(c)
            for a in range(n_atoms):
                comp += dyn.comp_weights[a] * dyn.jump(t, s, a)
            shift = g * dyn.psi(t, s) if dyn.psi is not None else 0.0
            if scheme == "log":
                lk = s * np.exp(rint[:, k - 1] - (0.5 * g * g + shift + comp) * dt + g * dW[:, k])
            else:
                lk = s * (1.0 + rint[:, k - 1] - (shift + comp) * dt + g * dW[:, k])
            rk = lk.copy()
            if flow:
                rp = dyn.vol_rp(t, s)
                comp_p = np.zeros(c)
                for a in range(n_atoms):
                    comp_p += dyn.comp_weights[a] * dyn.jump_rp(t, s, a)
                psi_term = rp * dyn.psi(t, s) if dyn.psi is not None else 0.0
                xlk = xr[:, k - 1] * np.exp(-(0.5 * rp * rp + psi_term + comp_p) * dt + rp * dW[:, k])
                xrk = xlk.copy()
            ak = cand[:, k]
            tk = times[:, k]
            for a in range(n_atoms):
                mask = ak == a
                if not mask.any():
                    continue
                if dyn.accept is not None:
                    p = dyn.accept(tk[mask], lk[mask], a)
                    ok = uni[mask, k] < p
                    sel = np.flatnonzero(mask)[ok]
                else:
                    sel = np.flatnonzero(mask)
                if sel.size == 0:
                    continue
                atom[sel, k] = a
                rk[sel] = lk[sel] * (1.0 + dyn.jump(tk[sel], lk[sel], a))
                if flow:
                    fac = 1.0 + dyn.jump_rp(tk[sel], lk[sel], a)
                    if np.any(fac <= 0.0):
                        raise SimulationError("flow derivative jump factor 1 + rho_tilde' <= 0")
                    xrk[sel] = xlk[sel] * fac
            if positivity == "allow":
                bad = ~(np.isfinite(rk) & np.isfinite(lk))
            else:
                bad = ~(np.isfinite(rk) & (rk > 0.0) & np.isfinite(lk) & (lk > 0.0)) & ~stopped
            if bad.any() and positivity == "allow":
                raise SimulationError("non-finite price")
            if bad.any():
                if positivity == "raise":
                    i = int(indices[np.flatnonzero(bad)[0]])
                    raise SimulationError(
                        f"path {i} reached a non-positive price at t={times[np.flatnonzero(bad)[0], k]:.6g}")
                stopped |= bad
            if stopped.any():
                lk[stopped] = right[stopped, k - 1]
                rk[stopped] = right[stopped, k - 1]
                atom[stopped, k] = -1
                if flow:
                    xlk[stopped] = xr[stopped, k - 1]
                    xrk[stopped] = xr[stopped, k - 1]
            left[:, k] = lk
            right[:, k] = rk
            if flow:
                xl[:, k] = xlk
                xr[:, k] = xrk
        out = {"left": left, "right": right, "atom": atom, "stopped": stopped}
        if flow:
            out["xi_left"] = xl
            out["xi_right"] = xr
        results.append(out)
    return times, dW, n_nodes, base_cols, results


def _pad_cat(parts: list[np.ndarray], fill_last: bool, fill=0) -> np.ndarray:
    m = max(p.shape[1] for p in parts)
    out = []
    for p in parts:
        if p.shape[1] < m:
            if fill_last:
                pad = np.repeat(p[:, -1:], m - p.shape[1], axis=1)
            else:
                pad = np.full((p.shape[0], m - p.shape[1]), fill, dtype=p.dtype)
            p = np.concatenate((p, pad), axis=1)
        out.append(p)
    return np.concatenate(out, axis=0)


def _run(dyn: _Dynamics, x0s: Sequence[float], grid: TimeGrid, n: int, seed: int,
         positivity: str, flow: bool, fp: str, label: str, rate: RateCurve,
         levy: LevyMeasure, threads: Optional[int], scheme: str = "log") -> list[PathSet]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if positivity not in ("raise", "stop", "allow"):
        raise ValueError("positivity must be 'raise', 'stop' or 'allow'")
    if scheme not in ("log", "euler"):
        raise ValueError("scheme must be 'log' or 'euler'")
    if flow and scheme != "log":
        raise ValueError("the flow derivative is simulated with the log scheme only")
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    chunks = [np.arange(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    workers = threads if threads is not None else _default_threads

    def job(idx):
        return _step_chunk(dyn, x0s, grid, seed, idx, positivity, flow, scheme)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(job, chunks))
    else:
        outs = [job(ch) for ch in chunks]
    times = _pad_cat([o[0] for o in outs], fill_last=True)
    dW = _pad_cat([o[1] for o in outs], fill_last=False, fill=0.0)
    n_nodes = np.concatenate([o[2] for o in outs])
    base_cols = np.concatenate([o[3] for o in outs], axis=0)
    sets = []
    for j, x0 in enumerate(x0s):
        left = _pad_cat([o[4][j]["left"] for o in outs], fill_last=True)
        right = _pad_cat([o[4][j]["right"] for o in outs], fill_last=True)
        atom = _pad_cat([o[4][j]["atom"] for o in outs], fill_last=False, fill=-1)
        stopped = np.concatenate([o[4][j]["stopped"] for o in outs])
        xl = xr = None
        if flow:
            xl = _pad_cat([o[4][j]["xi_left"] for o in outs], fill_last=True)
            xr = _pad_cat([o[4][j]["xi_right"] for o in outs], fill_last=True)
        sets.append(PathSet(times, left, right, atom, dW, n_nodes, base_cols,
                            np.arange(n, dtype=np.int64), stopped, seed, grid, rate, levy,
                            fingerprint({"model": fp, "x0": float(x0), "grid": grid.describe(),
                                         "n": n, "seed": seed, "measure": label}),
                            label, xl, xr, {"x0": float(x0)}))
    return sets


def _tilt(levy: LevyMeasure, measure: Optional[MeasureChange]):
    """Clock rates, acceptance function and Brownian shift for a tilt."""
    w = levy.weights
    if measure is None:
        return w.copy(), None, None
    if measure.n_atoms != levy.n_atoms:
        raise ValueError("measure change and model disagree on atom count")
    floor = np.asarray(measure.theta_floor, dtype=float)
    rates = (1.0 - floor) * w
    if np.any(rates < 0):
        raise SimulationError("negative Q-intensity")
    accept = None
    if not measure.is_constant:
        def accept(t, s, a, _m=measure, _f=floor):
            th = _m.theta[a](t, s)
            if np.any(th >= 1.0):
                raise SimulationError("theta >= 1 at a jump")
            if np.any(th < _f[a] - 1e-12):
                raise SimulationError("theta below its declared floor")
            return (1.0 - th) / (1.0 - _f[a])
    return rates, accept, measure.psi


def _true_dynamics(model: TrueModel, measure: Optional[MeasureChange]) -> _Dynamics:
    marks = model.levy.marks
    rates, accept, psi = _tilt(model.levy, measure)
    return _Dynamics(model.rate, lambda t, s: model.sigma(t, s),
                     lambda t, s, a: model.eta(t, s, marks[a]),
                     model.levy.weights, rates, accept, psi,
                     lambda t, s: model.sigma.rho_prime(t, s),
                     lambda t, s, a: model.eta.rho_prime(t, s, marks[a]))


def _mis_dynamics(model: MisspecifiedModel, measure: Optional[MeasureChange]) -> _Dynamics:
    marks = model.levy.marks
    rates, accept, psi = _tilt(model.levy, measure)
    return _Dynamics(model.rate, lambda t, s: model.gamma(t, s),
                     lambda t, s, a: model.gamma_tilde(t, s, marks[a]),
                     model.levy.weights, rates, accept, psi,
                     lambda t, s: model.gamma.rho_prime(t, s),
                     lambda t, s, a: model.gamma_tilde.rho_prime(t, s, marks[a]))


def _label(measure: Optional[MeasureChange]) -> str:
    return "P" if measure is None else measure.label


def _measure_fp(measure: Optional[MeasureChange]) -> dict:
    return {} if measure is None else measure.describe()


# --------------------------------------------------------------------------
# public simulators
# --------------------------------------------------------------------------


def simulate_true(model: TrueModel, grid: TimeGrid, n: int, seed: int,
                  measure: Optional[MeasureChange] = None, positivity: str = "raise",
                  threads: Optional[int] = None) -> PathSet:
    """True-market paths; with ``measure`` the dynamics are those under the tilted Q."""
    fp = fingerprint({"m": model.describe(), "q": _measure_fp(measure)})
    return _run(_true_dynamics(model, measure), [model.x0], grid, n, seed, positivity, False,
                fp, _label(measure), model.rate, model.levy, threads)[0]


def simulate_misspecified(model: MisspecifiedModel, x0: float, grid: TimeGrid, n: int, seed: int,
                          measure: Optional[MeasureChange] = None, positivity: str = "raise",
                          threads: Optional[int] = None, scheme: str = "log") -> PathSet:
    """Paths of the investor's model started at ``x0`` (coefficients read at left limits).

    ``scheme="euler"`` steps ``S`` arithmetically, which together with
    ``positivity="allow"`` follows models whose solutions leave the positive
    half-line (the flow-monotonicity counterexample does).
    """
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    fp = fingerprint({"m": model.describe(), "q": _measure_fp(measure), "scheme": scheme})
    return _run(_mis_dynamics(model, measure), [x0], grid, n, seed, positivity, False,
                fp, _label(measure), model.rate, model.levy, threads, scheme)[0]


def simulate_coupled(model: MisspecifiedModel, x: float, y: float, grid: TimeGrid, n: int,
                     seed: int, positivity: str = "raise", threads: Optional[int] = None,
                     scheme: str = "log") -> tuple[PathSet, PathSet]:
    """Two flows from ``x < y`` driven by identical Brownian increments and jump clocks."""
    if not 0 < x < y:
        raise ValueError("coupled simulation needs 0 < x < y")
    fp = fingerprint({"m": model.describe(), "coupled": True, "scheme": scheme})
    a, b = _run(_mis_dynamics(model, None), [x, y], grid, n, seed, positivity, False,
                fp, "P", model.rate, model.levy, threads, scheme)
    return a, b


def simulate_flow_derivative(model: MisspecifiedModel, x0: float, grid: TimeGrid, n: int,
                             seed: int, threads: Optional[int] = None) -> PathSet:
    """Paths carrying ``xi``, the stochastic exponential of ``int rho' dW + int rho_tilde' dJ~``."""
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    fp = fingerprint({"m": model.describe(), "flow": True})
    return _run(_mis_dynamics(model, None), [x0], grid, n, seed, "raise", True,
                fp, "P", model.rate, model.levy, threads)[0]


def simulate_under_Q(model: MisspecifiedModel, mc: MeasureChange, x0: float, grid: TimeGrid,
                     n: int, seed: int, check_grid: Optional[SamplingGrid] = None,
                     positivity: str = "raise", threads: Optional[int] = None) -> PathSet:
    """Misspecified dynamics simulated directly under the tilted measure."""
    if check_grid is None:
        check_grid = SamplingGrid(grid.T, x0 / 10.0, 10.0 * x0, 11, 41)
    res = mc.martingale_residual(model, check_grid)
    if res > 1e-10:
        raise ValueError(f"measure change violates the martingale condition (residual {res:.3g})")
    return simulate_misspecified(model, x0, grid, n, seed, mc, positivity, threads)


def density_process(mc: MeasureChange, paths: PathSet, model=None) -> np.ndarray:
    """Terminal likelihood ratio ``dQ/dP`` per path, from the recorded noise of P-paths.

    ``log xi(T) = -int psi dW - 1/2 int psi^2 dt + sum_jumps ln(1 - theta) + int sum_a theta_a w_a dt``.
    """
    if paths.measure_label != "P":
        raise ValueError("density_process needs paths simulated under the reference measure")
    levy = paths.levy if model is None else model.levy
    if mc.n_atoms != levy.n_atoms:
        raise ValueError("measure change and model disagree on atom count")
    w = levy.weights
    t = paths.times[:, :-1]
    s = paths.right[:, :-1]
    dt = np.diff(paths.times, axis=1)
    psi = mc.psi(t, s)
    log_xi = np.sum(-psi * paths.dW[:, 1:] - 0.5 * psi * psi * dt, axis=1)
    comp = np.zeros_like(dt)
    for a in range(mc.n_atoms):
        comp += mc.theta[a](t, s) * w[a]
    log_xi += np.sum(comp * dt, axis=1)
    for a in range(mc.n_atoms):
        hit = paths.atom == a
        if not hit.any():
            continue
        th = mc.theta[a](paths.times[hit], paths.left[hit])
        if np.any(th >= 1.0):
            raise ValueError("theta >= 1 at a realized jump")
        contrib = np.zeros(paths.atom.shape)
        contrib[hit] = np.log1p(-th)
        log_xi += contrib.sum(axis=1)
    return np.exp(log_xi)


# --------------------------------------------------------------------------
# estimators and I/O
# --------------------------------------------------------------------------


def summarize(samples) -> tuple[float, float]:
    """Mean and standard error in path-index order."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample value")
    mean = float(np.mean(x))
    return mean, float(np.std(x, ddof=1) / math.sqrt(x.size))


def mc_estimate(ps: PathSet, functional: Callable, per_path: bool = False) -> tuple[float, float]:
    """Mean and standard error of ``functional``.

    By default ``functional(ps)`` returns one value per path; with
    ``per_path=True`` it is called on each :class:`Path`.
    """
    if ps.n < 2:
        raise ValueError("need at least two paths")
    if per_path:
        vals = np.array([float(functional(ps.path(i))) for i in range(ps.n)])
    else:
        vals = np.asarray(functional(ps), dtype=float)
        if vals.ndim == 0:
            vals = np.full(ps.n, float(vals))
    return summarize(vals)


def dump_paths_csv(ps: PathSet, path) -> None:
    """Columns: ``path_id, time, value, is_jump, atom_index`` (value is post-jump)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path_id", "time", "value", "is_jump", "atom_index"])
        for i in range(ps.n):
            for k in range(int(ps.n_nodes[i])):
                a = int(ps.atom[i, k])
                wr.writerow([int(ps.stream_ids[i]), repr(float(ps.times[i, k])),
                             repr(float(ps.right[i, k])), int(a >= 0), a])


def ordering_violations(lower: PathSet, upper: PathSet) -> np.ndarray:
    """Per pair: whether the flow started lower ever ends up strictly above the other."""
    if lower.left.shape != upper.left.shape:
        raise ValueError("coupled path sets must share their node layout")
    return np.any((lower.right > upper.right) | (lower.left > upper.left), axis=1)
