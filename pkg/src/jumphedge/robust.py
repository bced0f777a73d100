"""Robust pricing over finite families of constant Girsanov tilts."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hedge import SubmartingaleReport, checkpoint_columns, run_delta_hedge, submartingale_verdicts
from .model import MisspecifiedModel, Payoff, SamplingGrid, TrueModel
from .pide import SpaceGrid, ValueSurface, _finish_surface, solve_pide
from .sim import MeasureChange, TimeGrid, simulate_true

__all__ = [
    "MeasureFamily",
    "RobustSurface",
    "enumerate_family",
    "robust_price",
    "robust_hedge_test",
    "tilted_model",
    "solve_measure",
]

MARTINGALE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MeasureFamily:
    kind: str
    candidates: tuple[MeasureChange, ...]
    params: dict
    n_dropped: dict
    condition_I_bound: Optional[float]
    condition_I_worst: float

    def __len__(self) -> int:
        return len(self.candidates)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": self.params, "n_candidates": len(self.candidates),
                "dropped": self.n_dropped, "condition_I_bound": self.condition_I_bound,
                "condition_I_worst": self.condition_I_worst,
                "candidates": [c.describe() for c in self.candidates]}


def _condition_I(model: MisspecifiedModel, theta: Sequence[float], grid: SamplingGrid) -> float:
    """``sup int rho_tilde^2 dtheta_Q / (1 + s^2)`` on the grid."""
    if not model.levy.n_atoms:
        return 0.0
    tt, ss = grid.mesh()
    acc = np.zeros_like(tt)
    for a, (z, w) in enumerate(model.levy.atoms):
        rho = model.gamma_tilde.rho(tt, ss, z)
        acc += rho * rho * (1.0 - theta[a]) * w
    return float(np.max(acc / (1.0 + ss * ss)))


def _solve_psi(model: MisspecifiedModel, theta: Sequence[float], grid: SamplingGrid):
    """Constant ``psi`` solving the martingale condition on the grid, or ``None``."""
    tt, ss = grid.mesh()
    jump = np.zeros_like(tt)
    for a, (z, w) in enumerate(model.levy.atoms):
        jump += model.gamma_tilde(tt, ss, z) * theta[a] * w
    gam = model.gamma(tt, ss)
    if model.gamma.is_zero or np.all(gam == 0):
        return 0.0 if float(np.max(np.abs(jump))) <= MARTINGALE_TOL else None
    if np.any(gam <= 0):
        return None
    psi = float(-jump.flat[0] / gam.flat[0]) + 0.0
    res = float(np.max(np.abs(gam * psi + jump)))
    return psi if res <= MARTINGALE_TOL else None


def enumerate_family(model: MisspecifiedModel, kind: str = "singleton",
                     theta_grid: Sequence[float] = (0.0,), B: Optional[float] = None,
                     B1: Optional[float] = None, B2: Optional[float] = None,
                     explicit: Sequence[tuple[float, Sequence[float]]] = (),
                     condition_I_bound: Optional[float] = None,
                     grid: Optional[SamplingGrid] = None) -> MeasureFamily:
    """Candidate tilts ``(psi, theta_a)``, constant in ``(t, s)``.

    ``theta_grid`` is shared by all atoms (product grid); ``psi`` is solved
    from the martingale condition. Candidates violating the family bounds or
    the condition are dropped and counted.
    """
    if grid is None:
        grid = SamplingGrid(1.0, 1.0, 1000.0, 11, 41)
    n_atoms = model.levy.n_atoms
    w = model.levy.weights
    dropped = {"martingale": 0, "bound": 0, "theta_ge_1": 0, "condition_I": 0}
    raw: list[tuple[float, tuple[float, ...]]] = []
    if kind == "singleton":
        raw = [(0.0, (0.0,) * n_atoms)]
    elif kind in ("good_deal", "ball"):
        if kind == "good_deal" and (B is None or B < 0):
            raise ValueError("good_deal family needs B >= 0")
        if kind == "ball" and (B1 is None or B2 is None):
            raise ValueError("ball family needs B1 and B2")
        for th in itertools.product(sorted(set(float(x) for x in theta_grid)), repeat=n_atoms):
            if any(x >= 1.0 for x in th):
                dropped["theta_ge_1"] += 1
                continue
            psi = _solve_psi(model, th, grid)
            if psi is None:
                dropped["martingale"] += 1
                continue
            raw.append((psi, th))
    elif kind == "explicit":
        for psi, th in explicit:
            th = tuple(float(x) for x in th)
            if len(th) != n_atoms:
                raise ValueError("explicit candidate needs one theta per atom")
            if any(x >= 1.0 for x in th):
                dropped["theta_ge_1"] += 1
                continue
            raw.append((float(psi), th))
    else:
        raise ValueError(f"unknown family kind {kind!r}")

    cands: list[MeasureChange] = []
    worst_I = 0.0
    for psi, th in raw:
        if kind == "good_deal" and psi * psi + float(np.dot(np.square(th), w)) > B + 1e-12:
            dropped["bound"] += 1
            continue
        if kind == "ball" and (abs(psi) > B1 + 1e-12 or any(abs(x) > B2 + 1e-12 for x in th)):
            dropped["bound"] += 1
            continue
        mc = MeasureChange.constant(psi, th, family_tag=kind)
        if mc.martingale_residual(model, grid) > MARTINGALE_TOL:
            dropped["martingale"] += 1
            continue
        ci = _condition_I(model, th, grid)
        if condition_I_bound is not None and ci > condition_I_bound:
            dropped["condition_I"] += 1
            continue
        worst_I = max(worst_I, ci)
        cands.append(mc)
    if not cands:
        raise ValueError("empty feasible measure family")
    params = {"theta_grid": [float(x) for x in theta_grid] if kind in ("good_deal", "ball") else None,
              "B": B, "B1": B1, "B2": B2}
    return MeasureFamily(kind, tuple(cands), params, dropped, condition_I_bound, worst_I)


def tilted_model(model: MisspecifiedModel, mc: MeasureChange) -> MisspecifiedModel:
    """Same coefficients, atom weights scaled by ``1 - theta``."""
    if not mc.is_constant:
        raise ValueError("only constant tilts keep the model Markov with the same coefficients")
    factors = [1.0 - th for th in mc.constants[1]]
    if any(f <= 0 for f in factors):
        raise ValueError("theta must stay below 1")
    return model.with_levy(model.levy.scaled(factors))


@dataclass(frozen=True, eq=False)
class RobustSurface:
    surface: ValueSurface
    candidates: tuple[ValueSurface, ...]
    argmax: np.ndarray
    family: MeasureFamily
    meta: dict = field(default_factory=dict)

    def candidate_prices(self, x0: float) -> list[float]:
        return [c.price(x0) for c in self.candidates]

    def argmax_summary(self) -> dict:
        counts = np.bincount(self.argmax.ravel(), minlength=len(self.candidates))
        return {"share_per_candidate": (counts / self.argmax.size).tolist()}


def robust_price(model: MisspecifiedModel, payoff: Payoff, family: MeasureFamily,
                 tgrid: TimeGrid, xgrid: SpaceGrid, threads: int = 1,
                 cache_dir: Optional[str] = None) -> RobustSurface:
    """Pointwise maximum of the candidate value surfaces (ties go to the lowest index)."""
    models = [tilted_model(model, mc) for mc in family.candidates]

    def job(m):
        return solve_pide(m, payoff, tgrid, xgrid, cache_dir=cache_dir)

    if threads > 1 and len(models) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            surfaces = list(ex.map(job, models))
    else:
        surfaces = [job(m) for m in models]
    stack = np.stack([s.values for s in surfaces])
    arg = np.argmax(stack, axis=0)
    vmax = np.take_along_axis(stack, arg[None], axis=0)[0]
    vmax[-1] = payoff(surfaces[0].prices)
    surf = _finish_surface(surfaces[0].times, surfaces[0].prices, vmax, payoff,
                           {"scheme": "pointwise-max", "n_candidates": len(surfaces)})
    return RobustSurface(surf, tuple(surfaces), arg, family)


def robust_hedge_test(true_model: TrueModel, rs: RobustSurface, family: MeasureFamily,
                      checkpoints: Sequence[float], n: int, seed: int,
                      grid: TimeGrid) -> SubmartingaleReport:
    """Hedge with the right-hand Delta of the max surface under every family member."""
    if not true_model.rate.is_zero:
        raise ValueError("the robust hedge test is defined for a zero interest rate")
    out = []
    for mc in family.candidates:
        paths = simulate_true(true_model, grid, n, seed, measure=None if mc.is_reference else mc)
        hr = run_delta_hedge(paths, rs.surface, checkpoints=checkpoints)
        v = submartingale_verdicts(hr)
        v["tilt"] = mc.describe()
        out.append(v)
    cp, _ = checkpoint_columns(simulate_true(true_model, grid, 1, seed), checkpoints)
    return SubmartingaleReport(tuple(float(c) for c in cp), tuple(out))


def solve_measure(model: MisspecifiedModel, theta: Sequence[float],
                  grid: Optional[SamplingGrid] = None) -> MeasureChange:
    """Constant tilt with ``psi`` solved from the martingale condition."""
    theta = tuple(float(x) for x in theta)
    if len(theta) != model.levy.n_atoms:
        raise ValueError("one theta per atom required")
    grid = grid or SamplingGrid(1.0, 1.0, 1000.0, 11, 41)
    psi = _solve_psi(model, theta, grid)
    if psi is None:
        raise ValueError(f"no constant psi solves the martingale condition for theta={theta}")
    return MeasureChange.constant(psi, theta)
