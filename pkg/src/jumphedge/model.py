"""Market and model primitives: rates, Levy atoms, coefficient fields, payoffs.

Everything here is immutable after construction. Coefficient evaluators take
``(t, s, z)`` and must broadcast elementwise over numpy arrays ``t`` and ``s``
(``z`` is a scalar jump mark, ignored by volatility fields).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "RateCurve",
    "LevyMeasure",
    "CoefficientField",
    "TrueModel",
    "MisspecifiedModel",
    "Payoff",
    "SamplingGrid",
    "Check",
    "ValidationReport",
    "DominationReport",
    "validate_models",
    "check_domination",
    "payoff_value",
    "payoff_slope",
    "discount",
    "fingerprint",
]

RHO_PRIME_REL_STEP = 1e-5


# --------------------------------------------------------------------------
# rates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RateCurve:
    """Deterministic short rate, constant or piecewise constant.

    ``values[i]`` applies on ``[breakpoints[i-1], breakpoints[i])`` with the
    convention ``breakpoints[-1] = +inf``; so ``len(values) == len(breakpoints) + 1``.
    """

    values: tuple[float, ...]
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        bps = tuple(float(b) for b in self.breakpoints)
        if len(vals) != len(bps) + 1:
            raise ValueError("RateCurve needs len(values) == len(breakpoints) + 1")
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("rate values must be finite")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise ValueError("rate breakpoints must be strictly increasing")
        if bps and bps[0] <= 0.0:
            raise ValueError("rate breakpoints must lie in (0, T]")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "breakpoints", bps)

    @classmethod
    def constant(cls, r: float) -> "RateCurve":
        return cls((float(r),))

    @classmethod
    def piecewise(cls, values: Sequence[float], breakpoints: Sequence[float]) -> "RateCurve":
        return cls(tuple(values), tuple(breakpoints))

    @property
    def kind(self) -> str:
        return "constant" if not self.breakpoints else "piecewise-constant"

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    def rate_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.breakpoints), t, side="right")
        return np.asarray(self.values)[idx]

    def integral(self, t):
        """``int_0^t r(u) du``, exact, vectorised over ``t``."""
        t = np.asarray(t, dtype=float)
        if not self.breakpoints:
            return self.values[0] * t
        knots = np.concatenate(([0.0], self.breakpoints))
        vals = np.asarray(self.values)
        # cumulative integral at each knot
        cum = np.concatenate(([0.0], np.cumsum(vals[:-1] * np.diff(knots))))
        idx = np.searchsorted(knots, t, side="right") - 1
        idx = np.clip(idx, 0, len(vals) - 1)
        return cum[idx] + vals[idx] * (t - knots[idx])

    def describe(self) -> dict:
        return {"kind": self.kind, "values": list(self.values), "breakpoints": list(self.breakpoints)}


def discount(r: RateCurve, t0: float, t1: float) -> float:
    """Growth factor ``exp(int_{t0}^{t1} r du)`` of the money market."""
    if t0 > t1:
        raise ValueError(f"discount needs t0 <= t1, got {t0} > {t1}")
    if t0 < 0:
        raise ValueError("times must be non-negative")
    return float(np.exp(r.integral(t1) - r.integral(t0)))


# --------------------------------------------------------------------------
# Levy measure
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LevyMeasure:
    """Finite-activity Levy measure as a list of ``(mark, weight)`` atoms."""

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        atoms = tuple((float(z), float(w)) for z, w in self.atoms)
        marks = [z for z, _ in atoms]
        if any(z == 0.0 for z in marks):
            raise ValueError("Levy atoms must have non-zero marks")
        if len(set(marks)) != len(marks):
            raise ValueError("Levy atom marks must be distinct")
        if any(not (w > 0.0 and math.isfinite(w)) for _, w in atoms):
            raise ValueError("Levy atom weights must be positive and finite")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def empty(cls) -> "LevyMeasure":
        return cls(())

    @classmethod
    def single(cls, mark: float, weight: float) -> "LevyMeasure":
        return cls(((mark, weight),))

    @classmethod
    def from_density(cls, density: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                     n_nodes: int = 16) -> "LevyMeasure":
        """Quadrature a jump density on ``[a, b]`` into Gauss-Legendre atoms.

        Nodes falling on zero are dropped (the measure lives on R minus {0}).
        """
        x, wq = np.polynomial.legendre.leggauss(n_nodes)
        z = 0.5 * (b - a) * x + 0.5 * (b + a)
        w = 0.5 * (b - a) * wq * np.asarray(density(z), dtype=float)
        keep = (z != 0.0) & (w > 0.0)
        return cls(tuple(zip(z[keep].tolist(), w[keep].tolist())))

    @property
    def marks(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def total_mass(self) -> float:
        return float(sum(w for _, w in self.atoms))

    def scaled(self, factors: Sequence[float]) -> "LevyMeasure":
        """Atom weights multiplied by ``factors`` (atoms with zero weight are kept out)."""
        if len(factors) != self.n_atoms:
            raise ValueError("one factor per atom required")
        out = []
        for (z, w), f in zip(self.atoms, factors):
            if f < 0:
                raise ValueError("negative intensity after tilting")
            if f > 0:
                out.append((z, w * f))
        return LevyMeasure(tuple(out))

    def describe(self) -> list:
        return [[z, w] for z, w in self.atoms]


# --------------------------------------------------------------------------
# coefficient fields
# --------------------------------------------------------------------------

_KINDS = ("true-vol", "true-jump", "model-vol", "model-jump")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """A coefficient ``c(t, s, z)`` with an optional analytic ``d/ds [s c(t, s, z)]``."""

    func: Callable
    kind: str = "model-vol"
    drho: Optional[Callable] = None
    spec: dict = field(default_factory=dict)
    is_zero: bool = False
    state_dependent: bool = True

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    def __call__(self, t, s, z: float = 0.0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        out = np.asarray(self.func(t, s, z), dtype=float)
        return np.broadcast_to(out, np.broadcast(t, s).shape).copy() if out.shape != np.broadcast(t, s).shape else out

    def rho(self, t, s, z: float = 0.0) -> np.ndarray:
        return np.asarray(s, dtype=float) * self(t, s, z)

    def rho_prime(self, t, s, z: float = 0.0) -> np.ndarray:
        """``d/ds [s c(t, s, z)]``; central differences with step ``1e-5 s`` if no analytic form."""
        if self.drho is not None:
            t = np.asarray(t, dtype=float)
            s = np.asarray(s, dtype=float)
            out = np.asarray(self.drho(t, s, z), dtype=float)
            return np.broadcast_to(out, np.broadcast(t, s).shape).copy()
        s = np.asarray(s, dtype=float)
        h = RHO_PRIME_REL_STEP * s
        return (self.rho(t, s + h, z) - self.rho(t, s - h, z)) / (2.0 * h)

    def with_kind(self, kind: str) -> "CoefficientField":
        return CoefficientField(self.func, kind, self.drho, dict(self.spec), self.is_zero,
                                self.state_dependent)

    def describe(self) -> dict:
        if self.spec:
            return dict(self.spec)
        f = self.func
        return {"callable": f"{getattr(f, '__module__', '?')}.{getattr(f, '__qualname__', repr(f))}"}

    # ---- named built-ins ------------------------------------------------

    @classmethod
    def constant(cls, value, kind: str = "model-vol") -> "CoefficientField":
        """Constant coefficient; for jump kinds ``value`` may map marks to values."""
        if isinstance(value, dict):
            table = {float(k): float(v) for k, v in value.items()}

            def func(t, s, z, _table=table):
                return np.full(np.broadcast(t, s).shape, _table[float(z)])

            spec = {"builtin": "constant", "value": {str(k): v for k, v in sorted(table.items())}}
            return cls(func, kind, drho=func, spec=spec,
                       is_zero=all(v == 0.0 for v in table.values()), state_dependent=False)
        c = float(value)

        def func(t, s, z, _c=c):
            return np.full(np.broadcast(t, s).shape, _c)

        return cls(func, kind, drho=func, spec={"builtin": "constant", "value": c},
                   is_zero=(c == 0.0), state_dependent=False)

    @classmethod
    def zero(cls, kind: str = "model-jump") -> "CoefficientField":
        return cls.constant(0.0, kind)

    @classmethod
    def affine(cls, a: float, b: float, kind: str = "model-vol") -> "CoefficientField":
        """``c(s) = a + b s``; ``d/ds[s c] = a + 2 b s``."""
        a, b = float(a), float(b)
        return cls(lambda t, s, z: a + b * s + 0.0 * t, kind,
                   drho=lambda t, s, z: a + 2.0 * b * s + 0.0 * t,
                   spec={"builtin": "affine", "a": a, "b": b}, is_zero=(a == 0 and b == 0))

    @classmethod
    def rho_affine(cls, c0: float, c1: float, kind: str = "model-jump") -> "CoefficientField":
        """``s c(s) = c0 + c1 s``, i.e. ``c(s) = c1 + c0 / s``; ``d/ds[s c] = c1``.

        ``rho_affine(4, -2)`` is the textbook counterexample to flow monotonicity.
        """
        c0, c1 = float(c0), float(c1)
        return cls(lambda t, s, z: c1 + c0 / s + 0.0 * t, kind,
                   drho=lambda t, s, z: np.full(np.broadcast(t, s).shape, c1),
                   spec={"builtin": "rho_affine", "c0": c0, "c1": c1},
                   is_zero=(c0 == 0 and c1 == 0))

    @classmethod
    def saturating(cls, a: float, b: float, c: float, kind: str = "model-vol") -> "CoefficientField":
        """``c(s) = a + b s / (s + c)``: bounded, with bounded ``d/ds[s c]``."""
        a, b, c = float(a), float(b), float(c)
        if c <= 0:
            raise ValueError("saturating coefficient needs c > 0")
        return cls(lambda t, s, z: a + b * s / (s + c) + 0.0 * t, kind,
                   drho=lambda t, s, z: a + b * (s * s + 2.0 * c * s) / (s + c) ** 2 + 0.0 * t,
                   spec={"builtin": "saturating", "a": a, "b": b, "c": c})

    @classmethod
    def piecewise_in_time(cls, values: Sequence[float], breakpoints: Sequence[float],
                          kind: str = "model-vol") -> "CoefficientField":
        """Piecewise constant in ``t`` (same layout as :class:`RateCurve`), constant in ``s``."""
        vals = np.asarray(values, dtype=float)
        bps = np.asarray(breakpoints, dtype=float)
        if len(vals) != len(bps) + 1:
            raise ValueError("need len(values) == len(breakpoints) + 1")

        def func(t, s, z):
            out = vals[np.searchsorted(bps, t, side="right")]
            return np.broadcast_to(out, np.broadcast(t, s).shape)

        return cls(func, kind, drho=func,
                   spec={"builtin": "piecewise_in_time", "values": vals.tolist(),
                         "breakpoints": bps.tolist()},
                   is_zero=bool(np.all(vals == 0)), state_dependent=False)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def fingerprint(obj: dict) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class TrueModel:
    """The market's dynamics ``dS/S- = r dt + sigma dW + int eta dJ~``."""

    x0: float
    rate: RateCurve
    sigma: CoefficientField
    eta: CoefficientField
    levy: LevyMeasure

    def __post_init__(self) -> None:
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if self.sigma.kind != "true-vol":
            object.__setattr__(self, "sigma", self.sigma.with_kind("true-vol"))
        if self.eta.kind != "true-jump":
            object.__setattr__(self, "eta", self.eta.with_kind("true-jump"))

    def describe(self) -> dict:
        return {"type": "true", "x0": self.x0, "rate": self.rate.describe(),
                "sigma": self.sigma.describe(), "eta": self.eta.describe(),
                "levy": self.levy.describe()}

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.describe())


@dataclass(frozen=True, eq=False)
class MisspecifiedModel:
    """The investor's Markov model with volatility ``gamma`` and jump sensitivity ``gamma_tilde``."""

    rate: RateCurve
    gamma: CoefficientField
    gamma_tilde: CoefficientField
    levy: LevyMeasure
    epsilon_floor: float = 0.01

    def __post_init__(self) -> None:
        if self.gamma.kind != "model-vol":
            object.__setattr__(self, "gamma", self.gamma.with_kind("model-vol"))
        if self.gamma_tilde.kind != "model-jump":
            object.__setattr__(self, "gamma_tilde", self.gamma_tilde.with_kind("model-jump"))

    def describe(self) -> dict:
        return {"type": "misspecified", "rate": self.rate.describe(),
                "gamma": self.gamma.describe(), "gamma_tilde": self.gamma_tilde.describe(),
                "levy": self.levy.describe(), "epsilon_floor": self.epsilon_floor}

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.describe())

    def with_levy(self, levy: LevyMeasure) -> "MisspecifiedModel":
        return MisspecifiedModel(self.rate, self.gamma, self.gamma_tilde, levy, self.epsilon_floor)

    def as_true(self, x0: float) -> TrueModel:
        """The same coefficients read as a market model (only valid if constant in ``s``)."""
        return TrueModel(x0, self.rate, self.gamma.with_kind("true-vol"),
                         self.gamma_tilde.with_kind("true-jump"), self.levy)


# --------------------------------------------------------------------------
# payoffs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Payoff:
    """Convex piecewise-linear payoff.

    ``h(x) = intercept + slopes[0] x + sum_k (slopes[k+1] - slopes[k]) (x - knots[k])^+``.
    """

    knots: tuple[float, ...]
    slopes: tuple[float, ...]
    intercept: float = 0.0
    kind: str = "piecewise-linear"

    def __post_init__(self) -> None:
        knots = tuple(float(k) for k in self.knots)
        slopes = tuple(float(s) for s in self.slopes)
        if len(slopes) != len(knots) + 1:
            raise ValueError("need len(slopes) == len(knots) + 1")
        if any(k1 <= k0 for k0, k1 in zip(knots, knots[1:])):
            raise ValueError("payoff knots must be strictly increasing")
        if any(k <= 0 for k in knots):
            raise ValueError("payoff knots must be positive")
        if any(s1 < s0 for s0, s1 in zip(slopes, slopes[1:])):
            raise ValueError("payoff must be convex (slopes nondecreasing)")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "intercept", float(self.intercept))

    @classmethod
    def call(cls, strike: float) -> "Payoff":
        return cls((strike,), (0.0, 1.0), 0.0, "call")

    @classmethod
    def put(cls, strike: float) -> "Payoff":
        return cls((strike,), (-1.0, 0.0), float(strike), "put")

    @classmethod
    def straddle(cls, strike: float) -> "Payoff":
        return cls((strike,), (-1.0, 1.0), float(strike), "straddle")

    @classmethod
    def linear(cls, slope: float, intercept: float = 0.0) -> "Payoff":
        return cls((), (float(slope),), float(intercept), "linear")

    @classmethod
    def piecewise_linear(cls, knots: Sequence[float], slopes: Sequence[float],
                         intercept: float = 0.0) -> "Payoff":
        return cls(tuple(knots), tuple(slopes), intercept, "piecewise-linear")

    @property
    def lipschitz(self) -> float:
        """The bound ``L`` on the one-sided slopes."""
        return max(abs(s) for s in self.slopes)

    @property
    def is_affine(self) -> bool:
        return len(set(self.slopes)) == 1

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.intercept + self.slopes[0] * x
        for k, (s0, s1) in zip(self.knots, zip(self.slopes, self.slopes[1:])):
            out = out + (s1 - s0) * np.maximum(x - k, 0.0)
        return out

    def slope(self, x, side: str = "right") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        knots = np.asarray(self.knots)
        side_arg = {"right": "right", "left": "left"}[side]
        return np.asarray(self.slopes)[np.searchsorted(knots, x, side=side_arg)]

    def describe(self) -> dict:
        return {"kind": self.kind, "knots": list(self.knots), "slopes": list(self.slopes),
                "intercept": self.intercept}


def payoff_value(p: Payoff, x: float) -> float:
    if not x > 0:
        raise ValueError("payoff is defined for x > 0")
    return float(p(x))


def payoff_slope(p: Payoff, x: float, side: str = "right") -> float:
    if not x > 0:
        raise ValueError("payoff is defined for x > 0")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    return float(p.slope(x, side))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingGrid:
    """Points at which analytic assumptions are audited numerically."""

    T: float
    s_min: float
    s_max: float
    n_t: int = 101
    n_s: int = 201
    extra_s: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        if self.s_min <= 0 or any(s <= 0 for s in self.extra_s):
            raise ValueError("sampling grid prices must be positive")
        if self.s_max < self.s_min:
            raise ValueError("s_max < s_min")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t)

    @property
    def prices(self) -> np.ndarray:
        s = np.linspace(self.s_min, self.s_max, self.n_s)
        if self.extra_s:
            s = np.unique(np.concatenate((s, self.extra_s)))
        return s

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.times, self.prices, indexing="ij")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    worst: float
    threshold: Optional[float] = None
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "threshold": self.threshold, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


def _finite_max(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(a)) if a.size else 0.0


def _finite_min(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.min(a)) if a.size else 0.0


def validate_models(true: TrueModel, mis: MisspecifiedModel, grid: SamplingGrid,
                    log_moment_bound: float = 1.0,
                    rho_prime_bound: Optional[float] = None) -> ValidationReport:
    """Audit the standing assumptions on a sampling grid.

    Failures are reported, never raised; the caller decides what to do with them.
    """
    s_all = grid.prices
    if np.any(s_all <= 0):
        raise ValueError("non-positive price in sampling grid")
    for model_levy, jump, who in ((true.levy, true.eta, "true"), (mis.levy, mis.gamma_tilde, "model")):
        if model_levy.n_atoms == 0 and not jump.is_zero:
            raise ValueError(f"{who} jump coefficient is non-zero but the Levy measure is empty")

    tt, ss = grid.mesh()
    checks: list[Check] = []

    checks.append(Check("x0_positive", true.x0 > 0, float(true.x0), 0.0))

    sig = true.sigma(tt, ss)
    checks.append(Check("sigma_nonnegative", bool(np.all(sig >= 0)), _finite_min(sig), 0.0))
    gam = mis.gamma(tt, ss)
    checks.append(Check("gamma_nonnegative", bool(np.all(gam >= 0)), _finite_min(gam), 0.0))
    checks.append(Check("gamma_bounded", bool(np.all(np.isfinite(gam))), _finite_max(np.abs(gam)),
                        detail="sup |gamma| on grid"))
    rp = mis.gamma.rho_prime(tt, ss)
    checks.append(Check("rho_prime_bounded", bool(np.all(np.isfinite(rp))), _finite_max(np.abs(rp)),
                        detail="sup |d/ds (s gamma)| on grid"))

    # true square-integrability proxy: int sigma^2 dt + int int eta^2 dtheta dt
    tline = grid.times
    sig_t = true.sigma(tline, np.full_like(tline, true.x0))
    eta_sq = np.zeros_like(tline)
    eta_min = math.inf
    for z, w in true.levy.atoms:
        e = true.eta(tline, np.full_like(tline, true.x0), z)
        eta_min = min(eta_min, float(np.min(e)))
        eta_sq += w * e ** 2
    sq_int = float(np.trapezoid(sig_t ** 2 + eta_sq, tline))
    checks.append(Check("true_square_integrable", math.isfinite(sq_int), sq_int,
                        detail="int sigma^2 dt + int int eta^2 dtheta dt"))
    if true.levy.n_atoms:
        checks.append(Check("eta_gt_minus_one", eta_min > -1.0, eta_min, -1.0))

    if mis.levy.n_atoms:
        gt_min = math.inf
        rpt_min = math.inf
        ln_sq = np.zeros_like(tt)
        ent = np.zeros_like(tt)
        rpt_sq = np.zeros_like(tt)
        with np.errstate(invalid="ignore", divide="ignore"):
            for z, w in mis.levy.atoms:
                g = mis.gamma_tilde(tt, ss, z)
                r_ = mis.gamma_tilde.rho_prime(tt, ss, z)
                gt_min = min(gt_min, float(np.min(g)))
                rpt_min = min(rpt_min, float(np.min(r_)))
                lg = np.log1p(g)
                ln_sq = ln_sq + w * lg ** 2
                ent = ent + w * (g - lg)
                rpt_sq = rpt_sq + w * r_ ** 2
        floor = -1.0 + mis.epsilon_floor
        checks.append(Check("gamma_tilde_gt_minus_one", gt_min > -1.0, gt_min, -1.0))
        checks.append(Check("rho_tilde_prime_floor", rpt_min > floor, rpt_min, floor,
                            detail="inf d/ds (s gamma_tilde) vs -1 + epsilon"))
        lsq = float(np.max(ln_sq)) if np.all(np.isfinite(ln_sq)) else math.inf
        checks.append(Check("log_moment_square", lsq <= log_moment_bound, lsq, log_moment_bound,
                            detail="sup int ln(1+gamma_tilde)^2 dtheta"))
        le = float(np.max(ent)) if np.all(np.isfinite(ent)) else math.inf
        checks.append(Check("log_moment_entropy", le <= log_moment_bound, le, log_moment_bound,
                            detail="sup int (gamma_tilde - ln(1+gamma_tilde)) dtheta"))
        rsq = float(np.max(rpt_sq))
        ok = math.isfinite(rsq) and (rho_prime_bound is None or rsq <= rho_prime_bound)
        checks.append(Check("rho_tilde_prime_square_bounded", ok, rsq, rho_prime_bound,
                            detail="sup int rho_tilde'^2 dtheta (empirical L)"))
    return ValidationReport(tuple(checks))


@dataclass(frozen=True)
class DominationReport:
    vol_ok: np.ndarray
    jump_ok: np.ndarray
    vol_strict: np.ndarray
    jump_strict: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.vol_ok) and np.all(self.jump_ok))

    @property
    def n_violations(self) -> int:
        return int(np.sum(~self.vol_ok) + np.sum(~self.jump_ok))

    def as_dict(self) -> dict:
        return {"passed": self.passed, "vol_violations": int(np.sum(~self.vol_ok)),
                "jump_violations": int(np.sum(~self.jump_ok)),
                "points": int(self.vol_ok.size)}


def check_domination(true: TrueModel, mis: MisspecifiedModel, grid: SamplingGrid) -> DominationReport:
    """Pointwise ``sigma <= gamma`` and ``sgn(gamma_tilde - eta) == sgn(eta)`` on the grid."""
    if not np.array_equal(true.levy.marks, mis.levy.marks):
        raise ValueError("domination requires the two models to share Levy atoms")
    tt, ss = grid.mesh()
    sig = true.sigma(tt, ss)
    gam = mis.gamma(tt, ss)
    vol_ok = sig <= gam
    vol_strict = sig < gam
    n_atoms = true.levy.n_atoms
    jump_ok = np.ones((n_atoms,) + tt.shape, dtype=bool)
    jump_strict = np.zeros((n_atoms,) + tt.shape, dtype=bool)
    for a, z in enumerate(true.levy.marks):
        eta = true.eta(tt, ss, z)
        gt = mis.gamma_tilde(tt, ss, z)
        jump_ok[a] = np.sign(gt - eta) == np.sign(eta)
        jump_strict[a] = jump_ok[a] & (gt != eta)
    return DominationReport(vol_ok, jump_ok, vol_strict, jump_strict)
