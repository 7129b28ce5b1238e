"""
Asymptotic tracking of a Brownian target with small costs.

A controller keeps ``X`` close to a target ``dX° = b_t dt + sqrt(a_t) dW``.
Deviation is charged ``r_t D(X - X°)`` and interventions carry the small
weights ``eps^beta_Q l_t Q(u)``, ``eps^beta_F k_t`` and ``eps^beta_P h_t |xi|``.
As ``eps -> 0`` the optimal tracking error lives on the scale ``eps^beta``
and the normalized cost ``J/eps^(beta zeta_D)`` is bounded below by
``int_0^T I(a_t, r_t, l_t, k_t, h_t) dt`` where ``I`` is the ergodic cost of
the frozen-coefficient local problem.

Only quadratic ``D`` and ``Q`` have local closed forms, so the lower bound
and the simulator require ``zeta_D = zeta_Q = 2``.
"""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import simpson

from . import _kernels as kern
from .errors import ConfigError, ErgotrackError, ExponentError, ParameterError, SolverError
from .localsolve import ControlClass, ModelParams, solve, solve_cost
from .simkit import CHUNK, PathConfig, _workers, null_strategy, strategy_for

ALPHA = 2.0
BETA_RTOL = 1e-12
TRIAL_BLOCK = 1_000_003
N_COEF = 2049


# ----------------------------------------------------------------------
# exponents

@dataclass(frozen=True)
class CostExponents:
    """Homogeneity degrees of the cost pieces and their epsilon powers.

    ``zeta_F = 0`` and ``zeta_P = 1`` are fixed; ``beta_*`` may be omitted
    when the corresponding cost does not occur in the class.
    """

    zeta_D: float = 2.0
    zeta_Q: float = 2.0
    zeta_F: float = 0.0
    zeta_P: float = 1.0
    beta_Q: Optional[float] = None
    beta_F: Optional[float] = None
    beta_P: Optional[float] = None

    def __post_init__(self):
        if not self.zeta_D > 0:
            raise ExponentError("zeta_D must be > 0")
        if not self.zeta_Q > 1:
            raise ExponentError("zeta_Q must be > 1")
        if self.zeta_F != 0 or self.zeta_P != 1:
            raise ExponentError("zeta_F = 0 and zeta_P = 1 are fixed")
        for name in ("beta_Q", "beta_F", "beta_P"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise ExponentError(f"{name} must be > 0")

    @classmethod
    def quadratic(cls, beta=1.0):
        """Quadratic D and Q with every epsilon power consistent with ``beta``."""
        return cls(beta_Q=beta * (2 + (ALPHA - 1) * 2), beta_F=beta * (2 + ALPHA),
                   beta_P=beta * (2 + ALPHA - 1))

    def ratios(self):
        """beta implied by each declared power (None where undeclared)."""
        d = self.zeta_D
        return {
            "beta_Q": None if self.beta_Q is None else self.beta_Q / (d + (ALPHA - 1) * self.zeta_Q),
            "beta_F": None if self.beta_F is None else self.beta_F / (d + ALPHA - self.zeta_F),
            "beta_P": None if self.beta_P is None else self.beta_P / (d + ALPHA - self.zeta_P),
        }

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("zeta_D", "zeta_Q", "zeta_F", "zeta_P", "beta_Q", "beta_F", "beta_P")}


def _needed(cls):
    """(required, optional) epsilon powers of a class."""
    cls = ControlClass.parse(cls)
    req, opt = [], []
    if cls.has_regular:
        req.append("beta_Q")
    if cls.has_jumps:
        req.append("beta_F")
        opt.append("beta_P")
    if cls.has_reflection:
        req.append("beta_P")
    return req, opt


def beta_from_exponents(e: CostExponents, cls) -> float:
    """The common order beta of the applicable ratios.

    Raises ExponentError if a required power is missing or the ratios
    disagree by more than a relative 1e-12.
    """
    req, opt = _needed(cls)
    rat = e.ratios()
    missing = [n for n in req if rat[n] is None]
    if missing:
        raise ExponentError(f"class {ControlClass.parse(cls).value} needs {', '.join(missing)}")
    used = {n: rat[n] for n in req + opt if rat[n] is not None}
    vals = list(used.values())
    ref = vals[0]
    if any(abs(v - ref) > BETA_RTOL * max(abs(v), abs(ref)) for v in vals[1:]):
        listing = ", ".join(f"{n} -> {v:.12g}" for n, v in used.items())
        raise ExponentError(f"inconsistent epsilon powers: {listing}")
    return float(ref)


# ----------------------------------------------------------------------
# coefficient paths

@dataclass(frozen=True)
class CoefficientPath:
    """Deterministic coefficient on [0, T].

    kind is ``constant`` (v), ``linear`` (v0, v1 over [0, T]),
    ``sinusoid`` (mean, amp, period) or ``table`` (times, values; linear
    interpolation).
    """

    kind: str
    args: tuple

    def __post_init__(self):
        n = {"constant": 1, "linear": 2, "sinusoid": 3, "table": 2}
        if self.kind not in n:
            raise ParameterError(f"unknown coefficient path kind {self.kind!r}")
        if len(self.args) != n[self.kind]:
            raise ParameterError(f"{self.kind} path takes {n[self.kind]} arguments")
        if self.kind == "table":
            t, v = (tuple(float(x) for x in a) for a in self.args)
            if len(t) != len(v) or len(t) < 2 or np.any(np.diff(t) <= 0):
                raise ParameterError("table path needs >= 2 strictly increasing times with values")
            object.__setattr__(self, "args", (t, v))
        else:
            object.__setattr__(self, "args", tuple(float(x) for x in self.args))
            if not all(math.isfinite(x) for x in self.args):
                raise ParameterError("coefficient path arguments must be finite")
        if self.kind == "sinusoid" and self.args[2] <= 0:
            raise ParameterError("sinusoid period must be > 0")

    @classmethod
    def constant(cls, v):
        return cls("constant", (v,))

    @classmethod
    def linear(cls, v0, v1):
        return cls("linear", (v0, v1))

    @classmethod
    def sinusoid(cls, mean, amp, period):
        return cls("sinusoid", (mean, amp, period))

    @classmethod
    def table(cls, times, values):
        return cls("table", (tuple(times), tuple(values)))

    def __call__(self, t, horizon):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.args[0])
        if self.kind == "linear":
            v0, v1 = self.args
            return v0 + (v1 - v0) * t / horizon
        if self.kind == "sinusoid":
            mean, amp, period = self.args
            return mean + amp * np.sin(2 * np.pi * t / period)
        return np.interp(t, *self.args)

    def min_value(self):
        """A lower bound of the path over any interval."""
        if self.kind == "constant":
            return self.args[0]
        if self.kind == "linear":
            return min(self.args)
        if self.kind == "sinusoid":
            return self.args[0] - abs(self.args[1])
        return min(self.args[1])

    def is_constant(self):
        return self.kind == "constant"

    def describe(self):
        return {"kind": self.kind, "args": [list(a) if isinstance(a, tuple) else a for a in self.args]}


_ZERO = CoefficientPath.constant(0.0)


@dataclass(frozen=True)
class TrackingProblem:
    """Horizon, coefficient paths, exponents and control class."""

    T: float
    a_path: CoefficientPath
    r_path: CoefficientPath
    cls: ControlClass
    l_path: Optional[CoefficientPath] = None
    k_path: Optional[CoefficientPath] = None
    h_path: Optional[CoefficientPath] = None
    b_path: CoefficientPath = _ZERO
    exponents: CostExponents = field(default_factory=CostExponents.quadratic)

    def __post_init__(self):
        object.__setattr__(self, "cls", ControlClass.parse(self.cls))
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ParameterError("T must be > 0")
        req = {"a", "r"}
        if self.cls.has_regular:
            req.add("l")
        if self.cls.has_jumps:
            req.add("k")
        if self.cls.has_reflection:
            req.add("h")
        for name in ("a", "r", "l", "k", "h"):
            path = getattr(self, f"{name}_path")
            if path is None:
                if name in req:
                    raise ParameterError(f"class {self.cls.value} requires the {name} path")
                continue
            if path.min_value() <= 0:
                raise ParameterError(f"{name} path must be positive on [0, T]")
            if path.kind == "table":
                t = path.args[0]
                if t[0] > 0 or t[-1] < self.T:
                    raise ParameterError(f"{name} table must cover [0, T]")

    @property
    def beta(self):
        return beta_from_exponents(self.exponents, self.cls)

    @property
    def normalizer_exponent(self):
        return self.beta * self.exponents.zeta_D

    def _value(self, name, t):
        path = getattr(self, f"{name}_path")
        if path is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return path(t, self.T)

    def frozen(self, t) -> ModelParams:
        """Local problem at time ``t`` (weights of absent paths are zero)."""
        v = {n: float(self._value(n, t)) for n in ("a", "r", "l", "k", "h")}
        if not self.cls.has_regular:
            v["l"] = 0.0
        if not self.cls.has_jumps:
            v["k"] = 0.0
        return ModelParams(**v)

    def is_constant(self):
        paths = [self.a_path, self.r_path, self.l_path, self.k_path, self.h_path, self.b_path]
        return all(p is None or p.is_constant() for p in paths)

    def scaled(self, lam):
        """Same problem with the r, l, k, h paths multiplied by ``lam``."""
        def sc(p):
            if p is None:
                return None
            if p.kind == "table":
                return CoefficientPath.table(p.args[0], [lam * v for v in p.args[1]])
            if p.kind == "sinusoid":
                return CoefficientPath.sinusoid(lam * p.args[0], lam * p.args[1], p.args[2])
            return CoefficientPath(p.kind, tuple(lam * v for v in p.args))
        return TrackingProblem(self.T, self.a_path, sc(self.r_path), self.cls, sc(self.l_path),
                               sc(self.k_path), sc(self.h_path), self.b_path, self.exponents)

    def as_dict(self):
        out = {"T": self.T, "class": self.cls.value, "exponents": self.exponents.as_dict()}
        for name in ("a", "b", "r", "l", "k", "h"):
            path = getattr(self, f"{name}_path")
            if path is not None:
                out[f"{name}_path"] = path.describe()
        return out


def _require_quadratic(e: CostExponents):
    if e.zeta_D != 2 or e.zeta_Q != 2:
        raise ExponentError("local solutions exist only for quadratic D and Q (zeta_D = zeta_Q = 2)")


# ----------------------------------------------------------------------
# lower bound

@lru_cache(maxsize=4096)
def _cached_cost(p: ModelParams, cls: ControlClass):
    return solve_cost(p, cls)


@lru_cache(maxsize=1024)
def _cached_solution(p: ModelParams, cls: ControlClass):
    return solve(p, cls)


def _at(fn, tp, t):
    try:
        return fn(tp.frozen(t), tp.cls)
    except (ErgotrackError, ValueError, ArithmeticError) as exc:
        raise SolverError(f"local solve failed at t={t:.12g}: {exc}") from exc


def local_costs(tp: TrackingProblem, times):
    """Frozen-coefficient ergodic cost at each of ``times``."""
    return np.array([_at(_cached_cost, tp, float(t)) for t in times])


def lower_bound_integral(tp: TrackingProblem, n_times=201) -> float:
    """Composite Simpson quadrature of ``t -> I_t`` over [0, T]."""
    if int(n_times) != n_times or n_times < 3:
        raise ConfigError("n_times must be an integer >= 3")
    _require_quadratic(tp.exponents)
    t = np.linspace(0.0, tp.T, int(n_times))
    return float(simpson(local_costs(tp, t), x=t))


# ----------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class TrackingStrategy:
    """``optimal``, ``distorted`` (gains and thresholds times ``lam``) or
    ``null`` (uncontrolled, reflected at ``lam`` times the local scale)."""

    kind: str = "optimal"
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("optimal", "distorted", "null"):
            raise ConfigError(f"unknown tracking strategy {self.kind!r}")
        if not self.lam > 0:
            raise ConfigError("strategy factor must be > 0")

    @classmethod
    def rescaled_optimal(cls):
        return cls("optimal", 1.0)

    @classmethod
    def rescaled_distorted(cls, lam):
        return cls("distorted", lam)

    @classmethod
    def null(cls, factor=3.0):
        return cls("null", factor)

    @property
    def label(self):
        return "optimal" if self.kind == "optimal" else f"{self.kind}({self.lam:g})"

    def local(self, sol):
        if self.kind == "null":
            return null_strategy(sol, self.lam)
        return strategy_for(sol, self.lam if self.kind == "distorted" else 1.0)


def _policy_tables(tp, strategy, n_checkpoints):
    times = np.linspace(0.0, tp.T, n_checkpoints)
    specs = [strategy.local(_at(_cached_solution, tp, float(t))) for t in times]
    nt = max((len(s.table) for s in specs if s.table is not None), default=2)
    pol = np.zeros((n_checkpoints, kern.N_POL))
    tabs = np.zeros((n_checkpoints, nt))
    for m, s in enumerate(specs):
        if s.kind == "ou":
            pol[m, kern.P_KIND] = kern.KIND_OU
            pol[m, kern.P_THETA] = s.theta
        elif s.table is not None:
            pol[m, kern.P_KIND] = kern.KIND_TABLE
            grid = np.linspace(0.0, s.U, nt)
            tabs[m] = np.interp(grid, np.linspace(0.0, s.U, len(s.table)), s.table)
            pol[m, kern.P_INVDX] = (nt - 1) / s.U
        else:
            pol[m, kern.P_KIND] = kern.KIND_NULL
        if s.kind in ("reflect", "combined_singular"):
            pol[m, kern.P_BOUND] = s.U
        elif s.kind == "null":
            pol[m, kern.P_BOUND] = s.bound
        elif s.kind in ("impulse", "combined_impulse"):
            pol[m, kern.P_TRIG] = s.U
            pol[m, kern.P_TARGET] = s.target
    return pol, tabs


def _coef_grid(tp):
    n = N_COEF
    for path in (tp.a_path, tp.b_path, tp.r_path, tp.l_path, tp.k_path, tp.h_path):
        if path is not None and path.kind == "sinusoid":
            n = max(n, int(64 * tp.T / path.args[2]) + 1)
        if path is not None and path.kind == "table":
            n = max(n, 8 * len(path.args[0]) + 1)
    t = np.linspace(0.0, tp.T, n)
    return np.vstack([tp._value(name, t) for name in ("a", "b", "r", "l", "k", "h")])


@dataclass
class TrackingResult:
    """Per-trial scaled costs and their normalization by ``eps^(beta zeta_D)``.

    ``breakdown`` columns are the unweighted deviation, regular, fixed and
    proportional costs; ``J = breakdown @ weights``.
    """

    eps: float
    beta: float
    norm_exponent: float
    dt: float
    n_steps: int
    strategy: str
    weights: np.ndarray
    breakdown: np.ndarray
    interventions: np.ndarray
    seeds: np.ndarray
    outside_guarantee: bool

    @property
    def trial_J(self):
        return self.breakdown @ self.weights

    @property
    def trial_normalized(self):
        return self.trial_J / self.eps ** self.norm_exponent

    @property
    def J_eps(self):
        return float(self.trial_J.mean())

    @property
    def normalized(self):
        return float(self.trial_normalized.mean())

    @property
    def stderr(self):
        v = self.trial_normalized
        return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan

    def __iter__(self):
        return iter((self.J_eps, self.normalized))


def _one_trial(G_seed, n, dt, T, coef, pol, tabs, eb):
    rng = np.random.Generator(np.random.PCG64(G_seed))
    st = np.zeros(1)
    acc = np.zeros(kern.N_TACC)
    done = 0
    while done < n:
        m = min(CHUNK, n - done)
        kern.track_chunk(rng, m, st, done, dt, T, coef, pol, tabs, eb, acc)
        done += m
    return acc


def simulate_tracking(tp: TrackingProblem, eps, c: PathConfig, strategy=None,
                      n_checkpoints=65) -> TrackingResult:
    """Simulate ``c.n_paths`` trials of the rescaled local policy.

    ``c.dt`` is the step in local (zoomed) time units; the actual Euler step
    is ``eps^(2 beta) c.dt``.  ``c.horizon`` is not used: trials run over
    [0, T] of the problem.  Trial ``i`` draws from PCG64(``c.seed + i``).
    Local policies are recomputed on ``n_checkpoints`` equally spaced times
    and the nearest one is applied.
    """
    strategy = strategy or TrackingStrategy.rescaled_optimal()
    if not (0 < eps < 1):
        raise ConfigError("eps must lie in (0, 1)")
    if int(n_checkpoints) != n_checkpoints or n_checkpoints < 1:
        raise ConfigError("n_checkpoints must be a positive integer")
    _require_quadratic(tp.exponents)
    beta = tp.beta
    e = tp.exponents
    eb = eps ** beta
    dt = eps ** (ALPHA * beta) * c.dt
    n = int(round(tp.T / dt))
    if n < 1:
        raise ConfigError("step larger than the horizon")
    if n * c.n_paths > 5e10:
        raise ConfigError("run too large: reduce trials or increase dt")
    # undeclared optional powers follow from the common beta
    bQ = e.beta_Q if e.beta_Q is not None else beta * (e.zeta_D + (ALPHA - 1) * e.zeta_Q)
    bF = e.beta_F if e.beta_F is not None else beta * (e.zeta_D + ALPHA - e.zeta_F)
    bP = e.beta_P if e.beta_P is not None else beta * (e.zeta_D + ALPHA - e.zeta_P)
    weights = np.array([1.0, eps ** bQ, eps ** bF, eps ** bP])

    pol, tabs = _policy_tables(tp, strategy, int(n_checkpoints) if not tp.is_constant() else 1)
    coef = _coef_grid(tp)
    seeds = [c.seed + i for i in range(c.n_paths)]
    job = lambda s: _one_trial(s, n, dt, tp.T, coef, pol, tabs, eb)
    nw = _workers(c.n_paths)
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            accs = list(ex.map(job, seeds))
    else:
        accs = [job(s) for s in seeds]
    accs = np.array(accs)
    breakdown = accs[:, [kern.T_DEV, kern.T_REG, kern.T_FIX, kern.T_PROP]]
    b_zero = tp.b_path.is_constant() and tp.b_path.args[0] == 0.0
    return TrackingResult(
        eps=float(eps), beta=beta, norm_exponent=beta * e.zeta_D, dt=dt, n_steps=n, strategy=strategy.label,
        weights=weights, breakdown=breakdown,
        interventions=accs[:, kern.T_NINT].astype(np.int64),
        seeds=np.array(seeds, dtype=np.uint64),
        outside_guarantee=not b_zero,
    )


# ----------------------------------------------------------------------
# verification

class LevelReport(NamedTuple):
    strategy: str
    eps: float
    fraction: float
    fraction_se: float
    mean_normalized: float
    stderr: float
    result: TrackingResult


@dataclass
class VerificationReport:
    bound: float
    delta_frac: float
    levels: list
    outside_guarantee: bool
    problem: dict

    def fractions(self, strategy="optimal"):
        return [lv.fraction for lv in self.levels if lv.strategy == strategy]

    def trend(self, strategy="optimal"):
        """Whether pass fractions are non-decreasing as eps decreases, strictly
        and within one standard error."""
        lv = sorted((x for x in self.levels if x.strategy == strategy), key=lambda x: -x.eps)
        strict = all(b.fraction >= a.fraction for a, b in zip(lv, lv[1:]))
        loose = all(b.fraction >= a.fraction - math.hypot(a.fraction_se, b.fraction_se)
                     for a, b in zip(lv, lv[1:]))
        return {"non_decreasing": strict, "non_decreasing_within_se": loose}

    def summary(self):
        strategies = list(dict.fromkeys(lv.strategy for lv in self.levels))
        return {
            "bound": self.bound,
            "delta_frac": self.delta_frac,
            "outside_guarantee": self.outside_guarantee,
            "problem": self.problem,
            "levels": [
                {"strategy": lv.strategy, "eps": lv.eps, "fraction": lv.fraction,
                 "fraction_se": lv.fraction_se, "mean_normalized": lv.mean_normalized,
                 "stderr": lv.stderr, "n_trials": int(lv.result.seeds.size)}
                for lv in self.levels
            ],
            "trend": {s: self.trend(s) for s in strategies},
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)

    def to_csv(self, path):
        thr = self.bound * (1 - self.delta_frac)
        with open(path, "w") as fh:
            fh.write("# ergotrack verify csv v1\n")
            fh.write("strategy,eps,trial,seed,J_eps,normalized,pass\n")
            for lv in self.levels:
                res = lv.result
                for i, (J, z) in enumerate(zip(res.trial_J, res.trial_normalized)):
                    fh.write(f"{lv.strategy},{lv.eps!r},{i},{int(res.seeds[i])},"
                             f"{float(J)!r},{float(z)!r},{int(z >= thr)}\n")


def verify_lower_bound(tp: TrackingProblem, eps_list, delta_frac, c: PathConfig,
                       strategies=None, n_times=201, n_checkpoints=65) -> VerificationReport:
    """Fraction of trials whose normalized cost reaches ``bound (1 - delta_frac)``.

    Strategy ``q`` at level ``j`` uses seeds starting at
    ``c.seed + (q len(eps_list) + j) TRIAL_BLOCK``.
    """
    if not 0 < delta_frac < 0.5:
        raise ConfigError("delta_frac must lie in (0, 0.5)")
    strategies = strategies or [TrackingStrategy.rescaled_optimal()]
    bound = lower_bound_integral(tp, n_times)
    thr = bound * (1 - delta_frac)
    eps_list = [float(e) for e in eps_list]
    levels = []
    for q, strat in enumerate(strategies):
        for j, eps in enumerate(eps_list):
            cj = PathConfig(c.dt, c.horizon, c.seed + (q * len(eps_list) + j) * TRIAL_BLOCK,
                            c.n_paths, c.x0)
            res = simulate_tracking(tp, eps, cj, strat, n_checkpoints)
            z = res.trial_normalized
            frac = float(np.mean(z >= thr))
            levels.append(LevelReport(strat.label, eps, frac,
                                      math.sqrt(max(frac * (1 - frac), 0.0) / z.size),
                                      float(z.mean()), res.stderr, res))
    return VerificationReport(bound, float(delta_frac), levels,
                              levels[0].result.outside_guarantee if levels else False,
                              tp.as_dict())
