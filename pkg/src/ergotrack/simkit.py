"""
Monte Carlo simulation of controlled Brownian motion.

Paths follow the Euler scheme ``X <- X + u(X) dt + sqrt(a dt) G`` and are
then post-processed by the strategy: projection onto ``[-U, U]``
(reflection) or a jump to the landing point when ``|X|`` reaches the
trigger (impulse).  Each path reports its time-average cost, the
occupation histogram of (state, control), the interventions it made, and
the stationarity residual ``(1/S) (int A f dt + sum B f)`` for a fixed
family of smooth bump test functions.
"""
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels as kern
from .errors import ConfigError, ParameterError
from .localsolve import ControlClass, LocalSolution, ModelParams, solve

RNG_NAME = "PCG64"
CHUNK = 1 << 16
GROUP = 4
N_XBINS = 129
N_UBINS = 65
N_BUMPS = 5
N_FINE = 8192
CSV_VERSION = 1


@dataclass(frozen=True)
class PathConfig:
    """Euler step, horizon S, base seed and number of paths."""

    dt: float
    horizon: float
    seed: int = 0
    n_paths: int = 1
    x0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be > 0")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon must be > 0")
        if self.dt > self.horizon:
            raise ConfigError("dt must not exceed the horizon")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigError("n_paths must be a positive integer")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class StrategySpec:
    """A stationary strategy.

    kind is one of ``ou``, ``reflect``, ``impulse``, ``combined_impulse``,
    ``combined_singular`` or ``null``.  Feedback tables hold ``|u|`` on a
    uniform grid of ``[0, U]``; the control is odd in x and points toward 0.
    A ``null`` strategy with ``bound > 0`` is reflected (charged ``h``) at
    ``+-bound``.
    """

    kind: str
    theta: float = 0.0
    U: float = 0.0
    target: float = 0.0
    table: Optional[np.ndarray] = field(default=None, compare=False)
    bound: float = 0.0
    support: float = 0.0

    def __post_init__(self):
        kinds = ("ou", "reflect", "impulse", "combined_impulse", "combined_singular", "null")
        if self.kind not in kinds:
            raise ParameterError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "ou" and self.theta <= 0:
            raise ParameterError("OU gain must be > 0")
        if self.kind in ("reflect", "impulse", "combined_impulse", "combined_singular") and self.U <= 0:
            raise ParameterError("threshold must be > 0")
        if self.kind in ("impulse", "combined_impulse") and not 0 <= self.target < self.U:
            raise ParameterError("landing point must lie in [0, U)")
        if self.kind.startswith("combined") and (self.table is None or len(self.table) < 2):
            raise ParameterError("combined strategies need a feedback table")

    @classmethod
    def ou(cls, theta):
        return cls("ou", theta=theta)

    @classmethod
    def reflect(cls, U):
        return cls("reflect", U=U)

    @classmethod
    def impulse(cls, trigger, target):
        return cls("impulse", U=trigger, target=target)

    @classmethod
    def combined_impulse(cls, U, xi_star, table):
        return cls("combined_impulse", U=U, target=U - xi_star, table=np.asarray(table, dtype=float))

    @classmethod
    def combined_singular(cls, U, table):
        return cls("combined_singular", U=U, table=np.asarray(table, dtype=float))

    @classmethod
    def null(cls, bound=0.0, support=0.0):
        return cls("null", bound=bound, support=support)

    def support_halfwidth(self, p: ModelParams, horizon):
        """Half-width of the x-histogram range."""
        if self.kind == "ou":
            return 6.0 * math.sqrt(p.a / (2 * self.theta))
        if self.kind == "null":
            if self.bound > 0:
                return self.bound
            return self.support if self.support > 0 else max(4.0 * math.sqrt(p.a * horizon), 1.0)
        return self.U

    def feedback(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "ou":
            return -self.theta * x
        if self.table is not None:
            grid = np.linspace(0.0, self.U, len(self.table))
            return -np.sign(x) * np.interp(np.abs(x), grid, self.table)
        return np.zeros_like(x)

    def describe(self):
        out = {"kind": self.kind}
        for key in ("theta", "U", "target", "bound"):
            v = getattr(self, key)
            if v:
                out[key] = v
        return out


def _table_from_solution(sol: LocalSolution, n=2001):
    xs = np.linspace(0.0, sol.U, n)
    return np.abs(np.asarray(sol.feedback(xs), dtype=float))


def strategy_for(sol: LocalSolution, distortion=1.0) -> StrategySpec:
    """Optimal strategy of ``sol``, optionally distorted by a factor ``lam``.

    Gains and thresholds are multiplied by ``lam``; combined feedback tables
    are stretched over the scaled interval with unchanged values.
    """
    lam = float(distortion)
    if lam <= 0:
        raise ParameterError("distortion must be > 0")
    cls = sol.cls
    if cls is ControlClass.REGULAR:
        return StrategySpec.ou(sol.theta * lam)
    if cls is ControlClass.SINGULAR:
        return StrategySpec.reflect(sol.U * lam)
    if cls is ControlClass.IMPULSE:
        return StrategySpec.impulse(sol.U * lam, sol.x_tilde * lam)
    table = _table_from_solution(sol)
    if cls is ControlClass.COMBINED_IMPULSE:
        return StrategySpec.combined_impulse(sol.U * lam, sol.xi_star * lam, table)
    return StrategySpec.combined_singular(sol.U * lam, table)


def null_strategy(sol: LocalSolution, factor=3.0) -> StrategySpec:
    """Uncontrolled motion kept in a box ``factor`` times the reference scale."""
    if sol.cls is ControlClass.REGULAR:
        scale = 2.0 * math.sqrt(sol.density.params["sigma2"])
    else:
        scale = sol.U
    return StrategySpec.null(bound=factor * scale)


def bump_family(halfwidth):
    """Centers and radii of the five smooth test functions for a support.

    The radii are wide compared with the support: narrow bumps that straddle
    a reflecting boundary pick up an O(dt) Euler bias large enough to mask
    the 1/sqrt(S) sampling decay at dt = 1e-3.
    """
    L = halfwidth
    centers = np.array([0.0, -0.3 * L, 0.3 * L, -0.6 * L, 0.6 * L])
    radii = np.full(N_BUMPS, 1.5 * L)
    return np.column_stack([centers, radii])


def bump(x, center, radius, deriv=0):
    """Test function exp(1 - 1/(1 - y^2)) on |y| < 1, y = (x - center)/radius.

    ``deriv`` selects the value (0) or the first (1) or second (2) derivative.
    """
    x = np.asarray(x, dtype=float)
    y = (x - center) / radius
    inside = np.abs(y) < 1
    s = np.where(inside, 1.0 - y * y, 1.0)
    e = np.where(inside, np.exp(1.0 - 1.0 / s), 0.0)
    if deriv == 0:
        return e
    g1 = -2.0 * y / (s * s)
    if deriv == 1:
        return e * g1 / radius
    g2 = -2.0 / (s * s) - 8.0 * y * y / (s * s * s)
    return e * (g1 * g1 + g2) / radius ** 2


class Histogram2D(NamedTuple):
    x_edges: np.ndarray
    u_edges: np.ndarray
    mass: np.ndarray

    def x_marginal(self):
        return self.mass.sum(axis=1)


@dataclass
class SimulationResult:
    avg_cost: float
    cost_breakdown: tuple
    empirical_mu: Histogram2D
    empirical_rho: np.ndarray
    n_interventions: int
    constraint_residual_samples: np.ndarray
    path_costs: np.ndarray
    path_breakdown: np.ndarray
    path_interventions: np.ndarray
    path_seeds: np.ndarray
    stderr: float
    metadata: dict
    path: Optional[tuple] = None

    @property
    def x_histogram(self):
        return self.empirical_mu.x_edges, self.empirical_mu.x_marginal()

    def rho_mass(self):
        return float(self.empirical_rho[:, 2].sum()) if self.empirical_rho.size else 0.0

    def l1_distance(self, density):
        """L1 distance between the x-histogram and a density's bin masses."""
        edges, h = self.x_histogram
        ref = density.bin_masses(edges)
        return float(np.abs(h - ref).sum() + max(0.0, 1.0 - ref.sum()))

    def residual_rms(self):
        """Root mean square over paths, one value per test function."""
        return np.sqrt(np.mean(self.constraint_residual_samples ** 2, axis=0))

    def to_csv(self, path):
        cols = ["seed", "avg_cost", "deviation", "regular", "fixed", "proportional", "n_interventions"]
        with open(path, "w") as fh:
            fh.write(f"# ergotrack simulate csv v{CSV_VERSION}\n")
            fh.write(",".join(cols) + "\n")
            for i in range(self.path_costs.size):
                vals = [str(int(self.path_seeds[i])), repr(float(self.path_costs[i]))]
                vals += [repr(float(v)) for v in self.path_breakdown[i]]
                vals.append(str(int(self.path_interventions[i])))
                fh.write(",".join(vals) + "\n")

    def summary(self):
        mu = self.empirical_mu
        return {
            "avg_cost": self.avg_cost,
            "stderr": self.stderr,
            "cost_breakdown": dict(zip(("deviation", "regular", "fixed", "proportional"),
                                       map(float, self.cost_breakdown))),
            "n_interventions": int(self.n_interventions),
            "rho_mass": self.rho_mass(),
            "residual_rms": self.residual_rms().tolist(),
            "x_edges": mu.x_edges.tolist(),
            "x_hist": mu.x_marginal().tolist(),
            "u_edges": mu.u_edges.tolist(),
            "u_hist": mu.mass.sum(axis=0).tolist(),
            "metadata": self.metadata,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _workers(n):
    cap = os.environ.get("ERGOTRACK_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError("ERGOTRACK_THREADS must be an integer") from None
    return max(1, min(n, limit))


def _u_range(s: StrategySpec, half):
    if s.kind == "ou":
        umax = s.theta * half
    elif s.table is not None:
        umax = float(np.max(s.table))
    else:
        umax = 0.0
    if umax <= 0:
        return -0.5, 0.5
    return -umax, umax


def _kind_code(s):
    if s.kind == "ou":
        return kern.KIND_OU
    if s.table is not None:
        return kern.KIND_TABLE
    return kern.KIND_NULL


def _prm(p, s, c, half, ulo, uhi):
    prm = np.zeros(kern.N_PRM)
    prm[kern.A], prm[kern.R], prm[kern.L], prm[kern.K], prm[kern.H] = p.a, p.r, p.l, p.k, p.h
    prm[kern.DT] = c.dt
    prm[kern.THETA] = s.theta
    if s.kind in ("reflect", "combined_singular"):
        prm[kern.BOUND] = s.U
    elif s.kind == "null":
        prm[kern.BOUND] = s.bound
    if s.kind in ("impulse", "combined_impulse"):
        prm[kern.TRIGGER] = s.U
        prm[kern.TARGET] = s.target
    if s.table is not None:
        prm[kern.TAB_DX] = s.U / (len(s.table) - 1)
    prm[kern.KIND] = _kind_code(s)
    prm[kern.XLO] = -half
    prm[kern.XBW] = 2 * half / N_XBINS
    prm[kern.NXB] = N_XBINS
    prm[kern.ULO] = ulo
    prm[kern.UBW] = (uhi - ulo) / N_UBINS
    prm[kern.NUB] = N_UBINS
    prm[kern.FBW] = 2 * half / N_FINE
    prm[kern.NFB] = N_FINE
    return prm


class _PathOut(NamedTuple):
    acc: np.ndarray
    residual: np.ndarray
    jumps: np.ndarray
    path: Optional[tuple]


def _path_group(p, s, c, indices, prm, table, bumps, half, record):
    """Simulate the paths ``indices`` in lockstep; returns (hist, [_PathOut])."""
    n = c.n_steps
    k = len(indices)
    rngs = [np.random.Generator(np.random.PCG64(c.seed + i)) for i in indices]
    st = np.full(k, float(c.x0))
    hist = np.zeros((N_XBINS, N_UBINS), dtype=np.int64)
    occ_t = np.zeros((k, N_FINE))
    occ_u = np.zeros((k, N_FINE))
    acc = np.zeros((k, kern.N_ACC))
    G = np.empty((k, min(CHUNK, n)))
    ev_x = np.empty((k, CHUNK))
    ev_d = np.empty((k, CHUNK))
    nev = np.zeros(k, dtype=np.int64)
    px = np.zeros((k, n if record else 0))
    pu = np.zeros((k, n if record else 0))
    res_b = np.zeros((k, bumps.shape[0]))
    keep_jumps = s.kind in ("impulse", "combined_impulse")
    jumps = [[] for _ in range(k)]
    done = 0
    while done < n:
        m = min(CHUNK, n - done)
        for j, rng in enumerate(rngs):
            kern.fill_normals(rng, G[j, :m])
        kern.run_group(G, m, st, prm, table, hist, occ_t, occ_u, acc, ev_x, ev_d, nev, px, pu, done)
        for j in range(k):
            if nev[j]:
                xs, ds = ev_x[j, :nev[j]], ev_d[j, :nev[j]]
                for i, (cm, rad) in enumerate(bumps):
                    res_b[j, i] += np.sum(bump(ds, cm, rad) - bump(xs, cm, rad))
                if keep_jumps:
                    jumps[j].append(np.column_stack([xs, ds - xs]))
        done += m
    # generator part from the fine occupation statistics
    centers = -half + (np.arange(N_FINE) + 0.5) * (2 * half / N_FINE)
    derivs = [(bump(centers, cm, rad, 1), bump(centers, cm, rad, 2)) for cm, rad in bumps]
    S = n * c.dt
    outs = []
    for j in range(k):
        res_a = np.array([(0.5 * p.a * np.dot(f2, occ_t[j]) + np.dot(f1, occ_u[j])) * c.dt
                          for f1, f2 in derivs])
        jj = np.concatenate(jumps[j]) if jumps[j] else np.zeros((0, 2))
        outs.append(_PathOut(acc[j], (res_a + res_b[j]) / S, jj, (px[j], pu[j]) if record else None))
    return hist, outs


def simulate(p: ModelParams, s: StrategySpec, c: PathConfig, residuals=True,
             record_path=False) -> SimulationResult:
    """Simulate ``c.n_paths`` independent paths of strategy ``s``.

    Path ``i`` draws its Gaussians from PCG64 seeded with ``seed + i``;
    results are reduced in path order, so output is bit-identical for
    identical inputs regardless of the worker count.

    The constraint residual of path ``i`` for test function ``f`` is
    ``(1/S) (sum_n A f(X_n, u_n) dt + sum_j [f(after_j) - f(before_j)])``.
    The generator sum is taken over a fine state grid of step counts and
    control sums, which is exact up to O(bin width^2).
    """
    if s.kind in ("reflect", "impulse", "combined_impulse", "combined_singular"):
        if p.a * c.dt > (0.1 * s.U) ** 2:
            warnings.warn("dt is coarse relative to the threshold: a*dt > (0.1 U)^2")
    if record_path and c.n_steps * c.n_paths > 50_000_000:
        raise ConfigError("record_path is meant for short runs")
    n = c.n_steps
    S = n * c.dt
    half = s.support_halfwidth(p, c.horizon)
    ulo, uhi = _u_range(s, half)
    bumps = bump_family(half) if residuals else np.zeros((0, 2))
    prm = _prm(p, s, c, half, ulo, uhi)
    table = np.asarray(s.table if s.table is not None else np.zeros(2), dtype=float)

    groups = [list(range(i, min(i + GROUP, c.n_paths))) for i in range(0, c.n_paths, GROUP)]
    job = lambda g: _path_group(p, s, c, g, prm, table, bumps, half, record_path)
    nw = _workers(len(groups))
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(job, groups))
    else:
        results = [job(g) for g in groups]
    counts = sum(h for h, _ in results)
    outs = [o for _, group_outs in results for o in group_outs]

    hist = counts / (n * c.n_paths)
    path_b = np.zeros((c.n_paths, 4))
    path_int = np.zeros(c.n_paths, dtype=np.int64)
    res = np.zeros((c.n_paths, bumps.shape[0]))
    rho = []
    push = np.zeros(2)
    for i, out in enumerate(outs):
        acc = out.acc
        path_b[i] = acc[[kern.DEV, kern.REG, kern.FIX, kern.PROP]] / S
        path_int[i] = int(acc[kern.N_INT])
        res[i] = out.residual
        if out.jumps.size:
            w = np.full(out.jumps.shape[0], 1.0 / (S * c.n_paths))
            rho.append(np.column_stack([out.jumps, w]))
        push += acc[[kern.PUSH_LO, kern.PUSH_HI]] / (S * c.n_paths)
    if s.kind in ("reflect", "combined_singular") or (s.kind == "null" and s.bound > 0):
        B = s.U if s.kind != "null" else s.bound
        rho.append(np.array([[-B, 1.0, push[0]], [B, -1.0, push[1]]]))
    rho = np.concatenate(rho) if rho else np.zeros((0, 3))
    costs = path_b.sum(axis=1)
    stderr = float(costs.std(ddof=1) / math.sqrt(c.n_paths)) if c.n_paths > 1 else math.nan
    meta = {
        "rng": RNG_NAME,
        "seed": int(c.seed),
        "n_paths": int(c.n_paths),
        "dt": c.dt,
        "horizon": S,
        "strategy": s.describe(),
        "params": p.as_dict(),
        "bumps": bumps.tolist(),
    }
    return SimulationResult(
        avg_cost=float(costs.mean()),
        cost_breakdown=tuple(float(v) for v in path_b.mean(axis=0)),
        empirical_mu=Histogram2D(np.linspace(-half, half, N_XBINS + 1),
                                 np.linspace(ulo, uhi, N_UBINS + 1), hist),
        empirical_rho=rho,
        n_interventions=int(path_int.sum()),
        constraint_residual_samples=res,
        path_costs=costs,
        path_breakdown=path_b,
        path_interventions=path_int,
        path_seeds=np.array([c.seed + i for i in range(c.n_paths)], dtype=np.uint64),
        stderr=stderr,
        metadata=meta,
        path=tuple(o.path for o in outs) if record_path else None,
    )


def empirical_occupation(xs, us, dt, x_edges, u_edges, jumps=None, horizon=None):
    """Occupation histogram of a recorded path, and its jump atoms.

    Parameters
    ----------
    xs, us : array_like
        State and control at the start of each Euler step.
    dt : float
        Step length; each sample carries time weight ``dt``.
    jumps : array_like, shape (m, 2), optional
        Pre-jump state and jump size of each intervention.

    Returns
    -------
    hist : Histogram2D
        Masses sum to one.  Samples outside the edges go to the end bins.
    rho : ndarray, shape (m, 3)
        ``(x, xi, 1/S)`` atoms.
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    x_edges = np.asarray(x_edges, dtype=float)
    u_edges = np.asarray(u_edges, dtype=float)
    S = horizon if horizon is not None else xs.size * dt
    ix = np.clip(np.searchsorted(x_edges, xs, side="right") - 1, 0, x_edges.size - 2)
    iu = np.clip(np.searchsorted(u_edges, us, side="right") - 1, 0, u_edges.size - 2)
    counts = np.zeros((x_edges.size - 1, u_edges.size - 1))
    np.add.at(counts, (ix, iu), dt)
    mass = counts / counts.sum() if counts.sum() > 0 else counts
    jumps = np.zeros((0, 2)) if jumps is None else np.asarray(jumps, dtype=float).reshape(-1, 2)
    rho = np.column_stack([jumps, np.full(jumps.shape[0], 1.0 / S)])
    return Histogram2D(x_edges, u_edges, mass), rho


class ProbeResult(NamedTuple):
    cost_optimal: float
    cost_distorted: float
    stderr_optimal: float
    stderr_distorted: float


DISTORTED_SEED_OFFSET = 1_000_003


def suboptimality_probe(p: ModelParams, cls, distortion, c: PathConfig) -> ProbeResult:
    """Optimal strategy against the same strategy distorted by ``distortion``.

    The distorted run uses an independent seed block.
    """
    cls = p.require(cls)
    sol = solve(p, cls)
    opt = simulate(p, strategy_for(sol), c, residuals=False)
    c2 = PathConfig(c.dt, c.horizon, c.seed + DISTORTED_SEED_OFFSET, c.n_paths, c.x0)
    dis = simulate(p, strategy_for(sol, distortion), c2, residuals=False)
    return ProbeResult(opt.avg_cost, dis.avg_cost, opt.stderr, dis.stderr)
