"""
Finite occupation-measure linear program.

The stationary control problem is relaxed to a linear program over a
probability measure ``mu`` on (state, control) pairs and an intervention
measure ``rho``.  Feasibility means that for every test function ``f``

    sum_mu (A f)(x, u) + sum_rho (B f)(x, v) = 0,

with ``A f = a/2 f'' + u f'`` and ``B f = f(x + xi) - f(x)`` for jumps or
``B f = gamma f'(x)`` for reflection.  On a uniform grid with indicator test
functions these become one equality row per interior node, which is just the
stationary Kolmogorov equation of a Markov-chain approximation.  This module
never calls the closed-form solvers, so its optimal value is an independent
check on them.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import GridError
from .localsolve import ControlClass, ModelParams, solve
from .simplex import LPStatus, simplex

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Uniform state grid plus control/jump candidates.

    ``xi_values`` are signed jump sizes and must be integer multiples of the
    state spacing.  With ``inward_only`` the LP only keeps jumps that move
    toward the origin without crossing it, which is where every optimal
    policy jumps; it shrinks the LP by a factor of four.
    """

    x_lo: float
    x_hi: float
    nx: int
    u_lo: float = 0.0
    u_hi: float = 0.0
    nu: int = 1
    xi_values: tuple = ()
    gamma_values: tuple = ()
    inward_only: bool = True

    def __post_init__(self):
        if not (self.x_lo < 0 < self.x_hi):
            raise GridError("need x_lo < 0 < x_hi")
        if int(self.nx) != self.nx or self.nx < 3:
            raise GridError("nx must be an integer >= 3")
        if int(self.nu) != self.nu or self.nu < 1:
            raise GridError("nu must be a positive integer")
        if self.nu > 1 and not self.u_lo < self.u_hi:
            raise GridError("need u_lo < u_hi when nu > 1")
        i0 = -self.x_lo / self.dx
        if abs(i0 - round(i0)) > _ALIGN_TOL * max(1.0, i0):
            raise GridError("0 must be a grid node")
        for xi in self.xi_values:
            m = xi / self.dx
            if xi == 0 or abs(m - round(m)) > _ALIGN_TOL * max(1.0, abs(m)):
                raise GridError(f"jump {xi!r} is not a nonzero multiple of dx={self.dx!r}")
        for g in self.gamma_values:
            if g not in (-1, 1):
                raise GridError("gamma values must be -1 or +1")

    @property
    def dx(self):
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def x(self):
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @property
    def u(self):
        if self.nu == 1:
            return np.array([0.5 * (self.u_lo + self.u_hi)])
        return np.linspace(self.u_lo, self.u_hi, self.nu)

    @property
    def zero_index(self):
        return int(round(-self.x_lo / self.dx))

    def jump_steps(self):
        return [int(round(xi / self.dx)) for xi in self.xi_values]


def default_grid(p: ModelParams, cls, nx, nu=None, box=None):
    """Grid sized from a reference scale of the class.

    The box is three reference thresholds wide on each side (six standard
    deviations for the purely regular class).  Controls span the range of
    the linear feedback ``sqrt(r/l) x`` over the box, with ``nu`` growing in
    step with ``nx`` so both discretization errors shrink together.
    Jump candidates are every multiple of dx.
    """
    cls = ControlClass.parse(cls)
    if box is None:
        ref = solve(p, cls)
        if cls is ControlClass.REGULAR:
            scale = 2.0 * math.sqrt(ref.density.params["sigma2"])
        else:
            scale = ref.U
        box = 3.0 * scale
    half = (nx - 1) // 2
    if nu is None:
        nu = (nx - 1) // 4 + 1
    kw = {}
    if cls.has_regular:
        umax = math.sqrt(p.r / p.l) * box
        kw.update(u_lo=-umax, u_hi=umax, nu=nu)
    dx = box / half
    if cls.has_jumps:
        kw["xi_values"] = tuple(m * dx for m in range(-(nx - 1), nx) if m != 0)
    if cls.has_reflection:
        kw["gamma_values"] = (-1, 1)
    return GridSpec(-box, box, 2 * half + 1, **kw)


@dataclass
class DiscreteLP:
    """``min c.z  s.t.  A z = b, z >= 0`` with variable bookkeeping.

    Variables are the ``n_mu`` state/control atoms (``mu_atoms`` rows hold
    node index and control value) followed by intervention atoms
    (``rho_atoms`` rows hold source node index and jump or direction).
    The last row of ``A`` is the normalization of ``mu``.
    """

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    mu_atoms: np.ndarray
    rho_atoms: np.ndarray
    grid: GridSpec
    cls: ControlClass
    params: ModelParams

    @property
    def n_mu(self):
        return self.mu_atoms.shape[0]

    @property
    def shape(self):
        return self.A.shape

    def export_triplets(self, path):
        """Write the LP as plain text: header, then ``row col value`` lines.

        Rows ``0..m-1`` are constraints; the objective is written as row
        ``-1`` and the right-hand side as column ``-1``.
        """
        A = self.A.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# rows {A.shape[0]} cols {A.shape[1]} nnz {A.nnz}\n")
            for j in np.flatnonzero(self.c):
                fh.write(f"-1 {j} {self.c[j]!r}\n")
            for i in np.flatnonzero(self.b):
                fh.write(f"{i} -1 {self.b[i]!r}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {v!r}\n")


def _mu_rates(a, u, dx):
    """Up/down jump rates of the chain approximating a/2 f'' + u f'.

    Central differences wherever both rates stay nonnegative, upwind
    otherwise.
    """
    diff = a / (2 * dx * dx)
    up = diff + u / (2 * dx)
    dn = diff - u / (2 * dx)
    upwind = (up < 0) | (dn < 0)
    up = np.where(upwind, diff + np.maximum(u, 0) / dx, up)
    dn = np.where(upwind, diff + np.maximum(-u, 0) / dx, dn)
    return up, dn


def _generator_triplets(grid, a, node, u):
    """(target node, weight) lists of A f at (x_node, u) for indicator f."""
    up, dn = _mu_rates(a, u, grid.dx)
    up = np.where(node == grid.nx - 1, 0.0, up)
    dn = np.where(node == 0, 0.0, dn)
    tgt = np.concatenate([node, node + 1, node - 1])
    val = np.concatenate([-(up + dn), up, dn])
    col = np.concatenate([np.arange(node.size)] * 3)
    return tgt, col, val


def _jump_candidates(grid):
    i0 = grid.zero_index
    src, steps = [], []
    for m in grid.jump_steps():
        i = np.arange(grid.nx)
        j = i + m
        ok = (j >= 0) & (j < grid.nx)
        if grid.inward_only:
            ok &= (np.abs(j - i0) < np.abs(i - i0)) & ((j - i0) * (i - i0) >= 0)
        src.append(i[ok])
        steps.append(np.full(ok.sum(), m))
    if not src:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(src), np.concatenate(steps)


def _push_candidates(grid):
    src, dirs = [], []
    for g in grid.gamma_values:
        i = np.arange(grid.nx)
        ok = (i + g >= 0) & (i + g < grid.nx)
        src.append(i[ok])
        dirs.append(np.full(ok.sum(), g))
    if not src:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(src), np.concatenate(dirs)


def build_lp(p: ModelParams, cls, g: GridSpec) -> DiscreteLP:
    """Assemble the finite LP of class ``cls`` on grid ``g``.

    Boundary nodes keep their inward transitions but have no outward ones,
    so the chain stays in the box; test functions live on interior nodes
    only, giving ``nx - 2`` generator rows plus one normalization row.
    """
    cls = p.require(cls)
    nx, dx = g.nx, g.dx
    xs = g.x
    nodes = np.repeat(np.arange(nx), g.nu if cls.has_regular else 1)
    us = np.tile(g.u, nx) if cls.has_regular else np.zeros(nx)
    n_mu = nodes.size
    cost_mu = p.r * xs[nodes] ** 2 + (p.l * us ** 2 if cls.has_regular else 0.0)

    rows, cols, vals = [], [], []
    tgt, col, val = _generator_triplets(g, p.a, nodes, us)
    rows.append(tgt); cols.append(col); vals.append(val)

    rho_src = np.zeros(0, dtype=int)
    rho_v = np.zeros(0)
    cost_rho = np.zeros(0)
    if cls.has_jumps:
        src, steps = _jump_candidates(g)
        k = np.arange(src.size) + n_mu
        rows += [src + steps, src]
        cols += [k, k]
        vals += [np.ones(src.size), -np.ones(src.size)]
        rho_src, rho_v = src, steps * dx
        cost_rho = p.k + p.h * np.abs(rho_v)
    elif cls.has_reflection:
        src, dirs = _push_candidates(g)
        k = np.arange(src.size) + n_mu
        rows += [src + dirs, src]
        cols += [k, k]
        vals += [np.full(src.size, 1 / dx), np.full(src.size, -1 / dx)]
        rho_src, rho_v = src, dirs.astype(float)
        cost_rho = np.full(src.size, p.h)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = (rows >= 1) & (rows <= nx - 2) & (vals != 0)
    n_int = nx - 2
    n_var = n_mu + rho_src.size
    A = sp.coo_matrix((vals[keep], (rows[keep] - 1, cols[keep])), shape=(n_int + 1, n_var)).tolil()
    A[n_int, :n_mu] = 1.0
    A = A.tocsr()
    A.sum_duplicates()
    b = np.zeros(n_int + 1)
    b[n_int] = 1.0
    c = np.concatenate([cost_mu, cost_rho])
    mu_atoms = np.column_stack([nodes, us])
    rho_atoms = np.column_stack([rho_src, rho_v])
    return DiscreteLP(c, A, b, mu_atoms, rho_atoms, g, cls, p)


@dataclass
class LPSolution:
    objective_value: float
    mu: np.ndarray
    rho: np.ndarray
    status: LPStatus
    iterations: int = 0
    max_row_error: float = math.nan

    def x_marginal(self, lp: DiscreteLP):
        """mu summed over controls, one value per state node."""
        return np.bincount(lp.mu_atoms[:, 0].astype(int), weights=self.mu, minlength=lp.grid.nx)


def solve_lp(lp: DiscreteLP, max_iter: int = 200000) -> LPSolution:
    """Two-phase simplex on ``lp``; tiny negative entries are clamped to 0."""
    res = simplex(lp.c, lp.A, lp.b, max_iter=max_iter)
    z = np.where(res.x < 0, 0.0, res.x)
    err = float(np.abs(lp.A @ res.x - lp.b).max()) if res.status is LPStatus.OPTIMAL else math.nan
    return LPSolution(res.objective, z[:lp.n_mu], z[lp.n_mu:], res.status, res.iterations, err)


def constraint_residual(mu, rho, p: ModelParams, cls, g: GridSpec, f_values) -> float:
    """Discretized constraint functional for one grid test function.

    Parameters
    ----------
    mu : array_like, shape (n, 3)
        Atoms ``(x, u, mass)``; ``x`` is snapped to the nearest node.
    rho : array_like, shape (m, 3)
        Atoms ``(x, v, mass)`` with ``v`` the jump (impulse classes) or the
        push direction (reflection classes).
    f_values : array_like, shape (nx,)
        Test function on the grid nodes.
    """
    cls = ControlClass.parse(cls)
    f = np.asarray(f_values, dtype=float)
    dx = g.dx
    total = 0.0
    mu = np.asarray(mu, dtype=float).reshape(-1, 3)
    if mu.size:
        node = np.clip(np.rint((mu[:, 0] - g.x_lo) / dx).astype(int), 0, g.nx - 1)
        u = mu[:, 1] if cls.has_regular else np.zeros(node.size)
        up, dn = _mu_rates(p.a, u, dx)
        up = np.where(node == g.nx - 1, 0.0, up)
        dn = np.where(node == 0, 0.0, dn)
        fp = f[np.minimum(node + 1, g.nx - 1)]
        fm = f[np.maximum(node - 1, 0)]
        gen = up * (fp - f[node]) + dn * (fm - f[node])
        total += float(np.dot(mu[:, 2], gen))
    rho = np.asarray(rho, dtype=float).reshape(-1, 3)
    if rho.size:
        node = np.clip(np.rint((rho[:, 0] - g.x_lo) / dx).astype(int), 0, g.nx - 1)
        if cls.has_reflection:
            dest = np.clip(node + rho[:, 1].astype(int), 0, g.nx - 1)
            bf = (f[dest] - f[node]) / dx
        else:
            dest = np.clip(np.rint((rho[:, 0] + rho[:, 1] - g.x_lo) / dx).astype(int), 0, g.nx - 1)
            bf = f[dest] - f[node]
        total += float(np.dot(rho[:, 2], bf))
    return total


def solution_atoms(lp: DiscreteLP, sol: LPSolution):
    """LP optimizer as ``(mu, rho)`` atom arrays for :func:`constraint_residual`."""
    x = lp.grid.x
    mu = np.column_stack([x[lp.mu_atoms[:, 0].astype(int)], lp.mu_atoms[:, 1], sol.mu])
    rho = np.column_stack([x[lp.rho_atoms[:, 0].astype(int)], lp.rho_atoms[:, 1], sol.rho])
    return mu, rho


def lp_value(p: ModelParams, cls, nx, nu=None, box=None, max_iter=200000):
    """Build on the default grid and solve; returns (LPSolution, DiscreteLP)."""
    g = default_grid(p, cls, nx, nu=nu, box=box)
    lp = build_lp(p, cls, g)
    return solve_lp(lp, max_iter=max_iter), lp
