"""
Two-phase primal simplex for ``min c.z  s.t.  A z = b, z >= 0``.

The constraint matrix is kept sparse (CSC) and the basis inverse dense; the
inverse is updated by rank-one pivots and rebuilt from scratch every
``refresh`` pivots.

Occupation-measure LPs are massively degenerate (the right-hand side is a
single unit vector), and plain Bland pivoting can stall for tens of
thousands of zero-length steps.  Two devices avoid this:

* the right-hand side is perturbed by a small deterministic vector while
  the primal phases run, then restored, and any resulting primal
  infeasibility is repaired with dual simplex pivots;
* pricing is Dantzig's most-negative reduced cost, switching to Bland's
  lowest-index rule after a run of degenerate pivots and back once the
  objective moves again.
"""
import enum
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp


class LPStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"


class SimplexResult(NamedTuple):
    status: LPStatus
    x: np.ndarray
    objective: float
    iterations: int


_FEAS_TOL = 1e-9
_PIVOT_RTOL = 1e-7
_PERTURB = 1e-7


class _Tableau:
    """Revised-simplex state: sparse [A | I], dense basis inverse."""

    def __init__(self, A, b, refresh, max_iter, tol):
        self.A = A
        self.m, self.n = A.shape
        self.full = sp.hstack([A, sp.identity(self.m, format="csc")], format="csc")
        self.AT = self.full.T.tocsr()
        self.b = b
        self.basis = np.arange(self.n, self.n + self.m)
        self.Binv = np.eye(self.m)
        self.xB = b.copy()
        self.refresh = refresh
        self.max_iter = max_iter
        self.tol = tol
        self.it = 0
        self.since = 0
        self.callback = None

    def refactor(self):
        self.Binv = np.linalg.inv(self.full[:, self.basis].toarray())
        self.xB = self.Binv @ self.b
        self.since = 0

    def set_rhs(self, b):
        self.b = b
        self.xB = self.Binv @ b

    def pivot(self, p, q, alpha, t):
        self.xB = self.xB - t * alpha
        self.xB[p] = t
        rowp = self.Binv[p] / alpha[p]
        self.Binv -= np.outer(alpha, rowp)
        self.Binv[p] = rowp
        self.basis[p] = q
        self.it += 1
        self.since += 1
        if self.since >= self.refresh:
            self.refactor()

    def reduced_costs(self, cost):
        y = cost[self.basis] @ self.Binv
        return cost - self.AT @ y

    def primal(self, cost, allowed, degenerate_switch=30):
        degen = 0
        while True:
            d = self.reduced_costs(cost)
            cand = np.flatnonzero((d < -self.tol) & allowed)
            if cand.size == 0:
                return LPStatus.OPTIMAL
            if self.it >= self.max_iter:
                return LPStatus.ITERATION_LIMIT
            if degen > degenerate_switch:
                q = cand[0]
            else:
                q = cand[np.argmin(d[cand])]
            alpha = self.Binv @ self.full[:, q].toarray().ravel()
            amax = np.abs(alpha).max()
            pos = np.flatnonzero(alpha > _PIVOT_RTOL * max(1.0, amax))
            if pos.size == 0:
                return LPStatus.UNBOUNDED
            ratios = np.maximum(self.xB[pos], 0.0) / alpha[pos]
            t = ratios.min()
            degen = degen + 1 if t <= 1e-12 else 0
            ties = pos[ratios <= t + 1e-12]
            p = ties[np.argmin(self.basis[ties])]
            self.pivot(p, q, alpha, t)
            if self.callback is not None:
                self.callback(self.it, float(cost[self.basis] @ self.xB), t, degen)

    def dual(self, cost, allowed, feas_tol):
        """Dual simplex from a dual-feasible basis until xB >= -feas_tol."""
        while True:
            p = int(np.argmin(self.xB))
            if self.xB[p] >= -feas_tol:
                return LPStatus.OPTIMAL
            if self.it >= self.max_iter:
                return LPStatus.ITERATION_LIMIT
            row = self.AT @ self.Binv[p]
            d = self.reduced_costs(cost)
            rmax = np.abs(row).max()
            cand = np.flatnonzero((row < -_PIVOT_RTOL * max(1.0, rmax)) & allowed)
            if cand.size == 0:
                return LPStatus.INFEASIBLE
            ratio = np.maximum(d[cand], 0.0) / -row[cand]
            q = cand[np.argmin(ratio)]
            alpha = self.Binv @ self.full[:, q].toarray().ravel()
            t = self.xB[p] / alpha[p]
            self.pivot(p, q, alpha, t)


def simplex(c, A, b, max_iter=200000, tol=1e-9, refresh=50, perturb=True, callback=None):
    """Solve the standard-form LP; deterministic for identical input.

    Rows are scaled to unit max-norm and flipped so that ``b >= 0``; phase 1
    starts from an all-artificial basis.
    """
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    A = sp.csr_matrix(A, dtype=float)
    m, n = A.shape
    if m == 0:
        if np.any(c < -tol):
            return SimplexResult(LPStatus.UNBOUNDED, np.zeros(n), -np.inf, 0)
        return SimplexResult(LPStatus.OPTIMAL, np.zeros(n), 0.0, 0)

    rmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
    rmax[rmax == 0] = 1.0
    sign = np.where(b < 0, -1.0, 1.0)
    A = (sp.diags(sign / rmax) @ A).tocsc()
    b = b * sign / rmax

    if perturb:
        # fixed pseudo-random shift, strictly positive so phase 1 stays valid
        shift = _PERTURB * (1.0 + 0.5 * np.sin(np.arange(1, m + 1) * 12.9898) ** 2)
        b_work = b + shift
    else:
        b_work = b
    tab = _Tableau(A, b_work, refresh, max_iter, tol)
    tab.callback = callback
    it_used = lambda: tab.it

    # phase 1: minimize the sum of artificials
    c1 = np.zeros(n + m)
    c1[n:] = 1.0
    st = tab.primal(c1, np.ones(n + m, dtype=bool))
    if st is LPStatus.ITERATION_LIMIT:
        return SimplexResult(st, np.zeros(n), np.nan, it_used())
    tab.refactor()
    infeas = float(np.sum(tab.xB[tab.basis >= n]))
    if infeas > _FEAS_TOL * max(1.0, np.abs(b_work).max()) + (_PERTURB * 2 * m if perturb else 0.0):
        return SimplexResult(LPStatus.INFEASIBLE, np.zeros(n), np.nan, it_used())

    # drive artificials out of the basis; rows where that is impossible are
    # linearly dependent and get dropped
    drop = []
    for p in np.flatnonzero(tab.basis >= n):
        row = np.asarray(tab.Binv[p] @ A).ravel()
        row[tab.basis[tab.basis < n]] = 0.0
        j = np.flatnonzero(np.abs(row) > 1e-9)
        if j.size:
            tab.basis[p] = j[np.argmax(np.abs(row[j]))]
            tab.refactor()
        else:
            drop.append(tab.basis[p] - n)
    if drop:
        keep = np.setdiff1d(np.arange(m), drop)
        basis = tab.basis[tab.basis < n].copy()
        A, b, b_work = A[keep, :], b[keep], b_work[keep]
        m = keep.size
        it0 = tab.it
        tab = _Tableau(A, b_work, refresh, max_iter, tol)
        tab.callback = callback
        tab.it = it0
        tab.basis = basis
    tab.refactor()

    c2 = np.concatenate([c, np.zeros(m)])
    allowed = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
    # an artificial may remain basic at a tiny perturbed level; let phase 2
    # price it out by charging it heavily
    c2[n:] = np.where(np.isin(np.arange(n, n + m), tab.basis), 1e6, 0.0)
    for _ in range(20):
        st = tab.primal(c2, allowed)
        if st is not LPStatus.OPTIMAL:
            break
        if tab.b is b:
            break
        tab.set_rhs(b)
        tab.refactor()
        st = tab.dual(c2, allowed, _FEAS_TOL)
        if st is not LPStatus.OPTIMAL:
            break
        if np.all(tab.reduced_costs(c2)[allowed] >= -tol):
            break
    tab.refactor()
    z = np.zeros(n + m)
    z[tab.basis] = tab.xB
    x = z[:n]
    if st is LPStatus.OPTIMAL and np.any(tab.xB[tab.basis >= n] > _FEAS_TOL):
        st = LPStatus.INFEASIBLE
    return SimplexResult(st, x, float(c @ x), it_used())
