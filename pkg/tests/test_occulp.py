import math

import numpy as np
import pytest

from ergotrack.errors import GridError
from ergotrack.localsolve import ControlClass, ModelParams, solve
from ergotrack.occulp import (GridSpec, build_lp, constraint_residual, default_grid, lp_value,
                              solution_atoms, solve_lp)
from ergotrack.simkit import PathConfig, bump, simulate, strategy_for
from ergotrack.simplex import LPStatus

REG = ModelParams(1, 1, 1)


def test_structure_counts():
    g = GridSpec(-1, 1, 5, -1, 1, 3)
    lp = build_lp(REG, "regular", g)
    assert lp.n_mu == 15
    assert lp.shape == (4, 15)
    assert np.all(lp.A.toarray()[-1] == 1)


def test_impulse_columns():
    g = GridSpec(-1, 1, 11, xi_values=tuple(m * 0.2 for m in range(-10, 11) if m), inward_only=False)
    p = ModelParams(1, 1, k=0.5, h=0.2)
    lp = build_lp(p, "impulse", g)
    A = lp.A.toarray()
    for j in range(lp.rho_atoms.shape[0]):
        src, step = int(lp.rho_atoms[j, 0]), int(round(lp.rho_atoms[j, 1] / g.dx))
        col = A[:-1, lp.n_mu + j]
        expect = np.zeros(g.nx)
        expect[src + step] += 1
        expect[src] -= 1
        assert np.array_equal(col, expect[1:-1])
    assert np.all(lp.c >= 0)
    rho_cost = lp.c[lp.n_mu:]
    assert np.all(rho_cost >= min(p.k, p.h * g.dx))


def test_grid_validation():
    with pytest.raises(GridError):
        GridSpec(0.0, 1.0, 11)
    with pytest.raises(GridError):
        GridSpec(-1, 2, 11)
    with pytest.raises(GridError):
        GridSpec(-1, 1, 11, xi_values=(0.15,))


def test_regular_reference_grid():
    g = GridSpec(-4, 4, 161, -3, 3, 41)
    sol = solve_lp(build_lp(REG, "regular", g))
    assert sol.status is LPStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(1.0, rel=0.03)
    assert sol.mu.sum() == pytest.approx(1.0, abs=1e-10)
    assert sol.mu.min() >= 0 and sol.max_row_error < 1e-9


def test_control_grid_nesting():
    coarse = solve_lp(build_lp(REG, "regular", GridSpec(-4, 4, 41, -3, 3, 7)))
    fine = solve_lp(build_lp(REG, "regular", GridSpec(-4, 4, 41, -3, 3, 13)))
    assert fine.objective_value <= coarse.objective_value + 1e-9


def test_removing_rho_columns():
    p = ModelParams(1, 1, h=1)
    lp = build_lp(p, "singular", default_grid(p, "singular", 41))
    full = solve_lp(lp)
    from dataclasses import replace
    cut = replace(lp, c=lp.c[:lp.n_mu], A=lp.A[:, :lp.n_mu].tocsr(),
                  rho_atoms=lp.rho_atoms[:0])
    assert solve_lp(cut).objective_value >= full.objective_value - 1e-12


@pytest.mark.parametrize("cls,p", [
    ("singular", ModelParams(1, 1, h=1)),
    ("impulse", ModelParams(1, 1, k=1)),
    ("combined_singular", ModelParams(1, 1, 1, 0, 0.5)),
])
def test_lp_close_to_closed_form(cls, p):
    sol, lp = lp_value(p, cls, 81)
    assert sol.status is LPStatus.OPTIMAL
    I = solve(p, cls).cost
    assert abs(sol.objective_value - I) / I < 0.03
    mu, rho = solution_atoms(lp, sol)
    f = np.sin(lp.grid.x)
    f[0] = f[-1] = 0.0
    assert abs(constraint_residual(mu, rho, p, cls, lp.grid, f)) < 1e-8


def test_combined_impulse_lp_fine_grid():
    p = ModelParams(1, 1, 1, 1, 0)
    sol, _ = lp_value(p, "combined_impulse", 401)
    assert abs(sol.objective_value - solve(p, "combined_impulse").cost) / solve(p, "combined_impulse").cost < 0.03


def test_export_triplets(tmp_path):
    lp = build_lp(REG, "regular", GridSpec(-1, 1, 5, -1, 1, 3))
    path = tmp_path / "lp.txt"
    lp.export_triplets(path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# rows 4 cols 15 nnz {lp.A.nnz}"
    assert len(lines) == 1 + np.count_nonzero(lp.c) + np.count_nonzero(lp.b) + lp.A.nnz


# ---------------------------------------------------------------- residuals

def test_constant_test_function():
    g = GridSpec(-2, 2, 41, -1, 1, 5)
    rng = np.random.default_rng(0)
    mu = np.column_stack([rng.uniform(-2, 2, 30), rng.uniform(-1, 1, 30), rng.random(30)])
    assert constraint_residual(mu, np.zeros((0, 3)), REG, "regular", g, np.full(41, 3.7)) == 0.0
    gi = GridSpec(-2, 2, 41, xi_values=(0.1, -0.1))
    rho = np.array([[1.5, -0.5, 0.2], [-1.5, 0.5, 0.2]])
    p = ModelParams(1, 1, k=1)
    assert constraint_residual(mu, rho, p, "impulse", gi, np.full(41, 3.7)) == 0.0


def closed_form_atoms(sol, g):
    x = g.x
    inside = np.abs(x) <= (sol.U if sol.U else np.inf) + 1e-12
    w = np.where(inside, sol.density.pdf(x), 0.0)
    if sol.cls in (ControlClass.SINGULAR, ControlClass.COMBINED_SINGULAR):
        # trapezoid weights on [-U, U]: boundary nodes carry half a cell
        w = np.where(np.isclose(np.abs(x), sol.U), 0.5 * w, w)
    w = w / w.sum()
    u = sol.feedback(x) if sol.feedback is not None else np.zeros_like(x)
    mu = np.column_stack([x, u, w])
    rho = np.array([[b.location, b.jump, b.mass] for b in sol.boundary_measure]).reshape(-1, 3)
    return mu, rho


@pytest.mark.parametrize("cls,p", [
    ("regular", ModelParams(1, 1, 1)),
    ("singular", ModelParams(1, 1, h=4 / 3)),
    ("impulse", ModelParams(1, 1, k=1)),
    ("combined_impulse", ModelParams(1, 1, 1, 1, 0)),
    ("combined_singular", ModelParams(1, 1, 1, 0, 0.5)),
])
def test_closed_form_measures_satisfy_constraint(cls, p):
    sol = solve(p, cls)
    half = sol.U if sol.U else 6 * math.sqrt(sol.density.variance())
    res = []
    for nx in (41, 81, 161, 321):
        g = GridSpec(-half, half, nx)
        mu, rho = closed_form_atoms(sol, g)
        vals = []
        for c in (-0.3 * half, 0.0, 0.4 * half):
            f = bump(g.x, c, 0.5 * half)
            vals.append(abs(constraint_residual(mu, rho, p, cls, g, f)))
        res.append(max(vals))
    if max(res) < 1e-12:
        # piecewise-linear densities satisfy the discrete constraint exactly
        return
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] < 0.1 * res[0]


def test_gaussian_hat_residual_vanishes():
    out = []
    for nx in (41, 81, 161, 321):
        g = GridSpec(-4, 4, nx)
        sol = solve(REG, "regular")
        mu, _ = closed_form_atoms(sol, g)
        worst = 0.0
        for x0 in (-1.0, 0.0, 0.5):
            f = np.maximum(0.0, 1 - np.abs(g.x - x0))
            worst = max(worst, abs(constraint_residual(mu, [], REG, "regular", g, f)))
        out.append(worst)
    assert all(b < a for a, b in zip(out, out[1:]))


@pytest.mark.parametrize("cls,p", [
    ("regular", ModelParams(1, 1, 1)),
    ("singular", ModelParams(1, 1, h=4 / 3)),
    ("impulse", ModelParams(1, 1, k=1)),
])
def test_empirical_measures_residual(cls, p):
    sol = solve(p, cls)
    S = 1e4
    res = simulate(p, strategy_for(sol), PathConfig(1e-3, S, 7, 2))
    mu_h = res.empirical_mu
    xc = 0.5 * (mu_h.x_edges[1:] + mu_h.x_edges[:-1])
    uc = 0.5 * (mu_h.u_edges[1:] + mu_h.u_edges[:-1])
    X, Uu = np.meshgrid(xc, uc, indexing="ij")
    mu = np.column_stack([X.ravel(), Uu.ravel(), mu_h.mass.ravel()])
    half = 1.3 * mu_h.x_edges[-1]
    g = GridSpec(-half, half, 2601)
    for c, rad in ((0.0, 0.6 * mu_h.x_edges[-1]), (0.3 * mu_h.x_edges[-1], 0.6 * mu_h.x_edges[-1])):
        f = bump(g.x, c, rad)
        r = constraint_residual(mu, res.empirical_rho, p, cls, g, f)
        assert abs(r) <= 5 / math.sqrt(S)
