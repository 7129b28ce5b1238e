import math

import numpy as np
import pytest
from scipy.integrate import quad

from ergotrack.errors import ParameterError
from ergotrack.localsolve import (ControlClass, ModelParams, K_integral, find_iota, first_zero,
                                  g_function, h_function, h_max, hjb_residual, impulse_system_residuals,
                                  robin_residuals, smooth_fit_residuals, solve, solve_combined_impulse,
                                  solve_combined_singular, solve_cost, solve_impulse, solve_regular,
                                  solve_singular, stationary_density, value_function_eval, w_profile)

CI = ControlClass.COMBINED_IMPULSE
CS = ControlClass.COMBINED_SINGULAR


def d1_onesided(f, x, h, side):
    """Third-order one-sided first derivative; side=-1 looks to the left."""
    s = side * h
    return side * (-11 * f(x) + 18 * f(x + s) - 9 * f(x + 2 * s) + 2 * f(x + 3 * s)) / (6 * h)


# ---------------------------------------------------------------- closed forms

@pytest.mark.parametrize("a,r,l,cost,theta,s2", [(1, 1, 1, 1, 1, 0.5), (2, 3, 12, 12, 0.5, 2)])
def test_regular(a, r, l, cost, theta, s2):
    sol = solve_regular(ModelParams(a, r, l))
    assert sol.cost == pytest.approx(cost, abs=1e-12)
    assert sol.theta == pytest.approx(theta, abs=1e-12)
    var = sol.density.variance()
    assert var == pytest.approx(s2, abs=1e-12)
    assert r * var + l * theta ** 2 * var == pytest.approx(sol.cost, rel=1e-12)


def test_singular():
    sol = solve_singular(ModelParams(1, 1, h=4 / 3))
    assert sol.U == pytest.approx(1, abs=1e-12)
    assert sol.cost == pytest.approx(1, abs=1e-12)
    assert [b.mass for b in sol.boundary_measure] == pytest.approx([0.25, 0.25], abs=1e-12)
    sol = solve_singular(ModelParams(1, 1, h=1))
    assert sol.U == pytest.approx(0.75 ** (1 / 3), abs=1e-10)
    assert sol.cost == pytest.approx(0.75 ** (2 / 3), abs=1e-10)
    p = ModelParams(1.3, 0.8, h=0.6)
    assert solve_singular(p.scaled(7)).cost == pytest.approx(7 * solve_singular(p).cost, rel=1e-12)


def test_impulse_h0():
    sol = solve_impulse(ModelParams(1, 1, k=1))
    th2 = math.sqrt(2 / 3)
    assert sol.theta2 == pytest.approx(th2, abs=1e-8)
    assert sol.x_tilde == 0
    assert sol.U == pytest.approx(math.sqrt(3 * th2), abs=1e-8)
    assert sol.cost == pytest.approx(th2, abs=1e-8)
    res = impulse_system_residuals(sol.params, sol.theta1, sol.theta2, sol.x_tilde, sol.U)
    assert np.max(np.abs(res)) < 1e-10


def test_impulse_with_proportional_cost():
    p = ModelParams(1, 2, k=0.5, h=0.3)
    sol = solve_impulse(p)
    res = impulse_system_residuals(p, sol.theta1, sol.theta2, sol.x_tilde, sol.U)
    assert np.max(np.abs(res)) < 1e-9
    assert 0 < sol.x_tilde < sol.U
    assert abs(sol.density.total_mass() - 1) < 1e-12


def test_require_raises():
    with pytest.raises(ParameterError):
        solve(ModelParams(1, 1), "regular")
    with pytest.raises(ParameterError):
        ModelParams(-1, 1, 1)
    with pytest.raises(ParameterError):
        ControlClass.parse("bogus")


# ---------------------------------------------------------------- g and h

def test_g_function():
    assert g_function(0.0, 0.5) == pytest.approx(1.0, abs=1e-14)
    assert g_function(200.0, 0.5) == pytest.approx(4.0, rel=1e-2)
    assert g_function(1.0, 0.3) < g_function(2.0, 0.3)


def test_h_function():
    p = ModelParams(1, 1, 1)
    assert h_function(0.0, 0.4, p) == 0
    d = 1e-6
    slope = (h_function(d, 0.4, p) - h_function(0.0, 0.4, p)) / d
    assert slope == pytest.approx(2 * math.sqrt(p.r * p.l) * 0.4, abs=1e-4)
    xb = first_zero(0.4, p)
    assert abs(h_function(xb, 0.4, p)) < 1e-9
    assert h_function(0.5 * xb, 0.4, p) > 0


@pytest.mark.parametrize("iota", [0.2, 0.5, 0.8])
def test_h_concave_before_zero(iota):
    p = ModelParams(1.4, 0.7, 1.9)
    xb = first_zero(iota, p)
    x = np.linspace(0.0, xb, 200)
    s = 1e-4
    d2 = (h_function(x + s, iota, p) - 2 * h_function(x, iota, p) + h_function(x - s, iota, p)) / s ** 2
    assert np.all(d2[1:] <= 1e-6)


# ---------------------------------------------------------------- find_iota

def test_find_iota_combined_impulse():
    p = ModelParams(1, 1, 1, 1, 0)
    res = find_iota(p, CI)
    assert 0 < res.iota < 1
    U, xi = res.U, res.xi_star
    assert abs(h_function(U, res.iota, p) - p.h) < 1e-9
    assert abs(h_function(U - xi, res.iota, p) - p.h) < 1e-9
    area, _ = quad(lambda x: h_function(x, res.iota, p) - p.h, U - xi, U, epsabs=1e-13, epsrel=1e-13)
    assert abs(area - p.k) < 1e-9
    assert K_integral(res.iota, p) == pytest.approx(p.k, abs=1e-9)


def test_find_iota_combined_singular():
    p = ModelParams(1, 1, 1, 0, 0.5)
    res = find_iota(p, CS)
    assert 0 < res.iota < 1
    assert abs(h_function(res.U, res.iota, p) - 0.5) < 1e-9
    s = 1e-4
    slope = (h_function(res.U + s, res.iota, p) - h_function(res.U - s, res.iota, p)) / (2 * s)
    assert abs(slope) < 1e-7
    assert h_max(res.iota, p)[1] == pytest.approx(0.5, abs=1e-9)


def test_iota_increases_with_k():
    i1 = find_iota(ModelParams(1, 1, 1, 1, 0), CI).iota
    i2 = find_iota(ModelParams(1, 1, 1, 2, 0), CI).iota
    assert i2 > i1


def test_combined_costs_below_regular():
    ci = solve_combined_impulse(ModelParams(1, 1, 1, 1, 0))
    assert 0 < ci.cost < 1
    cs = solve_combined_singular(ModelParams(1, 1, 1, 0, 0.5))
    assert 0 < cs.cost < 1


def test_large_h_limit():
    sol = solve_combined_singular(ModelParams(1, 1, 1, 0, 50))
    assert sol.cost == pytest.approx(1.0, rel=0.02)
    assert sol.cost <= 1 and 0 < sol.omega < 1e-100


# ---------------------------------------------------------------- residuals

@pytest.fixture(scope="module")
def ci_sol():
    return solve_combined_impulse(ModelParams(1, 1, 1, 1, 0))


@pytest.fixture(scope="module")
def cs_sol():
    return solve_combined_singular(ModelParams(1, 1, 1, 0, 0.5))


def test_smooth_fit(ci_sol, cs_sol):
    assert np.max(np.abs(smooth_fit_residuals(ci_sol))) < 1e-8
    assert np.max(np.abs(smooth_fit_residuals(cs_sol))) < 1e-8
    p = ci_sol.params
    assert h_function(ci_sol.U, ci_sol.iota, p) == pytest.approx(p.h, abs=1e-8)
    assert h_function(ci_sol.U - ci_sol.xi_star, ci_sol.iota, p) == pytest.approx(p.h, abs=1e-8)


def test_hjb_on_grid(ci_sol, cs_sol):
    for sol in (ci_sol, cs_sol):
        xs = np.linspace(-sol.U, sol.U, 103)[1:-1]
        res = hjb_residual(sol, xs)
        assert np.max(np.abs(res.interior)) < 1e-8
        assert np.max(np.abs(res.boundary)) < 1e-8


def test_jump_residual(ci_sol):
    p, U, xi = ci_sol.params, ci_sol.U, ci_sol.xi_star
    r = value_function_eval(ci_sol, U - xi) + p.k + p.h * xi - value_function_eval(ci_sol, U)
    assert abs(r) < 1e-8


def test_hjb_by_finite_differences(ci_sol):
    # independent of the analytic derivatives used by hjb_residual
    p, I = ci_sol.params, ci_sol.cost
    w = lambda x: value_function_eval(ci_sol, x)
    s = 1e-3
    for x in np.linspace(-0.9 * ci_sol.U, 0.9 * ci_sol.U, 9):
        w1 = (w(x - 2 * s) - 8 * w(x - s) + 8 * w(x + s) - w(x + 2 * s)) / (12 * s)
        w2 = (-w(x + 2 * s) + 16 * w(x + s) - 30 * w(x) + 16 * w(x - s) - w(x - 2 * s)) / (12 * s * s)
        assert abs(0.5 * p.a * w2 - w1 ** 2 / (4 * p.l) + p.r * x * x - I) < 1e-6


def test_robin_by_finite_differences(cs_sol):
    p, U = cs_sol.params, cs_sol.U
    f = lambda x: float(cs_sol.density.func(np.array([x]))[0])
    for side, x in ((-1, U), (1, -U)):
        dp = d1_onesided(f, x, 1e-3, side)
        u = float(cs_sol.feedback(x))
        assert abs(0.5 * p.a * dp - u * f(x)) < 1e-8
    assert np.max(np.abs(robin_residuals(cs_sol))) < 1e-10


def test_pure_regular_identity():
    a, r, l = 1.7, 0.9, 2.3
    I = math.sqrt(a * a * r * l)
    for x in (0.0, 1.0, 2.0):
        w1 = 2 * math.sqrt(r * l) * x
        w2 = 2 * math.sqrt(r * l)
        assert 0.5 * a * w2 - w1 ** 2 / (4 * l) + r * x * x - I == pytest.approx(0, abs=1e-12)


def test_value_function_shape(ci_sol, cs_sol):
    for sol in (ci_sol, cs_sol):
        U = sol.U
        assert value_function_eval(sol, 0.0) == 0.0
        for x in (0.3 * U, 0.8 * U, 1.5 * U):
            assert value_function_eval(sol, -x) == value_function_eval(sol, x)
        w = lambda x: float(value_function_eval(sol, x))
        left = d1_onesided(w, U, 1e-3, -1)
        right = d1_onesided(w, U, 1e-3, 1)
        assert abs(left - right) < 1e-8


def test_w_profile_matches_value_function(ci_sol):
    x = np.linspace(0, ci_sol.U, 7)
    assert np.allclose(w_profile(x, ci_sol.iota, ci_sol.params), value_function_eval(ci_sol, x),
                       rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------- densities

def test_densities(ci_sol, cs_sol):
    for sol in (ci_sol, cs_sol):
        d = sol.density
        assert abs(d.total_mass() - 1) < 1e-10
        x = np.linspace(0, sol.U, 17)
        assert np.max(np.abs(d.pdf(x) - d.pdf(-x))) < 1e-10
    assert abs(ci_sol.density.pdf(ci_sol.U)) < 1e-12
    assert abs(ci_sol.density.pdf(-ci_sol.U)) < 1e-12


def test_density_flux_balance(ci_sol):
    # a/2 p' - u p equals the jump rate on the outer pieces
    p = ci_sol.params
    f = lambda x: float(ci_sol.density.func(np.array([x]))[0])
    mass = ci_sol.boundary_measure[1].mass
    x = 0.5 * (ci_sol.U + (ci_sol.U - ci_sol.xi_star))
    s = 1e-4
    dp = (f(x - 2 * s) - 8 * f(x - s) + 8 * f(x + s) - f(x + 2 * s)) / (12 * s)
    flux = 0.5 * p.a * dp - float(ci_sol.feedback(x)) * f(x)
    assert flux == pytest.approx(-mass, rel=1e-6)


def test_stationary_density_rejects_simple_classes():
    with pytest.raises(ParameterError):
        stationary_density(ModelParams(1, 1, 1), "regular", 0.5, 1.0)


# ---------------------------------------------------------------- invariants

def draw(rng, cls):
    a, r = rng.uniform(0.3, 3), rng.uniform(0.3, 3)
    l = rng.uniform(0.3, 3) if cls.has_regular else 0.0
    k = rng.uniform(0.1, 2) if cls.has_jumps else 0.0
    if cls.has_reflection:
        h = rng.uniform(0.2, 2)
    elif cls.has_jumps:
        h = rng.uniform(0, 0.5)
    else:
        h = 0.0
    if cls is CS:
        # the reflecting class needs h below the unconstrained peak
        h = rng.uniform(0.2, 0.9) * math.sqrt(r * l) * 2.0
    return ModelParams(a, r, l, k, h)


@pytest.mark.parametrize("cls", list(ControlClass))
def test_monotone_in_weights(cls):
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = draw(rng, cls)
        base = solve_cost(p, cls)
        for name in ("r", "l", "k", "h"):
            v = getattr(p, name)
            if v == 0:
                continue
            q = ModelParams(**{**p.as_dict(), name: v * 1.1})
            assert solve_cost(q, cls) >= base * (1 - 1e-12)
