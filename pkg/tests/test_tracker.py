import math

import numpy as np
import pytest

from ergotrack.errors import ConfigError, ExponentError, ParameterError, SolverError
from ergotrack.localsolve import ModelParams, solve_cost
from ergotrack.simkit import PathConfig
from ergotrack.tracker import (CoefficientPath, CostExponents, TrackingProblem, TrackingStrategy,
                               beta_from_exponents, local_costs, lower_bound_integral,
                               simulate_tracking, verify_lower_bound)

C = CoefficientPath.constant


def regular_problem(T=2.0, **kw):
    return TrackingProblem(T, C(1), C(1), "regular", l_path=C(1), **kw)


# ---------------------------------------------------------------- exponents

def test_beta_examples():
    e = CostExponents(2, 2, 0, 1, beta_Q=2, beta_F=2, beta_P=1.5)
    assert beta_from_exponents(e, "combined_impulse") == 0.5
    assert beta_from_exponents(CostExponents(zeta_D=2, beta_F=4), "impulse") == 1.0
    with pytest.raises(ExponentError, match="beta_Q.*beta_F"):
        beta_from_exponents(CostExponents(2, 2, 0, 1, beta_Q=2, beta_F=1, beta_P=1.5), "combined_impulse")


def test_beta_missing_and_fixed_degrees():
    with pytest.raises(ExponentError):
        beta_from_exponents(CostExponents(beta_F=4), "regular")
    with pytest.raises(ExponentError):
        CostExponents(zeta_F=1)
    with pytest.raises(ExponentError):
        CostExponents(zeta_Q=1.0)
    e = CostExponents.quadratic(0.5)
    for cls in ("regular", "singular", "impulse", "combined_impulse", "combined_singular"):
        assert beta_from_exponents(e, cls) == pytest.approx(0.5, abs=1e-15)


# ---------------------------------------------------------------- problem

def test_paths():
    assert CoefficientPath.linear(1, 4)(0.5, 1.0) == 2.5
    s = CoefficientPath.sinusoid(1, 0.5, 2)
    assert s(0.5, 4.0) == pytest.approx(1.5)
    t = CoefficientPath.table([0, 1, 2], [1, 3, 2])
    assert t(1.5, 2.0) == 2.5
    with pytest.raises(ParameterError):
        CoefficientPath("cubic", (1,))


def test_problem_validation():
    with pytest.raises(ParameterError, match="l path"):
        TrackingProblem(1.0, C(1), C(1), "regular")
    with pytest.raises(ParameterError, match="positive"):
        TrackingProblem(1.0, C(1), CoefficientPath.sinusoid(1, 1.5, 1), "regular", l_path=C(1))
    with pytest.raises(ParameterError, match="cover"):
        TrackingProblem(3.0, C(1), CoefficientPath.table([0, 1], [1, 2]), "regular", l_path=C(1))


# ---------------------------------------------------------------- lower bound

def test_lower_bound_constant():
    assert lower_bound_integral(regular_problem(2.0)) == pytest.approx(2.0, abs=1e-12)


def test_lower_bound_linear_a():
    tp = TrackingProblem(1.0, CoefficientPath.linear(1, 4), C(1), "regular", l_path=C(1))
    assert lower_bound_integral(tp, 11) == pytest.approx(2.5, abs=1e-12)


def test_lower_bound_sinusoid_converged():
    tp = TrackingProblem(3.0, C(1), CoefficientPath.sinusoid(1.0, 0.6, 1.3), "combined_singular",
                         l_path=C(1), h_path=C(0.5))
    coarse = lower_bound_integral(tp, 201)
    fine = lower_bound_integral(tp, 2001)
    assert abs(coarse - fine) < 1e-6


def test_lower_bound_homogeneous():
    tp = TrackingProblem(2.0, CoefficientPath.linear(0.5, 2), CoefficientPath.sinusoid(1, 0.3, 0.7),
                         "combined_impulse", l_path=C(1.2), k_path=CoefficientPath.linear(0.5, 1.5))
    assert lower_bound_integral(tp.scaled(3.0), 41) == pytest.approx(3 * lower_bound_integral(tp, 41), rel=1e-9)


def test_lower_bound_reports_time(monkeypatch):
    from ergotrack import tracker

    def boom(p, cls):
        if p.r > 1.5:
            raise ParameterError("synthetic failure")
        return solve_cost(p, cls)

    monkeypatch.setattr(tracker, "_cached_cost", boom)
    tp = TrackingProblem(1.0, C(1), CoefficientPath.linear(1, 2), "regular", l_path=C(1))
    with pytest.raises(SolverError, match="t=0.75"):
        lower_bound_integral(tp, 5)


def test_local_costs_frozen():
    tp = TrackingProblem(1.0, C(2), C(3), "regular", l_path=C(12))
    assert local_costs(tp, [0.0, 1.0]) == pytest.approx([12.0, 12.0])
    assert tp.frozen(0.3) == ModelParams(2, 3, 12)


def test_non_quadratic_rejected():
    tp = regular_problem(exponents=CostExponents(zeta_D=3, beta_Q=5))
    with pytest.raises(ExponentError):
        lower_bound_integral(tp)


# ---------------------------------------------------------------- simulation

@pytest.fixture(scope="module")
def runs():
    tp = regular_problem(4.0)
    out = {}
    for eps in (0.1, 0.05, 0.02):
        out[eps] = simulate_tracking(tp, eps, PathConfig(1e-2, 1.0, 0, 20))
    return tp, out


def test_normalized_close_to_bound(runs):
    tp, out = runs
    bound = lower_bound_integral(tp)
    assert out[0.05].normalized == pytest.approx(bound, rel=0.1)
    assert out[0.05].dt == pytest.approx(0.05 ** 2 * 1e-2)


def test_trend_in_eps(runs):
    tp, out = runs
    bound = lower_bound_integral(tp)
    gaps = [(abs(out[e].normalized - bound), out[e].stderr) for e in (0.1, 0.05, 0.02)]
    for (g1, s1), (g2, s2) in zip(gaps, gaps[1:]):
        assert g2 <= g1 + math.hypot(s1, s2)
    # trial spread narrows as the local problem sees a longer horizon
    spreads = [out[e].trial_normalized.std() for e in (0.1, 0.05, 0.02)]
    assert spreads[0] > spreads[1] > spreads[2]


def test_distorted_worse(runs):
    tp, out = runs
    d = simulate_tracking(tp, 0.05, PathConfig(1e-2, 1.0, 0, 20), TrackingStrategy.rescaled_distorted(2.0))
    assert d.normalized - out[0.05].normalized > 2 * math.hypot(d.stderr, out[0.05].stderr)


def test_accounting_identity():
    tp = TrackingProblem(1.0, C(1), C(1), "combined_impulse", l_path=C(1), k_path=C(1), h_path=C(0.2))
    e = tp.exponents
    for eps in (0.1, 0.05):
        r = simulate_tracking(tp, eps, PathConfig(1e-2, 1.0, 3, 2))
        assert np.allclose(r.weights, [1, eps ** e.beta_Q, eps ** e.beta_F, eps ** e.beta_P], rtol=0, atol=0)
        J = r.breakdown[:, 0] + eps ** e.beta_Q * r.breakdown[:, 1] + eps ** e.beta_F * r.breakdown[:, 2] \
            + eps ** e.beta_P * r.breakdown[:, 3]
        assert np.allclose(r.trial_J, J, rtol=1e-15)
        assert np.allclose(r.trial_normalized, J / eps ** (tp.beta * e.zeta_D), rtol=1e-15)
        J_eps, normalized = r
        assert J_eps == r.J_eps and normalized == r.normalized


@pytest.mark.parametrize("cls,kw", [
    ("singular", dict(h_path=C(1))),
    ("impulse", dict(k_path=C(1))),
    ("combined_impulse", dict(l_path=C(1), k_path=C(1))),
    ("combined_singular", dict(l_path=C(1), h_path=C(0.5))),
])
def test_other_classes_near_bound(cls, kw):
    tp = TrackingProblem(2.0, C(1), C(1), cls, **kw)
    r = simulate_tracking(tp, 0.05, PathConfig(1e-3, 1.0, 1, 8))
    assert r.normalized == pytest.approx(lower_bound_integral(tp), rel=0.1)


def test_time_varying_and_drift():
    tp = TrackingProblem(2.0, CoefficientPath.linear(0.5, 1.5), CoefficientPath.sinusoid(1, 0.4, 1.0),
                         "regular", l_path=C(1), b_path=C(0.3))
    r = simulate_tracking(tp, 0.05, PathConfig(1e-2, 1.0, 0, 8))
    assert r.outside_guarantee
    assert r.normalized == pytest.approx(lower_bound_integral(tp), rel=0.15)


def test_simulation_reproducible():
    tp = regular_problem(1.0)
    a = simulate_tracking(tp, 0.1, PathConfig(1e-2, 1.0, 5, 3))
    b = simulate_tracking(tp, 0.1, PathConfig(1e-2, 1.0, 5, 3))
    assert np.array_equal(a.breakdown, b.breakdown)


def test_config_errors():
    tp = regular_problem(1.0)
    with pytest.raises(ConfigError):
        simulate_tracking(tp, 1.5, PathConfig(1e-2, 1.0))
    with pytest.raises(ConfigError):
        TrackingStrategy("wild")
    with pytest.raises(ConfigError):
        verify_lower_bound(tp, [0.1], 0.6, PathConfig(1e-2, 1.0))


# ---------------------------------------------------------------- verification

def test_verify_null_always_passes(tmp_path):
    tp = regular_problem(2.0)
    rep = verify_lower_bound(tp, [0.1, 0.05], 0.05, PathConfig(1e-2, 1.0, 0, 20),
                             [TrackingStrategy.rescaled_optimal(), TrackingStrategy.null()])
    assert rep.fractions("null(3)") == [1.0, 1.0]
    assert rep.bound == pytest.approx(2.0)
    rep.to_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "# ergotrack verify csv v1" and len(lines) == 2 + 80
    rep.to_json(tmp_path / "v.json")
    assert set(rep.summary()["trend"]) == {"optimal", "null(3)"}
