import math

import numpy as np
import pytest

from hopflab.boundary import (InsufficientResolution, SmoothRamp, analyse_curve, boundary_delta,
                              boundary_delta_in_time, build_patched_counterexample,
                              check_gprime_match, delta_closed_form, hopf_sweep,
                              patched_coefficient)
from hopflab.models import ParameterError, Payoff, make_cev, make_from_diffusion, make_gbm, payoff_library
from hopflab.oracles import bs_call_price, cev_beta1_boundary_delta, power_option_price
from hopflab.pde import build_grid, build_time_grid, solve_1d

CALL = payoff_library("call", K=1.0)


def _solve(model, payoff, T=1.0, xmax=20.0, m=801, steps=400, include=(), far_field="linear"):
    grid = build_grid(xmax, m, 2.0, snap=payoff.kinks)
    return solve_1d(model, payoff, grid, build_time_grid(T, steps, "graded", include=include),
                    far_field=far_field)


def test_gbm_call_delta_vanishes():
    est = boundary_delta(_solve(make_gbm(0.2), CALL, xmax=8.0), 1.0)
    assert est.finite and abs(est.value) <= 1e-3


def test_cev_beta1_delta_matches_formula():
    est = boundary_delta(_solve(make_cev(2.0, 1.0), CALL), 1.0)
    assert est.value == pytest.approx(math.exp(-0.5), rel=0.02)
    assert est.order == 2 and est.spacings.size == 6


def test_power_half_is_divergent():
    model = make_from_diffusion(lambda x, t: np.asarray(x) ** 2, 2.0)
    sol = _solve(model, payoff_library("power", gamma=0.5), xmax=4.0,
                 far_field=lambda x, t: power_option_price(x, t, 0.5))
    est = boundary_delta(sol, 1.0)
    assert est.verdict == "divergent" and est.value is None and not est.finite


def test_closed_form_black_scholes_delta():
    est = delta_closed_form(lambda x, t: bs_call_price(x, t, 0.2, 1.0), 1.0)
    assert est.finite and abs(est.value) <= 1e-12


def test_closed_form_divergence():
    est = boundary_delta(lambda x, t: np.sqrt(np.asarray(x)), 1.0)
    assert est.verdict == "divergent"


def test_tuple_source_and_errors():
    nodes = np.linspace(0.0, 1.0, 401) ** 2
    est = boundary_delta((nodes, 3.0 * nodes + nodes**2), 0.0)
    assert est.value == pytest.approx(3.0, abs=1e-10)
    with pytest.raises(InsufficientResolution):
        boundary_delta((np.linspace(0.0, 1.0, 8), np.zeros(8)), 0.0)
    with pytest.raises(ValueError):
        boundary_delta((np.linspace(0.1, 1.0, 50), np.zeros(50)), 0.0)
    with pytest.raises(TypeError):
        boundary_delta(42, 1.0)


def test_hopf_sweep_positivity_and_margin():
    rows = hopf_sweep([0.0, 0.5, 1.0, 1.5, 2.0], 2.0, CALL, 1.0)
    assert [r.beta for r in rows] == [0.0, 0.5, 1.0, 1.5, 2.0]
    for r in rows[:-1]:
        assert r.estimate.value > 0 and r.estimate.value >= 10 * r.estimate.residual
    assert rows[2].estimate.value == pytest.approx(math.exp(-0.5), rel=0.02)
    assert abs(rows[-1].estimate.value) <= 1e-3


def test_sweep_threads_give_same_numbers():
    a = hopf_sweep([0.5, 1.5], 1.0, CALL, 1.0, m=201, steps=100)
    b = hopf_sweep([0.5, 1.5], 1.0, CALL, 1.0, m=201, steps=100, jobs=2)
    assert [r.estimate.value for r in a] == [r.estimate.value for r in b]


def test_sweep_rejects_beta_out_of_range():
    with pytest.raises(ParameterError):
        hopf_sweep([2.5], 1.0, CALL, 1.0)


def test_gprime_match_with_shifted_call():
    rows = check_gprime_match(make_gbm(0.2), payoff_library("call", K=1.0, slope=2.0), [0.25, 0.5, 1.0])
    assert all(r.passed and r.delta == pytest.approx(2.0, abs=1e-3) for r in rows)


def test_gprime_match_plain_call_and_affine():
    rows = check_gprime_match(make_gbm(0.5), CALL, [0.5, 1.0])
    assert all(r.passed for r in rows)
    rows = check_gprime_match(make_gbm(0.5), payoff_library("affine", slope=1.0), [1.0])
    assert rows[0].delta == pytest.approx(1.0, abs=1e-12)


def test_gprime_match_refuses_unbounded_models():
    with pytest.raises(ParameterError):
        check_gprime_match(make_cev(2.0, 1.0), CALL, [1.0])
    with pytest.raises(ParameterError):
        check_gprime_match(make_gbm(2.0), CALL, [1.0], C=1.0)


def test_delta_curve_for_cev_beta1():
    times = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
    sol = _solve(make_cev(2.0, 1.0), CALL, T=2.0, include=times)
    curve = boundary_delta_in_time(sol, times)
    np.testing.assert_allclose(curve.deltas, [cev_beta1_boundary_delta(t, 2.0, 1.0) for t in times],
                               rtol=0.02)
    assert curve.increasing and not curve.jumps


def test_delta_curve_for_gbm_is_flat():
    times = [0.25, 0.5, 1.0]
    curve = boundary_delta_in_time(_solve(make_gbm(0.2), CALL, xmax=8.0, include=times), times)
    assert np.all(np.abs(curve.deltas) <= 1e-3) and curve.max_violation <= 1e-6


@pytest.mark.parametrize("payoff", [payoff_library("put", K=1.0), payoff_library("call", K=0.5, slope=1.0),
                                    payoff_library("power", gamma=2.0)], ids=lambda p: p.name)
@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0, 1.5])
def test_delta_curves_are_nondecreasing(payoff, beta):
    times = list(np.linspace(0.1, 1.0, 10))
    sol = _solve(make_cev(1.0, beta), payoff, xmax=8.0, m=401, steps=200, include=times)
    curve = boundary_delta_in_time(sol, times)
    assert curve.max_violation <= 1e-6


def test_delta_curve_needs_convex_payoff():
    wavy = Payoff(lambda x: np.sin(x), 0.0, False, "sin", gprime0=1.0)
    sol = _solve(make_gbm(0.2), wavy, xmax=8.0, m=101, steps=10)
    with pytest.raises(ParameterError):
        boundary_delta_in_time(sol, [0.5, 1.0])


def test_curve_analysis_without_bisection():
    times = np.linspace(0, 1, 11)
    deltas = np.where(times < 0.5, 0.0, 1.0) + 0.01 * times
    curve = analyse_curve(times, deltas)
    assert len(curve.jumps) == 1 and curve.jumps[0][0] == pytest.approx(0.4)
    assert curve.increasing


def test_smooth_ramp_properties():
    h = SmoothRamp(1.0)
    assert h.check() == []
    assert 0.0 < h.C < 1.0
    assert h.C == pytest.approx(0.5, abs=1e-13)  # h' is symmetric about 1/2
    y = np.linspace(1.0, 5.0, 9)
    np.testing.assert_allclose(h(y), h(1.0) + (y - 1.0), atol=1e-15)
    with pytest.raises(ParameterError):
        SmoothRamp(0.0)


@pytest.fixture(scope="module")
def patched():
    return build_patched_counterexample()


def test_patched_delta_before_t0(patched):
    assert abs(patched.delta(0.5).value) <= 1e-6
    assert np.all(np.abs(patched.curve.deltas[patched.curve.times < 1.0]) <= 1e-3)


def test_patched_delta_after_t0(patched):
    assert patched.delta(1.05).value >= 0.9
    assert np.all(patched.curve.deltas[patched.curve.times >= 1.0] >= 0.9)


def test_patched_jump_is_upward_at_t0(patched):
    assert patched.curve.jumps
    lo, hi, size = patched.curve.jumps[0]
    assert lo <= 1.0 <= hi and size >= 0.9


def test_patched_exact_piece(patched):
    x = np.array([0.3, 1.0, 2.5])
    np.testing.assert_allclose(patched.v(x, 1.0 - 1e-9), x * x * math.e + x, rtol=1e-8)
    rng = np.random.default_rng(0)
    xs, ts = rng.uniform(0, 4, 100), rng.uniform(0, 1, 100)
    res = max(abs(float(patched.residual(np.array([a]), b)[0])) for a, b in zip(xs, ts))
    assert res <= 1e-8


def test_patched_start_matches_limit(patched):
    x = patched.w.nodes
    np.testing.assert_allclose(patched.w.values[0], x * x * math.e + x, rtol=1e-15)


def test_patched_coefficient_variants():
    c, a = patched_coefficient(0.5, 1.0)
    assert c == pytest.approx(0.5 / math.e)
    assert a(np.array([2.0]), 1.5)[0] == pytest.approx((4.0 + c) / 2)
    assert patched_coefficient(0.5, 1.0, "displayed")[0] == 0.5
    with pytest.raises(ParameterError):
        patched_coefficient(0.5, 1.0, "other")
    shown = build_patched_counterexample(m=201, steps=100, coefficient="displayed")
    assert shown.delta(1.05).value >= 0.9
