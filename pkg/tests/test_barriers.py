import numpy as np
import pytest

from hopflab.barriers import (BarrierParams, barrier_certified, barrier_dx1, barrier_residual,
                              barrier_value, choose_barrier_params, lower_bound_holds,
                              neghopf_restart, neghopf_time_step, normalize_payoff,
                              sharpness_residuals, sharpness_systems, verify_barrier_degenhopf,
                              verify_supersolution_neghopf)
from hopflab.models import ParameterError, make_cev, make_cev_2d, make_from_diffusion, make_gbm, payoff_library


@pytest.mark.parametrize("beta,expected", [(0.0, (0.25, 1)), (0.5, (0.25, 1)), (1.0, (0.25, 2)),
                                           (1.5, (0.125, 4)), (1.9, (0.025, 16))])
def test_parameter_choice(beta, expected):
    eps, N = choose_barrier_params(beta)
    assert eps == pytest.approx(expected[0]) and N == expected[1]
    assert BarrierParams(beta, 1.0, eps, N).rule_satisfied


def test_parameter_rule_examples():
    assert BarrierParams(1.0, 2.0, 0.25, 4).rule_satisfied
    assert BarrierParams(0.0, 1.0, 0.5, 1).rule_satisfied
    assert BarrierParams(1.9, 1.0, 0.01, 16).rule_satisfied
    assert not BarrierParams(1.5, 1.0, 0.4, 2).rule_satisfied


@pytest.mark.parametrize("beta", [2.0, 2.5, -0.1])
def test_parameter_choice_rejects(beta):
    with pytest.raises(ParameterError):
        choose_barrier_params(beta)


def test_barrier_at_the_boundary_point():
    p = BarrierParams(1.0, 2.0, 0.25, 4, t0=1.0, x_prime=(0.7,))
    assert barrier_value(p, 0.0, 1.0, (0.7,)) == 0.0
    assert barrier_dx1(p, 0.0) == 1.0


def test_residual_uses_exact_derivatives():
    model = make_cev(2.0, 1.0)
    p = BarrierParams(1.0, 2.0, 0.25, 4, t0=1.0)
    x, t, h = 0.01, 0.9, 1e-6
    v = lambda x, t: barrier_value(p, x, t)  # noqa: E731
    v_xx = (v(x + h, t) - 2 * v(x, t) + v(x - h, t)) / h**2
    v_t = (v(x, t + h) - v(x, t - h)) / (2 * h)
    assert barrier_residual(model, p, x, t) == pytest.approx(model.a(x) * v_xx - v_t, rel=1e-4)


def test_cev_beta1_with_fixed_parameters_certifies():
    report = verify_barrier_degenhopf(make_cev(2.0, 1.0), BarrierParams(1.0, 2.0, 0.25, 4))
    assert report.passed and report.min_residual >= -1e-12
    assert report.params.eta >= 1e-3 and report.count > 0


def test_uniformly_parabolic_case():
    model = make_cev(np.sqrt(2.0), 0.0)  # a = 1 on x > 0
    report = verify_barrier_degenhopf(model, BarrierParams(0.0, 1.0, 0.5, 1))
    assert report.passed


def test_illegal_parameters_fail_for_every_eta():
    report = verify_barrier_degenhopf(make_cev(2.0, 1.5), BarrierParams(1.5, 2.0, 0.4, 2))
    assert not report.passed and report.halvings == 8
    assert all(r < 0 for _, r in report.history)
    assert report.offending is not None


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
def test_auto_parameters_certify(beta):
    report = barrier_certified(beta, make_cev(2.0, beta))
    assert report.passed and report.params.eta >= 1e-3


def test_beta_three_halves_depends_on_the_constant():
    # the positive term carries C; at sigma = 2 it loses to the time term for all eta >= 1e-3
    assert not barrier_certified(1.5, make_cev(2.0, 1.5)).passed
    strong = barrier_certified(1.5, make_cev(8.0, 1.5))
    assert strong.passed and strong.params.eta >= 1e-3


def test_two_dimensional_barrier():
    model = make_cev_2d([2.0, 0.2], [0.0, 2.0])
    eps, N = choose_barrier_params(0.0)
    report = verify_barrier_degenhopf(model, BarrierParams(0.0, 2.0, eps, N, x_prime=(1.0,)), density=60)
    assert report.passed


def test_dimension_mismatch_rejected():
    with pytest.raises(ParameterError):
        verify_barrier_degenhopf(make_cev(1.0, 1.0), BarrierParams(1.0, 0.5, 0.25, 2, x_prime=(1.0,)))


def test_lower_bound_sampling():
    assert lower_bound_holds(make_cev(2.0, 1.0), 2.0, 1.0)
    assert not lower_bound_holds(make_cev(2.0, 1.0), 2.5, 1.0)


def test_time_step_formula():
    assert neghopf_time_step(1.0, 2) == 0.25
    assert neghopf_time_step(0.02, 2) == 12.5


def test_supersolution_examples():
    call = payoff_library("call", K=1.0)
    rep = verify_supersolution_neghopf(1.0, call, 0.1, 2, C1=0.9, model=make_gbm(np.sqrt(2.0)))
    assert rep.domination_passed and rep.passed and rep.t0 == 0.25
    edge = verify_supersolution_neghopf(1.0, call, 0.1, 2, C1=0.9, C2=2 * 1.0 * 0.9 * 2 * 1)
    assert edge.passed and edge.c2_sufficient
    auto = verify_supersolution_neghopf(0.02, call, 0.01, 2)
    assert auto.passed and auto.C2 == pytest.approx(4 * 0.02 * auto.C1 * 2)


def test_supersolution_failures():
    call = payoff_library("call", K=1.0)
    rep = verify_supersolution_neghopf(1.0, call, 0.01, 2, C1=0.01)
    assert not rep.domination_passed and rep.worst_domination_x is not None
    short = verify_supersolution_neghopf(1.0, call, 0.1, 2, C1=0.9, C2=0.5)
    assert not short.passed and not short.c2_sufficient
    with pytest.raises(ParameterError):
        verify_supersolution_neghopf(1.0, payoff_library("call", K=1.0, slope=1.0), 0.1, 2)
    with pytest.raises(ParameterError):
        verify_supersolution_neghopf(0.01, call, 0.1, 2, model=make_gbm(1.0))
    with pytest.raises(ParameterError):
        verify_supersolution_neghopf(1.0, call, 0.1, 1)


def test_normalize_payoff():
    pay = normalize_payoff(payoff_library("call", K=1.0, slope=2.0, intercept=3.0))
    assert pay(0.0) == 0.0 and pay.gprime0 == 0.0
    assert pay(2.5) == pytest.approx(1.5)


def test_restart_uses_same_N():
    rep = neghopf_restart(make_gbm(0.2), payoff_library("call", K=1.0, slope=1.0), 0.01, 2, 0.02)
    assert rep.first.passed and rep.second.passed
    assert np.isfinite(rep.C1_restart)
    assert abs(rep.delta_at_t0) <= 1e-3


def test_sharpness_examples():
    x, beta = 0.7, 0.5
    assert x**beta * 1 - x ** (beta - 1) * x == pytest.approx(0.0, abs=1e-15)
    assert x**beta * 1 - 2 * x ** (beta - 2) * x * x / 2 == pytest.approx(0.0, abs=1e-15)
    rep = sharpness_residuals()
    assert rep.passed
    assert rep.max_residual_drift <= 1e-12 and rep.max_residual_potential <= 1e-12
    assert abs(rep.boundary_delta) <= 1e-12
    assert rep.drift_bound_fails and rep.potential_bound_fails
    assert rep.solver_drift <= 1e-10


def test_drift_bound_fails_near_zero():
    drift, _ = sharpness_systems(1.0)
    xs = np.geomspace(1e-12, 1.0, 200)
    from hopflab.models import LowerOrderTerms
    for d in (1.0, 0.1):
        terms = LowerOrderTerms(drift.b, drift.c, 10.0, d, 1.0)
        assert not terms.check_bounds(xs, [0.0])["b"][0]


def test_nonautonomous_coefficient_sampled_per_time():
    model = make_from_diffusion(lambda x, t: 2.0 * np.asarray(x) * (1.0 + t), 1.0, autonomous=False)
    p = BarrierParams(1.0, 2.0, 0.25, 2, eta=0.01)
    r1 = barrier_residual(model, p, np.array([0.005, 0.005]), np.array([0.99, 0.999]))
    x = 0.005
    expect = [2 * x * (1 + t) * 1.25 * 0.25 * x ** -0.75 - 2 * (1 - t) for t in (0.99, 0.999)]
    np.testing.assert_allclose(r1, expect, rtol=1e-12)
