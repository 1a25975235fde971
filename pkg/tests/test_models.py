import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hopflab.models import (DiffusionModel, LowerOrderTerms, ParameterError, growth_bound_constant,
                            make_cev, make_cev_2d, make_from_diffusion, make_gbm, make_table_model,
                            model_from_config, payoff_from_config, payoff_library,
                            validate_hypothesis)


def test_cev_coefficient_values():
    assert make_cev(1.0, 2.0).a(2.0, 0.3) == pytest.approx(2.0)
    assert make_cev(2.0, 1.0).a(0.0, 0.7) == 0.0
    assert make_cev(2.0, 1.0).a(1.0, 0.0) == pytest.approx(2.0)


def test_beta_zero_is_absorbed_at_zero():
    m = make_cev(1.5, 0.0)
    assert m.alpha(0.0) == 0.0
    assert m.alpha(1e-9) == 1.5


@pytest.mark.parametrize("sigma,beta", [(1.0, -0.1), (1.0, 2.5), (0.0, 1.0), (-1.0, 1.0)])
def test_cev_rejects_bad_parameters(sigma, beta):
    with pytest.raises(ParameterError):
        make_cev(sigma, beta)


def test_gbm_is_cev_with_beta_two():
    m = make_gbm(0.3)
    assert m.kind == "gbm" and m.betas == (2.0,)
    assert m.a(2.0) == pytest.approx(0.5 * 0.09 * 4.0)


def test_validate_cev_on_small_grid():
    rep = validate_hypothesis(make_cev(1.0, 1.0), ([0.0, 0.5, 1.0, 10.0], [0.0, 1.0]))
    assert rep.passed
    assert {c.name for c in rep.checks} == {"growth", "absorption", "rank"}


def test_quadratic_volatility_breaks_growth():
    model = DiffusionModel(vols=(lambda x, t: np.asarray(x) ** 2,), growth_constant=5.0)
    rep = validate_hypothesis(model, ([0.0, 0.5, 1.0, 10.0], [0.0, 1.0]))
    assert not rep["growth"].passed
    assert rep["growth"].worst_point[1] == 10.0
    assert rep["absorption"].passed


def test_nonzero_volatility_at_zero_breaks_absorption():
    model = DiffusionModel(vols=(lambda x, t: 1.0 + 0.0 * np.asarray(x),), growth_constant=2.0)
    rep = validate_hypothesis(model, ([0.0, 1.0], [0.0]))
    assert not rep["absorption"].passed
    assert rep["absorption"].worst_point[1] == 0.0


def test_vanishing_volatility_inside_breaks_rank():
    model = DiffusionModel(vols=(lambda x, t: np.where(np.asarray(x) < 2.0, 0.0, 1.0),),
                           growth_constant=2.0)
    assert not validate_hypothesis(model, ([0.0, 1.0, 3.0], [0.0]))["rank"].passed


@given(st.floats(0.01, 10.0), st.floats(0.0, 2.0))
def test_validate_cev_with_sigma_as_growth_constant(sigma, beta):
    assert validate_hypothesis(make_cev(sigma, beta), C=sigma).passed


@given(st.floats(0.05, 5.0), st.floats(0.0, 1.99))
def test_cev_lower_bound_is_equality(sigma, beta):
    m = make_cev(sigma, beta)
    xs = np.linspace(0.0, 20.0, 201)[1:]
    C = m.cev[0].lower_bound_constant
    np.testing.assert_allclose(m.a(xs), C * xs**beta, rtol=1e-13)


def test_two_dimensional_model_and_faces():
    m = make_cev_2d([0.2, 1.0], [2.0, 1.0])
    assert m.n == 2 and m.kind == "cev"
    face = m.coordinate(1)
    assert face.n == 1 and face.a(1.0) == pytest.approx(0.5)
    assert validate_hypothesis(m).passed


def test_table_model_extends_linearly():
    m = make_table_model([0.0, 1.0, 2.0], [0.0, 0.5, 1.0], 1.0)
    assert m.alpha(1.5) == pytest.approx(0.75)
    assert m.alpha(4.0) == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        make_table_model([0.0, 0.0], [0.0, 1.0], 1.0)


def test_diffusion_given_directly():
    m = make_from_diffusion(lambda x, t: np.asarray(x) ** 2, 1.0)
    assert m.a(3.0) == pytest.approx(9.0)
    assert m.alpha(3.0) == pytest.approx(np.sqrt(18.0))


def test_payoff_examples():
    call = payoff_library("call", K=1.0)
    assert call(1.5) == pytest.approx(0.5)
    assert call.is_convex and call.gprime0 == 0.0 and call.kinks == (1.0,)
    power = payoff_library("power", gamma=2.0)
    assert power(3.0) == pytest.approx(9.0) and power.is_convex
    assert payoff_library("exchange")(1.0, 3.0) == pytest.approx(2.0)
    assert payoff_library("max")(1.0, 3.0) == pytest.approx(3.0)


@pytest.mark.parametrize("gamma,gp", [(0.5, None), (1.0, 1.0), (2.0, 0.0)])
def test_power_slope_at_zero(gamma, gp):
    assert payoff_library("power", gamma=gamma).gprime0 == gp


def test_affine_shift_metadata():
    pay = payoff_library("call", K=1.0, slope=2.0, intercept=0.5)
    assert pay.gprime0 == 2.0
    assert pay(0.0) == pytest.approx(0.5)
    assert pay(3.0) == pytest.approx(2.0 + 6.0 + 0.5)


@pytest.mark.parametrize("name,params", [("call", {}), ("call", {"K": -1.0}), ("power", {"gamma": 0.0}),
                                         ("nope", {}), ("call", {"K": 1.0, "bogus": 2.0}),
                                         ("exchange", {"slope": 1.0})])
def test_bad_payoffs_raise(name, params):
    with pytest.raises(ParameterError):
        payoff_library(name, **params)


CONVEX = [payoff_library("call", K=1.0), payoff_library("put", K=2.0),
          payoff_library("power", gamma=2.0), payoff_library("power", gamma=3.5),
          payoff_library("affine", slope=-1.0, intercept=4.0),
          payoff_library("call", K=0.5, slope=2.0)]


@pytest.mark.parametrize("payoff", CONVEX, ids=lambda p: p.name)
def test_convex_payoffs_have_nonnegative_second_differences(payoff):
    rng = np.random.default_rng(7)
    h = rng.uniform(1e-3, 2.0, 1000)
    x = h + rng.uniform(0.0, 5.0, 1000)
    d2 = payoff(x - h) - 2.0 * payoff(x) + payoff(x + h)
    assert np.all(d2 >= -1e-12 * (1.0 + np.abs(payoff(x))))


@pytest.mark.parametrize("payoff", CONVEX, ids=lambda p: p.name)
def test_growth_bound_is_finite(payoff):
    assert np.isfinite(growth_bound_constant(payoff, np.linspace(0.0, 1e4, 1001)))


def test_config_blocks():
    assert model_from_config({"kind": "gbm", "sigma": 0.2}).kind == "gbm"
    assert model_from_config({"kind": "cev", "sigma": [1, 1], "beta": [1, 1]}).n == 2
    assert model_from_config({"kind": "custom-table", "x": [0, 1], "alpha": [0, 1]}).kind == "custom-table"
    with pytest.raises(ParameterError):
        model_from_config({"kind": "heston"})
    assert payoff_from_config({"kind": "call", "strike": 2.0})(3.0) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        payoff_from_config({"strike": 2.0})
    with pytest.raises(ParameterError):
        payoff_from_config({"kind": "call", "strike": 1.0, "colour": "red"})


def test_lower_order_bounds():
    xs = np.geomspace(1e-6, 1.0, 50)
    ok = LowerOrderTerms(b=lambda x, t: 0.0 * x, c=lambda x, t: 0.0 * x, C=1.0, delta=0.5, beta=1.0)
    assert ok.check_bounds(xs, [0.0])["b"][0] and ok.check_bounds(xs, [0.0])["c"][0]
    bad = LowerOrderTerms(b=lambda x, t: -1.0 / x, c=lambda x, t: 0.0 * x, C=1.0, delta=0.5, beta=1.0)
    passed, worst = bad.check_bounds(xs, [0.0])["b"]
    assert not passed and worst == pytest.approx(1e-6)
