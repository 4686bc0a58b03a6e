import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sptlab import generating_functions as gf
from sptlab.generating_functions import (
    Box,
    GenConfig,
    GeneratingFunctionError,
    KFunction,
    OverlayInsolventError,
    check_derivatives,
    classical_weights,
    entropy_floor,
    from_value,
    generalized_weights,
    make_beta_genfun,
    make_boosted_entropy,
    make_constant,
    make_entropy,
    make_geometric_mean,
    make_reduced_entropy,
    make_roa_genfun,
    multiplicative_compose,
    numeric_gradient,
    overlay_coefficient,
    quality_overlay_weights,
    weights_path,
)

ALL = [
    make_constant(2.0),
    make_entropy(0.5),
    make_geometric_mean(),
    make_reduced_entropy(1.0, 0.5),
    make_boosted_entropy(1.0, 0.2),
    make_beta_genfun(0.1, 1.0, 0.5),
    make_roa_genfun(1.0),
]


def simplex(n_min=2, n_max=8):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.lists(st.floats(0.02, 1.0), min_size=n, max_size=n).map(lambda v: np.array(v) / np.sum(v))
    )


def chars(S, n, rng, size=None):
    k = S.k_for(n)
    shape = (k,) if size is None else (size, k)
    return S.domain_K.sample(rng, shape) if k else None


@pytest.mark.parametrize("S", ALL, ids=lambda s: s.name)
@pytest.mark.parametrize("n", [2, 5])
def test_analytic_derivatives_match_finite_differences(S, n):
    r = check_derivatives(S, n, n_samples=100, seed=n)
    assert r.passed, r


@pytest.mark.parametrize("S", ALL, ids=lambda s: s.name)
def test_weights_sum_to_one_and_long_only(S):
    rng = np.random.default_rng(0)
    n = 6
    mu = rng.dirichlet(np.ones(n), size=200) * 0.9 + 0.1 / n
    P = chars(S, n, rng, 200)
    pi = generalized_weights(S, mu, P)
    assert np.max(np.abs(pi.sum(axis=-1) - 1)) <= 1e-12
    assert np.all(pi > 0)


def test_wrong_hessian_is_caught():
    good = make_entropy(1.0)
    broken = gf.GeneratingFunction(
        "broken", good.value_fn, good.grad_fn, lambda x, y: 2 * good.hess_fn(x, y), concave_in_x=True
    )
    r = check_derivatives(broken, 4)
    assert not r.passed and r.max_hess_err > 1e-2


# -- constructor examples


@given(simplex())
def test_entropy_bounds(mu):
    c = 0.3
    v = make_entropy(c).value(mu)
    assert c - 1e-12 <= v <= c + math.log(mu.size) + 1e-12


@given(simplex(), st.lists(st.floats(0.0, 20.0), min_size=8, max_size=8))
def test_beta_genfun_bounds(mu, y):
    A, c, p = 0.2, 0.7, 0.6
    n = mu.size
    v = make_beta_genfun(A, c, p).value(mu, np.array(y[:n]))
    assert A + c - 1e-12 <= v <= A + (1 + c) * n ** (1 - p) + 1e-12


@given(simplex(), st.floats(0.01, 0.99))
def test_roa_genfun_equal_characteristics(mu, r):
    S = make_roa_genfun(1.0)
    y = np.full(mu.size, r)
    assert S.value(mu, y) == pytest.approx(math.exp(math.exp(-r)), rel=1e-12)
    assert np.allclose(generalized_weights(S, mu, y), mu, atol=1e-14)


@given(simplex())
def test_geometric_mean_gives_equal_weights(mu):
    assert np.allclose(classical_weights(make_geometric_mean(), mu), 1 / mu.size, atol=1e-12)


def test_entropy_weight_hand_value():
    # pi^1 = (c mu1 + mu1 log(1/mu1)) / (c + H(mu)), worked by hand
    mu = np.array([0.2, 0.8])
    expected = (0.1 * 0.2 + 0.2 * math.log(5)) / (0.1 + 0.2 * math.log(5) + 0.8 * math.log(1.25))
    # 0.56943..., so a four-digit value of 0.5695 agrees only to 1e-4
    assert expected == pytest.approx(0.5695, abs=1e-4)
    assert classical_weights(make_entropy(0.1), mu)[0] == pytest.approx(expected, abs=1e-14)
    assert np.allclose(classical_weights(make_entropy(0.1), np.full(4, 0.25)), 0.25)


def test_beta_uniform_symmetry():
    mu = np.full(5, 0.2)
    assert np.allclose(generalized_weights(make_beta_genfun(0.1, 1.0, 0.7), mu, np.full(5, 0.3)), 0.2, atol=1e-15)


@given(simplex())
def test_classical_and_generalized_agree_bitwise(mu):
    for S in (make_entropy(0.4), make_geometric_mean(), make_constant()):
        assert np.array_equal(classical_weights(S, mu), generalized_weights(S, mu))


def test_constant_generates_market():
    mu = np.array([0.1, 0.3, 0.6])
    assert np.array_equal(classical_weights(make_constant(), mu), mu)


def test_classical_rejects_characteristics_function():
    with pytest.raises(GeneratingFunctionError):
        classical_weights(make_reduced_entropy(1.0, 0.1), np.array([0.5, 0.5]))


def test_boundary_and_domain_guards():
    with pytest.raises(GeneratingFunctionError):
        classical_weights(make_entropy(1.0), np.array([1.0, 0.0]))
    with pytest.raises(GeneratingFunctionError):
        classical_weights(make_entropy(1.0), np.array([0.5, 0.6]))
    S = make_roa_genfun(1.0)
    mu = np.array([0.5, 0.5])
    with pytest.raises(GeneratingFunctionError):
        generalized_weights(S, mu, np.array([0.5, 1.5]))
    w = generalized_weights(S, mu, np.array([0.5, 1.5]), check_domain=False)
    assert abs(w.sum() - 1) < 1e-12


def test_constructor_parameter_validation():
    for bad in (
        lambda: make_entropy(0.0),
        lambda: make_reduced_entropy(1.0, 0.0),
        lambda: make_boosted_entropy(1.0, 0.5),
        lambda: make_beta_genfun(-1.0, 1.0, 0.5),
        lambda: make_beta_genfun(0.0, 1.0, 1.0),
        lambda: make_roa_genfun(0.0),
        lambda: make_constant(0.0),
    ):
        with pytest.raises(GeneratingFunctionError):
            bad()


# -- multiplicative structure


@given(simplex(), st.lists(st.floats(-3.0, 3.0), min_size=8, max_size=8))
def test_multiplicative_weights_ignore_characteristics(mu, y):
    n = mu.size
    f = make_entropy(0.7)
    S = multiplicative_compose(f, KFunction.exp_decay(n))
    assert S.multiplicative
    assert np.max(np.abs(generalized_weights(S, mu, np.array(y[:n])) - classical_weights(f, mu))) <= 1e-12


def test_multiplicative_identity_and_cross_hessian():
    rng = np.random.default_rng(3)
    f = make_entropy(1.0)
    mu = rng.dirichlet(np.ones(4), size=10)
    one = multiplicative_compose(f, KFunction.one(2))
    assert np.array_equal(one.value(mu, np.zeros((10, 2))), f.value(mu))
    S = multiplicative_compose(f, KFunction.exp_decay(3))
    y = rng.normal(size=(10, 3))
    assert np.max(np.abs(S.log_hessian(mu, y)[:, :4, 4:])) <= 1e-12


# -- numeric fallback


def test_from_value_wrapper_matches_analytic():
    ref = make_beta_genfun(0.1, 1.0, 0.5)
    S = from_value(ref.value_fn, None, name="beta_numeric", domain_K=ref.domain_K)
    rng = np.random.default_rng(1)
    mu = 0.5 * rng.dirichlet(np.ones(3), size=20) + 0.5 / 3
    y = rng.uniform(0, 1, (20, 3))
    assert np.allclose(S.gradient(mu, y), ref.gradient(mu, y), rtol=1e-6, atol=1e-8)
    assert np.allclose(S.hessian(mu, y), ref.hessian(mu, y), rtol=1e-4, atol=1e-5)
    assert np.allclose(generalized_weights(S, mu, y), generalized_weights(ref, mu, y), atol=1e-8)


def test_numeric_gradient_of_quadratic():
    g = numeric_gradient(lambda x, y: np.sum(x**2, axis=-1), np.array([0.3, 0.7]), np.zeros(0))
    assert np.allclose(g, [0.6, 1.4], atol=1e-9)


# -- overlay


def test_overlay_trivial_cases():
    mu = np.array([0.2, 0.3, 0.5])
    pi = np.array([0.3, 0.3, 0.4])
    assert np.allclose(quality_overlay_weights(mu, mu, 1.3, 1.3, 2.5), mu)
    assert np.allclose(quality_overlay_weights(mu, pi, 1.1, 0.9, 0.0), mu)
    eta = quality_overlay_weights(mu, pi, 1.0, 1.0, 1.0)
    assert eta.sum() == pytest.approx(1.0) and np.allclose(eta, 2 * mu - pi)
    with pytest.raises(OverlayInsolventError):
        quality_overlay_weights(mu, pi, 1.0, 3.0, 1.0)


def test_overlay_coefficient_formula():
    A, vs = 0.3, 1.0
    eb = math.exp(-1.3)
    assert overlay_coefficient(A, vs) == pytest.approx(eb / (2 - eb - math.exp(-1.0)), rel=1e-15)


def test_overlay_long_only_when_roa_weights_bounded():
    # pi <= mu (2 - e^{-varsigma}) with Z_pi <= Z_mu e^{b}... keeps eta nonnegative
    rng = np.random.default_rng(5)
    vs, A = 1.0, 0.3
    a = overlay_coefficient(A, vs)
    S = make_roa_genfun(vs)
    for _ in range(100):
        mu = rng.dirichlet(np.ones(5))
        y = rng.uniform(0.01, 0.99, 5)
        pi = generalized_weights(S, mu, y)
        assert np.all(pi <= mu * (2 - math.exp(-vs)) + 1e-15)
        z_mu = 1.0
        z_pi = z_mu * math.exp(rng.uniform(-(1 + A), 0))
        assert np.all(quality_overlay_weights(mu, pi, z_mu, z_pi, a) >= -1e-15)


# -- configs and helpers


def test_genconfig_round_trip_and_validation():
    for name, params in [
        ("entropy", {"c": 0.1}),
        ("geometric_mean", {}),
        ("beta", {"A": 1e-4, "c": 1e-4, "p": 0.7}),
        ("roa", {"varsigma": 1.0, "roa_scale": 10}),
    ]:
        cfg = GenConfig(name, params)
        assert GenConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.build().name == name
    with pytest.raises(GeneratingFunctionError):
        GenConfig("nope")
    with pytest.raises(GeneratingFunctionError):
        GenConfig("entropy", {"c": 1.0, "d": 2})
    with pytest.raises(GeneratingFunctionError):
        GenConfig("entropy", {"c": -1.0})
    with pytest.raises(GeneratingFunctionError):
        GenConfig("entropy", {})


def test_weights_path_and_entropy_floor():
    mu = np.array([[0.5, 0.2], [0.5, 0.8]])
    w = weights_path(make_entropy(1.0), mu)
    assert w.shape == (2, 2)
    assert np.allclose(w[:, 0], 0.5)
    h = -(0.2 * math.log(0.2) + 0.8 * math.log(0.8))
    assert entropy_floor(mu) == pytest.approx(h)


def test_box_contains_and_sample():
    b = Box(0.0, 1.0)
    assert list(b.contains([0.0, 0.5, 1.0])) == [False, True, False]
    assert list(Box(0.0, None, closed_lower=True).contains([0.0, -1e-9])) == [True, False]
    s = b.sample(np.random.default_rng(0), (100,))
    assert np.all(b.contains(s))
