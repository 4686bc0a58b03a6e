import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sptlab.market_sim import (
    MarketError,
    MarketPath,
    MarketSpec,
    SimGrid,
    ValueDepletedError,
    WeightsPath,
    estimate_covariance,
    exact_covariance,
    excess_growth_rate,
    excess_growth_rate_compact,
    excess_growth_rate_sigma,
    excess_growth_rate_tau,
    market_weights,
    market_weights_path,
    portfolio_value_path,
    portfolio_values,
    realized_excess_growth,
    relative_covariance,
    save_paths,
    simulate_market,
)


def weights_vec(n_min=2, n_max=8):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.lists(st.floats(0.05, 10.0), min_size=n, max_size=n).map(lambda v: np.array(v) / np.sum(v))
    )


def psd(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n + 1))
    return B @ B.T


# -- specs and grids


def test_spec_rejects_bad_inputs():
    with pytest.raises(MarketError):
        MarketSpec.vsm(1)
    with pytest.raises(MarketError):
        MarketSpec.vsm(3, alpha=-0.1)
    with pytest.raises(MarketError):
        MarketSpec.vsm(2, initial_prices=[1.0, 0.0])
    with pytest.raises(MarketError):
        MarketSpec.log_diffusion([0.0, 0.0], np.eye(3))


def test_grid_requires_integer_steps():
    g = SimGrid(1.0, 0.25)
    assert g.n_steps == 4
    assert np.allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(MarketError):
        SimGrid(1.0, 0.3)
    assert SimGrid.with_steps(0.7, 7).n_steps == 7


# -- simulation


def test_zero_dynamics_give_constant_paths():
    spec = MarketSpec.log_diffusion(np.zeros(3), np.zeros((3, 3)), [1.0, 2.0, 3.0])
    for p in simulate_market(spec, SimGrid(1.0, 0.01, 5), 4):
        assert np.all(p.prices == np.array([[1.0], [2.0], [3.0]]))


def test_simulation_is_deterministic_and_order_independent():
    spec = MarketSpec.vsm(4)
    grid = SimGrid(0.5, 1e-3, 42)
    a = simulate_market(spec, grid, 6)
    b = simulate_market(spec, grid, 6, workers=3)
    tail = simulate_market(spec, grid, 3, first_index=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.prices, y.prices)
    for x, y in zip(a[3:], tail):
        assert np.array_equal(x.prices, y.prices)
    other = simulate_market(spec, SimGrid(0.5, 1e-3, 43), 1)[0]
    assert not np.array_equal(a[0].prices, other.prices)


def test_vsm_two_stocks_stay_in_open_simplex():
    for p in simulate_market(MarketSpec.vsm(2, 1.0), SimGrid(1.0, 1e-3, 3), 20):
        mu = market_weights(p.prices)
        assert np.all(mu > 0) and np.all(mu < 1)
        assert np.max(np.abs(mu.sum(axis=0) - 1)) <= 1e-12
        assert np.all(p.prices > 0)


def test_vsm_realized_excess_growth_matches_constant():
    n = 5
    paths = simulate_market(MarketSpec.vsm(n, 1.0), SimGrid(1.0, 1e-4, 9), 8)
    rates = [realized_excess_growth(p)[-1] for p in paths]
    assert abs(np.mean(rates) - (n - 1) / 2) <= 0.05 * (n - 1) / 2


def test_log_diffusion_covariance_estimate_converges():
    n = 3
    spec = MarketSpec.log_diffusion(np.zeros(n), np.eye(n))
    p = simulate_market(spec, SimGrid(1.0, 1e-4, 2), 1)[0]
    est = estimate_covariance(p, window=p.n_steps)
    assert np.max(np.abs(est.sigma[-1] - np.eye(n))) < 0.1
    assert est.filled[-1] and not est.filled[1]
    assert np.all(est.sigma[0] == 0)


def test_constant_path_has_zero_covariance():
    p = MarketPath(np.arange(5.0), np.ones((2, 5)))
    assert np.all(estimate_covariance(p, 2).sigma == 0)


def test_vsm_exact_covariance_is_inverse_weights():
    spec = MarketSpec.vsm(3)
    p = simulate_market(spec, SimGrid(0.1, 1e-3, 1), 1)[0]
    sig = exact_covariance(p, spec)
    mu = market_weights(p.prices).T
    assert np.allclose(np.einsum("tii->ti", sig), 1 / mu)
    off = sig - np.einsum("ti,ij->tij", np.einsum("tii->ti", sig), np.eye(3))
    assert np.all(off == 0)


# -- weights, covariances, excess growth


def test_market_weights_examples():
    assert np.allclose(market_weights(np.array([[1.0], [3.0]]))[:, 0], [0.25, 0.75])
    assert np.allclose(market_weights(np.full((4, 2), 7.0)), 0.25)
    with pytest.raises(MarketError):
        WeightsPath(np.array([[0.5], [0.6]]))
    p = simulate_market(MarketSpec.vsm(3), SimGrid(0.1, 1e-2, 0), 1)[0]
    w = market_weights_path(p).weights
    assert w.min() > 0 and w.max() < 1


@given(weights_vec(), st.integers(0, 10_000))
def test_relative_covariance_psd_and_kernel(pi, seed):
    sigma = psd(seed, pi.size)
    tau = relative_covariance(sigma, pi)
    assert np.allclose(tau, tau.T)
    scale = 1.0 + np.max(np.abs(tau))
    assert np.linalg.eigvalsh(tau)[0] >= -1e-10 * scale
    assert np.linalg.norm(tau @ pi) <= 1e-10 * scale


def test_relative_covariance_examples():
    assert np.all(relative_covariance(np.zeros((3, 3)), np.ones(3) / 3) == 0)
    e1 = np.array([1.0, 0.0, 0.0])
    assert abs(relative_covariance(psd(0, 3), e1)[0, 0]) < 1e-14


def test_vsm_market_excess_growth_is_constant():
    n = 6
    mu = np.random.default_rng(1).dirichlet(np.ones(n))
    sigma = np.diag(1 / mu)
    assert excess_growth_rate(sigma, mu) == pytest.approx((n - 1) / 2, abs=1e-12)


def test_concentrated_portfolio_has_zero_excess_growth():
    pi = np.array([0.0, 1.0, 0.0])
    assert excess_growth_rate(psd(3, 3), pi) == pytest.approx(0.0, abs=1e-14)


@given(weights_vec(), weights_vec(), st.integers(0, 10_000))
def test_excess_growth_routes_agree(pi, zeta, seed):
    n = pi.size
    zeta = np.resize(zeta, n)
    zeta = zeta / zeta.sum()
    sigma = psd(seed, n)
    a = excess_growth_rate_sigma(sigma, pi)
    assert a >= -1e-12
    for b in (excess_growth_rate_tau(sigma, pi, zeta), excess_growth_rate_compact(sigma, pi)):
        assert abs(a - b) <= 1e-10 * (1 + abs(a))
    assert excess_growth_rate(sigma, pi, via_tau=zeta) == pytest.approx(a, abs=1e-10)


def test_excess_growth_numeraire_invariance_many_references():
    rng = np.random.default_rng(7)
    sigma = psd(7, 5)
    pi = rng.dirichlet(np.ones(5))
    vals = [excess_growth_rate_tau(sigma, pi, rng.dirichlet(np.ones(5))) for _ in range(4)]
    assert np.ptp(vals) <= 1e-10


# -- portfolio values


def test_market_portfolio_value_telescopes():
    p = simulate_market(MarketSpec.vsm(4), SimGrid(0.5, 1e-3, 4), 1)[0]
    mu = market_weights(p.prices)
    z = portfolio_values(p.prices, mu, 2.0)
    assert np.allclose(z, 2.0 * p.total / p.total[0], rtol=1e-12)
    assert np.allclose(portfolio_value_path(p, mu).values, p.total / p.total[0], rtol=1e-12)


def test_portfolio_value_examples():
    flat = np.ones((2, 4))
    assert np.all(portfolio_values(flat, np.full((2, 3), 0.5)) == 1.0)
    z = portfolio_values(np.array([[1.0, 1.1], [1.0, 0.9]]), np.array([[0.5], [0.5]]))
    assert z[1] == pytest.approx(1.0, abs=1e-15)


def test_depletion_raises():
    with pytest.raises(ValueDepletedError) as err:
        portfolio_values(np.array([[1.0, 3.0], [1.0, 1.0]]), np.array([[-1.0], [2.0]]))
    assert err.value.step == 1


# -- persistence


def test_csv_and_npz_round_trip(tmp_path):
    p = simulate_market(MarketSpec.vsm(3), SimGrid(0.05, 1e-2, 8), 1, keep_noise=True)[0]
    buf = io.StringIO()
    p.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "t,X1,X2,X3"
    q = MarketPath.from_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(p.prices, q.prices) and np.array_equal(p.times, q.times)
    p.save(tmp_path / "p.npz")
    r = MarketPath.load(tmp_path / "p.npz")
    assert np.array_equal(p.prices, r.prices)
    assert r.meta["master_seed"] == 8
    files = save_paths([p], tmp_path / "out")
    assert files[0].read_text() == buf.getvalue()


def test_market_path_validation():
    with pytest.raises(MarketError):
        MarketPath(np.array([0.0, 1.0]), np.array([[1.0, -1.0], [1.0, 1.0]]))
    with pytest.raises(MarketError):
        MarketPath(np.array([0.0, 0.0]), np.ones((2, 2)))
