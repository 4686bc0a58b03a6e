"""Property suite run by ``sptlab verify``.

Every check returns a named pass/fail with a margin (positive when it holds)
so a failing run can be read off directly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .characteristics import RoaSpec, beta_characteristic, synthetic_roa, time_characteristic
from .decomposition import (
    ArbitrageBoundSpec,
    PathBundle,
    Upsilon,
    check_drift_monotonicity,
    check_pathwise_bound,
    decompose,
)
from .generating_functions import (
    GenConfig,
    GeneratingFunction,
    KFunction,
    check_derivatives,
    generalized_weights,
    make_entropy,
    multiplicative_compose,
    weights_path,
)
from .market_sim import (
    MarketPath,
    MarketSpec,
    SimGrid,
    exact_covariance,
    excess_growth_rate_compact,
    excess_growth_rate_sigma,
    excess_growth_rate_tau,
    market_weights,
    portfolio_values,
    relative_covariance,
    simulate_market,
)
from .rng import path_rng

SUITE_STREAM = 3


def default_genfuns() -> list[GenConfig]:
    return [
        GenConfig("entropy", {"c": 1.0}),
        GenConfig("geometric_mean"),
        GenConfig("reduced_entropy", {"c": 1.0, "epsilon": 0.5}),
        GenConfig("boosted_entropy", {"c": 1.0, "alpha": 0.1}),
        GenConfig("beta", {"A": 0.1, "c": 1.0, "p": 0.5}),
        GenConfig("roa", {"varsigma": 1.0}),
    ]


@dataclass
class VerifyConfig:
    n: int = 5
    alpha: float = 1.0
    horizon: float = 1.0
    dt: float = 1e-3
    paths: int = 20
    seed: int = 1
    genfuns: list = field(default_factory=default_genfuns)
    residual_tol: Optional[float] = None  # defaults to 10 * sqrt(dt)
    draws: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("verify needs n >= 2")
        if not (self.paths >= 1 and self.draws >= 1):
            raise ValueError("paths and draws must be positive")
        SimGrid(self.horizon, self.dt, self.seed)  # validates the grid

    @property
    def tol(self) -> float:
        return 10 * math.sqrt(self.dt) if self.residual_tol is None else self.residual_tol


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}


def path_characteristics(S: GeneratingFunction, cfg: GenConfig, path: MarketPath, seed: int):
    """A characteristics path that fits ``S`` on ``path``, or ``None`` for ``k = 0``."""
    if S.k_for(path.n) == 0:
        return None
    if cfg.name in ("reduced_entropy", "boosted_entropy"):
        return time_characteristic(path.times)
    if cfg.name == "beta":
        return beta_characteristic(path, signs=np.ones(path.n, dtype=int))
    if cfg.name == "roa":
        vs = float(cfg.params.get("varsigma", 1.0))
        grid = SimGrid.with_steps(float(path.times[-1]), path.n_steps, seed)
        return synthetic_roa(RoaSpec(varsigma=vs, eta=5.0), grid, path.n, path_index=path.meta.get("path_index", 0))
    raise ValueError(f"no characteristics recipe for {cfg.name}")


def check_derivative_suite(genfuns, n: int, seed: int) -> list[Check]:
    out = []
    for cfg in genfuns:
        S = cfg.build() if isinstance(cfg, GenConfig) else cfg
        r = check_derivatives(S, n, seed=seed)
        err = max(r.max_grad_err, r.max_hess_err)
        out.append(
            Check(
                f"derivatives[{S.name}]",
                r.passed,
                1e-5 - err,
                f"grad {r.max_grad_err:.2e} hess {r.max_hess_err:.2e} asym {r.max_asym:.1e}",
            )
        )
    return out


def check_master_equation(genfuns, paths, tol: float, seed: int) -> tuple[list[Check], list[Check]]:
    """Residual checks and drift-monotonicity checks over all paths."""
    res_checks, mono_checks = [], []
    for cfg in genfuns:
        S = cfg.build()
        worst = []
        n_applicable = n_bad = 0
        for p in paths:
            dec = decompose(p, S, path_characteristics(S, cfg, p, seed))
            worst.append(dec.max_abs_residual)
            m = check_drift_monotonicity(dec)
            if m.applicable:
                n_applicable += 1
                n_bad += m.n_violations
        med = float(np.median(worst))
        res_checks.append(
            Check(f"master_equation[{S.name}]", med <= tol, tol - med, f"median max|residual| {med:.3e}, tol {tol:.3e}")
        )
        if n_applicable:
            mono_checks.append(
                Check(
                    f"drift_monotonicity[{S.name}]",
                    n_bad == 0,
                    -float(n_bad),
                    f"{n_bad} violating steps over {n_applicable} paths",
                )
            )
    return res_checks, mono_checks


def check_entropy_bound(paths, n: int) -> Check:
    mu0 = market_weights(paths[0].prices)[:, 0]
    S0 = float(-np.sum(mu0 * np.log(mu0)))
    S = make_entropy(1.0)
    lr = []
    for p in paths:
        if not np.allclose(market_weights(p.prices)[:, 0], mu0):
            raise ValueError("entropy bound check needs a common starting point")
        pi = weights_path(S, market_weights(p.prices))
        lr.append(np.log(portfolio_values(p.prices, pi)) - np.log(p.total / p.total[0]))
    spec = ArbitrageBoundSpec(Upsilon.vsm(n), n, c=1.0)
    r = check_pathwise_bound("entropy", PathBundle(paths[0].times, np.array(lr), S0), spec)
    return Check(
        "entropy_bound",
        r.passed,
        r.worst_margin,
        f"held on {100 * r.fraction_holding:.1f}% of points, horizon {r.horizon:.3g} vs bound time {r.bound_time:.3g}",
    )


def check_tau(paths, spec: MarketSpec) -> Check:
    worst = 0.0
    for p in paths:
        sigma = exact_covariance(p, spec)
        mu = market_weights(p.prices).T
        tau = relative_covariance(sigma, mu)
        scale = 1.0 + np.max(np.abs(sigma), axis=(1, 2))
        low = np.linalg.eigvalsh(tau)[:, 0] / scale
        ker = np.max(np.abs(np.einsum("tij,tj->ti", tau, mu)), axis=1) / scale
        worst = max(worst, float(max(-low.min(), ker.max())))
    return Check("tau_psd_kernel", worst <= 1e-10, 1e-10 - worst, f"worst scaled violation {worst:.2e}")


def check_multiplicative_invariance(n: int, draws: int, seed: int) -> Check:
    rng = path_rng(seed, 0, SUITE_STREAM)
    base = make_entropy(1.0)
    k = n
    S = multiplicative_compose(base, KFunction.exp_decay(k))
    mu = rng.dirichlet(np.ones(n), size=draws)
    P = rng.uniform(0.0, 2.0, size=(draws, k))
    diff = float(np.max(np.abs(generalized_weights(S, mu, P) - generalized_weights(base, mu))))
    return Check("multiplicative_invariance", diff <= 1e-12, 1e-12 - diff, f"max weight difference {diff:.2e}")


def random_triples(n_draws: int, seed: int):
    """PSD ``sigma`` with weight vectors ``pi`` (may short) and ``zeta``."""
    rng = path_rng(seed, 1, SUITE_STREAM)
    for _ in range(n_draws):
        n = int(rng.integers(2, 11))
        B = rng.standard_normal((n, n + 2))
        sigma = B @ B.T / n
        pi = rng.normal(1.0 / n, 0.3, n)
        pi = pi - (pi.sum() - 1.0) / n
        zeta = rng.dirichlet(np.ones(n))
        yield sigma, pi, zeta


def check_numeraire(draws: int, seed: int) -> Check:
    worst = 0.0
    for sigma, pi, zeta in random_triples(draws, seed):
        a = excess_growth_rate_sigma(sigma, pi)
        b = excess_growth_rate_tau(sigma, pi, zeta)
        c = excess_growth_rate_compact(sigma, pi)
        worst = max(worst, float(abs(a - b)), float(abs(a - c)))
    return Check("numeraire_invariance", worst <= 1e-10, 1e-10 - worst, f"max route disagreement {worst:.2e}")


def run_suite(cfg: VerifyConfig) -> VerificationReport:
    spec = MarketSpec.vsm(cfg.n, cfg.alpha)
    grid = SimGrid(cfg.horizon, cfg.dt, cfg.seed)
    paths = simulate_market(spec, grid, cfg.paths, workers=cfg.workers)
    checks = check_derivative_suite(cfg.genfuns, cfg.n, cfg.seed)
    res, mono = check_master_equation(cfg.genfuns, paths, cfg.tol, cfg.seed)
    checks += res + mono
    checks.append(check_entropy_bound(paths, cfg.n))
    checks.append(check_tau(paths, spec))
    checks.append(check_multiplicative_invariance(cfg.n, cfg.draws, cfg.seed))
    checks.append(check_numeraire(2 * cfg.draws, cfg.seed))
    return VerificationReport(checks)
