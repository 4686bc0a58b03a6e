"""Stock-characteristics paths aligned to a market grid.

Three families are provided: calendar time, realized betas against the
market value process, and a synthetic bounded ROA process. The ROA generator
is a logistic transform of an Ornstein-Uhlenbeck driver; it is one admissible
choice among many and is calibrated to a quadratic-variation floor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .generating_functions import Box, INCREASING, DECREASING, NONE, REAL_LINE
from .market_sim import MarketPath, SimGrid, market_weights
from .rng import MARKET_STREAM, ROA_STREAM, path_rng


class CharacteristicsError(ValueError):
    pass


class CalibrationError(CharacteristicsError):
    """The requested ROA volatility floor cannot be met on the given grid."""


@dataclass(frozen=True, eq=False)
class CharacteristicsPath:
    """Values ``(k, N+1)`` on the grid ``times``.

    ``monotone`` holds one of ``increasing``/``decreasing``/``none`` per
    coordinate. Declared monotonicity and the box are checked on construction.
    """

    times: np.ndarray
    values: np.ndarray
    finite_variation: bool = False
    monotone: tuple = ()
    domain_K: Box = REAL_LINE
    meta: dict = field(default_factory=dict)
    innovations: np.ndarray | None = None  # (k, N): increments minus their conditional mean

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[1] != times.size:
            raise CharacteristicsError(f"values shape {values.shape} does not match {times.size} grid points")
        monotone = tuple(self.monotone) if self.monotone else (NONE,) * values.shape[0]
        if len(monotone) != values.shape[0]:
            raise CharacteristicsError("one monotonicity flag per coordinate is required")
        if not np.all(self.domain_K.contains(values)):
            raise CharacteristicsError("characteristics leave their declared domain")
        d = np.diff(values, axis=1)
        for i, m in enumerate(monotone):
            if m == INCREASING and np.any(d[i] < 0):
                raise CharacteristicsError(f"coordinate {i} declared increasing but decreases")
            if m == DECREASING and np.any(d[i] > 0):
                raise CharacteristicsError(f"coordinate {i} declared decreasing but increases")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "monotone", monotone)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def check_aligned(self, path: MarketPath) -> None:
        if self.times.shape != path.times.shape or np.any(self.times != path.times):
            raise CharacteristicsError("characteristics and market path use different grids")

    def to_csv(self, dest) -> None:
        header = "t," + ",".join(f"P{i + 1}" for i in range(self.k))
        data = np.column_stack([self.times, self.values.T])
        np.savetxt(dest, data, delimiter=",", header=header, comments="", fmt="%.17g")


def time_characteristic(grid_or_times) -> CharacteristicsPath:
    """``P_t = t``."""
    times = grid_or_times.times if isinstance(grid_or_times, (SimGrid, MarketPath)) else np.asarray(grid_or_times)
    return CharacteristicsPath(
        times,
        times[None, :],
        finite_variation=True,
        monotone=(INCREASING,),
        domain_K=Box(0.0, None, closed_lower=True),
    )


def realized_beta(prices: np.ndarray) -> np.ndarray:
    """Cumulative ``sum_s dX^i_s dZ_s`` with ``Z = sum_j X^j / sum_j X^j_0``; ``(n, N+1)``."""
    prices = np.asarray(prices, dtype=float)
    z = prices.sum(axis=0) / prices[:, 0].sum()
    inc = np.diff(prices, axis=1) * np.diff(z)[None, :]
    out = np.zeros_like(prices)
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def beta_characteristic(path: MarketPath, signs: Sequence[int] | None = None) -> CharacteristicsPath:
    """Signed realized betas ``s^i beta^i``.

    When ``signs`` is omitted, each sign is the sign of the stock's full-sample
    covariation (``+1`` for zero) and the estimate is recorded in ``meta``.
    Realized betas are sums of noisy products, so they are declared of finite
    variation but not monotone on the grid.
    """
    beta = realized_beta(path.prices)
    estimated = signs is None
    if estimated:
        s = np.where(beta[:, -1] >= 0, 1, -1)
    else:
        s = np.asarray(signs, dtype=int).reshape(-1)
        if s.size != path.n or not np.all(np.isin(s, (-1, 1))):
            raise CharacteristicsError("signs must be a +1/-1 array with one entry per stock")
    return CharacteristicsPath(
        path.times,
        s[:, None] * beta,
        finite_variation=True,
        monotone=(NONE,) * path.n,
        domain_K=REAL_LINE,
        meta={"signs": s.tolist(), "signs_estimated": bool(estimated)},
    )


def max_drawdown(values: np.ndarray) -> np.ndarray:
    """Largest drop below the running maximum, per coordinate."""
    values = np.atleast_2d(values)
    return np.max(np.maximum.accumulate(values, axis=1) - values, axis=1)


# --------------------------------------------------------------------------
# ROA


@dataclass(frozen=True)
class RoaSpec:
    """Bounds and constants of the ROA market assumptions.

    ``varsigma`` caps ROA, ``eta`` is the floor on the summed quadratic-variation
    rate, ``delta`` the floor on market weights, and ``A``, ``epsilon`` bound the
    integral ``sum_i int mu^i exp(-R^i) dR^i``. ``driver_var`` is the stationary
    variance of the Ornstein-Uhlenbeck driver behind each ROA path.
    """

    varsigma: float = 1.0
    eta: float = 20.0
    delta: float = 0.1
    A: float = 0.3
    epsilon: float = 0.02
    driver_var: float = 0.1

    def __post_init__(self):
        if not self.varsigma > 0:
            raise CharacteristicsError("varsigma must be positive")
        if not self.eta > 0:
            raise CharacteristicsError("eta must be positive")
        if not 0 < self.delta < 0.5:
            raise CharacteristicsError("delta must lie in (0, 1/n) with n >= 2")
        if not (self.A >= 0 and self.epsilon >= 0):
            raise CharacteristicsError("A and epsilon must be nonnegative")
        if not self.epsilon < self.delta * math.exp(-self.varsigma) * self.eta / 2:
            raise CharacteristicsError("epsilon must be below delta * exp(-varsigma) * eta / 2")
        if not self.driver_var > 0:
            raise CharacteristicsError("driver_var must be positive")

    def check_n(self, n: int) -> None:
        if not self.delta < 1.0 / n:
            raise CharacteristicsError(f"delta={self.delta} must be below 1/n = {1.0 / n}")

    @property
    def arbitrage_time(self) -> float:
        return 2 * (1 + self.A - math.exp(-self.varsigma)) / (
            self.delta * self.eta * math.exp(-self.varsigma) - 2 * self.epsilon
        )


@dataclass(frozen=True)
class RoaDriver:
    """Calibrated logistic-OU driver: ``R = varsigma / (1 + exp(-U))``,
    ``dU = -kappa U dt + vol dW``."""

    varsigma: float
    kappa: float
    vol: float
    driver_var: float
    qv_quantile: float

    def roa(self, u):
        return self.varsigma / (1.0 + np.exp(-u))

    def qv_rate(self, u) -> np.ndarray:
        """Instantaneous ``sum_i d<R^i>/dt`` for drivers ``u`` of shape ``(..., n)``."""
        lg = 1.0 / (1.0 + np.exp(-u))
        return np.sum((self.varsigma * lg * (1 - lg)) ** 2, axis=-1) * self.vol**2


_CALIBRATION_DRAWS = 200_000
_CALIBRATION_LEVEL = 1e-3


def calibrate_roa_driver(spec: RoaSpec, n: int, dt: float) -> RoaDriver:
    """Choose the driver volatility so that the summed QV rate exceeds ``eta``
    with stationary probability ``1 - 1e-3``.

    The mean-reversion speed follows from the stationary variance. Raises
    :class:`CalibrationError` when one step is too coarse for the discrete
    quadratic variation to track its continuous rate (``kappa dt > 0.1``).
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([0, ROA_STREAM, n])))
    u = rng.normal(0.0, math.sqrt(spec.driver_var), (_CALIBRATION_DRAWS, n))
    lg = 1.0 / (1.0 + np.exp(-u))
    q = float(np.quantile(np.sum((spec.varsigma * lg * (1 - lg)) ** 2, axis=1), _CALIBRATION_LEVEL))
    vol2 = spec.eta / q
    kappa = vol2 / (2 * spec.driver_var)
    if kappa * dt > 0.1:
        raise CalibrationError(
            f"eta={spec.eta} needs mean reversion {kappa:.3g}; kappa*dt={kappa * dt:.3g} exceeds 0.1, reduce dt"
        )
    return RoaDriver(spec.varsigma, kappa, math.sqrt(vol2), spec.driver_var, q)


def _ou_step_constants(driver: RoaDriver, dt: float):
    a = math.exp(-driver.kappa * dt)
    return a, math.sqrt(driver.driver_var * (1 - a * a))


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(40)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _roa_innovations(driver: RoaDriver, u: np.ndarray, a: float, sd: float) -> np.ndarray:
    """``R_{t+1} - E[R_{t+1} | U_t]`` for drivers ``u`` of shape ``(N+1, n)``; returns ``(n, N)``."""
    cond = np.zeros(u[:-1].shape)
    base = a * u[:-1]
    for z, w in zip(_GH_NODES, _GH_WEIGHTS):
        cond += w * driver.roa(base + sd * z)
    return (driver.roa(u[1:]) - cond).T


def synthetic_roa(spec: RoaSpec, grid: SimGrid, n_stocks: int, seed: int | None = None, path_index: int = 0):
    """Independent bounded ROA paths in ``(0, varsigma)``, one per stock.

    Uses the ROA noise stream keyed by ``(seed, path_index)``; ``seed`` defaults
    to the grid's master seed.
    """
    driver = calibrate_roa_driver(spec, n_stocks, grid.dt)
    seed = grid.master_seed if seed is None else seed
    rng = path_rng(seed, path_index, ROA_STREAM)
    a, sd = _ou_step_constants(driver, grid.dt)
    u0 = rng.normal(0.0, math.sqrt(spec.driver_var), n_stocks)
    shocks = rng.standard_normal((grid.n_steps, n_stocks)) * sd
    u = np.empty((grid.n_steps + 1, n_stocks))
    u[0] = u0
    for t in range(grid.n_steps):
        u[t + 1] = a * u[t] + shocks[t]
    return CharacteristicsPath(
        grid.times,
        driver.roa(u).T,
        finite_variation=False,
        domain_K=Box(0.0, spec.varsigma),
        meta={"kappa": driver.kappa, "vol": driver.vol},
        innovations=_roa_innovations(driver, u, a, sd),
    )


@dataclass(frozen=True)
class RoaMarketSpec:
    """Market whose log-drift tilts towards high-ROA stocks and mean-reverts
    in market weight.

    ``d log X^i = [tilt (R^i - varsigma/2) - reversion (log mu^i + log n)] dt + vol dB^i``

    The coupling runs through finite-variation drift only, so market weights
    and ROA keep zero quadratic covariation. ``tilt`` is set from
    ``tilt_gain`` relative to the average QV rate of ROA, and ``reversion`` as
    ``reversion_gain`` times the driver's mean-reversion speed.
    """

    roa: RoaSpec = field(default_factory=RoaSpec)
    vol: float = 0.1
    tilt_gain: float = 1.3
    reversion_gain: float = 1.0


def _coupling(mspec: RoaMarketSpec, driver: RoaDriver, n: int) -> tuple[float, float]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([1, ROA_STREAM, n])))
    u = rng.normal(0.0, math.sqrt(driver.driver_var), (_CALIBRATION_DRAWS, 1))
    lg = 1.0 / (1.0 + np.exp(-u))
    var_r = driver.varsigma**2 * float(np.var(lg))
    mean_qv = driver.vol**2 * float(np.mean((driver.varsigma * lg * (1 - lg)) ** 2))
    tilt = mspec.tilt_gain * mean_qv * (1 + mspec.reversion_gain) / (2 * var_r)
    return tilt, mspec.reversion_gain * driver.kappa


def simulate_roa_market(
    mspec: RoaMarketSpec, grid: SimGrid, n: int, n_paths: int, initial_prices=None
) -> list[tuple[MarketPath, CharacteristicsPath]]:
    """Jointly simulate prices and ROA; market and ROA noise use disjoint streams."""
    spec = mspec.roa
    spec.check_n(n)
    driver = calibrate_roa_driver(spec, n, grid.dt)
    tilt, reversion = _coupling(mspec, driver, n)
    a, sd = _ou_step_constants(driver, grid.dt)
    N, dt = grid.n_steps, grid.dt
    x0 = np.ones(n) if initial_prices is None else np.asarray(initial_prices, dtype=float)
    rngs_m = [path_rng(grid.master_seed, i, MARKET_STREAM) for i in range(n_paths)]
    rngs_r = [path_rng(grid.master_seed, i, ROA_STREAM) for i in range(n_paths)]
    u = np.stack([r.normal(0.0, math.sqrt(spec.driver_var), n) for r in rngs_r])
    du = np.stack([r.standard_normal((N, n)) for r in rngs_r]) * sd
    db = np.stack([r.standard_normal((N, n)) for r in rngs_m]) * (mspec.vol * math.sqrt(dt))
    logx = np.empty((n_paths, N + 1, n))
    us = np.empty((n_paths, N + 1, n))
    logx[:, 0] = np.log(x0)
    us[:, 0] = u
    log_n = math.log(n)
    cur = logx[:, 0].copy()
    for t in range(N):
        r = driver.roa(u)
        rel = cur - cur.max(axis=1, keepdims=True)
        log_mu = rel - np.log(np.exp(rel).sum(axis=1, keepdims=True))
        drift = tilt * (r - 0.5 * spec.varsigma) - reversion * (log_mu + log_n)
        cur = cur + drift * dt + db[:, t]
        u = a * u + du[:, t]
        logx[:, t + 1] = cur
        us[:, t + 1] = u
    out = []
    for i in range(n_paths):
        meta = {"master_seed": int(grid.master_seed), "path_index": i}
        mp = MarketPath(grid.times, np.exp(logx[i].T), meta=meta)
        cp = CharacteristicsPath(
            grid.times,
            driver.roa(us[i]).T,
            finite_variation=False,
            domain_K=Box(0.0, spec.varsigma),
            meta={**meta, "kappa": driver.kappa, "tilt": tilt, "reversion": reversion},
            innovations=_roa_innovations(driver, us[i], a, sd),
        )
        out.append((mp, cp))
    return out


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class RoaReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def by_name(self) -> dict:
        return {c.name: c for c in self.checks}


def roa_drift_integral(roa: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Left-point ``sum_i int mu^i exp(-R^i) dR^i`` on the grid, starting at 0."""
    step = np.sum(mu[:, :-1] * np.exp(-roa[:, :-1]) * np.diff(roa, axis=1), axis=0)
    return np.concatenate([[0.0], np.cumsum(step)])


def verify_roa_assumptions(
    roa: CharacteristicsPath,
    mu,
    spec: RoaSpec,
    *,
    qv_window: int = 250,
    qv_fraction: float = 0.99,
    qv_level: float = 0.9,
    cross_se: float = 3.0,
) -> RoaReport:
    """Check the five ROA market assumptions on one path.

    * ``non_failure``: ``min mu >= delta``.
    * ``bounded``: ``0 < R < varsigma`` everywhere.
    * ``zero_cross_variation``: for each stock, the realized ``<mu^i, R^i>_T``
      is within ``cross_se`` standard errors of zero. When the path carries
      ROA innovations (increments minus their conditional mean) those replace
      the raw ROA increments: the sum is then a martingale difference sum even
      if the market drift depends on ROA, so the standard error is valid.
    * ``qv_floor``: the trailing ``qv_window``-step realized rate of
      ``sum_i <R^i>`` is at least ``qv_level * eta`` on ``qv_fraction`` of steps.
    * ``drift_bound``: ``sum_i int mu^i exp(-R^i) dR^i < A + epsilon t`` for all t.

    Margins are positive when a check passes.
    """
    weights = mu.weights if hasattr(mu, "weights") else np.asarray(mu, dtype=float)
    R = roa.values
    if weights.shape != R.shape:
        raise CharacteristicsError(f"ROA {R.shape} and weights {weights.shape} are not aligned")
    times = roa.times
    checks = []

    m = float(weights.min())
    checks.append(AssumptionCheck("non_failure", m >= spec.delta, m - spec.delta))

    lo, hi = float(R.min()), float(R.max())
    margin = min(lo, spec.varsigma - hi)
    checks.append(AssumptionCheck("bounded", margin > 0, margin))

    dR = np.diff(R, axis=1) if roa.innovations is None else roa.innovations
    prod = np.diff(weights, axis=1) * dR
    total = prod.sum(axis=1)
    se = np.sqrt(np.sum(prod**2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(total) / se, 0.0)
    zmax = float(z.max())
    source = "raw increments" if roa.innovations is None else "innovations"
    checks.append(
        AssumptionCheck("zero_cross_variation", zmax <= cross_se, cross_se - zmax, f"max |z| = {zmax:.3g} ({source})")
    )

    dR2 = np.sum(np.diff(R, axis=1) ** 2, axis=0)
    w = min(qv_window, dR2.size)
    csum = np.concatenate([[0.0], np.cumsum(dR2)])
    ct = times
    rates = (csum[w:] - csum[:-w]) / (ct[w:] - ct[:-w])
    frac = float(np.mean(rates >= qv_level * spec.eta))
    checks.append(
        AssumptionCheck(
            "qv_floor",
            frac >= qv_fraction,
            frac - qv_fraction,
            f"{frac:.4f} of windows at or above {qv_level} * eta",
        )
    )

    integral = roa_drift_integral(R, weights)
    gap = float(np.max(integral - (spec.A + spec.epsilon * times)))
    checks.append(AssumptionCheck("drift_bound", gap < 0, -gap))
    return RoaReport(tuple(checks))
