"""Daily-rebalanced backtests with proportional and short-financing costs.

Wealth follows ``Z_t = Z_{t-1} (1 + R_t)`` with

    R_t = sum_i pi_{t-1}^i (X_t^i / X_{t-1}^i - 1)
          - eps1 * sum_i |pi_{t-1}^i - hat_pi_{t-1}^i|
          - eps2 * sum_i max(0, -pi_{t-1}^i)

where ``hat_pi`` are the weights the previous positions drifted to
(``hat_pi_0 = 0``: the first day pays full entry cost).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Union

import numpy as np

TRADING_DAYS = 252


class BacktestError(ValueError):
    pass


class SingularDesignError(BacktestError):
    """Regression design matrix is rank deficient."""


@dataclass(frozen=True)
class CostModel:
    eps1: float = 0.003
    eps2: float = 0.005

    def __post_init__(self):
        if not (self.eps1 >= 0 and self.eps2 >= 0):
            raise BacktestError("cost rates must be nonnegative")


@dataclass(frozen=True, eq=False)
class BacktestRun:
    """Arrays over ``t = 0..T-1`` (weights) and ``t = 0..T`` (wealth).

    ``returns[0]`` is undefined and stored as 0 so that ``returns[t]`` pairs
    with ``wealth[t]``. If wealth hit zero the run stops at ``depleted_at``.
    """

    weights: np.ndarray  # (n, T)
    readjusted: np.ndarray  # (n, T)
    returns: np.ndarray  # (T+1,)
    wealth: np.ndarray  # (T+1,)
    depleted_at: Optional[int] = None
    name: str = ""

    @property
    def short_leg(self) -> np.ndarray:
        return np.maximum(0.0, -self.weights)

    @property
    def n_periods(self) -> int:
        return self.wealth.size - 1

    @property
    def period_returns(self) -> np.ndarray:
        return self.returns[1:]

    @property
    def depleted(self) -> bool:
        return self.depleted_at is not None


@dataclass
class BacktestState:
    """What a weight rule may look at when choosing ``pi_t``."""

    t: int
    prices: np.ndarray  # history up to and including t, (n, t+1)
    wealth: np.ndarray  # wealth up to and including t
    readjusted: np.ndarray  # hat_pi_t


WeightRule = Union[Callable[[int, BacktestState], np.ndarray], np.ndarray]


def run_backtest(prices, weight_rule: WeightRule, costs: CostModel = CostModel(), name: str = "") -> BacktestRun:
    """Run the cost-adjusted wealth recursion over ``prices`` of shape ``(n, T+1)``.

    ``weight_rule`` is either an array with at least ``T`` columns or a
    callable ``(t, state) -> pi_t``; the state exposes prices up to ``t`` only.
    """
    X = np.asarray(prices, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise BacktestError("prices must be an (n, T+1) array with T >= 1")
    if not np.all(X > 0) or not np.all(np.isfinite(X)):
        raise BacktestError("prices must be finite and strictly positive")
    n, T1 = X.shape
    T = T1 - 1
    table = None
    if not callable(weight_rule):
        table = np.asarray(weight_rule, dtype=float)
        if table.shape[0] != n or table.shape[1] < T:
            raise BacktestError(f"weight table must be ({n}, >= {T}), got {table.shape}")

    W = np.zeros((n, T))
    H = np.zeros((n, T))
    R = np.zeros(T + 1)
    Z = np.zeros(T + 1)
    Z[0] = 1.0
    hat = np.zeros(n)
    depleted = None
    gross = X[:, 1:] / X[:, :-1]
    for t in range(T):
        if table is not None:
            pi = table[:, t]
        else:
            pi = np.asarray(weight_rule(t, BacktestState(t, X[:, : t + 1], Z[: t + 1], hat.copy())), dtype=float)
        if pi.shape != (n,) or not np.all(np.isfinite(pi)):
            raise BacktestError(f"weight rule returned an invalid vector at t={t}")
        if abs(pi.sum() - 1.0) > 1e-9:
            raise BacktestError(f"weights at t={t} sum to {pi.sum():.12g}, not 1")
        W[:, t] = pi
        H[:, t] = hat
        r = (
            np.sum(pi * (gross[:, t] - 1.0))
            - costs.eps1 * np.sum(np.abs(pi - hat))
            - costs.eps2 * np.sum(np.maximum(0.0, -pi))
        )
        R[t + 1] = r
        Z[t + 1] = Z[t] * (1.0 + r)
        if Z[t + 1] <= 0:
            depleted = t + 1
            break
        hat = pi * gross[:, t] * Z[t] / Z[t + 1]
    if depleted is not None:
        W, H, R, Z = W[:, :depleted], H[:, :depleted], R[: depleted + 1], Z[: depleted + 1]
    return BacktestRun(W, H, R, Z, depleted, name)


# --------------------------------------------------------------------------
# regression


@dataclass(frozen=True, eq=False)
class OlsResult:
    coefficients: np.ndarray
    r_squared: float
    residuals: np.ndarray


def ols_regress(y, X, rank_tol: float = 1e-10) -> OlsResult:
    """Least squares via QR; ``X`` must already contain the intercept column.

    Raises :class:`SingularDesignError` when a diagonal entry of ``R`` is
    below ``rank_tol`` times the largest one. ``r_squared`` is centered.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise BacktestError("design matrix and response are not aligned")
    m, k = X.shape
    if m < k + 1:
        raise BacktestError(f"need at least {k + 1} observations for {k} coefficients, got {m}")
    Q, Rm = np.linalg.qr(X, mode="reduced")
    d = np.abs(np.diag(Rm))
    if d.max() == 0 or d.min() <= rank_tol * d.max():
        raise SingularDesignError("design matrix is rank deficient")
    coef = np.linalg.solve(Rm, Q.T @ y)
    resid = y - X @ coef
    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(np.sum(resid**2))
    r2 = 1.0 - ssr / sst if sst > 0 else float("nan")
    return OlsResult(coef, r2, resid)


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class FF3Block:
    alpha_pct: float
    beta: float
    smb_loading: float
    hml_loading: float
    r_squared: float


@dataclass(frozen=True)
class BacktestReport:
    name: str
    ann_return: float
    sharpe: float
    info_ratio: float
    terminal_value: float
    ann_turnover: float
    ann_alpha_pct: float
    beta: float
    r_squared: float
    mean_short: float
    ff3: Optional[FF3Block] = None
    undefined: tuple = ()  # names of statistics reported as NaN
    depleted_at: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestReport":
        d = dict(d)
        ff3 = d.pop("ff3", None)
        d["undefined"] = tuple(d.get("undefined", ()))
        return cls(ff3=FF3Block(**ff3) if ff3 is not None else None, **d)


def _ratio(x: np.ndarray) -> float:
    if x.size < 2:
        return float("nan")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        return float("nan")
    return float(np.sqrt(TRADING_DAYS) * np.mean(x) / sd)


def _align(run: BacktestRun, market_run: BacktestRun) -> int:
    if run.n_periods != market_run.n_periods:
        raise BacktestError("strategy and market runs have different lengths")
    if run.n_periods < 2:
        raise BacktestError("at least two periods are required")
    return run.n_periods


def performance_stats(
    run: BacktestRun,
    market_run: BacktestRun,
    rf=None,
    factors: Optional[dict] = None,
    ff3_market: str = "factor",
) -> BacktestReport:
    """Annualized statistics of ``run`` against ``market_run``.

    ``rf`` holds daily risk-free returns for ``t = 1..T`` (zeros if omitted).
    Sharpe and information ratios with zero dispersion are NaN and listed in
    ``undefined``. ``factors`` (``smb``, ``hml``, ``rf`` and optionally
    ``mkt_rf``) adds the three-factor block.
    """
    T = _align(run, market_run)
    rp = run.period_returns
    rm = market_run.period_returns
    rf = np.zeros(T) if rf is None else np.asarray(rf, dtype=float).reshape(-1)
    if rf.size != T:
        raise BacktestError("risk-free series is not aligned with returns")
    undefined = []
    sharpe = _ratio(rp)
    if np.isnan(sharpe):
        undefined.append("sharpe")
    ir = _ratio(rp - rm)
    if np.isnan(ir):
        undefined.append("info_ratio")
    try:
        fit = ols_regress(rp - rf, np.column_stack([np.ones(T), rm - rf]))
        alpha, beta = fit.coefficients
        r2 = fit.r_squared
    except SingularDesignError:
        alpha = beta = r2 = float("nan")
        undefined.extend(["ann_alpha_pct", "beta", "r_squared"])
    ff3 = ff3_stats(run, market_run, factors, market=ff3_market) if factors is not None else None
    return BacktestReport(
        name=run.name,
        ann_return=float(run.wealth[-1] ** (TRADING_DAYS / T) - 1.0) if run.wealth[-1] > 0 else -1.0,
        sharpe=sharpe,
        info_ratio=ir,
        terminal_value=float(run.wealth[-1]),
        ann_turnover=float(TRADING_DAYS / T * np.sum(np.abs(run.weights - run.readjusted))),
        ann_alpha_pct=float(TRADING_DAYS * alpha * 100),
        beta=float(beta),
        r_squared=float(r2),
        mean_short=float(np.sum(run.short_leg) / T),
        ff3=ff3,
        undefined=tuple(undefined),
        depleted_at=run.depleted_at,
    )


def ff3_stats(run: BacktestRun, market_run: BacktestRun | None, factors: dict, market: str = "factor") -> FF3Block:
    """Three-factor regression of excess strategy returns.

    The market factor is the factor file's ``mkt_rf`` (``market="factor"``)
    or the market run's excess return (``market="run"``).
    """
    rp = run.period_returns
    T = rp.size
    f = {k: np.asarray(v, dtype=float).reshape(-1) for k, v in factors.items()}
    for key in ("smb", "hml", "rf"):
        if key not in f:
            raise BacktestError(f"factor series {key!r} missing")
        if f[key].size != T:
            raise BacktestError(f"factor series {key!r} is not aligned with returns")
    if market == "factor":
        if "mkt_rf" not in f or f["mkt_rf"].size != T:
            raise BacktestError("factor series 'mkt_rf' missing or misaligned")
        mkt = f["mkt_rf"]
    elif market == "run":
        if market_run is None:
            raise BacktestError("market='run' needs the market run")
        _align(run, market_run)
        mkt = market_run.period_returns - f["rf"]
    else:
        raise BacktestError(f"unknown market source {market!r}")
    fit = ols_regress(rp - f["rf"], np.column_stack([np.ones(T), mkt, f["smb"], f["hml"]]))
    a, b, s, h = fit.coefficients
    return FF3Block(float(TRADING_DAYS * a * 100), float(b), float(s), float(h), float(fit.r_squared))
