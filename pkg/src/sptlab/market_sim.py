"""Discrete-grid simulation of continuous-path equity markets.

Two model families are supported: the volatility-stabilized model
``d log X^i = alpha/(2 mu^i) dt + mu^{-1/2} dB^i`` and constant-coefficient
log-diffusions ``d log X = gamma dt + xi dB``. Prices are always advanced in
log space so positivity holds by construction.

Layout conventions: a path stores prices as an ``(n, N+1)`` array; per-time
matrices (covariances, Hessians) are stacked along the leading axis.
"""
from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .rng import MARKET_STREAM, path_rng

#: lower clamp applied to market weights inside VSM coefficients
VSM_WEIGHT_FLOOR = 1e-8


class MarketError(ValueError):
    """Invalid market specification or simulation input."""


class ValueDepletedError(MarketError):
    """A portfolio value became non-positive."""

    def __init__(self, step: int, value: float):
        super().__init__(f"portfolio value reached {value:.6g} at step {step}")
        self.step = step
        self.value = value


@dataclass(frozen=True)
class VolatilityStabilized:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise MarketError(f"VSM alpha must be nonnegative, got {self.alpha}")


@dataclass(frozen=True, eq=False)
class ConstantLogDiffusion:
    gamma: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        xi = np.asarray(self.xi, dtype=float)
        if xi.shape != (gamma.size, gamma.size):
            raise MarketError(f"xi must be {gamma.size}x{gamma.size}, got {xi.shape}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "xi", xi)

    @property
    def sigma(self) -> np.ndarray:
        return self.xi @ self.xi.T


Model = Union[VolatilityStabilized, ConstantLogDiffusion]


@dataclass(frozen=True, eq=False)
class MarketSpec:
    model: Model
    initial_prices: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.initial_prices, dtype=float).reshape(-1)
        if x0.size < 2:
            raise MarketError("a market needs at least two stocks")
        if not np.all(x0 > 0) or not np.all(np.isfinite(x0)):
            raise MarketError("initial prices must be finite and strictly positive")
        if isinstance(self.model, ConstantLogDiffusion) and self.model.gamma.size != x0.size:
            raise MarketError("model dimension does not match initial prices")
        object.__setattr__(self, "initial_prices", x0)

    @property
    def n(self) -> int:
        return self.initial_prices.size

    @classmethod
    def vsm(cls, n: int, alpha: float = 1.0, initial_prices=None) -> "MarketSpec":
        x0 = np.ones(n) if initial_prices is None else initial_prices
        return cls(VolatilityStabilized(alpha), x0)

    @classmethod
    def log_diffusion(cls, gamma, xi, initial_prices=None) -> "MarketSpec":
        gamma = np.asarray(gamma, dtype=float).reshape(-1)
        x0 = np.ones(gamma.size) if initial_prices is None else initial_prices
        return cls(ConstantLogDiffusion(gamma, np.asarray(xi, dtype=float)), x0)


@dataclass(frozen=True)
class SimGrid:
    horizon_T: float
    dt: float
    master_seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon_T > 0):
            raise MarketError("horizon and dt must be positive")
        if self.dt >= self.horizon_T:
            raise MarketError(f"dt={self.dt} must be smaller than the horizon {self.horizon_T}")
        if abs(self.n_steps * self.dt - self.horizon_T) > 1e-12 * max(1.0, self.horizon_T):
            raise MarketError(
                f"horizon {self.horizon_T} is not an integer multiple of dt={self.dt}; "
                "use SimGrid.with_steps"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @classmethod
    def with_steps(cls, horizon_T: float, n_steps: int, master_seed: int = 0) -> "SimGrid":
        return cls(float(horizon_T), float(horizon_T) / int(n_steps), master_seed)


@dataclass(frozen=True, eq=False)
class MarketPath:
    """Prices of ``n`` stocks on a time grid, shape ``(n, N+1)``."""

    times: np.ndarray
    prices: np.ndarray
    noise: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape[1] != times.size:
            raise MarketError(f"prices shape {prices.shape} does not match {times.size} grid points")
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            raise MarketError("times must start at 0 and increase strictly")
        if not np.all(prices > 0):
            raise MarketError("prices must be strictly positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)

    @property
    def n(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def log_prices(self) -> np.ndarray:
        return np.log(self.prices)

    @property
    def total(self) -> np.ndarray:
        return self.prices.sum(axis=0)

    def to_csv(self, dest) -> None:
        header = "t," + ",".join(f"X{i + 1}" for i in range(self.n))
        data = np.column_stack([self.times, self.prices.T])
        np.savetxt(dest, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, src) -> "MarketPath":
        data = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:].T.copy())

    def save(self, dest) -> None:
        """Binary round-trip (``.npz``) with the seed metadata embedded."""
        arrays = {"times": self.times, "prices": self.prices}
        if self.noise is not None:
            arrays["noise"] = self.noise
        arrays["meta"] = np.frombuffer(json.dumps(self.meta, sort_keys=True).encode(), dtype=np.uint8)
        np.savez_compressed(dest, **arrays)

    @classmethod
    def load(cls, src) -> "MarketPath":
        with np.load(src) as f:
            meta = json.loads(bytes(f["meta"]).decode()) if "meta" in f else {}
            noise = f["noise"] if "noise" in f else None
            return cls(f["times"], f["prices"], noise, meta)


@dataclass(frozen=True, eq=False)
class WeightsPath:
    weights: np.ndarray  # (n, N+1)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2:
            raise MarketError("weights must be an (n, N+1) array")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > 1e-12:
            raise MarketError("weight columns must sum to 1")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class CovariancePath:
    sigma: np.ndarray  # (N+1, n, n)
    tau: np.ndarray | None = None
    filled: np.ndarray | None = None  # False where the trailing window was not yet full


@dataclass(frozen=True, eq=False)
class ValuePath:
    values: np.ndarray

    @property
    def initial_value(self) -> float:
        return float(self.values[0])


# --------------------------------------------------------------------------
# simulation


def _simulate_chunk(spec: MarketSpec, grid: SimGrid, indices: Sequence[int], keep_noise: bool):
    n, N, dt = spec.n, grid.n_steps, grid.dt
    sqdt = math.sqrt(dt)
    noise = np.stack(
        [path_rng(grid.master_seed, i, MARKET_STREAM).standard_normal((N, n)) * sqdt for i in indices]
    )  # (m, N, n)
    m = len(indices)
    # log growth since t = 0; prices are x0 * exp(growth) so zero growth is exact
    logx = np.empty((m, N + 1, n))
    logx[:, 0, :] = 0.0
    clamps = np.zeros(m, dtype=np.int64)
    model = spec.model
    if isinstance(model, ConstantLogDiffusion):
        # one product per path keeps results independent of the chunking
        steps = np.stack([model.gamma * dt + noise[j] @ model.xi.T for j in range(m)])
        np.cumsum(steps, axis=1, out=logx[:, 1:, :])
    else:
        half_alpha = 0.5 * model.alpha
        log_x0 = np.log(spec.initial_prices)
        cur = np.broadcast_to(log_x0, (m, n)).copy()
        for t in range(N):
            shifted = cur - cur.max(axis=1, keepdims=True)
            x = np.exp(shifted)
            mu = x / x.sum(axis=1, keepdims=True)
            low = mu < VSM_WEIGHT_FLOOR
            if low.any():
                clamps += low.sum(axis=1)
                mu = np.maximum(mu, VSM_WEIGHT_FLOOR)
            cur = cur + half_alpha / mu * dt + noise[:, t, :] / np.sqrt(mu)
            logx[:, t + 1, :] = cur - log_x0
    paths = []
    times = grid.times
    for j, i in enumerate(indices):
        meta = {"master_seed": int(grid.master_seed), "path_index": int(i), "clamp_count": int(clamps[j])}
        paths.append(
            MarketPath(
                times,
                spec.initial_prices[:, None] * np.exp(logx[j].T),
                noise[j].T.copy() if keep_noise else None,
                meta,
            )
        )
    return paths


def simulate_market(
    spec: MarketSpec,
    grid: SimGrid,
    n_paths: int = 1,
    *,
    keep_noise: bool = False,
    workers: int = 1,
    first_index: int = 0,
) -> list[MarketPath]:
    """Simulate ``n_paths`` independent price paths.

    Path ``i`` uses the stream ``(grid.master_seed, i)``; results do not depend
    on ``workers``. VSM weights are clamped at ``VSM_WEIGHT_FLOOR`` inside the
    coefficients and the number of clamp events is stored in
    ``path.meta["clamp_count"]``.
    """
    if n_paths < 1:
        raise MarketError("n_paths must be at least 1")
    indices = list(range(first_index, first_index + n_paths))
    # bounded chunk size keeps the (m, N, n) noise block small
    per_chunk = max(1, min(64, -(-n_paths // max(1, workers))))
    chunks = [indices[s : s + per_chunk] for s in range(0, n_paths, per_chunk)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _simulate_chunk(spec, grid, c, keep_noise), chunks))
    else:
        parts = [_simulate_chunk(spec, grid, c, keep_noise) for c in chunks]
    return [p for part in parts for p in part]


# --------------------------------------------------------------------------
# market quantities


def market_weights(prices: np.ndarray) -> np.ndarray:
    prices = np.asarray(prices, dtype=float)
    return prices / prices.sum(axis=0, keepdims=True)


def market_weights_path(path: MarketPath) -> WeightsPath:
    return WeightsPath(market_weights(path.prices))


def estimate_covariance(path: MarketPath, window: int = 60) -> CovariancePath:
    """Trailing realized covariation rate of log prices.

    ``sigma[t]`` uses the increments ending at grid point ``t``; until
    ``window`` increments exist the window expands and ``filled[t]`` is False.
    ``sigma[0]`` has no history and is zero.
    """
    if window < 2:
        raise MarketError("window must be at least 2")
    d = np.diff(path.log_prices, axis=1).T  # (N, n)
    dts = path.dt
    outer = d[:, :, None] * d[:, None, :]
    cum = np.zeros((d.shape[0] + 1,) + outer.shape[1:])
    np.cumsum(outer, axis=0, out=cum[1:])
    cum_t = np.concatenate([[0.0], np.cumsum(dts)])
    idx = np.arange(d.shape[0] + 1)
    start = np.maximum(idx - window, 0)
    span = cum_t[idx] - cum_t[start]
    sigma = np.zeros_like(cum)
    ok = span > 0
    sigma[ok] = (cum[idx[ok]] - cum[start[ok]]) / span[ok, None, None]
    return CovariancePath(sigma=sigma, filled=idx >= window)


def exact_covariance(path: MarketPath, spec: MarketSpec) -> np.ndarray:
    """Model covariance ``sigma_t`` at every grid point, shape ``(N+1, n, n)``."""
    model = spec.model
    if isinstance(model, ConstantLogDiffusion):
        return np.broadcast_to(model.sigma, (path.times.size, spec.n, spec.n)).copy()
    mu = np.maximum(market_weights(path.prices), VSM_WEIGHT_FLOOR).T
    out = np.zeros((path.times.size, spec.n, spec.n))
    idx = np.arange(spec.n)
    out[:, idx, idx] = 1.0 / mu
    return out


def relative_covariance(sigma: np.ndarray, ref_weights: np.ndarray) -> np.ndarray:
    """``tau^{ij} = sigma^{ij} - sigma^{i pi} - sigma^{j pi} + sigma^{pi pi}``.

    Broadcasts over leading axes: ``sigma`` is ``(..., n, n)`` and
    ``ref_weights`` is ``(..., n)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    pi = np.asarray(ref_weights, dtype=float)
    if sigma.shape[-1] != pi.shape[-1] or sigma.shape[-2] != pi.shape[-1]:
        raise MarketError(f"dimension mismatch: sigma {sigma.shape}, weights {pi.shape}")
    s_ip = np.einsum("...ij,...j->...i", sigma, pi)
    s_pp = np.einsum("...i,...i->...", s_ip, pi)
    return sigma - s_ip[..., :, None] - s_ip[..., None, :] + s_pp[..., None, None]


def _check_weights(pi: np.ndarray) -> None:
    if np.max(np.abs(np.sum(pi, axis=-1) - 1.0)) > 1e-10:
        raise MarketError("portfolio weights must sum to 1")


def excess_growth_rate_sigma(sigma, pi) -> np.ndarray:
    """``1/2 (sum_i pi^i sigma^{ii} - pi . sigma pi)``."""
    sigma = np.asarray(sigma, dtype=float)
    pi = np.asarray(pi, dtype=float)
    _check_weights(pi)
    diag = np.einsum("...ii->...i", sigma)
    quad = np.einsum("...i,...ij,...j->...", pi, sigma, pi)
    return 0.5 * (np.sum(pi * diag, axis=-1) - quad)


def excess_growth_rate_tau(sigma, pi, zeta) -> np.ndarray:
    """Excess growth rate of ``pi`` through the relative covariance w.r.t. ``zeta``."""
    pi = np.asarray(pi, dtype=float)
    _check_weights(pi)
    tau = relative_covariance(sigma, zeta)
    diag = np.einsum("...ii->...i", tau)
    quad = np.einsum("...i,...ij,...j->...", pi, tau, pi)
    return 0.5 * (np.sum(pi * diag, axis=-1) - quad)


def excess_growth_rate_compact(sigma, pi) -> np.ndarray:
    """``1/2 sum_i pi^i tau^{pi,ii}``."""
    pi = np.asarray(pi, dtype=float)
    _check_weights(pi)
    tau = relative_covariance(sigma, pi)
    return 0.5 * np.sum(pi * np.einsum("...ii->...i", tau), axis=-1)


def excess_growth_rate(sigma, pi, via_tau=None, atol: float = 1e-10):
    """Excess growth rate of ``pi``.

    With ``via_tau`` (a reference portfolio) the value is computed through the
    relative covariance as well, and a :class:`MarketError` is raised when the
    routes disagree by more than ``atol * (1 + |gamma|)``.
    """
    direct = excess_growth_rate_sigma(sigma, pi)
    if via_tau is None:
        return direct
    other = excess_growth_rate_tau(sigma, pi, via_tau)
    compact = excess_growth_rate_compact(sigma, pi)
    tol = atol * (1.0 + np.abs(direct))
    if np.any(np.abs(other - direct) > tol) or np.any(np.abs(compact - direct) > tol):
        raise MarketError("excess growth rate routes disagree; is sigma symmetric?")
    return other


def realized_excess_growth(path: MarketPath, weights: np.ndarray | None = None) -> np.ndarray:
    """Cumulative realized excess growth ``int_0^t gamma^{pi,*} ds`` on the grid.

    Per step this is ``log(Z_{t+1}/Z_t) - sum_i pi_t^i (log X^i_{t+1} - log X^i_t)``
    for the discretely rebalanced portfolio; ``weights`` defaults to the market.
    """
    w = market_weights(path.prices) if weights is None else np.asarray(weights, dtype=float)
    ratio = path.prices[:, 1:] / path.prices[:, :-1]
    step = np.log(np.sum(w[:, :-1] * ratio, axis=0)) - np.sum(w[:, :-1] * np.log(ratio), axis=0)
    return np.concatenate([[0.0], np.cumsum(step)])


def portfolio_values(prices: np.ndarray, weights: np.ndarray, Z0: float = 1.0) -> np.ndarray:
    """Self-financing value ``Z_{t+1} = Z_t (1 + sum_i pi_t^i (X^i_{t+1}/X^i_t - 1))``."""
    prices = np.asarray(prices, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.shape[1] < prices.shape[1] - 1:
        raise MarketError("weights must cover every rebalancing date")
    growth = np.sum(weights[:, : prices.shape[1] - 1] * (prices[:, 1:] / prices[:, :-1]), axis=0)
    bad = np.flatnonzero(growth <= 0)
    if bad.size:
        raise ValueDepletedError(int(bad[0]) + 1, float(growth[bad[0]]))
    return Z0 * np.concatenate([[1.0], np.cumprod(growth)])


def portfolio_value_path(path: MarketPath, weights, Z0: float = 1.0) -> ValuePath:
    if Z0 <= 0:
        raise MarketError("initial value must be positive")
    w = weights.weights if isinstance(weights, WeightsPath) else np.asarray(weights, dtype=float)
    if w.shape[0] != path.n:
        raise MarketError("weights and prices are not aligned")
    _check_weights(w.T)
    return ValuePath(portfolio_values(path.prices, w, Z0))


def paths_to_csv_bytes(path: MarketPath) -> bytes:
    buf = io.StringIO()
    path.to_csv(buf)
    return buf.getvalue().encode()


def save_paths(paths: Sequence[MarketPath], out_dir, prefix: str = "path") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for p in paths:
        f = out / f"{prefix}_{p.meta.get('path_index', len(files)):05d}.csv"
        f.write_bytes(paths_to_csv_bytes(p))
        files.append(f)
    return files
