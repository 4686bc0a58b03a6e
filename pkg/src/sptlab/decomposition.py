"""Term-by-term evaluation of the generalized master equation and the
relative-arbitrage bounds built on it.

On a grid the relative log-value ``log(Z^pi/Z^mu)`` is split into the change
of ``log S``, the characteristics integral, and three drift terms (market
Hessian, characteristics quadratic variation, market/characteristics cross
variation). Integrals are left-point sums. By default every quadratic
covariation is taken from realized increments, which makes the per-step
residual third order in the increments; passing ``sigma`` switches the market
term to ``mu^i mu^j tau^{ij} dt`` with the given covariance.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .characteristics import CharacteristicsPath
from .generating_functions import (
    DECREASING,
    INCREASING,
    NONE,
    GeneratingFunction,
    weights_path,
)
from .market_sim import MarketPath, market_weights, portfolio_values, relative_covariance


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MasterDecomposition:
    """Cumulative term arrays, all of length ``N+1`` and zero at ``t=0``."""

    times: np.ndarray
    lhs: np.ndarray
    log_s_change: np.ndarray
    stoch_integral: np.ndarray
    drift_market: np.ndarray
    drift_qv: np.ndarray
    drift_cross: np.ndarray
    log_values: np.ndarray  # log Z^pi
    log_market: np.ndarray  # log Z^mu
    finite_variation: bool = True
    p_monotone: tuple = ()
    s_flags: dict = field(default_factory=dict)

    @property
    def drift_theta(self) -> np.ndarray:
        return self.drift_market + self.drift_qv + self.drift_cross

    @property
    def extended_drift(self) -> np.ndarray:
        if not self.finite_variation:
            raise DecompositionError("the extended drift needs a finite-variation characteristics path")
        return self.drift_theta - self.stoch_integral

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - (self.log_s_change - self.stoch_integral + self.drift_theta)

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def to_csv(self, dest=None) -> str | None:
        cols = [
            self.times,
            self.lhs,
            self.log_s_change,
            self.stoch_integral,
            self.drift_market,
            self.drift_qv,
            self.drift_cross,
            self.residual,
        ]
        header = "t,lhs,logS,stoch_int,drift_market,drift_qv,drift_cross,residual"
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")
        if dest is None:
            return buf.getvalue()
        if hasattr(dest, "write"):
            dest.write(buf.getvalue())
        else:
            with open(dest, "w", newline="") as f:
                f.write(buf.getvalue())
        return None


def _cum(step: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(step)])


def decompose(
    path: MarketPath,
    S: GeneratingFunction,
    P: CharacteristicsPath | None = None,
    *,
    sigma: np.ndarray | None = None,
    pi: np.ndarray | None = None,
) -> MasterDecomposition:
    """Evaluate every master-equation term along one path.

    ``sigma`` (``(N+1, n, n)``), when given, replaces realized market
    covariations by ``mu mu tau dt``; the characteristics terms then vanish
    for finite-variation ``P`` and stay realized otherwise. ``pi`` defaults to
    the weights generated by ``S``.
    """
    mu = market_weights(path.prices)
    n, N1 = mu.shape
    k = S.k_for(n)
    if k:
        if P is None:
            raise DecompositionError(f"{S.name} needs a characteristics path with {k} coordinates")
        P.check_aligned(path)
        if P.k != k:
            raise DecompositionError(f"{S.name} expects k={k} characteristics, got {P.k}")
        pv = P.values
        if not np.all(S.in_domain(pv.T)):
            raise DecompositionError(f"characteristics leave the domain of {S.name}")
        fv = P.finite_variation
        p_mono = P.monotone
    else:
        pv = np.zeros((0, N1))
        fv = True
        p_mono = ()
    if pi is None:
        pi = weights_path(S, mu, pv if k else None)
    else:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != mu.shape:
            raise DecompositionError("weights and market path are not aligned")

    x, y = mu.T, pv.T
    val = S.value(x, y)
    grad = S.gradient(x, y)
    hess = S.hessian(x, y)
    glog = grad / val[:, None]
    hlog = hess / val[:, None, None] - glog[:, :, None] * glog[:, None, :]

    log_z = np.log(portfolio_values(path.prices, pi))
    log_m = np.log(path.total / path.total[0])
    lhs = log_z - log_m

    log_s = np.log(val)
    dmu = np.diff(mu, axis=1).T  # (N, n)
    dP = np.diff(pv, axis=1).T  # (N, k)

    stoch = _cum(np.einsum("ti,ti->t", glog[:-1, n:], dP))

    h_xx = hess[:-1, :n, :n] / val[:-1, None, None]
    if sigma is None:
        market_step = -0.5 * np.einsum("tij,ti,tj->t", h_xx, dmu, dmu)
    else:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (N1, n, n):
            raise DecompositionError(f"sigma must have shape {(N1, n, n)}, got {sigma.shape}")
        tau = relative_covariance(sigma[:-1], mu.T[:-1])
        m = mu.T[:-1]
        market_step = -0.5 * np.einsum("tij,ti,tj,tij->t", h_xx, m, m, tau) * path.dt
    realized_p = sigma is None or not fv
    if k and realized_p:
        qv_step = -0.5 * np.einsum("tij,ti,tj->t", hlog[:-1, n:, n:], dP, dP)
        cross_step = -np.einsum("tij,ti,tj->t", hlog[:-1, :n, n:], dmu, dP)
    else:
        qv_step = np.zeros(N1 - 1)
        cross_step = np.zeros(N1 - 1)

    return MasterDecomposition(
        times=path.times,
        lhs=lhs,
        log_s_change=log_s - log_s[0],
        stoch_integral=stoch,
        drift_market=_cum(market_step),
        drift_qv=_cum(qv_step),
        drift_cross=_cum(cross_step),
        log_values=log_z,
        log_market=log_m,
        finite_variation=fv,
        p_monotone=tuple(p_mono),
        s_flags={**S.flags(), "name": S.name},
    )


# --------------------------------------------------------------------------
# monotonicity


@dataclass(frozen=True)
class MonotonicityReport:
    applicable: bool
    passed: Optional[bool]
    reason: str = ""
    n_violations: int = 0
    violation_steps: tuple = ()
    min_increment: float = float("nan")


def _opposite(a: str, b: str) -> bool:
    return {a, b} == {INCREASING, DECREASING}


def check_drift_monotonicity(
    dec: MasterDecomposition,
    s_flags: dict | None = None,
    p_monotone: Sequence[str] | None = None,
    rtol: float = 1e-10,
) -> MonotonicityReport:
    """Check that the extended drift never decreases on the grid.

    Applies to finite-variation, monotone characteristics and a generating
    function that is concave in the market weights with the opposite
    monotonicity in the characteristics. For multiplicative functions the
    drift of the market-weight factor alone is checked instead, which needs
    concavity only. Inapplicable cases are reported, never passed.
    """
    flags = dec.s_flags if s_flags is None else s_flags
    mono = tuple(dec.p_monotone if p_monotone is None else p_monotone)

    if not flags.get("concave_in_x", False):
        return MonotonicityReport(False, None, "generating function is not concave in the market weights")
    if flags.get("multiplicative", False):
        series = dec.drift_market
        reason = "multiplicative: checked the market-weight factor drift"
    else:
        if not dec.finite_variation:
            return MonotonicityReport(False, None, "characteristics path is not of finite variation")
        if not mono:
            series = dec.extended_drift
            reason = "no characteristics: classical drift"
        else:
            if len(set(mono)) != 1 or mono[0] == NONE:
                return MonotonicityReport(False, None, "characteristics path is not monotone")
            if not _opposite(mono[0], flags.get("monotone_in_y", NONE)):
                return MonotonicityReport(
                    False, None, "generating function lacks the opposite monotonicity in the characteristics"
                )
            series = dec.extended_drift
            reason = ""
    inc = np.diff(series)
    tol = rtol * (1.0 + float(np.max(np.abs(series))))
    bad = np.flatnonzero(inc < -tol)
    return MonotonicityReport(
        True,
        bad.size == 0,
        reason,
        int(bad.size),
        tuple(int(b) + 1 for b in bad[:20]),
        float(inc.min()) if inc.size else 0.0,
    )


# --------------------------------------------------------------------------
# Upsilon and bound times


class Upsilon:
    """Strictly increasing ``[0, inf) -> [0, inf)`` with ``Upsilon(0) = 0``.

    Build with :meth:`linear` (closed-form inverse), :meth:`table`
    (piecewise linear) or :meth:`plus_tanh` (adds ``w * tanh``; inverted by
    root finding).
    """

    def __init__(self, forward: Callable, inverse: Callable, upper: float = math.inf, label: str = ""):
        self._forward = forward
        self._inverse = inverse
        self.upper = upper
        self.label = label

    def __call__(self, T):
        T = np.asarray(T, dtype=float)
        if np.any(T < 0) or np.any(T > self.upper):
            raise DecompositionError(f"Upsilon evaluated outside [0, {self.upper}]")
        out = self._forward(T)
        return float(out) if out.ndim == 0 else out

    def inverse(self, v: float) -> float:
        if v < 0:
            raise DecompositionError("Upsilon inverse needs a nonnegative level")
        return float(self._inverse(float(v)))

    @classmethod
    def linear(cls, rate: float) -> "Upsilon":
        if not rate > 0:
            raise DecompositionError("Upsilon rate must be positive")
        return cls(lambda T: rate * T, lambda v: v / rate, label=f"linear({rate})")

    @classmethod
    def vsm(cls, n: int) -> "Upsilon":
        """Market excess growth of the volatility-stabilized model, ``(n-1)/2``."""
        return cls.linear((n - 1) / 2.0)

    @classmethod
    def table(cls, times, values) -> "Upsilon":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times[0] != 0 or values[0] != 0:
            raise DecompositionError("Upsilon table must start at (0, 0)")
        if np.any(np.diff(times) <= 0) or np.any(np.diff(values) <= 0):
            raise DecompositionError("Upsilon table must be strictly increasing")

        def inv(v):
            if v > values[-1]:
                raise DecompositionError(f"Upsilon table covers levels up to {values[-1]}, requested {v}")
            return np.interp(v, values, times)

        return cls(lambda T: np.interp(T, times, values), inv, upper=float(times[-1]), label="table")

    def plus_tanh(self, weight: float) -> "Upsilon":
        if not weight >= 0:
            raise DecompositionError("tanh weight must be nonnegative")
        base = self

        def fwd(T):
            return base._forward(T) + weight * np.tanh(T)

        def inv(v):
            if v == 0:
                return 0.0
            hi = min(base.inverse(v), self.upper)
            if float(fwd(np.asarray(hi))) < v:
                raise DecompositionError("Upsilon table does not cover the requested level")
            return brentq(lambda T: float(fwd(np.asarray(T))) - v, 0.0, hi, xtol=1e-14, rtol=1e-15)

        return Upsilon(fwd, inv, self.upper, f"{self.label}+{weight}*tanh")


BOUND_KINDS = (
    "entropy_Tstar",
    "entropy_Tstar_limit",
    "reduced_Ttilde",
    "boost_That",
    "roa_Tstar",
    "beta_T",
)


@dataclass(frozen=True)
class ArbitrageBoundSpec:
    """Upsilon plus the constants used by the bound formulas.

    ``entropy_floor`` is the lower bound on market entropy used by the reduced
    entropy function, ``gamma_floor`` the lower bound on the market excess
    growth rate used by the beta bound, and ``roa_epsilon`` the slope in the
    ROA drift-bound assumption.
    """

    upsilon: Upsilon
    n: int
    c: float = 1.0
    alpha: float = 0.1
    entropy_floor: float = 0.0
    A: float = 0.0
    p: float = 0.5
    gamma_floor: float = 0.0
    varsigma: float = 1.0
    eta: float = 0.0
    delta: float = 0.0
    roa_epsilon: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise DecompositionError("n must be at least 2")


def _entropy_level(spec: ArbitrageBoundSpec, S_mu0: float) -> float:
    if not spec.c > 0:
        raise DecompositionError("c must be positive")
    return (spec.c + math.log(spec.n)) * math.log1p(S_mu0 / spec.c)


def arbitrage_time(kind: str, spec: ArbitrageBoundSpec, S_mu0: float | None = None) -> float:
    """Horizon beyond which the named relative-arbitrage claim holds.

    ``S_mu0`` is the market entropy ``-sum mu_0 log mu_0`` for the entropy
    kinds and is ignored otherwise.
    """
    n, c = spec.n, spec.c
    log_n = math.log(n)
    if kind in ("entropy_Tstar", "entropy_Tstar_limit", "reduced_Ttilde") and S_mu0 is None:
        raise DecompositionError(f"{kind} needs the initial market entropy")
    if kind == "entropy_Tstar":
        return spec.upsilon.inverse(_entropy_level(spec, S_mu0))
    if kind == "entropy_Tstar_limit":
        return spec.upsilon.inverse(S_mu0)
    if kind == "reduced_Ttilde":
        if not spec.entropy_floor > 0:
            raise DecompositionError("reduced_Ttilde needs a positive entropy_floor")
        return spec.upsilon.plus_tanh(spec.entropy_floor).inverse(_entropy_level(spec, S_mu0))
    if kind == "boost_That":
        a = spec.alpha
        if not (0 < a < 0.5 and c > 0):
            raise DecompositionError("boost_That needs 0 < alpha < 1/2 and c > 0")
        level = (c * (1 - a) + log_n) * (c + log_n) / (a * c) * math.log(1 / (1 - 2 * a))
        return spec.upsilon.plus_tanh(c + log_n).inverse(level)
    if kind == "roa_Tstar":
        es = math.exp(-spec.varsigma)
        den = spec.delta * spec.eta * es - 2 * spec.roa_epsilon
        if not den > 0:
            raise DecompositionError("roa_Tstar needs delta * eta * exp(-varsigma) > 2 * epsilon")
        return 2 * (1 + spec.A - es) / den
    if kind == "beta_T":
        A, p = spec.A, spec.p
        if not (A >= 0 and c > 0 and 0 < p < 1 and spec.gamma_floor > 0):
            raise DecompositionError("beta_T needs A >= 0, c > 0, 0 < p < 1 and a positive gamma_floor")
        top = A + (1 + c) * n ** (1 - p)
        return top / (p * (1 - p) * c * spec.gamma_floor) * math.log(top / (A + c))
    raise DecompositionError(f"unknown bound kind {kind!r}; expected one of {BOUND_KINDS}")


# --------------------------------------------------------------------------
# pathwise bounds


PATHWISE_KINDS = ("entropy", "reduced_entropy", "boosted_entropy", "beta", "roa", "overlay")

_BOUND_TIME = {
    "entropy": "entropy_Tstar",
    "reduced_entropy": "reduced_Ttilde",
    "boosted_entropy": "boost_That",
    "beta": "beta_T",
    "roa": "roa_Tstar",
    "overlay": "roa_Tstar",
}


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Relative log-values ``log(Z / Z^benchmark)`` for ``m`` paths, ``(m, N+1)``.

    ``S_mu0`` is the initial market entropy (entropy kinds); ``excluded``
    counts paths dropped before the check because model assumptions failed.
    """

    times: np.ndarray
    log_rel: np.ndarray
    S_mu0: float | None = None
    excluded: int = 0

    def __post_init__(self):
        lr = np.atleast_2d(np.asarray(self.log_rel, dtype=float))
        if lr.shape[1] != np.asarray(self.times).size:
            raise DecompositionError("log_rel and times are not aligned")
        object.__setattr__(self, "log_rel", lr)
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))


@dataclass(frozen=True)
class BoundReport:
    kind: str
    n_paths: int
    n_excluded: int
    fraction_holding: float
    worst_margin: float
    bound_time: float
    horizon: float
    terminal_fraction: float
    passed: bool

    @property
    def exclusion_rate(self) -> float:
        total = self.n_paths + self.n_excluded
        return self.n_excluded / total if total else 0.0


def bound_curve(kind: str, times: np.ndarray, spec: ArbitrageBoundSpec, S_mu0: float | None = None) -> np.ndarray:
    """The bound on ``log(Z/Z^benchmark)`` as a function of ``t``.

    Lower bound for every kind except ``roa`` (upper bound) and ``overlay``
    (zero, checked only at the horizon).
    """
    t = np.asarray(times, dtype=float)
    n, c, a = spec.n, spec.c, spec.alpha
    log_n = math.log(n)
    if kind in ("entropy", "reduced_entropy"):
        base = math.log(c / (c + S_mu0)) + spec.upsilon(t) / (c + log_n)
        if kind == "reduced_entropy":
            base = base + spec.entropy_floor * np.tanh(t) / (c + log_n)
        return base
    if kind == "boosted_entropy":
        d1 = c * (1 - a) + log_n
        return (
            math.log(1 - 2 * a)
            + a * c * spec.upsilon(t) / (d1 * (c + log_n))
            + a * c * np.tanh(t) / d1
        )
    if kind == "beta":
        top = spec.A + (1 + c) * n ** (1 - spec.p)
        return math.log((spec.A + c) / top) + spec.p * (1 - spec.p) * c * spec.gamma_floor * t / top
    if kind == "roa":
        es = math.exp(-spec.varsigma)
        return 1 - es + spec.A + spec.roa_epsilon * t - spec.delta * es * spec.eta * t / 2
    if kind == "overlay":
        return np.zeros_like(t)
    raise DecompositionError(f"unknown pathwise kind {kind!r}; expected one of {PATHWISE_KINDS}")


def check_pathwise_bound(kind: str, bundle: PathBundle, spec: ArbitrageBoundSpec) -> BoundReport:
    """Evaluate the bound at every ``(path, t)`` and the claim at the horizon.

    Margins are positive when the inequality holds. Strict inequalities are
    checked as ``>=`` and the worst margin is reported. For ``overlay`` the
    pathwise condition is solvency (finite log-values). At horizons beyond the
    bound time every path must beat (``roa``: trail) its benchmark.
    """
    t = bundle.times
    lr = bundle.log_rel
    m = lr.shape[0]
    if kind == "overlay":
        margin = np.where(np.isfinite(lr), 0.0, -np.inf)
    else:
        curve = bound_curve(kind, t, spec, bundle.S_mu0)
        margin = (curve - lr) if kind == "roa" else (lr - curve)
    holds = margin >= 0
    bt = arbitrage_time(_BOUND_TIME[kind], spec, bundle.S_mu0)
    horizon = float(t[-1])
    terminal = lr[:, -1]
    beat = terminal < 0 if kind == "roa" else terminal > 0
    frac_t = float(np.mean(beat)) if m else float("nan")
    ok = bool(np.all(holds)) and (horizon <= bt or frac_t == 1.0) and m > 0
    return BoundReport(
        kind,
        m,
        int(bundle.excluded),
        float(np.mean(holds)) if m else float("nan"),
        float(np.min(margin)) if m else float("nan"),
        float(bt),
        horizon,
        frac_t,
        ok,
    )


# --------------------------------------------------------------------------
# relative returns between two generated portfolios


@dataclass(frozen=True, eq=False)
class RelativeReturn:
    direct: np.ndarray
    via_terms: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.direct - self.via_terms


def relative_return_vs_portfolio(dec_pi: MasterDecomposition, dec_zeta: MasterDecomposition) -> RelativeReturn:
    """``log(Z^pi/Z^zeta)`` from value paths and from master-equation term differences."""
    if dec_pi.times.shape != dec_zeta.times.shape or np.any(dec_pi.times != dec_zeta.times):
        raise DecompositionError("decompositions use different grids")
    if np.any(dec_pi.log_market != dec_zeta.log_market):
        raise DecompositionError("decompositions come from different market paths")
    direct = dec_pi.log_values - dec_zeta.log_values

    def terms(d):
        return d.log_s_change - d.stoch_integral + d.drift_theta

    return RelativeReturn(direct, terms(dec_pi) - terms(dec_zeta))
