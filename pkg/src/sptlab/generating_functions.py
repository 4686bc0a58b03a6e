"""Generating functions on the open simplex times a characteristics box.

A :class:`GeneratingFunction` carries a positive value together with its full
gradient and Hessian in the ``n + k`` variables ``(x, y)``: the first ``n``
coordinates are market weights, the trailing ``k`` are characteristics.
All callables broadcast over leading axes, so ``x`` may be ``(n,)`` or
``(N, n)`` with matching ``y`` of shape ``(k,)`` or ``(N, k)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

#: inputs closer than this to the simplex boundary are rejected
BOUNDARY_TOL = 1e-12

INCREASING = "increasing"
DECREASING = "decreasing"
NONE = "none"


class GeneratingFunctionError(ValueError):
    """Parameter or domain violation for a generating function."""


class OverlayInsolventError(GeneratingFunctionError):
    """The overlay portfolio value became non-positive."""


@dataclass(frozen=True, eq=False)
class Box:
    """Per-coordinate interval; ``None`` bounds are infinite.

    ``closed_lower``/``closed_upper`` select whether the finite endpoints belong
    to the box.
    """

    lower: Optional[float] = None
    upper: Optional[float] = None
    closed_lower: bool = False
    closed_upper: bool = False

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(y)
        if self.lower is not None:
            ok &= (y >= self.lower) if self.closed_lower else (y > self.lower)
        if self.upper is not None:
            ok &= (y <= self.upper) if self.closed_upper else (y < self.upper)
        return ok

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Draw points well inside the box (for derivative checks)."""
        lo = -3.0 if self.lower is None else self.lower
        hi = (lo + 6.0) if self.upper is None else self.upper
        if self.lower is None and self.upper is not None:
            lo = hi - 6.0
        span = hi - lo
        return lo + span * (0.05 + 0.9 * rng.random(shape))

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "closed_lower": self.closed_lower,
            "closed_upper": self.closed_upper,
        }


REAL_LINE = Box()


def _as_y(y, k: int, lead: tuple) -> np.ndarray:
    if k == 0:
        return np.zeros(lead + (0,))
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = np.full(lead + (k,), float(y))
    if y.shape[-1] != k:
        raise GeneratingFunctionError(f"expected {k} characteristics, got shape {y.shape}")
    return y


@dataclass(frozen=True, eq=False)
class GeneratingFunction:
    """Evaluatable triple (value, gradient, Hessian).

    ``k=None`` means the characteristics dimension equals the number of
    stocks. The derivative callables receive ``(x, y)`` and return arrays of
    shape ``(..., n+k)`` and ``(..., n+k, n+k)``.
    """

    name: str
    value_fn: Callable
    grad_fn: Callable
    hess_fn: Callable
    k: Optional[int] = 0
    domain_K: Box = REAL_LINE
    concave_in_x: bool = False
    monotone_in_y: str = NONE
    multiplicative: bool = False
    params: dict = field(default_factory=dict)

    def k_for(self, n: int) -> int:
        return n if self.k is None else self.k

    def _prep(self, x, y):
        x = np.asarray(x, dtype=float)
        k = self.k_for(x.shape[-1])
        return x, _as_y(y, k, x.shape[:-1])

    def value(self, x, y=None) -> np.ndarray:
        x, y = self._prep(x, y)
        return self.value_fn(x, y)

    def gradient(self, x, y=None) -> np.ndarray:
        x, y = self._prep(x, y)
        return self.grad_fn(x, y)

    def hessian(self, x, y=None) -> np.ndarray:
        x, y = self._prep(x, y)
        return self.hess_fn(x, y)

    def log_gradient(self, x, y=None) -> np.ndarray:
        x, y = self._prep(x, y)
        return self.grad_fn(x, y) / self.value_fn(x, y)[..., None]

    def log_hessian(self, x, y=None) -> np.ndarray:
        """Hessian of ``log S``: ``H/S - g g^T / S^2``."""
        x, y = self._prep(x, y)
        s = self.value_fn(x, y)[..., None, None]
        g = self.grad_fn(x, y)
        return self.hess_fn(x, y) / s - g[..., :, None] * g[..., None, :] / s**2

    def in_domain(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] == 0:
            return np.ones(y.shape[:-1], dtype=bool)
        return np.all(self.domain_K.contains(y), axis=-1)

    def flags(self) -> dict:
        return {
            "concave_in_x": self.concave_in_x,
            "monotone_in_y": self.monotone_in_y,
            "multiplicative": self.multiplicative,
        }


# --------------------------------------------------------------------------
# helpers for block derivative assembly


def _blocks(gx, gy, hxx, hxy, hyy):
    grad = np.concatenate([gx, gy], axis=-1)
    top = np.concatenate([hxx, hxy], axis=-1)
    bottom = np.concatenate([np.swapaxes(hxy, -1, -2), hyy], axis=-1)
    return grad, np.concatenate([top, bottom], axis=-2)


def _diag(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def _zeros(lead, a, b):
    return np.zeros(tuple(lead) + (a, b))


def _entropy_parts(x):
    gx = -(np.log(x) + 1.0)
    hxx = _diag(-1.0 / x)
    return -np.sum(x * np.log(x), axis=-1), gx, hxx


def _entropy_with_time_term(name, c, weight, *, shift, monotone, params):
    """``c - sum x log x - weight * tanh(y) - shift`` on a scalar characteristic."""

    def value(x, y):
        return c + _entropy_parts(x)[0] - weight * np.tanh(y[..., 0]) - shift

    def grad(x, y):
        _, gx, _ = _entropy_parts(x)
        sech2 = 1.0 - np.tanh(y) ** 2
        return np.concatenate([gx, -weight * sech2], axis=-1)

    def hess(x, y):
        _, gx, hxx = _entropy_parts(x)
        t = np.tanh(y)
        hyy = (2.0 * weight * t * (1.0 - t**2))[..., None]
        lead = x.shape[:-1]
        return _blocks(gx, y, hxx, _zeros(lead, x.shape[-1], 1), hyy)[1]

    return GeneratingFunction(
        name,
        value,
        grad,
        hess,
        k=1,
        domain_K=Box(0.0, None, closed_lower=True),
        concave_in_x=True,
        monotone_in_y=monotone,
        params=params,
    )


# --------------------------------------------------------------------------
# constructors


def make_constant(value: float = 1.0) -> GeneratingFunction:
    """``S ≡ value``; generates the market portfolio."""
    if not value > 0:
        raise GeneratingFunctionError("constant must be positive")

    def val(x, y):
        return np.full(x.shape[:-1], float(value))

    def grad(x, y):
        return np.zeros(x.shape[:-1] + (x.shape[-1] + y.shape[-1],))

    def hess(x, y):
        m = x.shape[-1] + y.shape[-1]
        return np.zeros(x.shape[:-1] + (m, m))

    return GeneratingFunction("constant", val, grad, hess, k=0, concave_in_x=True, params={"value": value})


def make_entropy(c: float) -> GeneratingFunction:
    """``c - sum_i x^i log x^i``; generates the entropy-weighted portfolio."""
    if not c > 0:
        raise GeneratingFunctionError(f"entropy requires c > 0, got {c}")

    def val(x, y):
        return c + _entropy_parts(x)[0]

    def grad(x, y):
        return _entropy_parts(x)[1]

    def hess(x, y):
        return _entropy_parts(x)[2]

    return GeneratingFunction("entropy", val, grad, hess, k=0, concave_in_x=True, params={"c": c})


def make_geometric_mean() -> GeneratingFunction:
    """``(prod_i x^i)^{1/n}``; generates equal weights."""

    def val(x, y):
        return np.exp(np.mean(np.log(x), axis=-1))

    def grad(x, y):
        n = x.shape[-1]
        return val(x, y)[..., None] / (n * x)

    def hess(x, y):
        n = x.shape[-1]
        s = val(x, y)[..., None, None]
        inv = 1.0 / x
        return s * (inv[..., :, None] * inv[..., None, :] / n**2 - _diag(inv**2) / n)

    return GeneratingFunction("geometric_mean", val, grad, hess, k=0, concave_in_x=True)


def make_reduced_entropy(c: float, epsilon: float) -> GeneratingFunction:
    """``c - sum x log x - epsilon * tanh(y)`` with time-like ``y >= 0``.

    ``epsilon`` should be a lower bound for the market entropy along the path
    (see :func:`entropy_floor`), which keeps the value above ``c``.
    """
    if not c > 0:
        raise GeneratingFunctionError(f"reduced entropy requires c > 0, got {c}")
    if not epsilon > 0:
        raise GeneratingFunctionError(f"reduced entropy requires epsilon > 0, got {epsilon}")
    return _entropy_with_time_term(
        "reduced_entropy",
        c,
        epsilon,
        shift=0.0,
        monotone=DECREASING,
        params={"c": c, "epsilon": epsilon},
    )


def make_boosted_entropy(c: float, alpha: float) -> GeneratingFunction:
    """``c - sum x log x + alpha c (tanh(-y) - 1)`` with ``0 < alpha < 1/2``."""
    if not c > 0:
        raise GeneratingFunctionError(f"boosted entropy requires c > 0, got {c}")
    if not 0 < alpha < 0.5:
        raise GeneratingFunctionError(f"boosted entropy requires 0 < alpha < 1/2, got {alpha}")
    return _entropy_with_time_term(
        "boosted_entropy",
        c,
        alpha * c,
        shift=alpha * c,
        monotone=DECREASING,
        params={"c": c, "alpha": alpha},
    )


def make_beta_genfun(A: float, c: float, p: float) -> GeneratingFunction:
    """``A + sum_i (x^i)^p (c + exp(-y^i))`` with one beta per stock.

    The function is smooth and positive for every real ``y``, so the
    characteristics box is the whole real line: realized betas built from
    discrete increments can dip slightly below zero early in a path.
    """
    if not A >= 0:
        raise GeneratingFunctionError(f"beta genfun requires A >= 0, got {A}")
    if not c > 0:
        raise GeneratingFunctionError(f"beta genfun requires c > 0, got {c}")
    if not 0 < p < 1:
        raise GeneratingFunctionError(f"beta genfun requires 0 < p < 1, got {p}")

    def val(x, y):
        return A + np.sum(x**p * (c + np.exp(-y)), axis=-1)

    def grad(x, y):
        ey = np.exp(-y)
        return np.concatenate([p * x ** (p - 1) * (c + ey), -(x**p) * ey], axis=-1)

    def hess(x, y):
        ey = np.exp(-y)
        gx = p * x ** (p - 1) * (c + ey)
        hxx = _diag(p * (p - 1) * x ** (p - 2) * (c + ey))
        hxy = _diag(-p * x ** (p - 1) * ey)
        hyy = _diag(x**p * ey)
        return _blocks(gx, y, hxx, hxy, hyy)[1]

    return GeneratingFunction(
        "beta",
        val,
        grad,
        hess,
        k=None,
        domain_K=REAL_LINE,
        concave_in_x=True,
        monotone_in_y=DECREASING,
        params={"A": A, "c": c, "p": p},
    )


def make_roa_genfun(varsigma: float) -> GeneratingFunction:
    """``exp(sum_i x^i exp(-y^i))`` with each ``y^i`` in ``(0, varsigma)``."""
    if not varsigma > 0:
        raise GeneratingFunctionError(f"roa genfun requires varsigma > 0, got {varsigma}")

    def _parts(x, y):
        w = np.exp(-y)
        s = np.exp(np.sum(x * w, axis=-1))
        return w, s

    def val(x, y):
        return _parts(x, y)[1]

    def grad(x, y):
        w, s = _parts(x, y)
        return s[..., None] * np.concatenate([w, -x * w], axis=-1)

    def hess(x, y):
        # S (dL dL^T + d2L) with L = sum x w
        w, s = _parts(x, y)
        dl = np.concatenate([w, -x * w], axis=-1)
        n = x.shape[-1]
        d2 = np.zeros(x.shape[:-1] + (2 * n, 2 * n))
        idx = np.arange(n)
        d2[..., idx, n + idx] = -w
        d2[..., n + idx, idx] = -w
        d2[..., n + idx, n + idx] = x * w
        return s[..., None, None] * (dl[..., :, None] * dl[..., None, :] + d2)

    return GeneratingFunction(
        "roa",
        val,
        grad,
        hess,
        k=None,
        domain_K=Box(0.0, varsigma),
        concave_in_x=False,
        monotone_in_y=DECREASING,
        params={"varsigma": varsigma},
    )


# --------------------------------------------------------------------------
# numeric derivatives and composition


def _coordinate_steps(z: np.ndarray, base: float, n_simplex: int) -> np.ndarray:
    h = base * (1.0 + np.abs(z))
    # keep market-weight coordinates positive
    h[..., :n_simplex] = np.minimum(h[..., :n_simplex], 0.5 * np.abs(z[..., :n_simplex]))
    return h


def numeric_gradient(value: Callable, x, y, step: float = 1e-6) -> np.ndarray:
    """Central differences of ``value(x, y)`` in all ``n+k`` coordinates."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    z = np.concatenate([x, y], axis=-1)
    h = _coordinate_steps(z, step, n)
    out = np.empty(z.shape)
    for a in range(z.shape[-1]):
        zp, zm = z.copy(), z.copy()
        zp[..., a] += h[..., a]
        zm[..., a] -= h[..., a]
        out[..., a] = (value(zp[..., :n], zp[..., n:]) - value(zm[..., :n], zm[..., n:])) / (2 * h[..., a])
    return out


def numeric_hessian(value: Callable, x, y, step: float = 1e-4) -> np.ndarray:
    """Central second differences of ``value(x, y)``; symmetric by construction."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    z = np.concatenate([x, y], axis=-1)
    m = z.shape[-1]
    h = _coordinate_steps(z, step, n)

    def f(zz):
        return value(zz[..., :n], zz[..., n:])

    out = np.empty(z.shape + (m,))
    f0 = f(z)
    for a in range(m):
        zp, zm = z.copy(), z.copy()
        zp[..., a] += h[..., a]
        zm[..., a] -= h[..., a]
        out[..., a, a] = (f(zp) - 2 * f0 + f(zm)) / h[..., a] ** 2
        for b in range(a + 1, m):
            zpp, zpm, zmp, zmm = z.copy(), z.copy(), z.copy(), z.copy()
            zpp[..., a] += h[..., a]
            zpp[..., b] += h[..., b]
            zpm[..., a] += h[..., a]
            zpm[..., b] -= h[..., b]
            zmp[..., a] -= h[..., a]
            zmp[..., b] += h[..., b]
            zmm[..., a] -= h[..., a]
            zmm[..., b] -= h[..., b]
            v = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4 * h[..., a] * h[..., b])
            out[..., a, b] = v
            out[..., b, a] = v
    return out


def from_value(
    value: Callable,
    k: Optional[int] = 0,
    *,
    name: str = "custom",
    domain_K: Box = REAL_LINE,
    concave_in_x: bool = False,
    monotone_in_y: str = NONE,
    grad_step: float = 1e-6,
    hess_step: float = 1e-4,
) -> GeneratingFunction:
    """Wrap a user-supplied ``value(x, y)`` with central-difference derivatives."""
    return GeneratingFunction(
        name,
        value,
        lambda x, y: numeric_gradient(value, x, y, grad_step),
        lambda x, y: numeric_hessian(value, x, y, hess_step),
        k=k,
        domain_K=domain_K,
        concave_in_x=concave_in_x,
        monotone_in_y=monotone_in_y,
    )


@dataclass(frozen=True, eq=False)
class KFunction:
    """Smooth positive map on the characteristics box, with derivatives."""

    k: int
    value_fn: Callable
    grad_fn: Callable
    hess_fn: Callable
    domain_K: Box = REAL_LINE
    monotone: str = NONE

    @classmethod
    def one(cls, k: int) -> "KFunction":
        return cls(
            k,
            lambda y: np.ones(y.shape[:-1]),
            lambda y: np.zeros(y.shape),
            lambda y: np.zeros(y.shape + (y.shape[-1],)),
        )

    @classmethod
    def exp_decay(cls, k: int) -> "KFunction":
        """``exp(-sum y)``."""

        def val(y):
            return np.exp(-np.sum(y, axis=-1))

        return cls(
            k,
            val,
            lambda y: -val(y)[..., None] * np.ones(y.shape),
            lambda y: val(y)[..., None, None] * np.ones(y.shape + (y.shape[-1],)),
            monotone=DECREASING,
        )


def multiplicative_compose(f: GeneratingFunction, g: KFunction) -> GeneratingFunction:
    """``S(x, y) = f(x) g(y)``; the generated weights do not depend on ``y``."""
    if f.k_for(2) != 0 or f.k is None:
        raise GeneratingFunctionError("multiplicative_compose needs f with k=0")
    k = g.k

    def val(x, y):
        return f.value_fn(x, y[..., :0]) * g.value_fn(y)

    def grad(x, y):
        e = y[..., :0]
        return np.concatenate(
            [f.grad_fn(x, e) * g.value_fn(y)[..., None], f.value_fn(x, e)[..., None] * g.grad_fn(y)], axis=-1
        )

    def hess(x, y):
        e = y[..., :0]
        fv, fg, fh = f.value_fn(x, e), f.grad_fn(x, e), f.hess_fn(x, e)
        gv, gg, gh = g.value_fn(y), g.grad_fn(y), g.hess_fn(y)
        hxx = fh * gv[..., None, None]
        hxy = fg[..., :, None] * gg[..., None, :]
        hyy = fv[..., None, None] * gh
        return _blocks(fg, gg, hxx, hxy, hyy)[1]

    return GeneratingFunction(
        f"{f.name}*g",
        val,
        grad,
        hess,
        k=k,
        domain_K=g.domain_K,
        concave_in_x=f.concave_in_x,
        monotone_in_y=NONE,
        multiplicative=True,
        params=dict(f.params),
    )


# --------------------------------------------------------------------------
# weights


def _check_simplex(mu: np.ndarray) -> None:
    if mu.shape[-1] < 2:
        raise GeneratingFunctionError("at least two stocks are required")
    if np.any(mu <= BOUNDARY_TOL) or np.any(mu >= 1.0 - BOUNDARY_TOL):
        raise GeneratingFunctionError("market weights lie on (or within 1e-12 of) the simplex boundary")
    if np.max(np.abs(np.sum(mu, axis=-1) - 1.0)) > 1e-10:
        raise GeneratingFunctionError("market weights must sum to 1")


def _weights(S: GeneratingFunction, mu, P, check_domain: bool = True) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    _check_simplex(mu)
    n = mu.shape[-1]
    k = S.k_for(n)
    P = _as_y(P, k, mu.shape[:-1])
    if check_domain and k and not np.all(S.in_domain(P)):
        raise GeneratingFunctionError(f"characteristics outside the domain of {S.name}")
    dlog = S.log_gradient(mu, P)[..., :n]
    return mu * (dlog + 1.0 - np.sum(mu * dlog, axis=-1, keepdims=True))


def classical_weights(S: GeneratingFunction, mu) -> np.ndarray:
    """Weights generated by a function of market weights alone."""
    if S.k != 0:
        raise GeneratingFunctionError(f"{S.name} depends on characteristics; use generalized_weights")
    return _weights(S, mu, None)


def generalized_weights(S: GeneratingFunction, mu, P=None, check_domain: bool = True) -> np.ndarray:
    """``pi^i = mu^i (d_i log S + 1 - sum_j mu^j d_j log S)`` at ``(mu, P)``.

    ``mu`` is ``(n,)`` or ``(..., n)``; ``P`` has the matching leading shape
    and ``k`` trailing entries. ``check_domain=False`` evaluates the formula
    for characteristics outside ``domain_K`` (empirical data), where the
    bounds attached to ``S`` no longer apply.
    """
    return _weights(S, mu, P, check_domain)


def weights_path(
    S: GeneratingFunction, mu_path: np.ndarray, P_path: np.ndarray | None = None, check_domain: bool = True
) -> np.ndarray:
    """Weights along a path; inputs and output are ``(n, N+1)`` / ``(k, N+1)``."""
    mu = np.asarray(mu_path, dtype=float).T
    P = None if P_path is None else np.asarray(P_path, dtype=float).T
    return generalized_weights(S, mu, P, check_domain).T


# --------------------------------------------------------------------------
# overlay portfolio


def overlay_coefficient(A: float, varsigma: float) -> float:
    """``a = e^{-b} / (2 - e^{-b} - e^{-varsigma})`` with ``b = 1 + A``."""
    if not (A >= 0 and varsigma > 0):
        raise GeneratingFunctionError("overlay coefficient needs A >= 0 and varsigma > 0")
    eb = math.exp(-(1.0 + A))
    return eb / (2.0 - eb - math.exp(-varsigma))


def quality_overlay_weights(mu, pi_roa, Z_mu, Z_pi, a: float) -> np.ndarray:
    """Long ``(1+a)`` dollars of the market and short ``a`` dollars of ``pi_roa``.

    Works on single dates (``mu`` of shape ``(n,)``, scalar values) and on
    paths (``(n, N+1)`` weights with ``(N+1,)`` values).
    """
    if not a >= 0:
        raise GeneratingFunctionError("overlay coefficient a must be nonnegative")
    mu = np.asarray(mu, dtype=float)
    pi_roa = np.asarray(pi_roa, dtype=float)
    Z_mu = np.asarray(Z_mu, dtype=float)
    Z_pi = np.asarray(Z_pi, dtype=float)
    Z_eta = (1.0 + a) * Z_mu - a * Z_pi
    if np.any(Z_eta <= 0):
        bad = np.flatnonzero(np.atleast_1d(Z_eta) <= 0)[0]
        raise OverlayInsolventError(f"overlay value non-positive at index {bad}")
    return ((1.0 + a) * Z_mu * mu - a * Z_pi * pi_roa) / Z_eta


def entropy_floor(mu_path: np.ndarray) -> float:
    """Smallest observed market entropy along a ``(n, N+1)`` weight path.

    Using this as ``epsilon`` in :func:`make_reduced_entropy` looks at the
    whole path, so it is a diagnostic and not a trading input.
    """
    mu = np.asarray(mu_path, dtype=float)
    return float(np.min(-np.sum(mu * np.log(mu), axis=0)))


# --------------------------------------------------------------------------
# derivative checks


@dataclass(frozen=True)
class DerivativeCheck:
    name: str
    n_samples: int
    max_grad_err: float
    max_hess_err: float
    max_asym: float
    min_value: float
    passed: bool


def check_derivatives(
    S: GeneratingFunction,
    n: int,
    n_samples: int = 100,
    seed: int = 0,
    rtol: float = 1e-5,
) -> DerivativeCheck:
    """Compare analytic derivatives with central differences of the value.

    Market-weight samples lie in the interior region ``mu^i >= 1/(2n)`` so the
    finite-difference truncation error stays well below ``rtol``. Errors are
    measured relative to ``1 + |analytic|`` entrywise.
    """
    rng = np.random.default_rng(seed)
    k = S.k_for(n)
    x = 0.5 * rng.dirichlet(np.ones(n), size=n_samples) + 0.5 / n
    y = S.domain_K.sample(rng, (n_samples, k)) if k else np.zeros((n_samples, 0))
    g = S.gradient(x, y)
    H = S.hessian(x, y)
    g_fd = numeric_gradient(S.value_fn, x, y, 1e-6)
    H_fd = numeric_hessian(S.value_fn, x, y, 1e-4)
    ge = float(np.max(np.abs(g - g_fd) / (1.0 + np.abs(g))))
    he = float(np.max(np.abs(H - H_fd) / (1.0 + np.abs(H))))
    asym = float(np.max(np.abs(H - np.swapaxes(H, -1, -2))))
    vmin = float(np.min(S.value(x, y)))
    ok = ge <= rtol and he <= rtol and asym <= 1e-10 and vmin > 0
    return DerivativeCheck(S.name, n_samples, ge, he, asym, vmin, ok)


# --------------------------------------------------------------------------
# configs


_BUILDERS = {
    "constant": (make_constant, {"value"}),
    "entropy": (make_entropy, {"c"}),
    "geometric_mean": (make_geometric_mean, set()),
    "reduced_entropy": (make_reduced_entropy, {"c", "epsilon"}),
    "boosted_entropy": (make_boosted_entropy, {"c", "alpha"}),
    "beta": (make_beta_genfun, {"A", "c", "p"}),
    "roa": (make_roa_genfun, {"varsigma"}),
}

#: keys accepted by a config but not passed to the constructor
_EXTRA_KEYS = {"roa": {"roa_scale"}}


@dataclass(frozen=True)
class GenConfig:
    """Named constructor plus parameters, serializable as a flat mapping."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _BUILDERS:
            raise GeneratingFunctionError(f"unknown generating function {self.name!r}")
        allowed = _BUILDERS[self.name][1] | _EXTRA_KEYS.get(self.name, set())
        unknown = set(self.params) - allowed
        if unknown:
            raise GeneratingFunctionError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        self.build()  # validates ranges

    def build(self) -> GeneratingFunction:
        fn, keys = _BUILDERS[self.name]
        missing = keys - set(self.params)
        if missing:
            raise GeneratingFunctionError(f"missing parameters for {self.name}: {sorted(missing)}")
        return fn(**{k: self.params[k] for k in keys})

    def to_dict(self) -> dict:
        return {"name": self.name, **{k: self.params[k] for k in sorted(self.params)}}

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        name = d.pop("name", None)
        if name is None:
            raise GeneratingFunctionError("config needs a 'name'")
        return cls(name, d)
