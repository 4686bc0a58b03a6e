"""Weight tables for the empirical strategies.

Every column ``t`` uses data dated ``<= t`` only: market weights from
capitalizations, realized betas from past price moves, carried-forward ROA and
frictionless wealth of the market and of the ROA-generated portfolio.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .characteristics import CharacteristicsPath, time_characteristic
from .data_io import Panel
from .generating_functions import (
    NONE,
    REAL_LINE,
    GenConfig,
    GeneratingFunctionError,
    quality_overlay_weights,
    weights_path,
)

KINDS = ("market", "genfun", "overlay")
YEAR_DAYS = 252


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    label: str
    kind: str = "genfun"
    genfun: Optional[GenConfig] = None
    a: float = 2.5  # overlay leverage
    signs: str = "positive"  # beta sign convention: "positive" or "estimated"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StrategyError(f"unknown strategy kind {self.kind!r}")
        if self.kind != "market" and self.genfun is None:
            raise StrategyError(f"strategy {self.label!r} needs a generating function")
        if self.kind == "overlay":
            if self.genfun.name != "roa":
                raise StrategyError("the overlay is defined on the roa generating function")
            if not self.a >= 0:
                raise StrategyError("overlay a must be nonnegative")
        if self.signs not in ("positive", "estimated"):
            raise StrategyError(f"signs must be 'positive' or 'estimated', got {self.signs!r}")

    def to_dict(self) -> dict:
        d = {"label": self.label, "kind": self.kind}
        if self.genfun is not None:
            d["genfun"] = self.genfun.to_dict()
        if self.kind == "overlay":
            d["a"] = self.a
        if self.genfun is not None and self.genfun.name == "beta":
            d["signs"] = self.signs
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        d = dict(d)
        unknown = set(d) - {"label", "kind", "genfun", "a", "signs"}
        if unknown:
            raise StrategyError(f"unknown strategy keys {sorted(unknown)}")
        if "label" not in d:
            raise StrategyError("strategy needs a 'label'")
        g = d.pop("genfun", None)
        try:
            gen = GenConfig.from_dict(g) if g is not None else None
        except GeneratingFunctionError as exc:
            raise StrategyError(str(exc)) from exc
        return cls(genfun=gen, **d)


def default_strategies() -> list[StrategyConfig]:
    return [
        StrategyConfig("Market", "market"),
        StrategyConfig("Entropy", genfun=GenConfig("entropy", {"c": 0.1})),
        StrategyConfig("EWP", genfun=GenConfig("geometric_mean")),
        StrategyConfig("Beta", genfun=GenConfig("beta", {"A": 1e-4, "c": 1e-4, "p": 0.7})),
        StrategyConfig("ROA", "overlay", GenConfig("roa", {"varsigma": 1.0}), a=2.5),
    ]


def frictionless_wealth(prices: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cost-free wealth with ``weights[:, t]`` held over ``(t, t+1]``; length ``T+1``."""
    gross = prices[:, 1:] / prices[:, :-1]
    growth = np.sum(weights[:, : gross.shape[1]] * gross, axis=0)
    return np.concatenate([[1.0], np.cumprod(growth)])


def panel_betas(panel: Panel) -> np.ndarray:
    """``sum_{s<=t} (X_s - X_{s-1})(Z_s - Z_{s-1})`` with prices ``X`` and
    frictionless market wealth ``Z``; zero at the first date."""
    z = frictionless_wealth(panel.prices, panel.market_weights)
    inc = np.diff(panel.prices, axis=1) * np.diff(z)[None, :]
    out = np.zeros_like(panel.prices)
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def characteristics(cfg: GenConfig, panel: Panel, signs: str = "positive") -> Optional[CharacteristicsPath]:
    """Characteristics path a generating function needs on this panel."""
    times = np.arange(len(panel.dates)) / YEAR_DAYS
    name = cfg.name
    if name in ("reduced_entropy", "boosted_entropy"):
        return time_characteristic(times)
    if name == "beta":
        b = panel_betas(panel)
        s = np.ones(panel.n) if signs == "positive" else np.where(b[:, -1] >= 0, 1.0, -1.0)
        # estimated signs use the full sample, so they are reported, not hidden
        return CharacteristicsPath(
            times, s[:, None] * b, finite_variation=True, monotone=(NONE,) * panel.n, domain_K=REAL_LINE,
            meta={"signs": s.tolist(), "signs_estimated": signs == "estimated"},
        )
    if name == "roa":
        if panel.roa is None:
            raise StrategyError("the roa strategy needs an ROA file")
        return CharacteristicsPath(
            times, panel.roa, finite_variation=False, domain_K=REAL_LINE, meta={"roa_scale": panel.meta.get("roa_scale")}
        )
    return None


@dataclass
class WeightTable:
    label: str
    weights: np.ndarray  # (n, T)
    meta: dict = field(default_factory=dict)


def strategy_weights(cfg: StrategyConfig, panel: Panel) -> WeightTable:
    mu = panel.market_weights
    T = panel.n_periods
    if cfg.kind == "market":
        return WeightTable(cfg.label, mu[:, :T])
    S = cfg.genfun.build()
    P = characteristics(cfg.genfun, panel, cfg.signs)
    meta = {}
    if P is not None and cfg.genfun.name == "roa":
        meta["roa_outside_domain"] = int(np.sum(~S.in_domain(P.values.T)))
    pi = weights_path(S, mu, None if P is None else P.values, check_domain=False)
    if cfg.kind == "genfun":
        return WeightTable(cfg.label, pi[:, :T], meta)
    z_mu = frictionless_wealth(panel.prices, mu)
    z_pi = frictionless_wealth(panel.prices, pi)
    try:
        eta = quality_overlay_weights(mu[:, :T], pi[:, :T], z_mu[:T], z_pi[:T], cfg.a)
    except GeneratingFunctionError as exc:
        raise StrategyError(f"{cfg.label}: {exc}") from exc
    meta["a"] = cfg.a
    return WeightTable(cfg.label, eta, meta)
