"""Panel ingestion (prices, shares, ROA, factor returns) and report output.

Input schemas:

* prices / shares / roa: long CSV with header ``date,ticker,value``
* factors: wide CSV with header ``date,mkt_rf,smb,hml,rf`` (daily decimals)

Dates are ISO ``YYYY-MM-DD``. Prices are taken to be total-return adjusted;
no dividend or corporate-action logic is applied.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .backtest import BacktestReport, BacktestRun
from .decomposition import MasterDecomposition
from .market_sim import MarketPath

SCHEMA_VERSION = 1
FACTOR_COLUMNS = ("mkt_rf", "smb", "hml", "rf")
DEFAULT_ROA_SCALE = 10.0
PANEL_FILES = ("prices.csv", "shares.csv", "roa.csv", "factors.csv")


class DataError(ValueError):
    """Input files are malformed or cannot be aligned."""


@dataclass(frozen=True, eq=False)
class Panel:
    dates: tuple
    tickers: tuple
    prices: np.ndarray  # (n, T+1)
    shares: np.ndarray  # (n, T+1), carried forward
    roa: Optional[np.ndarray] = None  # (n, T+1), carried forward and scaled
    factors: Optional[dict] = None  # name -> (T+1,)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.tickers)

    @property
    def n_periods(self) -> int:
        return len(self.dates) - 1

    @property
    def caps(self) -> np.ndarray:
        return self.prices * self.shares

    @property
    def market_weights(self) -> np.ndarray:
        c = self.caps
        return c / c.sum(axis=0)

    def factor_returns(self) -> Optional[dict]:
        """Factor series for ``t = 1..T`` (the first date only anchors)."""
        if self.factors is None:
            return None
        return {k: v[1:] for k, v in self.factors.items()}

    def market_path(self, year_days: int = 252) -> MarketPath:
        """Capitalizations as a market path on a ``1/year_days`` grid."""
        times = np.arange(len(self.dates)) / year_days
        return MarketPath(times, self.caps, meta={"tickers": list(self.tickers)})

    def equals(self, other: "Panel") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (
            self.dates == other.dates
            and self.tickers == other.tickers
            and same(self.prices, other.prices)
            and same(self.shares, other.shares)
            and same(self.roa, other.roa)
            and (self.factors is None) == (other.factors is None)
            and (self.factors is None or all(np.array_equal(self.factors[k], other.factors[k]) for k in FACTOR_COLUMNS))
        )


def _read_csv(src, required: Sequence[str], label: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(src, dtype={"date": str, "ticker": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {label}: {exc}") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{label} is missing columns {missing}")
    try:
        pd.to_datetime(df["date"], format="%Y-%m-%d")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{label} has a date that is not ISO YYYY-MM-DD: {exc}") from exc
    if df[list(required)].isna().any().any():
        raise DataError(f"{label} has empty cells")
    return df


def _long(src, label: str) -> pd.DataFrame:
    df = _read_csv(src, ("date", "ticker", "value"), label)
    df["value"] = pd.to_numeric(df["value"], errors="coerce")
    if df["value"].isna().any():
        raise DataError(f"{label} has non-numeric values")
    if df.duplicated(["date", "ticker"]).any():
        raise DataError(f"{label} has duplicate (date, ticker) rows")
    return df.pivot(index="date", columns="ticker", values="value").sort_index()


def _carry_forward(table: pd.DataFrame, dates: pd.Index, tickers, label: str) -> np.ndarray:
    """Last value reported on or before each date; never looks ahead."""
    missing = [t for t in tickers if t not in table.columns]
    if missing:
        raise DataError(f"{label} has no column for ticker(s) {missing}")
    out = np.empty((len(tickers), len(dates)))
    for i, t in enumerate(tickers):
        s = table[t].dropna()
        pos = np.searchsorted(s.index.to_numpy(), dates.to_numpy(), side="right") - 1
        if pos[0] < 0:
            raise DataError(f"{label}: ticker {t} has no value on or before {dates[0]}")
        out[i] = s.to_numpy()[pos]
    return out


def load_panel(
    prices_csv,
    shares_csv,
    roa_csv=None,
    factors_csv=None,
    roa_scale: float = DEFAULT_ROA_SCALE,
    tickers: Sequence[str] | None = None,
) -> Panel:
    """Align price, shares, ROA and factor files on common trading days.

    The trading days are the dates on which every ticker has a price, further
    intersected with the factor dates when a factor file is given. Shares and
    ROA are carried forward from their reporting dates. ROA is multiplied by
    ``roa_scale``.
    """
    px = _long(prices_csv, "prices")
    names = tuple(sorted(px.columns)) if tickers is None else tuple(tickers)
    absent = [t for t in names if t not in px.columns]
    if absent:
        raise DataError(f"prices has no column for ticker(s) {absent}")
    if len(names) < 2:
        raise DataError(f"at least 2 tickers are required, got {len(names)}")
    px = px[list(names)].dropna()
    dates = px.index
    fac = None
    if factors_csv is not None:
        fac = _read_csv(factors_csv, ("date",) + FACTOR_COLUMNS, "factors")
        if fac["date"].duplicated().any():
            raise DataError("factors has duplicate dates")
        fac = fac.set_index("date").sort_index()
        dates = dates.intersection(fac.index)
    if len(dates) < 2:
        raise DataError(f"the sources share {len(dates)} date(s); at least 2 are required")
    dates = dates.sort_values()
    prices = px.loc[dates].to_numpy(dtype=float).T
    bad = ~(prices > 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataError(f"non-positive price for {names[i]} on {dates[j]}")
    shares = _carry_forward(_long(shares_csv, "shares"), dates, names, "shares")
    if not np.all(shares > 0):
        i = int(np.argwhere(~(shares > 0))[0][0])
        raise DataError(f"non-positive shares for {names[i]}")
    roa = None
    if roa_csv is not None:
        roa = roa_scale * _carry_forward(_long(roa_csv, "roa"), dates, names, "roa")
    factors = None
    if fac is not None:
        factors = {}
        for col in FACTOR_COLUMNS:
            v = pd.to_numeric(fac.loc[dates, col], errors="coerce").to_numpy(dtype=float)
            if not np.all(np.isfinite(v)):
                raise DataError(f"factors column {col} has non-numeric values")
            factors[col] = v
    return Panel(tuple(dates), names, prices, shares, roa, factors, meta={"roa_scale": float(roa_scale)})


def load_panel_dir(directory, roa_scale: float = DEFAULT_ROA_SCALE) -> Panel:
    d = Path(directory)
    paths = [d / f for f in PANEL_FILES]
    for p in paths[:2]:
        if not p.exists():
            raise DataError(f"missing panel file {p}")
    return load_panel(*(p if p.exists() else None for p in paths), roa_scale=roa_scale)


def bundled_panel_dir() -> Path:
    return Path(str(resources.files("sptlab") / "data"))


def load_bundled_panel(roa_scale: float = DEFAULT_ROA_SCALE) -> Panel:
    return load_panel_dir(bundled_panel_dir(), roa_scale)


# --------------------------------------------------------------------------
# synthetic panel


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_long(path: Path, dates, tickers, values: np.ndarray, columns) -> None:
    lines = ["date,ticker,value"]
    for j in columns:
        for i, t in enumerate(tickers):
            lines.append(f"{dates[j]},{t},{_fmt(values[i, j])}")
    path.write_text("\n".join(lines) + "\n")


def generate_synthetic_panel(
    out_dir, seed: int = 2006, n: int = 8, n_days: int = 756, report_every: int = 63, start: str = "2006-01-03"
) -> list[Path]:
    """Write a synthetic panel in the input CSV schemas.

    Capitalizations and ROA come from the coupled ROA market simulator on a
    daily grid. Shares change at each reporting date, ROA is reported at the
    same dates divided by the default ROA scale, and the factor file holds the
    cap-weighted excess return, a small-minus-big spread, a noise value factor
    and a constant risk-free rate.
    """
    from .characteristics import RoaMarketSpec, RoaSpec, simulate_roa_market
    from .market_sim import SimGrid
    from .rng import PANEL_STREAM, path_rng

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = SimGrid(n_days / 252, 1 / 252, seed)
    mspec = RoaMarketSpec(roa=RoaSpec(eta=1.0, epsilon=0.005), vol=0.2)
    mp, roa = simulate_roa_market(mspec, grid, n, 1, initial_prices=np.linspace(1.0, 2.0, n))[0]
    rng = path_rng(seed, 0, PANEL_STREAM)
    dates = [d.strftime("%Y-%m-%d") for d in pd.bdate_range(start, periods=n_days + 1)]
    tickers = [f"S{i + 1:02d}" for i in range(n)]
    report_cols = list(range(0, n_days + 1, report_every))

    base_shares = 1e8 * np.linspace(1.0, 3.0, n)
    shares = np.empty((n, n_days + 1))
    level = base_shares.copy()
    for j in range(n_days + 1):
        if j in report_cols and j > 0:
            level = level * np.exp(0.01 * rng.standard_normal(n))
        shares[:, j] = level
    prices = 50.0 * mp.prices / mp.prices[:, :1]
    prices = np.round(prices, 6)
    caps = prices * shares
    w = caps[:, :-1] / caps[:, :-1].sum(axis=0)
    ret = prices[:, 1:] / prices[:, :-1] - 1.0
    rf = np.full(n_days, 1e-4)
    mkt = np.sum(w * ret, axis=0)
    order = np.argsort(caps[:, :-1], axis=0)
    half = n // 2
    small = np.take_along_axis(ret, order[:half], axis=0).mean(axis=0)
    big = np.take_along_axis(ret, order[-half:], axis=0).mean(axis=0)
    hml = 0.004 * rng.standard_normal(n_days)
    fac = np.vstack([mkt - rf, small - big, hml, rf])

    written = []
    _write_long(out / "prices.csv", dates, tickers, prices, range(n_days + 1))
    _write_long(out / "shares.csv", dates, tickers, shares, report_cols)
    _write_long(out / "roa.csv", dates, tickers, roa.values / DEFAULT_ROA_SCALE, report_cols)
    lines = ["date," + ",".join(FACTOR_COLUMNS), f"{dates[0]},0,0,0,0"]
    for j in range(n_days):
        lines.append(dates[j + 1] + "," + ",".join(_fmt(v) for v in fac[:, j]))
    (out / "factors.csv").write_text("\n".join(lines) + "\n")
    for f in PANEL_FILES:
        written.append(out / f)
    return written


# --------------------------------------------------------------------------
# reports


def _clean(obj):
    """JSON-safe copy: NaN and infinities become null, arrays become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


_FLOAT_FIELDS = (
    "ann_return",
    "sharpe",
    "info_ratio",
    "terminal_value",
    "ann_turnover",
    "ann_alpha_pct",
    "beta",
    "r_squared",
    "mean_short",
)


def report_json(reports: Sequence[BacktestReport], meta: Mapping | None = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "meta": dict(meta or {}),
        "strategies": [r.to_dict() for r in reports],
    }
    return json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_report(text: str) -> tuple[dict, list[BacktestReport]]:
    """Inverse of :func:`report_json`; nulls in numeric fields become NaN."""
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported report schema {doc.get('schema_version')!r}")
    out = []
    for d in doc["strategies"]:
        d = dict(d)
        for k in _FLOAT_FIELDS:
            if d.get(k) is None:
                d[k] = float("nan")
        if d.get("ff3") is not None:
            d["ff3"] = {k: float("nan") if v is None else v for k, v in d["ff3"].items()}
        out.append(BacktestReport.from_dict(d))
    return doc.get("meta", {}), out


def wealth_csv(runs: Mapping[str, BacktestRun], dates: Sequence[str]) -> str:
    lines = ["date,strategy,value"]
    for label, run in runs.items():
        for j, v in enumerate(run.wealth):
            lines.append(f"{dates[j]},{label},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def _num(v: float, spec: str) -> str:
    if math.isfinite(v):
        return format(v, spec)
    return "nan".rjust(int(spec.split(".")[0]))


def report_table(reports: Sequence[BacktestReport]) -> str:
    """Fixed-width performance table, plus a factor table when available."""
    head = f"{'strategy':<12}{'return':>10}{'sharpe':>9}{'IR':>9}{'Z_T':>9}{'turnover':>10}{'alpha%':>9}{'beta':>8}{'R2':>8}{'short':>8}"
    lines = [head]
    for r in reports:
        lines.append(
            f"{r.name:<12}{_num(100 * r.ann_return, '9.2f')}%{_num(r.sharpe, '9.3f')}{_num(r.info_ratio, '9.3f')}"
            f"{_num(r.terminal_value, '9.3f')}{_num(r.ann_turnover, '10.3f')}{_num(r.ann_alpha_pct, '9.3f')}"
            f"{_num(r.beta, '8.3f')}{_num(r.r_squared, '8.3f')}{_num(r.mean_short, '8.3f')}"
        )
    ff = [r for r in reports if r.ff3 is not None]
    if ff:
        lines += ["", f"{'strategy':<12}{'alpha%':>9}{'mkt':>8}{'smb':>8}{'hml':>8}{'R2':>8}"]
        for r in ff:
            f = r.ff3
            lines.append(
                f"{r.name:<12}{_num(f.alpha_pct, '9.3f')}{_num(f.beta, '8.3f')}{_num(f.smb_loading, '8.3f')}"
                f"{_num(f.hml_loading, '8.3f')}{_num(f.r_squared, '8.3f')}"
            )
    return "\n".join(lines) + "\n"


def _safe_label(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label.lower())


def write_report(
    out_dir,
    reports: Sequence[BacktestReport],
    runs: Mapping[str, BacktestRun] | None = None,
    dates: Sequence[str] | None = None,
    decompositions: Mapping[str, MasterDecomposition] | None = None,
    meta: Mapping | None = None,
) -> list[Path]:
    """Write ``report.json``, ``table.txt``, ``wealth.csv`` and one
    ``decomposition_<label>.csv`` per entry; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    files = {"report.json": report_json(reports, meta), "table.txt": report_table(reports)}
    if runs:
        if dates is None:
            dates = [str(j) for j in range(max(r.wealth.size for r in runs.values()))]
        files["wealth.csv"] = wealth_csv(runs, dates)
    for label, dec in (decompositions or {}).items():
        files[f"decomposition_{_safe_label(label)}.csv"] = dec.to_csv()
    written = []
    for name, text in files.items():
        p = out / name
        try:
            with open(p, "w", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise DataError(f"cannot write {p}: {exc}") from exc
        written.append(p)
    return written


def read_report(path) -> tuple[dict, list[BacktestReport]]:
    return parse_report(Path(path).read_text())
