"""``sptlab`` command line: simulate, verify, backtest, report.

Exit codes: 0 success, 1 a verification check failed, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .backtest import BacktestError, BacktestRun, CostModel, performance_stats, run_backtest
from .characteristics import CharacteristicsError
from .data_io import DataError, Panel, load_bundled_panel, load_panel, load_panel_dir, read_report, report_table, write_report
from .decomposition import DecompositionError, decompose
from .generating_functions import GenConfig, GeneratingFunctionError
from .market_sim import MarketError, MarketSpec, SimGrid, market_weights, realized_excess_growth, save_paths, simulate_market
from .strategies import StrategyConfig, StrategyError, characteristics, default_strategies, strategy_weights
from .verification import VerifyConfig, default_genfuns, run_suite

OUT_ENV = "SPTLAB_OUT"
COMMANDS = ("simulate", "verify", "backtest", "report")
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

INPUT_ERRORS = (
    ValueError,  # covers the package's error types
    KeyError,
    TypeError,
    OSError,
)


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "command", "seed", "out", "model", "grid", "paths", "workers",
    "strategies", "costs", "data", "ff3_market", "decompose", "verify",
}


@dataclass
class RunConfig:
    command: str
    seed: int = 1
    out: Optional[str] = None
    model: dict = field(default_factory=lambda: {"type": "vsm", "n": 5, "alpha": 1.0})
    horizon: float = 1.0
    dt: float = 1e-3
    paths: int = 100
    workers: int = 1
    strategies: list = field(default_factory=default_strategies)
    costs: CostModel = field(default_factory=CostModel)
    data: dict = field(default_factory=dict)
    ff3_market: str = "factor"
    decompose: bool = True
    verify: dict = field(default_factory=dict)

    def market_spec(self) -> MarketSpec:
        m = dict(self.model)
        kind = m.pop("type", "vsm")
        x0 = m.pop("x0", None)
        if kind == "vsm":
            unknown = set(m) - {"n", "alpha"}
            if unknown:
                raise ConfigError(f"unknown vsm model keys {sorted(unknown)}")
            return MarketSpec.vsm(int(m.get("n", 5)), float(m.get("alpha", 1.0)), x0)
        if kind == "log_diffusion":
            unknown = set(m) - {"gamma", "xi"}
            if unknown:
                raise ConfigError(f"unknown log_diffusion model keys {sorted(unknown)}")
            return MarketSpec.log_diffusion(np.asarray(m["gamma"], float), np.asarray(m["xi"], float), x0)
        raise ConfigError(f"unknown model type {kind!r}")

    def grid(self) -> SimGrid:
        return SimGrid(self.horizon, self.dt, self.seed)

    def verify_config(self) -> VerifyConfig:
        v = dict(self.verify)
        unknown = set(v) - {"n", "alpha", "horizon", "paths", "residual_tol", "draws", "genfuns"}
        if unknown:
            raise ConfigError(f"unknown verify keys {sorted(unknown)}")
        gens = [GenConfig.from_dict(g) for g in v.pop("genfuns")] if "genfuns" in v else default_genfuns()
        return VerifyConfig(
            n=int(v.get("n", 5)),
            alpha=float(v.get("alpha", 1.0)),
            horizon=float(v.get("horizon", self.horizon)),
            dt=self.dt,
            paths=int(v.get("paths", min(self.paths, 20))),
            seed=self.seed,
            genfuns=gens,
            residual_tol=v.get("residual_tol"),
            draws=int(v.get("draws", 50)),
            workers=self.workers,
        )

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.paths < 1 or self.workers < 1:
            raise ConfigError("paths and workers must be positive")
        if self.ff3_market not in ("factor", "run"):
            raise ConfigError("ff3_market must be 'factor' or 'run'")
        if self.command == "simulate":
            self.market_spec()
            self.grid()
        if self.command == "verify":
            self.verify_config()
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise ConfigError("strategy labels must be unique")


def load_config_file(path) -> dict:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return doc


def build_config(command: str, doc: dict, args: argparse.Namespace) -> RunConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if doc.get("command", command) != command:
        raise ConfigError(f"config is for {doc['command']!r}, not {command!r}")
    grid = doc.get("grid", {})
    unknown = set(grid) - {"horizon", "dt"}
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    cfg = RunConfig(command)
    cfg.seed = int(doc.get("seed", cfg.seed))
    cfg.out = doc.get("out")
    cfg.model = dict(doc.get("model", cfg.model))
    cfg.horizon = float(grid.get("horizon", cfg.horizon))
    cfg.dt = float(grid.get("dt", cfg.dt))
    cfg.paths = int(doc.get("paths", cfg.paths))
    cfg.workers = int(doc.get("workers", cfg.workers))
    if "strategies" in doc:
        cfg.strategies = [StrategyConfig.from_dict(s) for s in doc["strategies"]]
    if "costs" in doc:
        extra = set(doc["costs"]) - {"eps1", "eps2"}
        if extra:
            raise ConfigError(f"unknown cost keys {sorted(extra)}")
        cfg.costs = CostModel(**{k: float(v) for k, v in doc["costs"].items()})
    cfg.data = dict(doc.get("data", {}))
    cfg.ff3_market = doc.get("ff3_market", cfg.ff3_market)
    cfg.decompose = bool(doc.get("decompose", cfg.decompose))
    cfg.verify = dict(doc.get("verify", {}))
    # flags override the file
    if args.seed is not None:
        cfg.seed = args.seed
    if args.dt is not None:
        cfg.dt = args.dt
    if args.paths is not None:
        cfg.paths = args.paths
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = args.out
    if cfg.out is None:
        cfg.out = os.environ.get(OUT_ENV, "sptlab-out")
    cfg.validate()
    return cfg


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> int:
    spec = cfg.market_spec()
    grid = cfg.grid()
    paths = simulate_market(spec, grid, cfg.paths, workers=cfg.workers)
    out = Path(cfg.out)
    save_paths(paths, out / "paths")
    gam = np.array([realized_excess_growth(p)[-1] / grid.horizon_T for p in paths])
    summary = {
        "n": spec.n,
        "n_paths": cfg.paths,
        "n_steps": grid.n_steps,
        "dt": grid.dt,
        "seed": cfg.seed,
        "realized_excess_growth_rate": {"median": float(np.median(gam)), "min": float(gam.min()), "max": float(gam.max())},
        "min_market_weight": float(min(market_weights(p.prices).min() for p in paths)),
        "clamp_count": int(sum(p.meta.get("clamp_count", 0) for p in paths)),
    }
    _write_json(out / "summary.json", summary)
    print(f"wrote {cfg.paths} paths to {out / 'paths'}")
    print(f"median realized market excess growth rate {summary['realized_excess_growth_rate']['median']:.4f}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    report = run_suite(cfg.verify_config())
    _write_json(Path(cfg.out) / "verify.json", report.to_dict())
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<36} margin {c.margin:+.3e}  {c.detail}")
    if not report.passed:
        print(f"{len(report.failures)} check(s) failed", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _load_data(data: dict) -> tuple[Panel, str]:
    d = dict(data)
    scale = float(d.pop("roa_scale", 10.0))
    if "dir" in d:
        return load_panel_dir(d["dir"], scale), str(d["dir"])
    if "prices" in d:
        panel = load_panel(d["prices"], d["shares"], d.get("roa"), d.get("factors"), roa_scale=scale)
        return panel, str(d["prices"])
    if d:
        raise ConfigError(f"unknown data keys {sorted(d)}")
    return load_bundled_panel(scale), "bundled"


def _truncate(run: BacktestRun, T: int) -> BacktestRun:
    return BacktestRun(run.weights[:, :T], run.readjusted[:, :T], run.returns[: T + 1], run.wealth[: T + 1], None, run.name)


def cmd_backtest(cfg: RunConfig) -> int:
    panel, source = _load_data(cfg.data)

    def one(s: StrategyConfig):
        table = strategy_weights(s, panel)
        return table, run_backtest(panel.prices, table.weights, cfg.costs, name=s.label)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(one, cfg.strategies))
    else:
        results = [one(s) for s in cfg.strategies]
    runs = {s.label: r for s, (_, r) in zip(cfg.strategies, results)}
    market = next((runs[s.label] for s in cfg.strategies if s.kind == "market"), None)
    if market is None:
        market = run_backtest(panel.prices, panel.market_weights, cfg.costs, name="market")
    fac = panel.factor_returns()
    reports = []
    for s, (_, run) in zip(cfg.strategies, results):
        T = run.n_periods
        f = None if fac is None else {k: v[:T] for k, v in fac.items()}
        reports.append(
            performance_stats(
                run, _truncate(market, T), None if f is None else f["rf"], f, ff3_market=cfg.ff3_market
            )
        )
    decs, skipped = {}, {}
    if cfg.decompose:
        path = panel.market_path()
        for s in cfg.strategies:
            if s.kind != "genfun":
                continue
            S = s.genfun.build()
            try:
                decs[s.label] = decompose(path, S, characteristics(s.genfun, panel, s.signs))
            except (DecompositionError, CharacteristicsError, GeneratingFunctionError) as exc:
                skipped[s.label] = str(exc)
    meta = {
        "data": source,
        "n_stocks": panel.n,
        "n_periods": panel.n_periods,
        "first_date": panel.dates[0],
        "last_date": panel.dates[-1],
        "costs": {"eps1": cfg.costs.eps1, "eps2": cfg.costs.eps2},
        "roa_scale": panel.meta.get("roa_scale"),
        "strategies": [s.to_dict() for s in cfg.strategies],
        "weight_notes": {t.label: t.meta for t, _ in results if t.meta},
        "decomposition_skipped": skipped,
    }
    write_report(cfg.out, reports, runs, panel.dates, decs, meta)
    print(report_table(reports), end="")
    for label, run in runs.items():
        if run.depleted:
            print(f"{label}: wealth depleted at step {run.depleted_at}", file=sys.stderr)
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    path = Path(cfg.out) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}")
    _, reports = read_report(path)
    print(report_table(reports), end="")
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "verify": cmd_verify, "backtest": cmd_backtest, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sptlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./sptlab-out)")
        p.add_argument("--dt", type=float)
        p.add_argument("--paths", type=int)
        p.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = load_config_file(args.config) if args.config else {}
        cfg = build_config(args.command, doc, args)
        return HANDLERS[args.command](cfg)
    except (ConfigError, DataError, StrategyError, BacktestError, MarketError, GeneratingFunctionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
