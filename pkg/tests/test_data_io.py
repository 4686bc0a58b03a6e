import io
import math

import numpy as np
import pytest

from sptlab.backtest import CostModel, performance_stats, run_backtest
from sptlab.data_io import (
    PANEL_FILES,
    SCHEMA_VERSION,
    DataError,
    bundled_panel_dir,
    generate_synthetic_panel,
    load_bundled_panel,
    load_panel,
    parse_report,
    read_report,
    report_json,
    report_table,
    write_report,
)


def csv(text: str) -> io.StringIO:
    return io.StringIO(text.strip() + "\n")


PRICES = """
date,ticker,value
2020-01-01,A,1.0
2020-01-01,B,2.0
2020-01-02,A,1.1
2020-01-02,B,2.1
2020-01-03,A,1.2
2020-01-03,B,2.2
"""


def test_shares_reported_once_are_carried():
    shares = csv("date,ticker,value\n2020-01-01,A,10\n2020-01-01,B,20")
    p = load_panel(csv(PRICES), shares)
    assert np.array_equal(p.shares, [[10, 10, 10], [20, 20, 20]])
    assert np.allclose(p.market_weights.sum(axis=0), 1.0)


def test_carry_forward_never_looks_ahead():
    shares = csv("date,ticker,value\n2019-12-31,A,10\n2020-01-02,A,99\n2020-01-01,B,5\n2020-01-03,B,7")
    roa = csv("date,ticker,value\n2020-01-01,A,0.01\n2020-01-01,B,0.02\n2020-01-02,B,0.03")
    p = load_panel(csv(PRICES), shares, roa, roa_scale=10)
    assert np.array_equal(p.shares, [[10, 99, 99], [5, 5, 7]])
    assert np.allclose(p.roa, [[0.1, 0.1, 0.1], [0.2, 0.3, 0.3]])


def test_single_ticker_rejected():
    with pytest.raises(DataError, match="2 tickers"):
        load_panel(
            csv("date,ticker,value\n2020-01-01,A,1\n2020-01-02,A,1\n2020-01-03,A,1"),
            csv("date,ticker,value\n2020-01-01,A,1"),
        )


def test_disjoint_dates_rejected():
    prices = csv("date,ticker,value\n2020-01-01,A,1\n2020-01-02,A,1\n2020-02-01,B,1\n2020-02-02,B,1")
    with pytest.raises(DataError, match="share 0 date"):
        load_panel(prices, csv("date,ticker,value\n2020-01-01,A,1\n2020-01-01,B,1"))


def test_factor_dates_intersect():
    fac = csv("date,mkt_rf,smb,hml,rf\n2020-01-02,0.01,0,0,0\n2020-01-03,0.02,0,0,0\n2020-01-04,0,0,0,0")
    p = load_panel(csv(PRICES), csv("date,ticker,value\n2020-01-01,A,1\n2020-01-01,B,1"), factors_csv=fac)
    assert p.dates == ("2020-01-02", "2020-01-03")
    assert np.array_equal(p.factor_returns()["mkt_rf"], [0.02])


def test_errors_name_the_ticker():
    with pytest.raises(DataError, match="B"):
        load_panel(csv(PRICES), csv("date,ticker,value\n2020-01-01,A,1\n2020-01-02,B,1"))
    with pytest.raises(DataError, match="B"):
        load_panel(csv(PRICES), csv("date,ticker,value\n2020-01-01,A,1"))
    with pytest.raises(DataError, match="C"):
        load_panel(csv(PRICES), csv("date,ticker,value\n2020-01-01,A,1"), tickers=["A", "C"])
    bad = PRICES.replace("2020-01-02,B,2.1", "2020-01-02,B,0")
    with pytest.raises(DataError, match="B"):
        load_panel(csv(bad), csv("date,ticker,value\n2020-01-01,A,1\n2020-01-01,B,1"))


def test_malformed_inputs():
    shares = "date,ticker,value\n2020-01-01,A,1\n2020-01-01,B,1"
    with pytest.raises(DataError):
        load_panel(csv(PRICES.replace("2020-01-03", "03/01/2020")), csv(shares))
    with pytest.raises(DataError):
        load_panel(csv("date,ticker\n2020-01-01,A"), csv(shares))
    with pytest.raises(DataError):
        load_panel(csv(PRICES + "2020-01-03,B,2.3"), csv(shares))
    with pytest.raises(DataError):
        load_panel(csv(PRICES.replace("2.2", "abc")), csv(shares))


def test_loading_is_idempotent():
    a = load_bundled_panel()
    b = load_bundled_panel()
    assert a.equals(b)
    assert a.n == 8 and a.roa is not None and set(a.factors) == {"mkt_rf", "smb", "hml", "rf"}
    assert np.all(a.caps > 0)


def test_bundled_panel_regenerates_byte_for_byte(tmp_path):
    generate_synthetic_panel(tmp_path)
    for name in PANEL_FILES:
        assert (tmp_path / name).read_bytes() == (bundled_panel_dir() / name).read_bytes(), name


def _reports():
    rng = np.random.default_rng(4)
    X = np.exp(np.cumsum(rng.normal(0, 0.01, (3, 30)), axis=1))
    m = run_backtest(X, X / X.sum(axis=0), CostModel(0.0, 0.0), name="Market")
    e = run_backtest(X, np.full((3, 29), 1 / 3), name="EWP")
    fac = {k: rng.normal(0, 0.01, 29) for k in ("mkt_rf", "smb", "hml")}
    fac["rf"] = np.zeros(29)
    return [performance_stats(m, m, factors=fac), performance_stats(e, m, factors=fac)], {"Market": m, "EWP": e}


def _same(a, b):
    da, db = a.to_dict(), b.to_dict()
    return all(
        (isinstance(v, float) and math.isnan(v) and math.isnan(db[k])) or v == db[k] for k, v in da.items()
    )


def test_report_round_trip():
    reps, _ = _reports()
    meta, back = parse_report(report_json(reps, {"seed": 1}))
    assert meta == {"seed": 1}
    assert len(back) == 2 and all(_same(a, b) for a, b in zip(reps, back))
    assert math.isnan(back[0].info_ratio)


def test_empty_report_is_valid(tmp_path):
    write_report(tmp_path, [])
    meta, reps = read_report(tmp_path / "report.json")
    assert reps == [] and meta == {}
    assert f'"schema_version": {SCHEMA_VERSION}' in (tmp_path / "report.json").read_text()


def test_report_rejects_unknown_schema():
    with pytest.raises(DataError):
        parse_report('{"schema_version": 99, "strategies": []}')


def test_writes_are_byte_identical(tmp_path):
    reps, runs = _reports()
    dates = [f"d{j}" for j in range(30)]
    a = write_report(tmp_path / "a", reps, runs, dates, meta={"seed": 1})
    b = write_report(tmp_path / "b", reps, runs, dates, meta={"seed": 1})
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    lines = (tmp_path / "a" / "wealth.csv").read_text().splitlines()
    assert lines[0] == "date,strategy,value" and lines[1] == "d0,Market,1"


def test_table_pads_undefined_values():
    reps, _ = _reports()
    rows = report_table(reps).splitlines()
    assert len(rows[1]) == len(rows[2])
    assert "nan" in rows[1]
