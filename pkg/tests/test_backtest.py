import json
import math
from datetime import date

import pytest

from postrade.backtest.audit import audit, read_decisions, reports_match
from postrade.backtest.cli import main
from postrade.backtest.config import load_config
from postrade.backtest.engine import (
    load_market,
    missing_weekdays,
    run_backtest,
    run_baseline,
    run_test,
    run_train,
)
from postrade.backtest.report import FILE_NAMES, emit_report, format_json
from postrade.errors import ConfigError, DataError
from postrade.memory import MemoryStore

from conftest import random_walk, write_fixture


def cfg_for(root, closes, **kw):
    return load_config(write_fixture(root, closes, **kw))


# --- config --------------------------------------------------------------


def test_overlapping_ranges_rejected(tmp_path):
    path = write_fixture(tmp_path, [100.0] * 10, train_bars=5)
    with pytest.raises(ConfigError, match="before the test range"):
        load_config(path, {"train.end": "2024-01-20"})


def test_flags_override_file(tmp_path):
    path = write_fixture(tmp_path, [100.0] * 10, seed=3)
    cfg = load_config(path, {"seed": 9, "risk.alpha": 0.9, "provider.mode": "stub"})
    assert cfg.seed == 9 and cfg.risk.alpha == 0.9
    assert load_config(path).seed == 3
    assert load_config(None).seed == 0


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(p)


def test_missing_weekdays():
    days = [date(2025, 3, 3), date(2025, 3, 4), date(2025, 3, 12)]
    assert missing_weekdays(days, 4) == [date(2025, 3, 5), date(2025, 3, 6), date(2025, 3, 7),
                                         date(2025, 3, 10), date(2025, 3, 11)]
    assert missing_weekdays([date(2025, 3, 6), date(2025, 3, 10)], 4) == []  # Friday holiday


def test_data_gap_is_hard_error(tmp_path):
    path = write_fixture(tmp_path, [100.0 + i for i in range(30)], train_bars=15)
    lines = (tmp_path / "prices.csv").read_text().splitlines()
    (tmp_path / "prices.csv").write_text("\n".join(lines[:5] + lines[10:]) + "\n")
    with pytest.raises(DataError, match="missing trading dates: 2024-01-05"):
        run_train(load_config(path))


# --- train ---------------------------------------------------------------


def test_ten_day_ramp_train_reflects(tmp_path):
    cfg = cfg_for(tmp_path, [100.0 + i for i in range(14)], train_bars=10)
    out = run_train(cfg)
    store = MemoryStore.restore(out.snapshot)
    assert len(store.layer("reflection")) >= 1
    assert len(out.rewards) == 9
    assert run_train(cfg).snapshot == out.snapshot


def test_flat_prices_zero_rewards(tmp_path):
    cfg = cfg_for(tmp_path, [50.0] * 40, train_bars=30)
    out = run_train(cfg)
    assert out.rewards and all(r.reward == 0 for r in out.rewards)
    assert all(r.trend.total == 0 for r in out.rewards)
    assert all(d["direction"] == "hold" for d in out.decisions)


def test_train_rewards_follow_the_formula(tmp_path):
    closes = random_walk(80, seed=21)
    cfg = cfg_for(tmp_path, closes, train_bars=60)
    out = run_train(cfg)
    window = closes[:60]
    for r in out.rewards:
        t = r.day_index
        m = sum(window[min(t + h, 59)] - window[t] for h in (1, 7, 30))
        assert math.isclose(r.trend.total, m, rel_tol=1e-12, abs_tol=1e-12)
        expected = -(m**2) if r.position_now == r.position_prev else r.position_now * m
        assert math.isclose(r.reward, expected, rel_tol=1e-12, abs_tol=1e-12)


# --- test phase --------------------------------------------------------------


def test_rising_series_ends_long(tmp_path):
    cfg = cfg_for(tmp_path, [100 * 1.01**i for i in range(60)], train_bars=30)
    _, res = run_backtest(cfg)
    assert res.decisions[-1]["position_after"] > 0
    assert res.report.cr_pct > 0


def test_empty_feeds_still_run(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(60, seed=2), train_bars=30, news=False, filings=False)
    _, res = run_backtest(cfg)
    assert len(res.decisions) == 29


def test_test_prompts_have_no_future_bindings(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(70, seed=4), train_bars=40)
    market = load_market(cfg)
    train_seen, seen = [], []
    trained = run_train(cfg, market, on_prompt=lambda tid, text: train_seen.append(text))
    run_test(cfg, trained.snapshot, market, on_prompt=lambda tid, text: seen.append((tid, text)))
    marker = "the 7-day difference is"
    assert any(marker in t for t in train_seen)
    decision_prompts = [t for tid, t in seen if tid.startswith("decide-")]
    assert decision_prompts
    assert all(marker not in t and "cur_record_t" not in t for t in decision_prompts)


def test_snapshot_restore_resumes_identically(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(90, seed=7), train_bars=50)
    market = load_market(cfg)
    snap = run_train(cfg, market).snapshot
    direct = run_test(cfg, snap, market)
    resumed = run_test(cfg, MemoryStore.restore(snap), market)
    assert direct.decisions == resumed.decisions
    assert format_json(direct.report.to_dict()) == format_json(resumed.report.to_dict())


def test_auditor_recomputes_report(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(100, seed=8, vol=0.03), train_bars=50)
    _, res = run_backtest(cfg)
    checked = audit(res.decisions, cfg.initial_equity)
    assert checked.ok, checked.violations
    assert reports_match(checked.results["agent"].report, res.report)
    assert checked.results["agent"].exposure == res.exposure


def test_auditor_flags_tampering(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(60, seed=8), train_bars=30)
    res = run_baseline("buy-hold", cfg)
    rows = [dict(r) for r in res.decisions]
    rows[0]["executed_quantity"] = rows[0]["maxcvar"] + 1
    rows[3]["position_after"] = -1
    assert len(audit(rows, cfg.initial_equity).violations) >= 2


def test_exposure_nonnegative_long_only(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(80, seed=13), train_bars=40)
    _, res = run_backtest(cfg)
    assert all(e is None or e >= 0 for e in res.exposure)


# --- baselines -------------------------------------------------------------


def test_buy_hold_telescopes(tmp_path):
    history = random_walk(30, seed=4, start=100.0)
    closes = history + [100.0, 130.0, 90.0, 170.0, 100 * math.e]
    cfg = cfg_for(tmp_path, closes, train_bars=30)
    res = run_baseline("buy-hold", cfg)
    assert res.decisions[0]["quantity"] == res.decisions[0]["maxcvar"] > 1
    assert {d["position_after"] for d in res.decisions} == {res.position_scale}
    assert math.isclose(res.report.cr_pct, 100.0, rel_tol=1e-12)


def test_random_baseline_reproducible(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(60, seed=1), train_bars=30, seed=42)
    a, b = run_baseline("random", cfg), run_baseline("random", cfg)
    assert a.decisions == b.decisions
    assert {d["direction"] for d in a.decisions} <= {"buy", "sell", "hold"}
    assert all(d["quantity"] <= 1 for d in a.decisions)


def test_rule_baselines_trade_one_lot(tmp_path):
    cfg = cfg_for(tmp_path, random_walk(150, seed=5, vol=0.03), train_bars=60)
    for kind in ("macd", "rsi"):
        res = run_baseline(kind, cfg)
        assert all(d["quantity"] in (0, 1) for d in res.decisions)
        assert audit(res.decisions, cfg.initial_equity).ok


def test_unknown_baseline(tmp_path):
    cfg = cfg_for(tmp_path, [100.0] * 10)
    with pytest.raises(ValueError):
        run_baseline("momentum", cfg)


# --- report -----------------------------------------------------------------


def test_format_json_is_fixed():
    text = format_json({"b": 1.0, "a": [-0.0, None, True, 2], "c": {"d": "x"}})
    assert text == '{\n  "b": 1.000000,\n  "a": [0.000000, null, true, 2],\n  "c": {\n    "d": "x"\n  }\n}'


def test_emit_report_files(tmp_path):
    cfg = cfg_for(tmp_path / "fx", random_walk(60, seed=3), train_bars=30)
    one = run_baseline("buy-hold", cfg)
    paths = emit_report([one], tmp_path / "a", cfg.symbol, cfg.initial_equity)
    assert sorted(p.name for p in paths.values()) == sorted(FILE_NAMES)
    two = [one, run_baseline("rsi", cfg)]
    emit_report(two, tmp_path / "b", cfg.symbol, cfg.initial_equity)
    emit_report(two, tmp_path / "c", cfg.symbol, cfg.initial_equity)
    for name in FILE_NAMES:
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert list(report["results"]) == ["buy-hold", "rsi"]
    svg = (tmp_path / "b" / "returns.svg").read_text()
    assert "buy-hold" in svg and "rsi" in svg


def test_emit_report_unwritable(tmp_path):
    cfg = cfg_for(tmp_path / "fx", random_walk(40, seed=3), train_bars=20)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DataError):
        emit_report([run_baseline("buy-hold", cfg)], blocker / "out", cfg.symbol, cfg.initial_equity)


# --- cli --------------------------------------------------------------------


def test_cli_backtest(tmp_path, capsys):
    path = write_fixture(tmp_path / "fx", random_walk(70, seed=6), train_bars=35)
    out = tmp_path / "out"
    assert main(["backtest", "--config", str(path), "--provider", "stub", "-o", str(out)]) == 0
    assert all((out / name).exists() for name in FILE_NAMES)
    assert MemoryStore.restore((out / "memory.json").read_text())


def test_cli_missing_price_file(tmp_path, capsys):
    path = write_fixture(tmp_path / "fx", random_walk(40, seed=6))
    (tmp_path / "fx" / "prices.csv").unlink()
    assert main(["backtest", "--config", str(path)]) == 2
    assert "price file not found" in capsys.readouterr().err


def test_cli_compare_and_report(tmp_path):
    path = write_fixture(tmp_path / "fx", random_walk(120, seed=6), train_bars=60)
    out = tmp_path / "out"
    assert main(["compare", "--config", str(path), "--baselines", "buy-hold,macd", "-o", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert list(report["results"]) == ["agent", "buy-hold", "macd"]
    assert main(["report", "--config", str(path), "--from", str(out), "-o", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "report.json").read_bytes() == (out / "report.json").read_bytes()
    assert len(read_decisions(out / "decisions.jsonl")) == 3 * 59


def test_cli_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["baseline", "--kind", "nope", "--json-errors"]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 1 and err["error"] == "UsageError"
    assert main(["compare", "--baselines", "buy-hold,zzz"]) == 1
    assert main(["backtest", "--config", str(tmp_path / "missing.toml")]) == 1


def test_cli_provider_error_exit_code(tmp_path, capsys):
    path = write_fixture(tmp_path / "fx", random_walk(40, seed=6), train_bars=20)
    with open(path, "a") as fh:
        fh.write('[provider]\nmode = "remote"\nendpoint = "http://127.0.0.1:9/v1"\nmax_retries = 0\ntimeout = 2.0\n')
    assert main(["backtest", "--config", str(path), "--json-errors"]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 3


def test_cli_ingest_payload(tmp_path):
    from test_market_data import OHLCV_GOLDEN, OHLCV_PAYLOAD

    raw = tmp_path / "raw.json"
    raw.write_text(json.dumps(OHLCV_PAYLOAD))
    out = tmp_path / "p.csv"
    args = ["ingest", "--kind", "ohlcv", "--symbol", "TSLA", "--start", "2025-03-01", "--end", "2025-03-31",
            "--payload", str(raw), "--out", str(out)]
    assert main(args) == 0
    assert out.read_text() == OHLCV_GOLDEN
    assert main(args[:-4] + ["--out", str(out)]) == 1  # neither --online nor --payload


def test_scale_without_day0_risk_is_full_account(tmp_path):
    closes = [100.0, 102.0, 99.0, 101.0, 103.0]
    res = run_baseline("buy-hold", cfg_for(tmp_path, closes, train_bars=0))
    assert res.position_scale == 1000  # 1e5 equity / 100 price
    assert res.decisions[0]["position_after"] == 1  # the floor limit
    assert math.isclose(res.report.cr_pct, 100 * math.log(103 / 100) / 1000, rel_tol=1e-12)
