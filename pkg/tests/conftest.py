import sys
import json
import math
from datetime import date, timedelta

import numpy as np
import pytest


def weekdays(start: date, n: int) -> list[date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def write_prices(path, dates, closes):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,open,high,low,close,volume\n")
        for d, c in zip(dates, closes):
            fh.write(f"{d.isoformat()},{c!r},{c * 1.01!r},{c * 0.99!r},{c!r},1000\n")


def random_walk(n, seed, drift=0.0005, vol=0.02, start=100.0):
    rng = np.random.default_rng(seed)
    steps = rng.normal(drift, vol, n - 1)
    return [start] + [float(x) for x in start * np.exp(np.cumsum(steps))]


def write_fixture(
    root,
    closes,
    *,
    symbol="ACME",
    start=date(2024, 1, 1),
    train_bars=None,
    news=True,
    filings=True,
    seed=0,
    extra="",
):
    """Write prices, optional news and filings, and a config; return the config path.

    The first ``train_bars`` bars form the train range and the rest the test
    range. ``train_bars=0`` leaves training unconfigured.
    """
    root.mkdir(parents=True, exist_ok=True)
    dates = weekdays(start, len(closes))
    write_prices(root / "prices.csv", dates, closes)
    train_bars = len(closes) // 2 if train_bars is None else train_bars
    lines = [f'symbol = "{symbol}"', f"seed = {seed}"]
    if extra:
        lines.append(extra)
    lines += ["[data]", 'prices = "prices.csv"']
    if news:
        items = []
        for i, d in enumerate(dates[::3]):
            items.append({"id": f"c{i}", "date": d.isoformat(), "headline": f"{symbol} ships update {i}",
                          "summary": f"{symbol} product news.", "scope": "company", "symbol": symbol})
            items.append({"id": f"m{i}", "date": d.isoformat(),
                          "headline": "Central bank holds rates" if i % 2 else "Celebrity gossip roundup",
                          "summary": "", "scope": "macro"})
        (root / "news.jsonl").write_text("".join(json.dumps(x) + "\n" for x in items), encoding="utf-8")
        lines.append('news = "news.jsonl"')
    if filings:
        docs = [{"symbol": symbol, "date": dates[min(5, len(dates) - 1)].isoformat(), "kind": "10-Q",
                 "body": f"{symbol} quarterly revenue rose; margins improved."},
                {"symbol": symbol, "date": dates[min(12, len(dates) - 1)].isoformat(), "kind": "10-K",
                 "body": f"{symbol} annual report: steady growth."}]
        (root / "filings.jsonl").write_text("".join(json.dumps(x) + "\n" for x in docs), encoding="utf-8")
        lines.append('filings = "filings.jsonl"')
    if train_bars:
        lines += ["[train]", f"start = {dates[0].isoformat()}", f"end = {dates[train_bars - 1].isoformat()}"]
    lines += ["[test]", f"start = {dates[train_bars].isoformat()}", f"end = {dates[-1].isoformat()}"]
    cfg = root / "c.toml"
    cfg.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cfg


@pytest.fixture
def market_fixture(tmp_path):
    closes = random_walk(120, seed=11)
    return write_fixture(tmp_path / "fx", closes, train_bars=60, seed=5)


def rel_close(a, b, tol):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
