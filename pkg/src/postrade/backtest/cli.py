"""
Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 provider error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Sequence

from ..errors import ConfigError, DataError, PostradeError, ProviderError
from ..market_data import EndpointConfig, _atomic_write, fetch_remote, normalize_payload
from .audit import audit, read_decisions
from .config import RunConfig, load_config
from .engine import BASELINE_KINDS, load_market, run_backtest, run_baseline, run_compare
from .report import emit_report, load_events

logger = logging.getLogger("postrade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(message)


def _date(text: str) -> str:
    try:
        date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None
    return text


def _baseline_list(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in BASELINE_KINDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown baseline(s) {bad}; choose from {', '.join(BASELINE_KINDS)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--provider", choices=("stub", "remote"), help="language-model provider")
    common.add_argument("--seed", type=int)
    common.add_argument("--symbol")
    common.add_argument("--prices", help="price CSV (overrides data.prices)")
    common.add_argument("--news", help="news JSONL (overrides data.news)")
    common.add_argument("--filings", help="filings JSONL (overrides data.filings)")
    common.add_argument("--events", help="events CSV for plot markers")
    common.add_argument("--train-start", type=_date)
    common.add_argument("--train-end", type=_date)
    common.add_argument("--test-start", type=_date)
    common.add_argument("--test-end", type=_date)
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    common.add_argument("--verbose", "-v", action="count", default=0)

    parser = _Parser(prog="postrade", description="Position-aware single-asset backtester.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ing = sub.add_parser("ingest", parents=[common], help="fetch or normalize raw feeds")
    ing.add_argument("--kind", required=True, choices=("ohlcv", "company-news", "macro-news", "filings"))
    ing.add_argument("--start", type=_date, required=True)
    ing.add_argument("--end", type=_date, required=True)
    ing.add_argument("--out", type=Path, required=True, help="canonical CSV/JSONL destination")
    src = ing.add_mutually_exclusive_group(required=True)
    src.add_argument("--online", action="store_true", help="fetch from the endpoint named in the environment")
    src.add_argument("--payload", type=Path, help="normalize a saved vendor JSON payload instead")

    sub.add_parser("backtest", parents=[common], help="train then test the agent")
    base = sub.add_parser("baseline", parents=[common], help="run one rule-based baseline")
    base.add_argument("--kind", required=True, choices=BASELINE_KINDS)
    cmp_ = sub.add_parser("compare", parents=[common], help="agent plus baselines in one report")
    cmp_.add_argument("--baselines", type=_baseline_list, help="comma-separated baseline kinds")
    rep = sub.add_parser("report", parents=[common], help="audit a decision log and re-emit the report")
    rep.add_argument("--from", dest="source", type=Path, required=True, help="directory holding decisions.jsonl")
    return parser


def _config(args) -> RunConfig:
    overrides = {
        "provider.mode": args.provider,
        "seed": args.seed,
        "symbol": args.symbol,
        "data.prices": args.prices,
        "data.news": args.news,
        "data.filings": args.filings,
        "data.events": args.events,
        "train.start": args.train_start,
        "train.end": args.train_end,
        "test.start": args.test_start,
        "test.end": args.test_end,
        "output_dir": args.output,
    }
    cfg = load_config(args.config, overrides)
    # flag paths are relative to the working directory, not the config file
    for key, value in (("prices", args.prices), ("news", args.news), ("filings", args.filings),
                       ("events", args.events)):
        if value is not None:
            setattr(cfg.data, key, str(Path(value).resolve()))
    if args.output is not None:
        cfg.output_dir = str(Path(args.output).resolve())
    return cfg


def _emit(cfg: RunConfig, results, out_dir: Path | None = None) -> Path:
    out = out_dir or cfg.path(cfg.output_dir)
    emit_report(results, out, cfg.symbol, cfg.initial_equity, load_events(cfg.path(cfg.data.events)))
    return out


def _ingest(args, cfg: RunConfig) -> None:
    start, end = date.fromisoformat(args.start), date.fromisoformat(args.end)
    if args.online:
        path = fetch_remote(EndpointConfig(args.kind), cfg.symbol, start, end, args.out)
    else:
        try:
            payload = json.loads(args.payload.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"payload file not found: {args.payload}") from None
        except ValueError as exc:
            raise DataError(f"{args.payload}: not JSON: {exc}") from None
        path = args.out
        _atomic_write(path, normalize_payload(args.kind, payload, cfg.symbol, start, end))
    print(f"wrote {path}")


def _report(args, cfg: RunConfig) -> int:
    records = read_decisions(args.source / "decisions.jsonl")
    checked = audit(records, cfg.initial_equity, cfg.allow_short, cfg.risk_free_daily, cfg.risk.alpha,
                    cfg.sharpe_periods)
    for line in checked.violations:
        print(f"audit: {line}", file=sys.stderr)
    out = Path(args.output).resolve() if args.output else args.source
    _emit(cfg, list(checked.results.values()), out)
    print(f"report written to {out}")
    if not checked.ok:
        raise DataError(f"decision log failed the audit with {len(checked.violations)} violation(s)")
    return EXIT_OK


def run(args) -> int:
    cfg = _config(args)
    if args.command == "ingest":
        _ingest(args, cfg)
        return EXIT_OK
    if args.command == "report":
        return _report(args, cfg)
    market = load_market(cfg)
    if args.command == "backtest":
        trained, result = run_backtest(cfg, market)
        out = _emit(cfg, [result])
        (out / "memory.json").write_text(trained.snapshot, encoding="utf-8")
    elif args.command == "baseline":
        out = _emit(cfg, [run_baseline(args.kind, cfg, market)])
    else:
        out = _emit(cfg, run_compare(cfg, args.baselines, market))
    print(f"report written to {out}")
    return EXIT_OK


def _fail(args, code: int, exc: BaseException) -> int:
    kind = type(exc).__name__
    if getattr(args, "json_errors", False):
        print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"postrade: error: {exc}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        ns = argparse.Namespace(json_errors="--json-errors" in argv)
        if not ns.json_errors:
            parser.print_usage(sys.stderr)
        return _fail(ns, EXIT_USAGE, exc)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        return _fail(args, EXIT_USAGE, exc)
    except ProviderError as exc:
        return _fail(args, EXIT_PROVIDER, exc)
    except (DataError, PostradeError) as exc:
        return _fail(args, EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
