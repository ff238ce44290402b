"""Command-line driver: ``promptbo run|resume|export-trajectory|analyze-correlation|validate-config``.

Exit status is 0 on success, 2 for configuration errors and 3 for runtime
failures. Progress goes to stdout one line per iteration; the journal is the
machine-readable record.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import loop, runner
from .config import RunConfig
from .errors import ConfigError, PromptBOError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _fmt_config(cfg: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in cfg.items())


def _progress(out):
    best = {"metric": None, "sign": 1.0}

    def on_record(record, state):
        if record["status"] == "ok":
            m = record["metric"]
            if best["metric"] is None or best["sign"] * m > best["sign"] * best["metric"]:
                best["metric"] = m
            metric = f"{m:.6g}"
        else:
            metric = "FAILED"
        b = "-" if best["metric"] is None else f"{best['metric']:.6g}"
        print(f"iter {record['iter']:4d}  cand {record['cand']:6d}  metric {metric:>10}  best {b:>10}  "
              f"{_fmt_config(record['config'])}", file=out, flush=True)

    return on_record, best


def _load(args, require_output=False) -> RunConfig:
    raw_cfg = RunConfig.load(args.config, args.seed)
    if require_output and getattr(args, "out", None):
        data = dict(raw_cfg.data)
        data["output_dir"] = str(args.out)
        raw_cfg = RunConfig(data)
    return raw_cfg


def _report_best(best, out) -> None:
    if best is None:
        print("no successful evaluations", file=out)
        return
    print(f"best metric {best.metric:.6g} at iter {best.iteration}: {_fmt_config(best.config.as_dict())}",
          file=out)


def cmd_run(args, out) -> int:
    cfg = _load(args, require_output=True)
    journal = Path(args.journal) if args.journal else cfg.output_dir / runner.JOURNAL_NAME
    print(f"run {cfg.digest[:12]}  strategy {cfg['strategy']}  seed {cfg['seed']}  budget {cfg['budget']}  "
          f"journal {journal}", file=out, flush=True)
    on_record, state = _progress(out)
    built = runner.build_problem(cfg)
    state["sign"] = 1.0 if built.problem.evaluator.higher_is_better else -1.0
    best = loop.run(built.problem, journal, cfg.digest, cfg.data, on_record)
    _report_best(best, out)
    return EXIT_OK


def cmd_resume(args, out) -> int:
    cfg = _load(args, require_output=True)
    journal = Path(args.journal) if args.journal else cfg.output_dir / runner.JOURNAL_NAME
    print(f"resume {cfg.digest[:12]}  journal {journal}", file=out, flush=True)
    on_record, state = _progress(out)
    built = runner.build_problem(cfg)
    state["sign"] = 1.0 if built.problem.evaluator.higher_is_better else -1.0
    best = loop.resume(built.problem, journal, cfg.digest, on_record)
    _report_best(best, out)
    return EXIT_OK


def cmd_export_trajectory(args, out) -> int:
    if not args.journal:
        raise ConfigError("--journal", "export-trajectory needs a journal path")
    journal = Path(args.journal)
    target = Path(args.out) if args.out else journal.with_name("trajectory.csv")
    path = runner.export_trajectory(journal, target, kind=args.features)
    print(f"wrote {path}", file=out)
    return EXIT_OK


def cmd_analyze_correlation(args, out) -> int:
    cfg = _load(args)
    report, path = runner.analyze_correlation(cfg, args.out)
    print(f"pearson {report.pearson:.6f} over {len(report.pairs)} configs; wrote {path}", file=out)
    return EXIT_OK


def cmd_validate_config(args, out) -> int:
    cfg = _load(args)
    print(f"ok  digest {cfg.digest}", file=out)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "resume": cmd_resume,
    "export-trajectory": cmd_export_trajectory,
    "analyze-correlation": cmd_analyze_correlation,
    "validate-config": cmd_validate_config,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptbo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "export-trajectory":
            p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name in ("run", "resume", "export-trajectory"):
            p.add_argument("--journal", default=None, help="journal path (default: <output_dir>/journal.jsonl)")
        p.add_argument("--out", default=None,
                       help={"run": "output directory", "resume": "output directory",
                             "export-trajectory": "CSV path", "analyze-correlation": "report path",
                             "validate-config": "unused"}[name])
        if name == "export-trajectory":
            p.add_argument("--features", choices=("projected", "base"), default="projected",
                           help="learned features z (default) or frozen base embeddings")
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PromptBOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
