"""``simrun``: run one configuration, compare against a baseline, or sweep variants.

Any ``--section.key=value`` argument not listed below overrides that
configuration key (precedence: command line > ``--config`` file > defaults).
Set ``SIM_LOG=1`` to log per-event debug records to stderr, or
``SIM_LOG=<path>`` to write them to a file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ABLATIONS, DEFAULTS, ConfigError, RunConfig
from .engine import ENGINE_KINDS
from .metrics import (
    TraceMismatchError, audit_total_bytes, read_report, report_csv, report_json, size_audit,
)
from .runner import load_traces, run, run_with_baseline, sweep
from .trace import TraceFormatError


def _parser():
    p = argparse.ArgumentParser(
        prog="simrun",
        description="Trace-driven temporal prefetcher simulator.",
        epilog="Other configuration keys can be set as --key=value, e.g. --l3.ways=16.",
    )
    p.add_argument("--engine", choices=ENGINE_KINDS, help="prefetcher engine kind")
    p.add_argument("--trace", action="append", default=[],
                   help="trace file (repeat for a multiprogrammed run)")
    p.add_argument("--synthetic", action="append", default=[],
                   help="synthetic trace spec such as cyclic:K=100,R=10 (repeatable)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path (.csv for CSV, otherwise JSON); default stdout")
    p.add_argument("--format", choices=("json", "csv"), help="override the report format")
    p.add_argument("--compare", metavar="BASELINE.json",
                   help="attach coverage and traffic ratios against this engine-off report")
    p.add_argument("--baseline", action="store_true",
                   help="run the engine-off baseline too and attach coverage")
    p.add_argument("--ablate", action="append", default=[],
                   help=f"disable features (comma-separated): {', '.join(ABLATIONS)}")
    p.add_argument("--sweep", help="comma-separated engine kinds or ablations, or 'ladder'")
    p.add_argument("--size-audit", action="store_true",
                   help="print the storage audit table and exit")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration and exit")
    return p


def _overrides(extra, parser):
    out = {}
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--"):
            parser.error(f"unexpected argument {arg!r}")
        key, eq, value = arg[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra) or extra[i + 1].startswith("--"):
                parser.error(f"missing value for {arg}")
            i += 1
            value = extra[i]
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown configuration key")
        out[key] = value
        i += 1
    return out


def build_config(args, extra, parser):
    ov = _overrides(extra, parser)
    if args.engine:
        ov["engine.kind"] = args.engine
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.trace:
        ov["trace"] = ";".join(args.trace)
    if args.synthetic:
        ov["synthetic"] = ";".join(args.synthetic)
    for group in args.ablate:
        for name in filter(None, (a.strip() for a in group.split(","))):
            if name not in ABLATIONS:
                raise ConfigError(f"ablate.{name}", "unknown ablation")
            ov[f"ablate.{name}"] = True
    text = None
    if args.config:
        with open(args.config) as f:
            text = f.read()
    return RunConfig.build(text, ov)


def _setup_logging():
    target = os.environ.get("SIM_LOG", "")
    if not target:
        return
    handler = (logging.StreamHandler(sys.stderr) if target in ("1", "true", "stderr")
               else logging.FileHandler(target))
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    lg = logging.getLogger("triangel_sim")
    lg.addHandler(handler)
    lg.setLevel(logging.DEBUG)


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _format(args):
    if args.format:
        return args.format
    return "csv" if args.out and args.out.endswith(".csv") else "json"


def _audit_text(cfg):
    rows = size_audit(cfg)
    lines = [f"{'structure':<24}{'entries':>8}{'bits/entry':>12}{'bytes':>8}"]
    for r in rows:
        lines.append(f"{r.structure:<24}{r.entries:>8}{r.bits_per_entry:>12.1f}{r.bytes:>8}")
    total = audit_total_bytes(rows)
    lines.append(f"{'total':<24}{'':>8}{'':>12}{total:>8}  ({total / 1024:.1f} KiB)")
    return "\n".join(lines) + "\n"


def main(argv=None):
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    _setup_logging()
    try:
        cfg = build_config(args, extra, parser)
        if args.print_config:
            _emit(cfg.to_text(), args.out)
            return 0
        if args.size_audit:
            _emit(_audit_text(cfg), args.out)
            return 0
        traces = load_traces(cfg)
        if args.sweep:
            reports, labels = sweep(cfg, args.sweep.split(","), traces,
                                    csv_path=args.out, baseline=True)
            if not args.out:
                _emit(report_csv(reports, labels), None)
            return 0
        if args.baseline:
            rep, _ = run_with_baseline(cfg, traces)
        else:
            rep = run(cfg, traces)
        if args.compare:
            rep.compare(read_report(args.compare))
        text = report_json(rep) if _format(args) == "json" else report_csv([rep])
        _emit(text, args.out)
        return 0
    except ConfigError as e:
        print(f"simrun: invalid configuration: {e}", file=sys.stderr)
        return 2
    except TraceFormatError as e:
        print(f"simrun: trace error: {e}", file=sys.stderr)
        return 1
    except (TraceMismatchError, ValueError, OSError) as e:
        print(f"simrun: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
