"""Trace-driven simulator for PC-localized temporal prefetchers.

Models a two-level cache hierarchy whose shared L3 can lend ways to a
Markov table, with Triage-style and Triangel-style training, sizing and
prefetch engines.  Typical use::

    from triangel_sim import RunConfig, run, generate
    report = run(RunConfig.build(overrides={"engine.kind": "triangel"}),
                 [generate("cyclic:K=20000,R=20")])
    print(report.accuracy)
"""
from .config import ConfigError, RunConfig
from .metrics import SimReport, accuracy, coverage, size_audit, write_report
from .runner import Simulation, run, run_with_baseline, sweep
from .trace import Trace, TraceFormatError, generate, read_trace, write_trace

__all__ = [
    "ConfigError", "RunConfig", "SimReport", "Simulation", "Trace", "TraceFormatError",
    "accuracy", "coverage", "generate", "read_trace", "run", "run_with_baseline",
    "size_audit", "sweep", "write_report", "write_trace",
]
__version__ = "0.1.0"
