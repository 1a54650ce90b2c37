"""Simulation reports, derived metrics, serialisation and the storage audit.

Energy uses a fixed unit convention: one DRAM read costs 25 units and one L3
access (data or Markov metadata) costs 1 unit.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .markov import HASH_BITS, TRIANGEL42, TRIANGEL_TARGET_BITS, entry_bits
from .sizing import DATA_DEPTH, MARKOV_DEPTH, N_PARTITIONS

DRAM_ENERGY = 25
L3_ENERGY = 1
SCHEMA = "triangel-sim-report/1"


@dataclass
class SimReport:
    engine: str
    trace_hash: str
    records: int = 0
    demand_accesses: int = 0
    l2_demand_misses: int = 0
    l2_prefetch_first_hits: int = 0
    training_events: int = 0
    prefetch_triggers: int = 0
    prefetches_issued: int = 0
    prefetches_used: int = 0
    prefetches_dropped_duplicate: int = 0
    prefetches_from_l3: int = 0
    prefetches_from_dram: int = 0
    dram_reads: int = 0
    dram_demand_reads: int = 0
    dram_prefetch_reads: int = 0
    l3_data_accesses: int = 0
    l3_demand_misses: int = 0
    l3_markov_reads: int = 0
    l3_markov_writes: int = 0
    l3_markov_reindex_accesses: int = 0
    l3_markov_accesses: int = 0
    markov_stores: int = 0
    markov_writes_suppressed: int = 0
    mrb_lookups: int = 0
    mrb_hits: int = 0
    resize_count: int = 0
    final_partition_ways: int = 0
    l2_writebacks: int = 0
    energy_units: int = 0
    partition_ways_histogram: list = field(default_factory=lambda: [0] * N_PARTITIONS)
    extra: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    baseline: dict | None = None

    @property
    def accuracy(self):
        return accuracy(self)

    def derived(self):
        d = {"accuracy": accuracy(self)}
        if self.baseline is not None:
            d.update(self.baseline)
        return d

    def to_dict(self):
        d = {"schema": SCHEMA}
        for f in fields(self):
            d[f.name] = getattr(self, f.name)
        d["derived"] = self.derived()
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {f.name: d[f.name] for f in fields(cls) if f.name in d}
        return cls(**kw)

    def compare(self, baseline: "SimReport"):
        """Attach coverage and traffic ratios relative to an engine-off run."""
        self.baseline = {
            "baseline_engine": baseline.engine,
            "coverage": coverage(self, baseline),
            "dram_traffic_ratio": _ratio(self.dram_reads, baseline.dram_reads),
            "l3_traffic_ratio": _ratio(
                self.l3_data_accesses + self.l3_markov_accesses,
                baseline.l3_data_accesses + baseline.l3_markov_accesses,
            ),
        }
        return self


COUNTER_FIELDS = tuple(
    f.name for f in fields(SimReport)
    if f.type in ("int", int) and f.name not in ("engine", "trace_hash")
)


def _ratio(a, b):
    return a / b if b else (1.0 if a == 0 else math.inf)


def energy_units(dram_reads, l3_data_accesses, l3_markov_accesses):
    return DRAM_ENERGY * dram_reads + L3_ENERGY * (l3_data_accesses + l3_markov_accesses)


def accuracy(report):
    if report.prefetches_issued == 0:
        return 1.0
    return report.prefetches_used / report.prefetches_issued


class TraceMismatchError(ValueError):
    pass


def coverage(pf, baseline):
    if pf.trace_hash != baseline.trace_hash:
        raise TraceMismatchError(
            f"reports describe different traces ({pf.trace_hash} vs {baseline.trace_hash})"
        )
    if baseline.l2_demand_misses == 0:
        return 0.0
    return (baseline.l2_demand_misses - pf.l2_demand_misses) / baseline.l2_demand_misses


# --- serialisation -----------------------------------------------------------

def report_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=False, allow_nan=True) + "\n"


CSV_CONFIG_COLUMNS = ("seed",) + tuple(
    f"ablate.{a}" for a in ("lookahead", "base_conf", "scs", "mrb", "dueller", "reuse_conf", "high_conf")
)
DERIVED_COLUMNS = ("accuracy", "coverage", "dram_traffic_ratio", "l3_traffic_ratio")


def csv_header():
    return (
        ["engine", "trace_hash", "label"]
        + list(COUNTER_FIELDS)
        + [f"partition_ways_{p}" for p in range(N_PARTITIONS)]
        + list(DERIVED_COLUMNS)
        + list(CSV_CONFIG_COLUMNS)
    )


def csv_row(report, label=""):
    d = report.derived()
    return (
        [report.engine, report.trace_hash, label]
        + [getattr(report, k) for k in COUNTER_FIELDS]
        + list(report.partition_ways_histogram)
        + [d.get(k, "") for k in DERIVED_COLUMNS]
        + [report.config.get(k, "") for k in CSV_CONFIG_COLUMNS]
    )


def report_csv(reports, labels=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header())
    for i, r in enumerate(reports):
        w.writerow(csv_row(r, labels[i] if labels else ""))
    return buf.getvalue()


def write_report(report, path, fmt="json"):
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = report_csv([report])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="") as f:
        f.write(text)


def read_report(path):
    with open(path) as f:
        d = json.load(f)
    if d.get("schema") != SCHEMA:
        raise ValueError(f"{path}: not a {SCHEMA} report")
    return SimReport.from_dict(d)


# --- storage audit -------------------------------------------------------------

@dataclass(frozen=True)
class AuditRow:
    structure: str
    entries: int
    bits_per_entry: float
    bytes: int

    def as_tuple(self):
        return asdict(self)


def _log2(n):
    return max(1, (n - 1).bit_length())


TIMESTAMP_BITS = 32
COUNTER_BITS = 4
PC_TAG_BITS = HASH_BITS
SAMPLER_TAG_BITS = 22
LRU_BITS_TRAINING = 1


def size_audit(cfg=None):
    """Dedicated storage of each Triangel structure (defaults when cfg is None)."""
    v = cfg.resolved().values if cfg is not None else None

    def get(key, default):
        return v[key] if v is not None else default

    tt = get("tables.training_entries", 512)
    hs = get("tables.sampler_entries", 512)
    scs = get("tables.scs_entries", 64)
    mrb = get("tables.mrb_entries", 256)
    mrb_ways = get("tables.mrb_ways", 2)
    l3_sets = get("l3.size", 2 * 1024 * 1024) // (64 * get("l3.ways", 16))
    duel_sets = get("dueller.sets", 64)
    window = get("dueller.window", 500000)
    addr = TRIANGEL_TARGET_BITS
    idx = _log2(tt)

    tt_bits = (PC_TAG_BITS + 2 * addr + TIMESTAMP_BITS + COUNTER_BITS + 2 * COUNTER_BITS
               + COUNTER_BITS + 1 + LRU_BITS_TRAINING)
    hs_bits = SAMPLER_TAG_BITS + idx + addr + TIMESTAMP_BITS + 1
    scs_bits = addr + idx + TIMESTAMP_BITS + 1
    mrb_bits = entry_bits(TRIANGEL42) + (_log2(l3_sets) - _log2(mrb // mrb_ways))
    duel_bits = (duel_sets * ((DATA_DEPTH + MARKOV_DEPTH) * HASH_BITS + _log2(l3_sets))
                 + N_PARTITIONS * 32 + _log2(window))
    rows = [
        AuditRow("training_table", tt, tt_bits, math.ceil(tt * tt_bits / 8)),
        AuditRow("history_sampler", hs, hs_bits, math.ceil(hs * hs_bits / 8)),
        AuditRow("second_chance_sampler", scs, scs_bits, math.ceil(scs * scs_bits / 8)),
        AuditRow("metadata_reuse_buffer", mrb, mrb_bits, math.ceil(mrb * mrb_bits / 8)),
        AuditRow("set_dueller", duel_sets, duel_bits / duel_sets, math.ceil(duel_bits / 8)),
    ]
    return rows


def audit_total_bytes(rows):
    return sum(r.bytes for r in rows)

