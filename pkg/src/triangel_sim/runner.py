"""Build simulations from a :class:`RunConfig`, run them, sweep variants."""
from __future__ import annotations

import logging
import os

import numpy as np

from .cache import CacheConfig, make_cache_state
from .config import ABLATIONS, RunConfig
from .engine import (
    COUNTER_NAMES, E_KIND, E_LOG, E_MAX_WAYS, E_MRB, E_PF_FILL_L3, E_SHADOW, E_SIZER,
    E_TRAIN_STORES, E_WARMUP, ENGINE_KINDS, LOG_CODES, N_COUNTERS, N_EPARAMS, SIZER_KINDS,
    CoreState, EngineState, apply_partition, make_mrb_state, markov_accesses, prefetches_used,
    simulate,
)
from .markov import STAT_NAMES as MARKOV_STATS, MarkovConfig, make_markov_state
from .metrics import SimReport, energy_units, report_csv, csv_header, csv_row
from .sizing import BloomConfig, DuellerConfig, make_bloom_state, make_dueller_state
from .trace import Trace, generate, interleave, read_trace
from .training import STAT_NAMES as TRAINING_STATS, TrainingConfig, make_training_state

log = logging.getLogger("triangel_sim")

LOG_CAPACITY = 1 << 16


class Simulation:
    """All state for one run; :meth:`run` may be called repeatedly to stream."""

    def __init__(self, cfg: RunConfig, cores=1, event_log=None):
        self.config = cfg
        r = self.resolved = cfg.resolved()
        v = r.values
        kind = v["engine.kind"]
        triage = kind.startswith("triage_")
        if event_log is None:
            event_log = bool(os.environ.get("SIM_LOG"))
        self.event_log = event_log

        l3_cfg = CacheConfig(v["l3.size"], v["l3.ways"], replacement=v["replacement"],
                             reserved_ways_max=v["l3.reserved_ways_max"])
        l2_cfg = CacheConfig(v["l2.size"], v["l2.ways"], replacement=v["l2.replacement"])
        max_ways = v["l3.reserved_ways_max"]
        mk_cfg = MarkovConfig(
            sets=l3_cfg.sets, max_ways=max(1, max_ways), entry_format=v["markov.entry_format"],
            lut_entries=v["markov.lut_entries"], lut_ways=v["markov.lut_ways"],
            lut_offset_bits=v["markov.lut_offset_bits"],
        )
        self.markov_config = mk_cfg
        shadow_cfg = mk_cfg if v["debug.shadow_markov"] else MarkovConfig(
            sets=1, max_ways=1, entry_format=v["markov.entry_format"],
            lut_entries=v["markov.lut_entries"], lut_ways=v["markov.lut_ways"],
            lut_offset_bits=v["markov.lut_offset_bits"])
        sizer = v["sizer.kind"]
        per_line = mk_cfg.slots
        if sizer == "dueller":
            duel_cfg = DuellerConfig(l3_sets=l3_cfg.sets, sampled_sets=v["dueller.sets"],
                                     window=v["dueller.window"], bias=v["dueller.bias"],
                                     subsample=v["dueller.subsample"], seed=v["seed"])
        else:
            duel_cfg = DuellerConfig(l3_sets=l3_cfg.sets, sampled_sets=1, seed=v["seed"])
        if sizer == "bloom":
            bloom_cfg = BloomConfig(entries_per_way=l3_cfg.sets * per_line, max_ways=max_ways,
                                    bias=v["bloom.bias"], window=v["bloom.window"],
                                    fp_rate=v["bloom.fp_rate"], expected=v["bloom.expected"])
        else:
            bloom_cfg = BloomConfig(entries_per_way=1, max_ways=max_ways, expected=1)
        self.bloom_config = bloom_cfg

        params = np.zeros(N_EPARAMS, dtype=np.int64)
        params[E_KIND] = ENGINE_KINDS.index(kind)
        params[E_MRB] = v["engine.mrb_enabled"]
        params[E_TRAIN_STORES] = v["engine.train_on_stores"]
        params[E_PF_FILL_L3] = v["engine.prefetch_fill_l3"]
        params[E_SIZER] = SIZER_KINDS.index(sizer)
        params[E_WARMUP] = v["stats.warmup"]
        params[E_SHADOW] = v["debug.shadow_markov"]
        params[E_LOG] = event_log
        params[E_MAX_WAYS] = max_ways
        self.eng = EngineState(
            params=params,
            l3=make_cache_state(l3_cfg),
            markov=make_markov_state(mk_cfg),
            shadow=make_markov_state(shadow_cfg),
            dueller=make_dueller_state(duel_cfg),
            bloom=make_bloom_state(bloom_cfg),
            counters=np.zeros(N_COUNTERS, dtype=np.int64),
            hist=np.zeros(max(9, max_ways + 1), dtype=np.int64),
            log=np.zeros((LOG_CAPACITY if event_log else 1, 4), dtype=np.int64),
            log_n=np.zeros(1, dtype=np.int64),
        )
        tr_cfg = TrainingConfig(
            training_entries=v["tables.training_entries"], training_ways=v["tables.training_ways"],
            sampler_entries=v["tables.sampler_entries"], sampler_ways=v["tables.sampler_ways"],
            scs_entries=v["tables.scs_entries"], scs_window=v["scs.window"],
            scs_clock=v["scs.clock"], max_size=v["max_size"],
            base_up=v["thresholds.base_up"], base_down=v["thresholds.base_down"],
            high_up=v["thresholds.high_up"], high_down=v["thresholds.high_down"],
            max_degree=v["engine.max_degree"],
            ablate_lookahead=v["ablate.lookahead"], ablate_high_conf=v["ablate.high_conf"],
            ablate_reuse_conf=v["ablate.reuse_conf"], ablate_base_conf=v["ablate.base_conf"],
            ablate_scs=v["ablate.scs"],
            force_lookahead=v["debug.force_lookahead"] or kind == "triage_deg4_look2",
            reduced=triage,
            seed=v["seed"],
        )
        self.training_config = tr_cfg
        self.cores = tuple(
            CoreState(
                l2=make_cache_state(l2_cfg),
                tr=make_training_state(tr_cfg, seed=v["seed"] * 1000003 + c),
                mrb=make_mrb_state(v["tables.mrb_entries"], v["tables.mrb_ways"]),
                inflight=np.zeros(8, dtype=np.int64),
                n_inflight=np.zeros(1, dtype=np.int64),
            )
            for c in range(cores)
        )
        init = v["sizer.initial_ways"] if kind != "none" else 0
        apply_partition(self.eng, self.cores, init, -1)
        self.eng.counters[:] = 0
        self.pos = 0

    def run(self, trace: Trace, core_of=None):
        """Feed `trace` (continuing from any earlier call)."""
        n = len(trace)
        if core_of is None:
            core_of = np.zeros(n, dtype=np.int64)
        core_of = np.ascontiguousarray(core_of, dtype=np.int64)
        if n and (core_of.min() < 0 or core_of.max() >= len(self.cores)):
            raise ValueError("core id out of range")
        pcs, lines = trace.pcs(), trace.lines()
        kinds = np.ascontiguousarray(trace.kind)
        simulate(self.eng, self.cores, core_of, pcs, lines, kinds, self.pos)
        self.pos += n
        self._flush_log()
        return self

    def _flush_log(self):
        if not self.event_log:
            return
        n = int(self.eng.log_n[0])
        keep = min(n, LOG_CAPACITY)
        for rec, code, a, b in self.eng.log[:keep].tolist():
            log.debug("record %d %s %#x %#x", rec, LOG_CODES.get(code, code), a, b)
        if n > keep:
            log.debug("event log overflow: %d events dropped", n - keep)
        self.eng.log_n[0] = 0

    def counters(self):
        raw = dict(zip(COUNTER_NAMES, (int(x) for x in self.eng.counters)))
        m = self.eng.markov.stats
        raw.update({f"markov_{k}": int(x) for k, x in zip(MARKOV_STATS, m)})
        tr = np.sum([c.tr.stats for c in self.cores], axis=0)
        raw.update({f"training_{k}" if not k.startswith("training") else k: int(x)
                    for k, x in zip(TRAINING_STATS, tr)})
        return raw

    def report(self, trace_hash) -> SimReport:
        eng = self.eng
        c = self.counters()
        mk = self.eng.markov.stats
        r = SimReport(engine=self.resolved["engine.kind"], trace_hash=trace_hash)
        for k in ("records", "demand_accesses", "l2_demand_misses", "l2_prefetch_first_hits",
                  "training_events", "prefetch_triggers", "prefetches_issued",
                  "prefetches_dropped_duplicate", "prefetches_from_l3", "prefetches_from_dram",
                  "dram_reads", "dram_demand_reads", "dram_prefetch_reads", "l3_data_accesses",
                  "l3_demand_misses", "markov_stores", "markov_writes_suppressed", "mrb_lookups",
                  "mrb_hits", "resize_count", "l2_writebacks"):
            setattr(r, k, c[k])
        r.prefetches_used = int(prefetches_used(self.cores))
        r.l3_markov_reads = int(mk[0])
        r.l3_markov_writes = int(mk[1])
        r.l3_markov_reindex_accesses = int(mk[2])
        r.l3_markov_accesses = int(markov_accesses(eng.markov))
        r.final_partition_ways = int(eng.markov.ways[0])
        r.partition_ways_histogram = [int(x) for x in eng.hist]
        r.energy_units = energy_units(r.dram_reads, r.l3_data_accesses, r.l3_markov_accesses)
        r.extra = {k: v for k, v in c.items() if not hasattr(r, k)}
        r.extra["cores"] = len(self.cores)
        r.extra["dueller_decisions"] = int(eng.dueller.decisions[0])
        r.config = self.config.to_dict()
        return r


def load_traces(cfg: RunConfig):
    """Traces named by the config: ``trace`` paths and/or ``synthetic`` specs.

    Multiple entries (``;``-separated) form a multiprogrammed run.
    """
    v = cfg.values
    traces = []
    fmt = None if v["trace.format"] == "auto" else v["trace.format"]
    for p in filter(None, (s.strip() for s in v["trace"].split(";"))):
        traces.append(read_trace(p, fmt))
    for s in filter(None, (s.strip() for s in v["synthetic"].split(";"))):
        traces.append(generate(s))
    if not traces:
        raise ValueError("no trace: set trace or synthetic")
    return traces


def prepare(traces):
    if isinstance(traces, Trace):
        traces = [traces]
    if len(traces) == 1:
        return traces[0], None, 1
    merged, core_of = interleave(traces)
    return merged, core_of, len(traces)


def run(cfg: RunConfig, traces=None) -> SimReport:
    if traces is None:
        traces = load_traces(cfg)
    trace, core_of, cores = prepare(traces)
    sim = Simulation(cfg, cores=cores)
    sim.run(trace, core_of)
    return sim.report(trace.identity())


def run_with_baseline(cfg: RunConfig, traces=None):
    """(engine report with coverage attached, engine-off baseline report)."""
    if traces is None:
        traces = load_traces(cfg)
    base = run(cfg.replace({"engine.kind": "none"}), traces)
    rep = run(cfg, traces)
    rep.compare(base)
    return rep, base


def ablation_ladder(cfg: RunConfig):
    """Cumulative feature ladder: row k enables the first k features.

    Features are added in the order lookahead, base_conf, scs, mrb, dueller,
    reuse_conf, high_conf; the last row is the full prefetcher.
    """
    rows = []
    for k in range(1, len(ABLATIONS) + 1):
        ov = {"engine.kind": "triangel"}
        for i, a in enumerate(ABLATIONS):
            ov[f"ablate.{a}"] = i >= k
        rows.append((f"+{ABLATIONS[k - 1]}", cfg.replace(ov)))
    return rows


def sweep_variants(cfg: RunConfig, dimension):
    """[(label, config)] for an engine list, ``ablation``/``ladder``, or toggles.

    `dimension` is a list of engine kinds, a list of ablation names (each
    variant ablates one), or the single word ``ladder``.
    """
    dimension = [d.strip() for d in dimension if d.strip()]
    if not dimension:
        raise ValueError("sweep needs at least one variant")
    if dimension == ["ladder"]:
        return ablation_ladder(cfg)
    out = []
    for d in dimension:
        if d in ENGINE_KINDS:
            out.append((d, cfg.replace({"engine.kind": d})))
        elif d in ABLATIONS:
            out.append((f"-{d}", cfg.replace({f"ablate.{d}": True})))
        else:
            raise ValueError(f"unknown sweep variant {d!r}")
    return out


def sweep(cfg: RunConfig, dimension, traces=None, csv_path=None, baseline=True):
    """Run every variant on the same trace; rows are written as runs finish.

    On failure the rows already written stay in `csv_path` and the exception
    propagates.
    """
    variants = sweep_variants(cfg, dimension)
    if traces is None:
        traces = load_traces(cfg)
    base = run(cfg.replace({"engine.kind": "none"}), traces) if baseline else None
    reports, labels = [], []
    f = open(csv_path, "w", newline="") if csv_path else None
    try:
        if f:
            import csv as _csv
            w = _csv.writer(f, lineterminator="\n")
            w.writerow(csv_header())
            f.flush()
        for label, vcfg in variants:
            rep = run(vcfg, traces)
            if base is not None:
                rep.compare(base)
            reports.append(rep)
            labels.append(label)
            if f:
                w.writerow(csv_row(rep, label))
                f.flush()
    finally:
        if f:
            f.close()
    return reports, labels


def sweep_csv(reports, labels):
    return report_csv(reports, labels)
