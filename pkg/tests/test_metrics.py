import csv
import io
import json

import pytest

from triangel_sim import RunConfig, run, run_with_baseline, size_audit
from triangel_sim.metrics import (
    COUNTER_FIELDS, SimReport, TraceMismatchError, accuracy, audit_total_bytes, coverage,
    csv_header, energy_units, read_report, report_csv, report_json, write_report,
)
from triangel_sim.trace import Trace, cyclic, random_uniform

A, B, C = 0x100000, 0x2340040, 0x7777780


def report(**kw):
    return SimReport(engine="triangel", trace_hash="h", **kw)


def test_accuracy_examples():
    assert accuracy(report()) == 1.0
    assert accuracy(report(prefetches_used=50, prefetches_issued=100)) == 0.5


def test_coverage_examples():
    base = report(l2_demand_misses=1000)
    assert coverage(report(l2_demand_misses=1000), base) == 0.0
    assert coverage(report(l2_demand_misses=300), base) == pytest.approx(0.7)
    # pollution makes coverage negative
    assert coverage(report(l2_demand_misses=1100), base) == pytest.approx(-0.1)


def test_coverage_rejects_different_traces():
    with pytest.raises(TraceMismatchError):
        coverage(report(), SimReport(engine="none", trace_hash="other"))


def test_energy_units_formula():
    assert energy_units(3, 21, 39) == 135


def abc_trace(n=20):
    return Trace([0x400100] * n, [[A, B, C][i % 3] for i in range(n)])


def test_twenty_record_conservation():
    # one-line L2, Markov table of one way; A, B, C map to different L3 sets
    cfg = RunConfig.build(overrides={"engine.kind": "triage_deg1", "l2.size": 64, "l2.ways": 1,
                                     "sizer.kind": "fixed", "sizer.fixed_ways": 1})
    rep, base = run_with_baseline(cfg, [abc_trace()])
    # baseline: every record misses the L2, only the three cold misses reach memory
    assert base.l2_demand_misses == 20
    assert base.dram_reads == 3
    # records 0-3 miss; from record 3 on each event prefetches its successor from
    # the L3, and every prefetch except the last is consumed by the next record
    assert rep.l2_demand_misses == 4
    assert rep.prefetches_issued == 17
    assert rep.prefetches_from_l3 == 17
    assert rep.prefetches_used == 16
    assert rep.dram_reads == base.dram_reads == 3
    assert rep.l3_data_accesses == 4 + 17
    assert rep.l3_markov_reads == 20
    assert rep.l3_markov_writes == 19
    assert rep.l3_markov_reindex_accesses == 0
    assert rep.energy_units == 25 * 3 + 21 + 39
    assert rep.baseline["coverage"] == pytest.approx(0.8)
    saved = base.l2_demand_misses - rep.l2_demand_misses
    assert saved == rep.prefetches_used


def test_conservation_with_memory_prefetches():
    # a tiny L3 sends some prefetches to memory
    cfg = RunConfig.build(overrides={"engine.kind": "triage_deg1", "l2.size": 64, "l2.ways": 1,
                                     "l3.size": 64 * 16, "sizer.kind": "fixed",
                                     "sizer.fixed_ways": 1})
    rep, base = run_with_baseline(cfg, [abc_trace()])
    assert rep.dram_reads == rep.dram_demand_reads + rep.dram_prefetch_reads
    assert rep.dram_prefetch_reads == rep.prefetches_from_dram
    assert rep.prefetches_issued == rep.prefetches_from_l3 + rep.prefetches_from_dram


RUNS = [
    ("triangel", "cyclic:K=3000,R=6"),
    ("triage_deg1", "cyclic:K=3000,R=6"),
    ("triage_deg4", "bernoulli_match:p=0.7,K=3000,N=20000"),
    ("triangel_bloom", "random_uniform:N=20000,footprint_lines=20000"),
    ("none", "cyclic:K=9000,R=2"),
]


@pytest.mark.parametrize("kind,spec", RUNS)
def test_energy_identity_and_counter_bounds(kind, spec):
    cfg = RunConfig.build(overrides={"engine.kind": kind, "synthetic": spec,
                                     "l2.size": 32 * 1024, "max_size": 8192})
    r = run(cfg)
    assert r.energy_units == 25 * r.dram_reads + r.l3_data_accesses + r.l3_markov_accesses
    assert r.l3_markov_accesses == (r.l3_markov_reads + r.l3_markov_writes
                                    + r.l3_markov_reindex_accesses)
    assert 0 <= r.prefetches_used <= r.prefetches_issued
    assert 0.0 <= r.accuracy <= 1.0
    assert r.dram_reads == r.dram_demand_reads + r.dram_prefetch_reads
    assert sum(r.partition_ways_histogram) == r.records


def test_cyclic_1000_accuracy_after_warmup():
    # with the default L2 the loop fits and nothing needs prefetching
    r = run(RunConfig.build(overrides={"engine.kind": "triangel", "stats.warmup": 1000}),
            [cyclic(1000, 20)])
    assert r.l2_demand_misses == 0
    assert r.accuracy == 1.0
    # a 16 KiB L2 forces the engine to carry the loop
    r = run(RunConfig.build(overrides={"engine.kind": "triangel", "stats.warmup": 1000,
                                       "l2.size": 16 * 1024}), [cyclic(1000, 20)])
    assert r.prefetches_issued > 1000
    assert r.accuracy >= 0.99


def test_random_trace_triangel_stays_off():
    rep, _ = run_with_baseline(RunConfig.build(overrides={"engine.kind": "triangel"}),
                               [random_uniform(300000, seed=1)])
    assert abs(rep.baseline["coverage"]) <= 0.02


def test_report_determinism():
    cfg = RunConfig.build(overrides={"engine.kind": "triangel", "synthetic": "cyclic:K=5000,R=4",
                                     "l2.size": 32 * 1024, "seed": 9})
    assert report_json(run(cfg)) == report_json(run(cfg))


def test_json_round_trip(tmp_path):
    cfg = RunConfig.build(overrides={"engine.kind": "triage_deg4", "synthetic": "cyclic:K=500,R=3"})
    rep, _ = run_with_baseline(cfg)
    path = tmp_path / "r.json"
    write_report(rep, path)
    back = read_report(path)
    assert back == rep
    assert report_json(back) == path.read_text()
    d = json.loads(path.read_text())
    assert d["schema"] == "triangel-sim-report/1"
    assert d["derived"]["coverage"] == rep.baseline["coverage"]
    assert d["config"]["engine.kind"] == "triage_deg4"


def test_read_report_rejects_other_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(ValueError):
        read_report(p)


def test_csv_header_lists_each_counter_once():
    header = csv_header()
    assert len(header) == len(set(header))
    for name in COUNTER_FIELDS:
        assert header.count(name) == 1


def test_csv_rows_parse_back():
    reps = [report(l2_demand_misses=5), report(l2_demand_misses=7)]
    rows = list(csv.DictReader(io.StringIO(report_csv(reps, ["a", "b"]))))
    assert [r["label"] for r in rows] == ["a", "b"]
    assert [int(r["l2_demand_misses"]) for r in rows] == [5, 7]


def test_write_report_errors(tmp_path):
    with pytest.raises(ValueError):
        write_report(report(), tmp_path / "r.x", fmt="yaml")
    with pytest.raises(OSError):
        write_report(report(), tmp_path / "missing" / "r.json")


def test_size_audit_rows():
    rows = {r.structure: r for r in size_audit()}
    assert rows["training_table"].entries == 512
    assert rows["training_table"].bits_per_entry == 122
    assert rows["training_table"].bytes == 7808
    assert rows["history_sampler"].bytes == 6080
    assert rows["second_chance_sampler"].bytes == 584
    assert rows["metadata_reuse_buffer"].bytes == 1472
    # 64 sets x (24 ten-bit tags + 11-bit set id), nine 32-bit counters, 19-bit window
    assert rows["set_dueller"].bytes == -(-(64 * (24 * 10 + 11) + 9 * 32 + 19) // 8)
    assert audit_total_bytes(size_audit()) == sum(r.bytes for r in rows.values())


def test_size_audit_follows_config():
    cfg = RunConfig.build(overrides={"tables.training_entries": 1024})
    rows = {r.structure: r for r in size_audit(cfg)}
    assert rows["training_table"].bytes == 2 * 7808
    # sampler entries store a training-table index, one bit wider now
    assert rows["history_sampler"].bits_per_entry == 96
