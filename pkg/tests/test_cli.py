import csv
import io
import json

import pytest

from oracles import LRUSet
from triangel_sim import RunConfig, run, runner, write_trace
from triangel_sim.metrics import read_report
from triangel_sim.cli import main
from triangel_sim.trace import cyclic, random_uniform


def simrun(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def lru_misses(lines, sets=1024, ways=8):
    cache = {}
    misses = 0
    for ln in lines:
        s = cache.setdefault(ln % sets, LRUSet(ways))
        misses += not s.access(ln // sets)
    return misses


def test_cyclic_100_engine_none_matches_lru_oracle(capsys):
    code, out, _ = simrun(capsys, "--engine", "none", "--synthetic", "cyclic:K=100,R=10")
    assert code == 0
    rep = json.loads(out)
    expected = lru_misses(cyclic(100, 10).lines().tolist())
    assert expected == 100
    assert rep["l2_demand_misses"] == expected
    assert rep["records"] == 1000


def test_compare_attaches_coverage(tmp_path, capsys):
    trace = tmp_path / "t.bin"
    write_trace(cyclic(3000, 4), trace)
    base = tmp_path / "base.json"
    assert main(["--engine", "none", "--trace", str(trace), "--out", str(base)]) == 0
    code, out, _ = simrun(capsys, "--engine", "triangel", "--trace", str(trace),
                          "--compare", str(base), "--l2.size=16384")
    assert code == 0
    rep = json.loads(out)
    assert "coverage" in rep["derived"]
    assert rep["baseline"]["baseline_engine"] == "none"


def test_compare_against_other_trace_fails(tmp_path, capsys):
    base = tmp_path / "base.json"
    main(["--engine", "none", "--synthetic", "cyclic:K=50,R=2", "--out", str(base)])
    code, _, err = simrun(capsys, "--engine", "triangel", "--synthetic", "cyclic:K=60,R=2",
                          "--compare", str(base))
    assert code == 1
    assert "trace" in err


def test_ablation_is_flagged_in_report(capsys):
    code, out, _ = simrun(capsys, "--ablate", "mrb", "--engine", "triangel",
                          "--synthetic", "cyclic:K=100,R=2")
    assert code == 0
    cfg = json.loads(out)["config"]
    assert cfg["ablate.mrb"] is True
    assert cfg["ablate.scs"] is False


@pytest.mark.parametrize("argv,key", [
    (["--l2.ways=0"], "l2.ways"),
    (["--l3.reserved_ways_max=9"], "l3.reserved_ways_max"),
    (["--ablate", "nonsense"], "ablate.nonsense"),
    (["--no.such.key=1"], "no.such.key"),
])
def test_invalid_config_names_the_key(capsys, argv, key):
    code, _, err = simrun(capsys, "--synthetic", "cyclic:K=10,R=1", *argv)
    assert code == 2
    assert key in err


def test_bad_trace_file_reports_record_index(tmp_path, capsys):
    p = tmp_path / "bad.txt"
    p.write_text("0x400 0x1000 L\n0x400 zzz L\n")
    code, _, err = simrun(capsys, "--trace", str(p))
    assert code == 1
    # records are numbered from 1
    assert "record 2" in err


def test_missing_trace_is_an_error(capsys):
    code, _, err = simrun(capsys, "--engine", "none")
    assert code == 1
    assert "trace" in err


def test_engine_sweep_rows_share_trace_hash(capsys):
    code, out, _ = simrun(capsys, "--sweep", "none,triage_deg1,triage_deg4,triangel",
                          "--synthetic", "cyclic:K=2000,R=3", "--l2.size=16384")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["engine"] for r in rows] == ["none", "triage_deg1", "triage_deg4", "triangel"]
    assert len({r["trace_hash"] for r in rows}) == 1


def test_ladder_sweep_has_seven_rows(tmp_path, capsys):
    out = tmp_path / "ladder.csv"
    code, _, _ = simrun(capsys, "--sweep", "ladder", "--synthetic", "cyclic:K=500,R=3",
                        "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 7
    assert rows[-1]["label"] == "+high_conf"


def test_empty_sweep_is_an_error(capsys):
    code, _, err = simrun(capsys, "--sweep", ",", "--synthetic", "cyclic:K=10,R=1")
    assert code == 1
    assert "variant" in err


def test_unknown_sweep_variant_is_rejected(capsys):
    code, _, err = simrun(capsys, "--sweep", "none,bogus", "--synthetic", "cyclic:K=10,R=1")
    assert code == 1
    assert "bogus" in err


def test_failed_sweep_keeps_finished_rows(tmp_path, monkeypatch):
    real_run = runner.run

    def failing_run(cfg, traces=None):
        if cfg["engine.kind"] == "triangel":
            raise RuntimeError("boom")
        return real_run(cfg, traces)

    monkeypatch.setattr(runner, "run", failing_run)
    out = tmp_path / "s.csv"
    cfg = RunConfig.build(overrides={"synthetic": "cyclic:K=10,R=1"})
    with pytest.raises(RuntimeError):
        runner.sweep(cfg, ["none", "triage_deg1", "triangel", "triage_deg4"], csv_path=out)
    rows = list(csv.DictReader(out.open()))
    assert [r["label"] for r in rows] == ["none", "triage_deg1"]


def test_config_precedence(tmp_path, capsys):
    conf = tmp_path / "c.cfg"
    conf.write_text("# comment\nl2.ways = 4\nl2.size = 65536\n")
    code, out, _ = simrun(capsys, "--config", str(conf), "--l2.size=32768", "--print-config")
    assert code == 0
    values = dict(line.split(" = ") for line in out.splitlines())
    assert values["l2.size"] == "32768"
    assert values["l2.ways"] == "4"
    assert values["l3.ways"] == "16"


def test_embedded_config_reruns_identically(tmp_path, capsys):
    code, out, _ = simrun(capsys, "--engine", "triage_deg4", "--synthetic",
                          "bernoulli_match:p=0.8,K=2000,N=20000,seed=4", "--seed", "7")
    assert code == 0
    first = json.loads(out)
    again = run(RunConfig.build(overrides=first["config"]))
    assert json.loads(json.dumps(again.to_dict())) == first


def test_report_file_round_trips(tmp_path):
    path = tmp_path / "r.json"
    assert main(["--engine", "triangel", "--synthetic", "cyclic:K=200,R=3",
                 "--out", str(path)]) == 0
    rep = read_report(path)
    assert rep.engine == "triangel"
    assert rep.records == 600


def test_cli_never_mutates_trace_file(tmp_path):
    p = tmp_path / "t.bin"
    write_trace(random_uniform(5000, footprint_lines=2000, seed=3), p)
    before = p.read_bytes()
    assert main(["--engine", "triage_deg1", "--trace", str(p), "--out",
                 str(tmp_path / "r.json")]) == 0
    assert p.read_bytes() == before


def test_run_never_mutates_trace_object():
    tr = cyclic(500, 3)
    pc, addr = tr.pc.copy(), tr.addr.copy()
    run(RunConfig.build(overrides={"engine.kind": "triangel"}), [tr])
    assert (tr.pc == pc).all() and (tr.addr == addr).all()


def test_csv_output_format(tmp_path):
    path = tmp_path / "r.csv"
    assert main(["--engine", "none", "--synthetic", "cyclic:K=10,R=2", "--out", str(path)]) == 0
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 1
    assert rows[0]["l2_demand_misses"] == "10"


def test_size_audit_output(capsys):
    code, out, _ = simrun(capsys, "--size-audit")
    assert code == 0
    assert "training_table" in out and "7808" in out
    assert out.splitlines()[-1].startswith("total")


def test_multiprogrammed_run(capsys):
    code, out, _ = simrun(capsys, "--engine", "none", "--synthetic", "cyclic:K=100,R=2",
                          "--synthetic", "cyclic:K=100,R=2")
    assert code == 0
    rep = json.loads(out)
    assert rep["extra"]["cores"] == 2
    assert rep["records"] == 400
