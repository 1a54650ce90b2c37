"""Compare every engine on a repeating loop and on uniform random misses.

The loop is what temporal prefetchers exist for; the random trace is the
adversarial case where a good filter keeps the Markov partition closed.

    python demos/engines_on_two_traces.py
"""
from triangel_sim import RunConfig, sweep
from triangel_sim.trace import cyclic, random_uniform

ENGINES = ["triage_deg1", "triage_deg4", "triangel_bloom", "triangel"]


def show(title, trace, **overrides):
    cfg = RunConfig.build(overrides=overrides)
    reports, labels = sweep(cfg, ENGINES, [trace])
    print(f"\n{title} ({len(trace)} records)")
    print(f"{'engine':<16}{'coverage':>10}{'accuracy':>10}{'DRAM x':>9}{'L3 x':>8}{'ways':>6}")
    for label, r in zip(labels, reports):
        b = r.baseline
        print(f"{label:<16}{b['coverage']:>10.3f}{r.accuracy:>10.3f}"
              f"{b['dram_traffic_ratio']:>9.3f}{b['l3_traffic_ratio']:>8.2f}{r.final_partition_ways:>6}")


if __name__ == "__main__":
    show("loop of 40000 lines, 10 passes", cyclic(40000, 10), **{"stats.warmup": 80000})
    show("uniform random over 2M lines", random_uniform(2_000_000, seed=1))
