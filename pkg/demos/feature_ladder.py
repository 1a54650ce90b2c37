"""Add the prefetcher's features one at a time on a noisy loop.

Each row enables one more feature on top of the previous row, starting from
an unfiltered degree-4 engine; the last row is the full design.

    python demos/feature_ladder.py
"""
from triangel_sim import RunConfig, sweep
from triangel_sim.trace import bernoulli_match

if __name__ == "__main__":
    trace = bernoulli_match(0.8, 30000, N=600_000, seed=2)
    cfg = RunConfig.build(overrides={"stats.warmup": 100_000})
    reports, labels = sweep(cfg, ["ladder"], [trace])
    print(f"{'row':<14}{'coverage':>10}{'accuracy':>10}{'energy':>12}{'markov acc.':>13}")
    for label, r in zip(labels, reports):
        print(f"{label:<14}{r.baseline['coverage']:>10.3f}{r.accuracy:>10.3f}"
              f"{r.energy_units:>12}{r.l3_markov_accesses:>13}")
