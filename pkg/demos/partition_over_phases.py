"""Watch the Markov partition follow a program that changes phase.

A stretch of random misses is followed by a loop and then random misses
again.  The set dueller is re-evaluated every `dueller.window` events, so the
partition should open for the loop and close once the loop is gone.

    python demos/partition_over_phases.py
"""
import numpy as np

from triangel_sim import RunConfig, Simulation
from triangel_sim.trace import cyclic, random_uniform

if __name__ == "__main__":
    phases = [("random", random_uniform(400_000, seed=3)),
              ("loop", cyclic(80000, 10, base=1 << 34)),
              ("random", random_uniform(400_000, seed=4))]
    cfg = RunConfig.build(overrides={"engine.kind": "triangel", "dueller.window": 50_000})
    sim = Simulation(cfg)
    for name, trace in phases:
        before = np.array(sim.report("demo").partition_ways_histogram)
        sim.run(trace)
        hist = np.array(sim.report("demo").partition_ways_histogram) - before
        mean = (hist * np.arange(len(hist))).sum() / max(1, hist.sum())
        print(f"{name:<7} {len(trace):>8} records  mean ways {mean:4.2f}  "
              f"now {sim.report('demo').final_partition_ways}")
