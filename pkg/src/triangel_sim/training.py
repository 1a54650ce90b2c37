"""Per-PC training table, History Sampler and Second-Chance Sampler.

The training table tracks each PC's recent miss addresses and a set of 4-bit
saturating classifiers:

* ReuseConf: does this PC's pattern repeat within ``max_size`` of its own
  training events (i.e. would it fit in a maximally sized Markov table)?
* BasePatternConf / HighPatternConf: when an (x, y) pair is revisited, is y
  seen again after x?  Both count up by 1; Base counts down by 2 and High by
  5, so they sit above their initial value only when the pattern repeats more
  than 2/3 and 5/6 of the time respectively.
* SampleRate: scales the probability of sampling this PC's pairs.

The History Sampler holds randomly sampled (x -> y) pairs with the owner's
timestamp.  The Second-Chance Sampler (SCS) gives a mismatching sampled target
a window of ``scs.window`` training events to show up before it counts
against the pattern.

All state lives in a :class:`TrainingState` record for the jit kernels.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .cache import MISS, CacheConfig, cache_access, cache_contains, cache_fill, make_cache_state
from .hashing import LINE_SHIFT, fold_bits, hash10, lcg_uniform, make_rng
from .state import define_state

COUNTER_MAX = 15
COUNTER_INIT = 8
SAMPLER_TAG_BITS = 22

# params indices
P_MAX_SIZE = 0
P_SAMPLER_ENTRIES = 1
P_SCS_WINDOW = 2
P_BASE_UP = 3
P_BASE_DOWN = 4
P_HIGH_UP = 5
P_HIGH_DOWN = 6
P_MAX_DEGREE = 7
P_ABL_LOOKAHEAD = 8
P_ABL_HIGH = 9
P_ABL_REUSE = 10
P_ABL_BASE = 11
P_ABL_SCS = 12
P_FORCE_LOOKAHEAD = 13
P_REDUCED = 14
P_SCS_CLOCK_FILLS = 15
N_PARAMS = 16

# decision output indices
D_STORE = 0
D_PREFETCH = 1
D_DEGREE = 2
D_INDEX = 3
D_ENTRY = 4

ST_EVENTS = 0
ST_ALLOCS = 1
ST_SAMPLER_HITS = 2
ST_SAMPLER_INSERTS = 3
ST_SAMPLER_STALE_VICTIMS = 4
ST_SAMPLER_LIVE_VICTIMS = 5
ST_PATTERN_MATCHES = 6
ST_PATTERN_IN_L2 = 7
ST_PATTERN_MISMATCHES = 8
ST_SCS_INSERTS = 9
ST_SCS_HITS = 10
ST_SCS_EXPIRED = 11
ST_SCS_EVICTED = 12
ST_STORE_DECISIONS = 13
ST_HIGH_DEGREE_DECISIONS = 14
ST_LOOKAHEAD_DECISIONS = 15
N_STATS = 16

STAT_NAMES = (
    "training_events",
    "training_allocations",
    "sampler_hits",
    "sampler_inserts",
    "sampler_stale_victims",
    "sampler_live_victims",
    "pattern_matches",
    "pattern_target_in_l2",
    "pattern_mismatches",
    "scs_inserts",
    "scs_hits",
    "scs_expired",
    "scs_evicted",
    "store_decisions",
    "high_degree_decisions",
    "lookahead_decisions",
)

TrainingState, TrainingStateType = define_state(
    "TrainingState",
    "params tt_sets tt_ways tt_set_bits tt_valid tt_tag tt_last tt_ts tt_reuse "
    "tt_base tt_high tt_rate tt_look tt_lru tt_clock "
    "hs_sets hs_ways hs_set_bits hs_valid hs_tag hs_idx hs_tgt hs_ts hs_used hs_lru hs_clock "
    "scs_valid scs_tgt scs_idx scs_deadline scs_stamp scs_clock now rng stats out",
    __name__,
)


@njit(cache=True)
def _new_training_state(*args):
    return TrainingState(*args)


TrainingState._ctor = _new_training_state


@dataclass(frozen=True)
class TrainingConfig:
    training_entries: int = 512
    training_ways: int = 16
    sampler_entries: int = 512
    sampler_ways: int = 2
    scs_entries: int = 64
    scs_window: int = 512
    scs_clock: str = "training"
    max_size: int = 196608
    base_up: int = 1
    base_down: int = 2
    high_up: int = 1
    high_down: int = 5
    max_degree: int = 4
    ablate_lookahead: bool = False
    ablate_high_conf: bool = False
    ablate_reuse_conf: bool = False
    ablate_base_conf: bool = False
    ablate_scs: bool = False
    force_lookahead: bool = False
    reduced: bool = False
    seed: int = 0

    def __post_init__(self):
        for name, entries, ways in (
            ("training", self.training_entries, self.training_ways),
            ("sampler", self.sampler_entries, self.sampler_ways),
        ):
            if ways < 1 or entries % ways:
                raise ValueError(f"tables.{name}_entries must be a multiple of its ways")
            sets = entries // ways
            if sets & (sets - 1):
                raise ValueError(f"tables.{name}_entries / ways must be a power of two")
        if self.scs_entries < 1:
            raise ValueError("tables.scs_entries must be >= 1")
        if self.scs_clock not in ("training", "fills"):
            raise ValueError(f"unknown scs.clock {self.scs_clock!r}")
        if not 1 <= self.max_degree <= 4:
            raise ValueError("engine.max_degree must be in [1, 4]")

    def params(self):
        p = np.zeros(N_PARAMS, dtype=np.int64)
        p[P_MAX_SIZE] = self.max_size
        p[P_SAMPLER_ENTRIES] = self.sampler_entries
        p[P_SCS_WINDOW] = self.scs_window
        p[P_BASE_UP] = self.base_up
        p[P_BASE_DOWN] = self.base_down
        p[P_HIGH_UP] = self.high_up
        p[P_HIGH_DOWN] = self.high_down
        p[P_MAX_DEGREE] = self.max_degree
        p[P_ABL_LOOKAHEAD] = self.ablate_lookahead
        p[P_ABL_HIGH] = self.ablate_high_conf
        p[P_ABL_REUSE] = self.ablate_reuse_conf
        p[P_ABL_BASE] = self.ablate_base_conf
        p[P_ABL_SCS] = self.ablate_scs
        p[P_FORCE_LOOKAHEAD] = self.force_lookahead
        p[P_REDUCED] = self.reduced
        p[P_SCS_CLOCK_FILLS] = self.scs_clock == "fills"
        return p


def make_training_state(cfg: TrainingConfig, seed=None) -> TrainingState:
    e, s = cfg.training_entries, cfg.sampler_entries
    tt_sets = e // cfg.training_ways
    hs_sets = s // cfg.sampler_ways
    n = cfg.scs_entries
    z = lambda k, dt=np.int64: np.zeros(k, dtype=dt)  # noqa: E731
    return TrainingState(
        params=cfg.params(),
        tt_sets=np.int64(tt_sets),
        tt_ways=np.int64(cfg.training_ways),
        tt_set_bits=np.int64(tt_sets.bit_length() - 1),
        tt_valid=z(e, np.uint8),
        tt_tag=z(e),
        tt_last=np.full((e, 2), -1, dtype=np.int64),
        tt_ts=z(e),
        tt_reuse=np.full(e, COUNTER_INIT, dtype=np.int64),
        tt_base=np.full(e, COUNTER_INIT, dtype=np.int64),
        tt_high=np.full(e, COUNTER_INIT, dtype=np.int64),
        tt_rate=np.full(e, COUNTER_INIT, dtype=np.int64),
        tt_look=z(e),
        tt_lru=z(e),
        tt_clock=z(1),
        hs_sets=np.int64(hs_sets),
        hs_ways=np.int64(cfg.sampler_ways),
        hs_set_bits=np.int64(hs_sets.bit_length() - 1),
        hs_valid=z(s, np.uint8),
        hs_tag=z(s),
        hs_idx=z(s),
        hs_tgt=z(s),
        hs_ts=z(s),
        hs_used=z(s, np.uint8),
        hs_lru=z(s),
        hs_clock=z(1),
        scs_valid=z(n, np.uint8),
        scs_tgt=z(n),
        scs_idx=z(n),
        scs_deadline=z(n),
        scs_stamp=z(n),
        scs_clock=z(1),
        now=z(1),
        rng=make_rng(cfg.seed if seed is None else seed),
        stats=z(N_STATS),
        out=np.full(5, -1, dtype=np.int64),
    )


@njit(cache=True)
def sat(v):
    if v < 0:
        return 0
    if v > COUNTER_MAX:
        return COUNTER_MAX
    return v


@njit(cache=True)
def sample_probability(sampler_size, max_size, sample_rate):
    if max_size <= 0:
        return 0.0
    p = sampler_size / max_size * 2.0 ** (sample_rate - 8)
    return 1.0 if p > 1.0 else p


@njit(cache=True)
def apply_pattern_delta(t, e, match):
    P = t.params
    if match:
        t.tt_base[e] = sat(t.tt_base[e] + P[P_BASE_UP])
        t.tt_high[e] = sat(t.tt_high[e] + P[P_HIGH_UP])
    else:
        t.tt_base[e] = sat(t.tt_base[e] - P[P_BASE_DOWN])
        t.tt_high[e] = sat(t.tt_high[e] - P[P_HIGH_DOWN])


@njit(cache=True)
def tt_locate(t, pc):
    """Training-table slot for `pc`, allocating (LRU victim) on a miss."""
    s = (pc >> 2) & (t.tt_sets - 1)
    tag = hash10(pc >> (2 + t.tt_set_bits))
    base = s * t.tt_ways
    t.tt_clock[0] += 1
    victim = base
    for e in range(base, base + t.tt_ways):
        if t.tt_valid[e] and t.tt_tag[e] == tag:
            t.tt_lru[e] = t.tt_clock[0]
            return e
        if not t.tt_valid[e]:
            if t.tt_valid[victim] or e == base:
                victim = e
        elif t.tt_valid[victim] and t.tt_lru[e] < t.tt_lru[victim]:
            victim = e
    e = victim
    t.stats[ST_ALLOCS] += 1
    t.tt_valid[e] = 1
    t.tt_tag[e] = tag
    t.tt_last[e, 0] = -1
    t.tt_last[e, 1] = -1
    t.tt_ts[e] = 0
    t.tt_reuse[e] = COUNTER_INIT
    t.tt_base[e] = COUNTER_INIT
    t.tt_high[e] = COUNTER_INIT
    t.tt_rate[e] = COUNTER_INIT
    t.tt_look[e] = 0
    t.tt_lru[e] = t.tt_clock[0]
    return e


# --- Second-Chance Sampler ---------------------------------------------------

@njit(cache=True)
def scs_expire(t):
    """Penalise every entry whose window has closed."""
    now = t.now[0]
    for i in range(t.scs_valid.shape[0]):
        if t.scs_valid[i] and t.scs_deadline[i] < now:
            t.scs_valid[i] = 0
            t.stats[ST_SCS_EXPIRED] += 1
            apply_pattern_delta(t, t.scs_idx[i], False)


@njit(cache=True)
def scs_insert(t, e, target):
    n = t.scs_valid.shape[0]
    victim = -1
    for i in range(n):
        if not t.scs_valid[i]:
            victim = i
            break
    if victim < 0:
        victim = 0
        for i in range(1, n):
            if t.scs_stamp[i] < t.scs_stamp[victim]:
                victim = i
        # leaving the SCS unconsumed counts against its owner
        t.stats[ST_SCS_EVICTED] += 1
        apply_pattern_delta(t, t.scs_idx[victim], False)
    t.scs_clock[0] += 1
    t.scs_valid[victim] = 1
    t.scs_tgt[victim] = target
    t.scs_idx[victim] = e
    t.scs_deadline[victim] = t.now[0] + t.params[P_SCS_WINDOW]
    t.scs_stamp[victim] = t.scs_clock[0]
    t.stats[ST_SCS_INSERTS] += 1


@njit(cache=True)
def scs_check(t, e, line):
    for i in range(t.scs_valid.shape[0]):
        if t.scs_valid[i] and t.scs_idx[i] == e and t.scs_tgt[i] == line:
            t.scs_valid[i] = 0
            t.stats[ST_SCS_HITS] += 1
            apply_pattern_delta(t, e, True)
            return True
    return False


# --- History Sampler ---------------------------------------------------------

@njit(cache=True)
def _hs_key(t, line):
    return line & (t.hs_sets - 1), fold_bits(line >> t.hs_set_bits, SAMPLER_TAG_BITS)


@njit(cache=True)
def sampler_find(t, e, line):
    s, tag = _hs_key(t, line)
    for i in range(s * t.hs_ways, (s + 1) * t.hs_ways):
        if t.hs_valid[i] and t.hs_tag[i] == tag and t.hs_idx[i] == e:
            return i
    return -1


@njit(cache=True)
def sampler_check(t, l2, e, prev, line):
    """Classify the revisit of `prev` (LastAddr[0]) followed by `line`.

    Returns True on a sampler hit.  The hit entry is refreshed with the
    current timestamp and successor.
    """
    i = sampler_find(t, e, prev)
    if i < 0:
        return False
    P = t.params
    t.stats[ST_SAMPLER_HITS] += 1
    t.hs_used[i] = 1
    t.hs_clock[0] += 1
    t.hs_lru[i] = t.hs_clock[0]
    d = t.tt_ts[e] - t.hs_ts[i]
    if d <= P[P_MAX_SIZE]:
        t.tt_reuse[e] = sat(t.tt_reuse[e] + 1)
    else:
        t.tt_reuse[e] = sat(t.tt_reuse[e] - 1)
    target = t.hs_tgt[i]
    if target == line:
        t.stats[ST_PATTERN_MATCHES] += 1
        apply_pattern_delta(t, e, True)
    elif cache_contains(l2, target):
        t.stats[ST_PATTERN_IN_L2] += 1
    else:
        t.stats[ST_PATTERN_MISMATCHES] += 1
        if P[P_ABL_SCS]:
            apply_pattern_delta(t, e, False)
        else:
            scs_insert(t, e, target)
    t.hs_ts[i] = t.tt_ts[e]
    t.hs_tgt[i] = line
    return True


@njit(cache=True)
def sampler_insert(t, e, prev, line):
    """Insert (prev -> line) owned by entry `e`, applying the victim policy."""
    P = t.params
    s, tag = _hs_key(t, prev)
    base = s * t.hs_ways
    victim = -1
    for i in range(base, base + t.hs_ways):
        if not t.hs_valid[i]:
            victim = i
            break
    if victim < 0:
        victim = base
        for i in range(base + 1, base + t.hs_ways):
            if t.hs_lru[i] < t.hs_lru[victim]:
                victim = i
        owner = t.hs_idx[victim]
        age = t.tt_ts[owner] - t.hs_ts[victim]
        if age > P[P_MAX_SIZE]:
            t.stats[ST_SAMPLER_STALE_VICTIMS] += 1
            if not t.hs_used[victim]:
                t.tt_reuse[owner] = sat(t.tt_reuse[owner] - 1)
            t.tt_rate[e] = sat(t.tt_rate[e] + 1)
        elif not t.hs_used[victim]:
            t.stats[ST_SAMPLER_LIVE_VICTIMS] += 1
            t.tt_rate[e] = sat(t.tt_rate[e] - 1)
    t.hs_clock[0] += 1
    t.hs_valid[victim] = 1
    t.hs_tag[victim] = tag
    t.hs_idx[victim] = e
    t.hs_tgt[victim] = line
    t.hs_ts[victim] = t.tt_ts[e]
    t.hs_used[victim] = 0
    t.hs_lru[victim] = t.hs_clock[0]
    t.stats[ST_SAMPLER_INSERTS] += 1


@njit(cache=True)
def train_event(t, l2, pc, line):
    """Process one L2 miss / prefetch first-hit; decision is left in ``t.out``."""
    P = t.params
    e = tt_locate(t, pc)
    t.stats[ST_EVENTS] += 1
    t.tt_ts[e] += 1
    prev = t.tt_last[e, 0]
    out = t.out
    out[D_ENTRY] = e
    if P[P_REDUCED]:
        # Triage: train and prefetch unconditionally
        idx = t.tt_last[e, 1] if P[P_FORCE_LOOKAHEAD] else prev
        out[D_STORE] = 1 if idx >= 0 else 0
        out[D_PREFETCH] = 1
        out[D_DEGREE] = P[P_MAX_DEGREE]
        out[D_INDEX] = idx
        t.tt_last[e, 1] = prev
        t.tt_last[e, 0] = line
        return
    if not P[P_SCS_CLOCK_FILLS]:
        t.now[0] += 1
    scs_expire(t)

    hit = False
    if prev >= 0:
        hit = sampler_check(t, l2, e, prev, line)
    scs_check(t, e, line)
    if prev >= 0 and not hit:
        prob = sample_probability(P[P_SAMPLER_ENTRIES], P[P_MAX_SIZE], t.tt_rate[e])
        if lcg_uniform(t.rng) < prob:
            sampler_insert(t, e, prev, line)

    reuse_ok = P[P_ABL_REUSE] or t.tt_reuse[e] > COUNTER_INIT
    base_ok = P[P_ABL_BASE] or t.tt_base[e] > COUNTER_INIT
    store = reuse_ok and base_ok
    if P[P_ABL_HIGH]:
        degree = P[P_MAX_DEGREE]
    else:
        degree = 4 if t.tt_high[e] > COUNTER_INIT else 1
        if degree > P[P_MAX_DEGREE]:
            degree = P[P_MAX_DEGREE]
    if P[P_ABL_LOOKAHEAD]:
        look = 0
    elif P[P_ABL_HIGH] or P[P_FORCE_LOOKAHEAD]:
        look = 1
    else:
        look = t.tt_look[e]
    idx = t.tt_last[e, look]
    out[D_STORE] = 1 if store and idx >= 0 else 0
    out[D_PREFETCH] = 1 if store else 0
    out[D_DEGREE] = degree
    out[D_INDEX] = idx
    if store:
        t.stats[ST_STORE_DECISIONS] += 1
        if degree > 1:
            t.stats[ST_HIGH_DEGREE_DECISIONS] += 1
        if look:
            t.stats[ST_LOOKAHEAD_DECISIONS] += 1

    if t.tt_high[e] == COUNTER_MAX:
        t.tt_look[e] = 1
    elif t.tt_base[e] < COUNTER_INIT:
        t.tt_look[e] = 0
    t.tt_last[e, 1] = prev
    t.tt_last[e, 0] = line


@njit(cache=True)
def count_fill(t):
    """Advance the SCS clock on an L2 fill (only with ``scs.clock = fills``)."""
    if t.params[P_SCS_CLOCK_FILLS]:
        t.now[0] += 1


@njit(cache=True)
def sampling_trials(t, e, n):
    """Count coin-flip successes of `n` insertion trials for entry `e`."""
    P = t.params
    prob = sample_probability(P[P_SAMPLER_ENTRIES], P[P_MAX_SIZE], t.tt_rate[e])
    k = 0
    for _ in range(n):
        if lcg_uniform(t.rng) < prob:
            k += 1
    return k


@njit(cache=True)
def _demand_access(l2, line):
    """Demand access with fill on miss; True on a hit."""
    r = cache_access(l2, line, True)
    if r == MISS:
        cache_fill(l2, line, False)
        return False
    return True


@njit(cache=True)
def classify_kernel(t, l2, pcs, lines, base_out, high_out):
    """Demand-only L2 plus training unit; records counters after each event.

    Entries of base_out/high_out are -1 for records that hit in the L2.
    """
    for i in range(lines.shape[0]):
        line = lines[i]
        base_out[i] = -1
        high_out[i] = -1
        if _demand_access(l2, line):
            continue
        count_fill(t)
        train_event(t, l2, pcs[i], line)
        e = t.out[D_ENTRY]
        base_out[i] = t.tt_base[e]
        high_out[i] = t.tt_high[e]


@dataclass(frozen=True)
class TrainingDecision:
    should_store: bool
    should_prefetch: bool
    degree: int
    markov_index: int | None


class TrainingUnit:
    """Python-facing wrapper (byte addresses in, line addresses in decisions)."""

    def __init__(self, cfg: TrainingConfig = TrainingConfig(), l2=None):
        self.config = cfg
        self.state = make_training_state(cfg)
        if l2 is None:
            l2 = make_cache_state(CacheConfig(512 * 1024, 8))
        self.l2 = l2

    def event(self, pc, addr) -> TrainingDecision:
        train_event(self.state, self.l2, pc, addr >> LINE_SHIFT)
        o = self.state.out
        return TrainingDecision(
            bool(o[D_STORE]), bool(o[D_PREFETCH]), int(o[D_DEGREE]),
            None if o[D_INDEX] < 0 else int(o[D_INDEX]) << LINE_SHIFT,
        )

    def entry(self, pc):
        """Snapshot of the training entry for `pc` (allocating if absent)."""
        t = self.state
        e = int(tt_locate(t, pc))
        return {
            "index": e,
            "last_addr": [int(x) << LINE_SHIFT if x >= 0 else None for x in t.tt_last[e]],
            "timestamp": int(t.tt_ts[e]),
            "reuse_conf": int(t.tt_reuse[e]),
            "base_pattern_conf": int(t.tt_base[e]),
            "high_pattern_conf": int(t.tt_high[e]),
            "sample_rate": int(t.tt_rate[e]),
            "lookahead": 2 if t.tt_look[e] else 1,
        }

    @property
    def stats(self):
        return dict(zip(STAT_NAMES, (int(v) for v in self.state.stats)))
