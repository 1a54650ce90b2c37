"""Markov partition sizing: the Set Dueller and the Bloom-filter sizer.

Set Dueller
    A handful of L3 sets are shadowed by two LRU tag stacks: 16 deep for data
    lines and 8 deep for Markov entries (recorded at a 1-in-12 subsample, so
    one of its ways stands for one 12-entry Markov line).  An access at stack
    distance d would hit for every partition p where it fits: data hits need
    ``16 - p >= d``, Markov hits need ``p >= d``.  Per-partition hit totals are
    compared at the end of each window and the best partition is applied to
    the next one.

Bloom sizer
    Counts distinct addresses seen this window and grows the partition until
    ``count * bias`` entries fit; at a window boundary it restarts and may
    shrink to the previous window's target.
"""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .hashing import hash10, mix64
from .state import define_state

DATA_DEPTH = 16
MARKOV_DEPTH = 8
N_PARTITIONS = MARKOV_DEPTH + 1

DuellerState, DuellerStateType = define_state(
    "DuellerState",
    "l3_set_bits set_ids set_map ctags mtags counters weight subsample window "
    "events decisions last",
    __name__,
)


@njit(cache=True)
def _new_dueller_state(*args):
    return DuellerState(*args)


DuellerState._ctor = _new_dueller_state


@dataclass(frozen=True)
class DuellerConfig:
    l3_sets: int = 2048
    sampled_sets: int = 64
    window: int = 500000
    bias: float = 2.0
    subsample: int = 12
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.sampled_sets <= self.l3_sets:
            raise ValueError("dueller.sets must be in [1, l3 sets]")
        if self.window < 1 or self.subsample < 1 or self.bias <= 0:
            raise ValueError("dueller.window, dueller.subsample and dueller.bias must be positive")

    @property
    def weight(self):
        return 12.0 / self.bias


def make_dueller_state(cfg: DuellerConfig) -> DuellerState:
    rng = np.random.default_rng(cfg.seed)
    ids = np.sort(rng.choice(cfg.l3_sets, size=cfg.sampled_sets, replace=False)).astype(np.int64)
    set_map = np.full(cfg.l3_sets, -1, dtype=np.int64)
    set_map[ids] = np.arange(cfg.sampled_sets)
    return DuellerState(
        l3_set_bits=np.int64(cfg.l3_sets.bit_length() - 1),
        set_ids=ids,
        set_map=set_map,
        ctags=np.full((cfg.sampled_sets, DATA_DEPTH), -1, dtype=np.int64),
        mtags=np.full((cfg.sampled_sets, MARKOV_DEPTH), -1, dtype=np.int64),
        counters=np.zeros(N_PARTITIONS, dtype=np.float64),
        weight=np.float64(cfg.weight),
        subsample=np.int64(cfg.subsample),
        window=np.int64(cfg.window),
        events=np.zeros(1, dtype=np.int64),
        decisions=np.zeros(1, dtype=np.int64),
        last=np.full(1, -1, dtype=np.int64),
    )


@njit(cache=True)
def _promote(stack, tag):
    """Move `tag` to the MRU slot; returns its previous 1-based distance or 0."""
    n = stack.shape[0]
    pos = n - 1
    dist = 0
    for i in range(n):
        if stack[i] == tag:
            pos = i
            dist = i + 1
            break
        if stack[i] < 0:
            pos = i
            break
    for i in range(pos, 0, -1):
        stack[i] = stack[i - 1]
    stack[0] = tag
    return dist


@njit(cache=True)
def dueller_record_cache(d, line):
    s = line & ((1 << d.l3_set_bits) - 1)
    k = d.set_map[s]
    if k < 0:
        return 0
    dist = _promote(d.ctags[k], hash10(line >> d.l3_set_bits))
    if dist:
        for p in range(N_PARTITIONS):
            if DATA_DEPTH - p >= dist:
                d.counters[p] += 1.0
    return dist


@njit(cache=True)
def markov_sampled(d, line):
    return mix64(line) % np.uint64(d.subsample) == 0


@njit(cache=True)
def dueller_record_markov(d, line):
    if not markov_sampled(d, line):
        return 0
    s = line & ((1 << d.l3_set_bits) - 1)
    k = d.set_map[s]
    if k < 0:
        return 0
    dist = _promote(d.mtags[k], hash10(line >> d.l3_set_bits))
    if dist:
        for p in range(dist, N_PARTITIONS):
            d.counters[p] += d.weight
    return dist


@njit(cache=True)
def dueller_decide(d):
    best = 0
    for p in range(1, N_PARTITIONS):
        if d.counters[p] > d.counters[best]:
            best = p
    d.counters[:] = 0.0
    d.events[0] = 0
    d.decisions[0] += 1
    d.last[0] = best
    return best


@njit(cache=True)
def dueller_tick(d):
    """Count one training event; returns the new partition at a window end, else -1."""
    d.events[0] += 1
    if d.events[0] >= d.window:
        return dueller_decide(d)
    return -1


class SetDueller:
    def __init__(self, cfg: DuellerConfig = DuellerConfig()):
        self.config = cfg
        self.state = make_dueller_state(cfg)

    @property
    def sampled_sets(self):
        return [int(s) for s in self.state.set_ids]

    @property
    def counters(self):
        return self.state.counters.copy()

    def record_cache(self, line):
        return int(dueller_record_cache(self.state, line))

    def record_markov(self, line):
        return int(dueller_record_markov(self.state, line))

    def decide(self):
        return int(dueller_decide(self.state))


# --- Bloom sizer -------------------------------------------------------------

BloomState, BloomStateType = define_state(
    "BloomState",
    "bits k count bias entries_per_way max_ways window records prev_target windows",
    __name__,
)


@njit(cache=True)
def _new_bloom_state(*args):
    return BloomState(*args)


BloomState._ctor = _new_bloom_state


def bloom_geometry(expected, fp_rate):
    """(bits, hashes) for `expected` inserts at `fp_rate` false positives."""
    if expected < 1 or not 0 < fp_rate < 1:
        raise ValueError("bloom.expected must be >= 1 and bloom.fp_rate in (0, 1)")
    m = math.ceil(-expected * math.log(fp_rate) / math.log(2) ** 2)
    k = max(1, round(m / expected * math.log(2)))
    return m, k


@dataclass(frozen=True)
class BloomConfig:
    entries_per_way: int = 2048 * 16
    max_ways: int = 8
    bias: float = 1.0
    window: int = 30_000_000
    fp_rate: float = 0.05
    expected: int = 0  # 0: size for max_ways * entries_per_way

    @property
    def expected_inserts(self):
        return self.expected or self.max_ways * self.entries_per_way

    @property
    def geometry(self):
        return bloom_geometry(self.expected_inserts, self.fp_rate)


def make_bloom_state(cfg: BloomConfig) -> BloomState:
    m, k = cfg.geometry
    return BloomState(
        bits=np.zeros(m, dtype=np.uint8),
        k=np.int64(k),
        count=np.zeros(1, dtype=np.int64),
        bias=np.float64(cfg.bias),
        entries_per_way=np.int64(cfg.entries_per_way),
        max_ways=np.int64(cfg.max_ways),
        window=np.int64(cfg.window),
        records=np.zeros(1, dtype=np.int64),
        prev_target=np.zeros(1, dtype=np.int64),
        windows=np.zeros(1, dtype=np.int64),
    )


@njit(cache=True)
def bloom_insert(b, key):
    """Insert `key`; True if it was (apparently) new."""
    m = np.uint64(b.bits.shape[0])
    h1 = mix64(key)
    h2 = mix64(h1 ^ np.uint64(0x5BD1E9955BD1E995)) | np.uint64(1)
    new = False
    for i in range(b.k):
        j = (h1 + np.uint64(i) * h2) % m
        if b.bits[j] == 0:
            b.bits[j] = 1
            new = True
    return new


@njit(cache=True)
def bloom_contains(b, key):
    m = np.uint64(b.bits.shape[0])
    h1 = mix64(key)
    h2 = mix64(h1 ^ np.uint64(0x5BD1E9955BD1E995)) | np.uint64(1)
    for i in range(b.k):
        if b.bits[(h1 + np.uint64(i) * h2) % m] == 0:
            return False
    return True


@njit(cache=True)
def bloom_window_target(b):
    need = b.count[0] * b.bias
    t = int(math.ceil(need / b.entries_per_way - 1e-12)) if need > 0 else 0
    return t if t < b.max_ways else b.max_ways


@njit(cache=True)
def bloom_target_ways(b):
    t = bloom_window_target(b)
    return t if t > b.prev_target[0] else b.prev_target[0]


@njit(cache=True)
def bloom_observe(b, line):
    if bloom_insert(b, line):
        b.count[0] += 1


@njit(cache=True)
def bloom_tick(b):
    """Count one trace record; closes the window when it is full."""
    b.records[0] += 1
    if b.records[0] >= b.window:
        b.prev_target[0] = bloom_window_target(b)
        b.bits[:] = 0
        b.count[0] = 0
        b.records[0] = 0
        b.windows[0] += 1
        return True
    return False


class BloomSizer:
    def __init__(self, cfg: BloomConfig = BloomConfig()):
        self.config = cfg
        self.state = make_bloom_state(cfg)

    @property
    def unique_count(self):
        return int(self.state.count[0])

    def observe(self, line):
        bloom_observe(self.state, line)

    def contains(self, line):
        return bool(bloom_contains(self.state, line))

    def tick(self):
        return bool(bloom_tick(self.state))

    def target_ways(self):
        return int(bloom_target_ways(self.state))
