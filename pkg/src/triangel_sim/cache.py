"""Set-associative cache with way partitioning.

One model serves as the L2, the L3 data array and (through its low-numbered
reserved ways) the space the Markov table lives in.  All state is held in a
:class:`CacheState` record of numpy arrays so that the jit-compiled
simulation loop can operate on it directly; :class:`Cache` wraps it for use
from plain Python.

Addresses passed to the kernels are *line numbers* (byte address >> 6).  The
Python wrapper accepts byte addresses and drops the line-offset bits.
"""
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

from .hashing import LINE_SHIFT
from .state import define_state

LRU, SRRIP, FIFO = 0, 1, 2
POLICIES = {"lru": LRU, "srrip": SRRIP, "fifo": FIFO}

HIT, PF_FIRST_HIT, MISS = 0, 1, 2

RRPV_MAX = 3
RRPV_INSERT = 2

# prefetch mark values: 2 = filled by a prefetch in the current statistics
# epoch, 1 = filled before the epoch started (still triggers training).
PF_NONE, PF_OLD, PF_NEW = 0, 1, 2

# indices into CacheState.stats
ST_HITS = 0
ST_PF_FIRST_HITS = 1
ST_MISSES = 2
ST_FILLS = 3
ST_EVICTIONS = 4
ST_WRITEBACKS = 5
ST_PF_USED = 6
ST_PF_UNUSED_EVICTED = 7
ST_RESIZE_INVALIDATIONS = 8
N_STATS = 9

STAT_NAMES = (
    "hits",
    "prefetch_first_hits",
    "misses",
    "fills",
    "evictions",
    "writebacks",
    "prefetches_used",
    "prefetched_evicted_unused",
    "resize_invalidations",
)


class Outcome(IntEnum):
    HIT = HIT
    PREFETCH_FIRST_HIT = PF_FIRST_HIT
    MISS = MISS


CacheState, CacheStateType = define_state(
    "CacheState",
    "sets ways set_mask policy tags pf dirty repl clock reserved stats victim",
    __name__,
)


@njit(cache=True)
def _new_cache_state(*args):
    return CacheState(*args)


CacheState._ctor = _new_cache_state


@dataclass(frozen=True)
class CacheConfig:
    size_bytes: int
    ways: int
    line_bytes: int = 64
    replacement: str = "lru"
    reserved_ways_max: int = 0

    def __post_init__(self):
        if self.line_bytes != 1 << LINE_SHIFT:
            raise ValueError(f"line_bytes must be {1 << LINE_SHIFT}")
        if self.ways < 1:
            raise ValueError("ways must be >= 1")
        if self.replacement not in POLICIES:
            raise ValueError(f"unknown replacement policy {self.replacement!r}")
        lines, rem = divmod(self.size_bytes, self.line_bytes)
        sets, rem2 = divmod(lines, self.ways)
        if rem or rem2 or sets < 1 or sets & (sets - 1):
            raise ValueError(
                "size_bytes must equal sets * ways * line_bytes with sets a power of two"
            )
        if not 0 <= self.reserved_ways_max <= self.ways // 2:
            raise ValueError("reserved_ways_max must be in [0, ways/2]")

    @property
    def sets(self):
        return self.size_bytes // (self.line_bytes * self.ways)


def make_cache_state(cfg: CacheConfig) -> CacheState:
    sets, ways = cfg.sets, cfg.ways
    return CacheState(
        sets=np.int64(sets),
        ways=np.int64(ways),
        set_mask=np.int64(sets - 1),
        policy=np.int64(POLICIES[cfg.replacement]),
        tags=np.full((sets, ways), -1, dtype=np.int64),
        pf=np.zeros((sets, ways), dtype=np.uint8),
        dirty=np.zeros((sets, ways), dtype=np.uint8),
        repl=np.zeros((sets, ways), dtype=np.int64),
        clock=np.zeros(1, dtype=np.int64),
        reserved=np.zeros(1, dtype=np.int64),
        stats=np.zeros(N_STATS, dtype=np.int64),
        victim=np.full(3, -1, dtype=np.int64),
    )


@njit(cache=True)
def cache_find(c, line):
    """Way holding `line`, or -1.  No side effects."""
    s = line & c.set_mask
    tags = c.tags[s]
    for w in range(c.reserved[0], c.ways):
        if tags[w] == line:
            return w
    return -1


@njit(cache=True)
def cache_contains(c, line):
    return cache_find(c, line) >= 0


@njit(cache=True)
def _touch(c, s, w):
    if c.policy == SRRIP:
        c.repl[s, w] = 0
    elif c.policy == LRU:
        c.clock[0] += 1
        c.repl[s, w] = c.clock[0]


@njit(cache=True)
def cache_access(c, line, is_demand):
    """Look up `line`; returns HIT, PF_FIRST_HIT or MISS.

    A demand hit on a prefetched line clears its mark and reports
    PF_FIRST_HIT.  Misses leave the contents unchanged.
    """
    s = line & c.set_mask
    w = cache_find(c, line)
    if w < 0:
        c.stats[ST_MISSES] += 1
        return MISS
    _touch(c, s, w)
    mark = c.pf[s, w]
    if is_demand and mark != PF_NONE:
        c.pf[s, w] = PF_NONE
        c.stats[ST_PF_FIRST_HITS] += 1
        if mark == PF_NEW:
            c.stats[ST_PF_USED] += 1
        return PF_FIRST_HIT
    c.stats[ST_HITS] += 1
    return HIT


@njit(cache=True)
def _victim_way(c, s):
    lo = c.reserved[0]
    tags = c.tags[s]
    for w in range(lo, c.ways):
        if tags[w] < 0:
            return w
    repl = c.repl[s]
    if c.policy == SRRIP:
        while True:
            for w in range(lo, c.ways):
                if repl[w] >= RRPV_MAX:
                    return w
            for w in range(lo, c.ways):
                repl[w] += 1
    best = lo
    for w in range(lo + 1, c.ways):
        if repl[w] < repl[best]:
            best = w
    return best


@njit(cache=True)
def _drop(c, s, w):
    """Invalidate (s, w), recording it in ``c.victim``."""
    c.victim[0] = c.tags[s, w]
    c.victim[1] = c.pf[s, w]
    c.victim[2] = c.dirty[s, w]
    if c.pf[s, w] == PF_NEW:
        c.stats[ST_PF_UNUSED_EVICTED] += 1
    if c.dirty[s, w]:
        c.stats[ST_WRITEBACKS] += 1
    c.tags[s, w] = -1
    c.pf[s, w] = PF_NONE
    c.dirty[s, w] = 0


@njit(cache=True)
def cache_fill(c, line, prefetched):
    """Insert `line` (not already present); returns the evicted line or -1."""
    s = line & c.set_mask
    w = _victim_way(c, s)
    evicted = c.tags[s, w]
    c.victim[0] = -1
    if evicted >= 0:
        _drop(c, s, w)
        c.stats[ST_EVICTIONS] += 1
    c.tags[s, w] = line
    c.pf[s, w] = PF_NEW if prefetched else PF_NONE
    c.dirty[s, w] = 0
    if c.policy == SRRIP:
        c.repl[s, w] = RRPV_INSERT
    else:
        c.clock[0] += 1
        c.repl[s, w] = c.clock[0]
    c.stats[ST_FILLS] += 1
    return evicted


@njit(cache=True)
def cache_mark_dirty(c, line):
    w = cache_find(c, line)
    if w >= 0:
        c.dirty[line & c.set_mask, w] = 1


@njit(cache=True)
def cache_set_reserved(c, n):
    """Reserve ways [0, n) for metadata; returns the number of data lines dropped."""
    old = c.reserved[0]
    dropped = 0
    for w in range(old, n):
        for s in range(c.sets):
            if c.tags[s, w] >= 0:
                _drop(c, s, w)
                dropped += 1
    c.reserved[0] = n
    c.stats[ST_RESIZE_INVALIDATIONS] += dropped
    return dropped


@njit(cache=True)
def cache_age_prefetch_marks(c):
    """Start a new statistics epoch: current prefetch marks become old marks."""
    for s in range(c.sets):
        for w in range(c.ways):
            if c.pf[s, w] == PF_NEW:
                c.pf[s, w] = PF_OLD


class Cache:
    """Python-facing wrapper around a :class:`CacheState`."""

    def __init__(self, cfg: CacheConfig):
        self.config = cfg
        self.state = make_cache_state(cfg)

    @property
    def sets(self):
        return int(self.state.sets)

    @property
    def reserved_ways(self):
        return int(self.state.reserved[0])

    @property
    def data_ways(self):
        return self.config.ways - self.reserved_ways

    def set_index(self, addr):
        return (addr >> LINE_SHIFT) & (self.sets - 1)

    def access(self, addr, is_demand=True) -> Outcome:
        return Outcome(cache_access(self.state, addr >> LINE_SHIFT, is_demand))

    def fill(self, addr, prefetched=False):
        """Fill a line; returns the evicted line's byte address, or None."""
        line = addr >> LINE_SHIFT
        if cache_contains(self.state, line):
            raise ValueError(f"line {addr:#x} already present")
        victim = cache_fill(self.state, line, prefetched)
        return None if victim < 0 else int(victim) << LINE_SHIFT

    def contains(self, addr):
        return bool(cache_contains(self.state, addr >> LINE_SHIFT))

    def set_reserved_ways(self, n):
        if not 0 <= n <= self.config.reserved_ways_max:
            raise ValueError(
                f"reserved ways {n} outside [0, {self.config.reserved_ways_max}]"
            )
        return int(cache_set_reserved(self.state, n))

    def resident_lines(self):
        """Byte addresses of all valid data lines (test helper)."""
        tags = self.state.tags[:, self.reserved_ways:]
        return sorted(int(t) << LINE_SHIFT for t in tags[tags >= 0])

    @property
    def stats(self):
        return dict(zip(STAT_NAMES, (int(v) for v in self.state.stats)))
