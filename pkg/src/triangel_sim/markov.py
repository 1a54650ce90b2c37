"""Markov history table stored in the L3's reserved ways.

Each reserved way of an L3 set holds one 64-byte line of compressed
(lookup-hash, target, confidence) entries.  The lookup address chooses the L3
set through its index bits and the way through ``hash % partition_ways``; the
entries inside that line are searched associatively by their 10-bit hash.

Two entry formats are supported:

* ``triangel42``: 10-bit hash, 31-bit target line address, 1 confidence bit;
  12 entries per line.
* ``triage32``: 10-bit hash, 10-bit lookup-table index, 11-bit line offset,
  1 confidence bit; 16 entries per line.  The target's upper bits live in a
  separate 1024-entry, 16-way lookup table (LUT) with LRU replacement.  LUT
  evictions leave dangling indices behind: a stale index decodes to whatever
  upper bits now occupy that slot.

In-line replacement keeps the most recently used entry in slot 0 and shifts
the others down; the victim is the last slot.  When the partition size
changes, a set is re-indexed the next time it is touched (the stored
per-set policy no longer matches ``ways``).
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .hashing import LINE_SHIFT, hash10
from .state import define_state

TRIANGEL42, TRIAGE32 = 0, 1
FORMATS = {"triangel42": TRIANGEL42, "triage32": TRIAGE32}

LINE_BITS = 512
HASH_BITS = 10
CONF_BITS = 1
TRIANGEL_TARGET_BITS = 31
TRIANGEL_TARGET_LIMIT = 1 << TRIANGEL_TARGET_BITS

# train() status codes
TRAIN_SKIPPED, TRAIN_UNCHANGED, TRAIN_UPDATED, TRAIN_INSERTED = 0, 1, 2, 3

ST_READS = 0
ST_WRITES = 1
ST_REINDEX_ACCESSES = 2
ST_REINDEXES = 3
ST_OUT_OF_RANGE = 4
ST_INLINE_EVICTIONS = 5
ST_REINDEX_DROPS = 6
ST_LUT_INSERTS = 7
ST_LUT_EVICTIONS = 8
ST_LOOKUP_HITS = 9
N_STATS = 10

STAT_NAMES = (
    "reads",
    "writes",
    "reindex_accesses",
    "reindexes",
    "target_out_of_range",
    "inline_evictions",
    "reindex_drops",
    "lut_inserts",
    "lut_evictions",
    "lookup_hits",
)


def lut_index_bits(lut_entries):
    return max(1, int(lut_entries - 1).bit_length())


def entry_bits(fmt, lut_entries=1024, offset_bits=11):
    if fmt == TRIANGEL42:
        return HASH_BITS + TRIANGEL_TARGET_BITS + CONF_BITS
    return HASH_BITS + lut_index_bits(lut_entries) + offset_bits + CONF_BITS


def entries_per_line(fmt, lut_entries=1024, offset_bits=11):
    return LINE_BITS // entry_bits(fmt, lut_entries, offset_bits)


MarkovState, MarkovStateType = define_state(
    "MarkovState",
    "sets set_bits set_mask max_ways slots fmt offset_bits lut_sets lut_ways "
    "hsh tgt conf policy ways lut_upper lut_stamp lut_clock stats ev ev_n last",
    __name__,
)


@njit(cache=True)
def _new_markov_state(*args):
    return MarkovState(*args)


MarkovState._ctor = _new_markov_state


@dataclass(frozen=True)
class MarkovConfig:
    sets: int = 2048
    max_ways: int = 8
    entry_format: str = "triangel42"
    lut_entries: int = 1024
    lut_ways: int = 16
    lut_offset_bits: int = 11

    def __post_init__(self):
        if self.entry_format not in FORMATS:
            raise ValueError(f"unknown markov.entry_format {self.entry_format!r}")
        if self.sets < 1 or self.sets & (self.sets - 1):
            raise ValueError("markov sets must be a power of two")
        if self.lut_entries % self.lut_ways:
            raise ValueError("markov.lut_entries must be a multiple of markov.lut_ways")
        if not 1 <= self.max_ways <= 8:
            raise ValueError("markov max_ways must be in [1, 8] (3-bit policy field)")

    @property
    def fmt(self):
        return FORMATS[self.entry_format]

    @property
    def slots(self):
        return entries_per_line(self.fmt, self.lut_entries, self.lut_offset_bits)

    @property
    def entry_bits(self):
        return entry_bits(self.fmt, self.lut_entries, self.lut_offset_bits)


def make_markov_state(cfg: MarkovConfig) -> MarkovState:
    sets, ways, slots = cfg.sets, cfg.max_ways, cfg.slots
    lut_sets = cfg.lut_entries // cfg.lut_ways
    return MarkovState(
        sets=np.int64(sets),
        set_bits=np.int64(sets.bit_length() - 1),
        set_mask=np.int64(sets - 1),
        max_ways=np.int64(ways),
        slots=np.int64(slots),
        fmt=np.int64(cfg.fmt),
        offset_bits=np.int64(cfg.lut_offset_bits),
        lut_sets=np.int64(lut_sets),
        lut_ways=np.int64(cfg.lut_ways),
        hsh=np.full((sets, ways, slots), -1, dtype=np.int32),
        tgt=np.zeros((sets, ways, slots), dtype=np.int64),
        conf=np.zeros((sets, ways, slots), dtype=np.uint8),
        policy=np.zeros(sets, dtype=np.int64),
        ways=np.zeros(1, dtype=np.int64),
        lut_upper=np.full(cfg.lut_entries, -1, dtype=np.int64),
        lut_stamp=np.zeros(cfg.lut_entries, dtype=np.int64),
        lut_clock=np.zeros(1, dtype=np.int64),
        stats=np.zeros(N_STATS, dtype=np.int64),
        ev=np.zeros((ways * slots + 1, 2), dtype=np.int64),
        ev_n=np.zeros(1, dtype=np.int64),
        last=np.zeros(2, dtype=np.int64),
    )


@njit(cache=True)
def subset_index(tag_hash, partition_ways):
    return tag_hash % partition_ways


@njit(cache=True)
def markov_set(m, line):
    return line & m.set_mask


@njit(cache=True)
def markov_hash(m, line):
    """10-bit XOR fold of the line-address bits above the set index."""
    return hash10(line >> m.set_bits)


# --- lookup table (triage32 only) -------------------------------------------

@njit(cache=True)
def lut_index(m, upper):
    """Index of `upper` in the LUT, inserting it (LRU victim) if absent."""
    base = (upper % m.lut_sets) * m.lut_ways
    m.lut_clock[0] += 1
    victim = base
    for i in range(base, base + m.lut_ways):
        u = m.lut_upper[i]
        if u == upper:
            m.lut_stamp[i] = m.lut_clock[0]
            return i
        if u < 0:
            if m.lut_upper[victim] >= 0 or i == base:
                victim = i
        elif m.lut_upper[victim] >= 0 and m.lut_stamp[i] < m.lut_stamp[victim]:
            victim = i
    if m.lut_upper[victim] >= 0:
        m.stats[ST_LUT_EVICTIONS] += 1
    m.stats[ST_LUT_INSERTS] += 1
    m.lut_upper[victim] = upper
    m.lut_stamp[victim] = m.lut_clock[0]
    return victim


@njit(cache=True)
def encode_target(m, line):
    if m.fmt == TRIANGEL42:
        return line
    ob = m.offset_bits
    idx = lut_index(m, line >> ob)
    return (idx << ob) | (line & ((1 << ob) - 1))


@njit(cache=True)
def decode_target(m, raw):
    """Target line for a stored encoding; touches the LUT entry it reads."""
    if m.fmt == TRIANGEL42:
        return raw
    ob = m.offset_bits
    idx = raw >> ob
    m.lut_clock[0] += 1
    m.lut_stamp[idx] = m.lut_clock[0]
    return (m.lut_upper[idx] << ob) | (raw & ((1 << ob) - 1))


# --- in-line list helpers ---------------------------------------------------

@njit(cache=True)
def _find_slot(m, s, w, h):
    row = m.hsh[s, w]
    for i in range(m.slots):
        if row[i] == h:
            return i
        if row[i] < 0:
            return -1
    return -1


@njit(cache=True)
def _move_to_front(m, s, w, i):
    if i == 0:
        return
    h = m.hsh[s, w, i]
    t = m.tgt[s, w, i]
    cf = m.conf[s, w, i]
    for j in range(i, 0, -1):
        m.hsh[s, w, j] = m.hsh[s, w, j - 1]
        m.tgt[s, w, j] = m.tgt[s, w, j - 1]
        m.conf[s, w, j] = m.conf[s, w, j - 1]
    m.hsh[s, w, 0] = h
    m.tgt[s, w, 0] = t
    m.conf[s, w, 0] = cf


@njit(cache=True)
def _record_drop(m, s, h):
    n = m.ev_n[0]
    if n < m.ev.shape[0]:
        m.ev[n, 0] = s
        m.ev[n, 1] = h
        m.ev_n[0] = n + 1


@njit(cache=True)
def _insert_front(m, s, w, h, raw, cf):
    last = m.slots - 1
    if m.hsh[s, w, last] >= 0:
        m.stats[ST_INLINE_EVICTIONS] += 1
        _record_drop(m, s, m.hsh[s, w, last])
    for j in range(last, 0, -1):
        m.hsh[s, w, j] = m.hsh[s, w, j - 1]
        m.tgt[s, w, j] = m.tgt[s, w, j - 1]
        m.conf[s, w, j] = m.conf[s, w, j - 1]
    m.hsh[s, w, 0] = h
    m.tgt[s, w, 0] = raw
    m.conf[s, w, 0] = cf


@njit(cache=True)
def markov_reindex_set(m, s):
    """Move every entry of set `s` to its sub-set for the current partition.

    Entries are re-inserted most-recent-slot first; an entry whose destination
    line is already full is dropped.
    """
    n = m.ways[0]
    if m.policy[s] == n:
        return
    cnt = 0
    cap = m.max_ways * m.slots
    hs = np.empty(cap, dtype=np.int64)
    ts = np.empty(cap, dtype=np.int64)
    cs = np.empty(cap, dtype=np.int64)
    for i in range(m.slots):
        for w in range(m.max_ways):
            if m.hsh[s, w, i] >= 0:
                hs[cnt] = m.hsh[s, w, i]
                ts[cnt] = m.tgt[s, w, i]
                cs[cnt] = m.conf[s, w, i]
                cnt += 1
    m.policy[s] = n
    if cnt == 0:
        # nothing resident: only the policy field changes
        return
    for w in range(m.max_ways):
        for i in range(m.slots):
            m.hsh[s, w, i] = -1
            m.conf[s, w, i] = 0
    if n == 0:
        m.stats[ST_REINDEX_DROPS] += cnt
        return
    m.stats[ST_REINDEXES] += 1
    m.stats[ST_REINDEX_ACCESSES] += n
    fill = np.zeros(n, dtype=np.int64)
    for k in range(cnt):
        w = hs[k] % n
        j = fill[w]
        if j >= m.slots:
            m.stats[ST_REINDEX_DROPS] += 1
            _record_drop(m, s, hs[k])
            continue
        m.hsh[s, w, j] = hs[k]
        m.tgt[s, w, j] = ts[k]
        m.conf[s, w, j] = cs[k]
        fill[w] = j + 1


@njit(cache=True)
def markov_lookup(m, line):
    """Look up `line`; returns (found, target_line, confidence).

    Counts one Markov read.  A hit becomes the most recently used entry of its
    line.
    """
    n = m.ways[0]
    if n == 0:
        return False, -1, 0
    s = line & m.set_mask
    h = hash10(line >> m.set_bits)
    if m.policy[s] != n:
        markov_reindex_set(m, s)
    m.stats[ST_READS] += 1
    w = h % n
    i = _find_slot(m, s, w, h)
    if i < 0:
        return False, -1, 0
    _move_to_front(m, s, w, i)
    m.stats[ST_LOOKUP_HITS] += 1
    raw = m.tgt[s, w, 0]
    m.last[0] = raw
    m.last[1] = m.conf[s, w, 0]
    return True, decode_target(m, raw), m.conf[s, w, 0]


@njit(cache=True)
def markov_peek_raw(m, s, h):
    """(found, raw_target, confidence) without side effects.

    Only meaningful for sets already indexed for the current partition.
    """
    n = m.ways[0]
    if n == 0 or m.policy[s] != n:
        return False, -1, 0
    w = h % n
    row = m.hsh[s, w]
    for i in range(m.slots):
        if row[i] == h:
            return True, m.tgt[s, w, i], m.conf[s, w, i]
        if row[i] < 0:
            break
    return False, -1, 0


@njit(cache=True)
def markov_train(m, index_line, target_line):
    """Record target_line as the successor of index_line.

    Returns a TRAIN_* status.  The resulting raw (target, confidence) is left
    in ``m.last``.  A repeat of an identical, confident pair writes nothing.
    """
    n = m.ways[0]
    if n == 0:
        return TRAIN_SKIPPED
    if m.fmt == TRIANGEL42 and target_line >= TRIANGEL_TARGET_LIMIT:
        m.stats[ST_OUT_OF_RANGE] += 1
        return TRAIN_SKIPPED
    raw = encode_target(m, target_line)
    s = index_line & m.set_mask
    h = hash10(index_line >> m.set_bits)
    if m.policy[s] != n:
        markov_reindex_set(m, s)
    m.stats[ST_WRITES] += 1
    w = h % n
    i = _find_slot(m, s, w, h)
    if i < 0:
        _insert_front(m, s, w, h, raw, 0)
        m.last[0] = raw
        m.last[1] = 0
        return TRAIN_INSERTED
    if m.tgt[s, w, i] == raw:
        if m.conf[s, w, i] == 1:
            m.last[0] = raw
            m.last[1] = 1
            return TRAIN_UNCHANGED
        m.conf[s, w, i] = 1
    elif m.conf[s, w, i] == 1:
        m.conf[s, w, i] = 0
    else:
        m.tgt[s, w, i] = raw
    _move_to_front(m, s, w, i)
    m.last[0] = m.tgt[s, w, 0]
    m.last[1] = m.conf[s, w, 0]
    return TRAIN_UPDATED


@njit(cache=True)
def markov_resize(m, n):
    """Change the partition to `n` ways.

    Growing is lazy: each set is re-indexed the next time it is touched.
    Shrinking re-indexes every set at once, before the released lines are
    handed back to data, so entries from the lost ways are relocated.
    """
    old = m.ways[0]
    m.ways[0] = n
    if n < old:
        for s in range(m.sets):
            markov_reindex_set(m, s)


@njit(cache=True)
def markov_reindex_all(m):
    for s in range(m.sets):
        markov_reindex_set(m, s)


def peek_target(m, line):
    """(target_line, confidence) stored for `line`, or None; no side effects.

    Handles sets that have not been re-indexed since the last resize and
    decodes LUT targets without touching LUT recency.
    """
    n = int(m.policy[line & int(m.set_mask)])
    if n == 0 or int(m.ways[0]) == 0:
        return None
    s = line & int(m.set_mask)
    h = int(hash10(line >> int(m.set_bits)))
    for w in range(n):
        row = m.hsh[s, w]
        hit = np.nonzero(row == h)[0]
        if hit.size:
            i = int(hit[0])
            raw = int(m.tgt[s, w, i])
            if int(m.fmt) != TRIANGEL42:
                ob = int(m.offset_bits)
                raw = (int(m.lut_upper[raw >> ob]) << ob) | (raw & ((1 << ob) - 1))
            return raw, int(m.conf[s, w, i])
    return None


@dataclass(frozen=True)
class MarkovEntry:
    lookup_hash: int
    target: int
    confidence: int


def pack_line(entries, fmt, lut_entries=1024, offset_bits=11):
    """Bit-pack entries into one 64-byte line (little-endian, slot 0 first)."""
    width = entry_bits(fmt, lut_entries, offset_bits)
    if len(entries) * width > LINE_BITS:
        raise ValueError(
            f"{len(entries)} entries of {width} bits exceed a {LINE_BITS}-bit line"
        )
    target_bits = width - HASH_BITS - CONF_BITS
    word = 0
    for k, e in enumerate(entries):
        if not (0 <= e.lookup_hash < 1 << HASH_BITS and 0 <= e.target < 1 << target_bits):
            raise ValueError(f"entry {e} does not fit the {width}-bit format")
        v = e.lookup_hash | (e.target << HASH_BITS) | ((e.confidence & 1) << (width - 1))
        word |= v << (k * width)
    return word.to_bytes(LINE_BITS // 8, "little")


def unpack_line(data, count, fmt, lut_entries=1024, offset_bits=11):
    width = entry_bits(fmt, lut_entries, offset_bits)
    word = int.from_bytes(data, "little")
    target_bits = width - HASH_BITS - CONF_BITS
    out = []
    for k in range(count):
        v = (word >> (k * width)) & ((1 << width) - 1)
        out.append(
            MarkovEntry(
                lookup_hash=v & ((1 << HASH_BITS) - 1),
                target=(v >> HASH_BITS) & ((1 << target_bits) - 1),
                confidence=v >> (width - 1),
            )
        )
    return out


class MarkovTable:
    """Python-facing wrapper around a :class:`MarkovState`.

    Addresses are byte addresses; line-offset bits are ignored.
    """

    def __init__(self, cfg: MarkovConfig = MarkovConfig(), ways=None):
        self.config = cfg
        self.state = make_markov_state(cfg)
        self.resize(cfg.max_ways if ways is None else ways)

    @property
    def ways(self):
        return int(self.state.ways[0])

    @property
    def stats(self):
        return dict(zip(STAT_NAMES, (int(v) for v in self.state.stats)))

    def key(self, addr):
        line = addr >> LINE_SHIFT
        return int(markov_set(self.state, line)), int(markov_hash(self.state, line))

    def lookup(self, addr):
        """(target_addr, confidence) or None."""
        found, target, conf = markov_lookup(self.state, addr >> LINE_SHIFT)
        if not found:
            return None
        return int(target) << LINE_SHIFT, int(conf)

    def train(self, index_addr, target_addr):
        return int(markov_train(self.state, index_addr >> LINE_SHIFT, target_addr >> LINE_SHIFT))

    def resize(self, ways):
        if not 0 <= ways <= self.config.max_ways:
            raise ValueError(f"partition ways {ways} outside [0, {self.config.max_ways}]")
        markov_resize(self.state, ways)

    def reindex_set(self, s):
        markov_reindex_set(self.state, s)

    def reindex_all(self):
        markov_reindex_all(self.state)

    def line_entries(self, s, w):
        st = self.state
        return [
            MarkovEntry(int(st.hsh[s, w, i]), int(st.tgt[s, w, i]), int(st.conf[s, w, i]))
            for i in range(int(st.slots))
            if st.hsh[s, w, i] >= 0
        ]

    def entries(self):
        """All resident entries as (set, way, slot, MarkovEntry)."""
        st = self.state
        out = []
        for s, w, i in zip(*np.nonzero(st.hsh[:, : self.ways, :] >= 0)):
            out.append(
                (int(s), int(w), int(i),
                 MarkovEntry(int(st.hsh[s, w, i]), int(st.tgt[s, w, i]), int(st.conf[s, w, i])))
            )
        return out

    def encoded_line(self, s, w):
        c = self.config
        return pack_line(self.line_entries(s, w), c.fmt, c.lut_entries, c.lut_offset_bits)
