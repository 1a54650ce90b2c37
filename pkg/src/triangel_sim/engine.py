"""Prefetch engines and the per-record simulation loop.

Engine kinds
------------
none
    Caches only; the baseline every coverage figure is measured against.
triage_deg1, triage_deg4, triage_deg4_look2
    Train on every (previous miss, current miss) pair of a PC and replay a
    fixed-degree chain; 32-bit LUT-compressed entries; Bloom-filter sizing.
    The look2 variant indexes with the second-to-last address.
triangel, triangel_bloom
    Sampler-gated storage and prefetching with per-PC degree and lookahead,
    42-bit entries, a Metadata Reuse Buffer (MRB), and Set Dueller sizing
    (or Bloom sizing with a 1.5 bias for the ``_bloom`` variant).

Every record is fully processed before the next one: L2 lookup, L3 and
memory on a miss, then (for a miss or a first hit on a prefetched line) the
engine trains and issues its prefetches, which fill instantly.

The kernel :func:`simulate` takes the shared state (:class:`EngineState`) and
a tuple of per-core states (:class:`CoreState`): private L2, training unit
and MRB.  The L3, the Markov partition and its sizer are shared.
"""

import numpy as np
from numba import njit

from .cache import (
    HIT,
    MISS,
    PF_FIRST_HIT,
    ST_PF_USED,
    cache_access,
    cache_age_prefetch_marks,
    cache_contains,
    cache_fill,
    cache_find,
    cache_mark_dirty,
    cache_set_reserved,
)
from .hashing import hash10
from .markov import (
    ST_READS,
    ST_REINDEX_ACCESSES,
    ST_WRITES,
    TRAIN_SKIPPED,
    TRAIN_UNCHANGED,
    TRIANGEL42,
    decode_target,
    markov_lookup,
    markov_peek_raw,
    markov_resize,
    markov_train,
)
from .sizing import (
    bloom_observe,
    bloom_target_ways,
    bloom_tick,
    dueller_record_cache,
    dueller_record_markov,
    dueller_tick,
)
from .state import define_state
from .training import D_DEGREE, D_INDEX, D_PREFETCH, D_STORE, count_fill, train_event

ENGINE_KINDS = (
    "none",
    "triage_deg1",
    "triage_deg4",
    "triage_deg4_look2",
    "triangel",
    "triangel_bloom",
)
KIND_NONE = 0

SIZER_KINDS = ("dueller", "bloom", "fixed")
SIZER_DUELLER, SIZER_BLOOM, SIZER_FIXED = 0, 1, 2

# engine parameter indices
E_KIND = 0
E_MRB = 1
E_TRAIN_STORES = 2
E_PF_FILL_L3 = 3
E_SIZER = 4
E_WARMUP = 5
E_SHADOW = 6
E_LOG = 7
E_MAX_WAYS = 8
N_EPARAMS = 9

# counter indices
C_RECORDS = 0
C_DEMAND = 1
C_L2_MISSES = 2
C_PF_FIRST_HITS = 3
C_TRAIN_EVENTS = 4
C_TRIGGERS = 5
C_PF_ISSUED = 6
C_PF_DUPLICATE = 7
C_PF_FROM_L3 = 8
C_PF_FROM_DRAM = 9
C_DRAM = 10
C_DRAM_DEMAND = 11
C_DRAM_PREFETCH = 12
C_L3_DATA = 13
C_L3_DEMAND_MISSES = 14
C_STORES = 15
C_WRITES_SUPPRESSED = 16
C_MRB_LOOKUPS = 17
C_MRB_HITS = 18
C_RESIZES = 19
C_SHADOW_CHECKS = 20
C_SHADOW_MISMATCHES = 21
C_CHAIN_STEPS = 22
C_WRITEBACKS = 23
N_COUNTERS = 24

COUNTER_NAMES = (
    "records",
    "demand_accesses",
    "l2_demand_misses",
    "l2_prefetch_first_hits",
    "training_events",
    "prefetch_triggers",
    "prefetches_issued",
    "prefetches_dropped_duplicate",
    "prefetches_from_l3",
    "prefetches_from_dram",
    "dram_reads",
    "dram_demand_reads",
    "dram_prefetch_reads",
    "l3_data_accesses",
    "l3_demand_misses",
    "markov_stores",
    "markov_writes_suppressed",
    "mrb_lookups",
    "mrb_hits",
    "resize_count",
    "shadow_checks",
    "shadow_mismatches",
    "chain_lookups",
    "l2_writebacks",
)

LOG_RESIZE, LOG_PREFETCH, LOG_STORE, LOG_SUPPRESS, LOG_WINDOW = 1, 2, 3, 4, 5
LOG_CODES = {1: "resize", 2: "prefetch", 3: "store", 4: "suppress", 5: "window"}

MrbState, MrbStateType = define_state(
    "MrbState",
    "sets ways valid skey hkey raw conf stamp clock",
    __name__,
)


@njit(cache=True)
def _new_mrb_state(*args):
    return MrbState(*args)


MrbState._ctor = _new_mrb_state

CoreState, CoreStateType = define_state(
    "CoreState",
    "l2 tr mrb inflight n_inflight",
    __name__,
)


@njit(cache=True)
def _new_core_state(*args):
    return CoreState(*args)


CoreState._ctor = _new_core_state

EngineState, EngineStateType = define_state(
    "EngineState",
    "params l3 markov shadow dueller bloom counters hist log log_n",
    __name__,
)


@njit(cache=True)
def _new_engine_state(*args):
    return EngineState(*args)


EngineState._ctor = _new_engine_state


def make_mrb_state(entries=256, ways=2):
    if ways < 1 or entries % ways:
        raise ValueError("tables.mrb_entries must be a multiple of tables.mrb_ways")
    sets = entries // ways
    if sets & (sets - 1):
        raise ValueError("tables.mrb_entries / tables.mrb_ways must be a power of two")
    return MrbState(
        sets=np.int64(sets),
        ways=np.int64(ways),
        valid=np.zeros(entries, dtype=np.uint8),
        skey=np.zeros(entries, dtype=np.int64),
        hkey=np.zeros(entries, dtype=np.int64),
        raw=np.zeros(entries, dtype=np.int64),
        conf=np.zeros(entries, dtype=np.int64),
        stamp=np.zeros(entries, dtype=np.int64),
        clock=np.zeros(1, dtype=np.int64),
    )


# --- Metadata Reuse Buffer --------------------------------------------------

@njit(cache=True)
def mrb_lookup(b, s, h):
    """Slot caching Markov entry (L3 set `s`, hash `h`), or -1."""
    base = (s & (b.sets - 1)) * b.ways
    for i in range(base, base + b.ways):
        if b.valid[i] and b.skey[i] == s and b.hkey[i] == h:
            return i
    return -1


@njit(cache=True)
def mrb_fill(b, s, h, raw, conf):
    i = mrb_lookup(b, s, h)
    if i < 0:
        base = (s & (b.sets - 1)) * b.ways
        i = base
        for j in range(base, base + b.ways):
            if not b.valid[j]:
                i = j
                break
            if b.stamp[j] < b.stamp[i]:
                i = j
        b.clock[0] += 1
        b.stamp[i] = b.clock[0]
        b.valid[i] = 1
        b.skey[i] = s
        b.hkey[i] = h
    b.raw[i] = raw
    b.conf[i] = conf


@njit(cache=True)
def mrb_refresh(b, s, h, raw, conf):
    i = mrb_lookup(b, s, h)
    if i >= 0:
        b.raw[i] = raw
        b.conf[i] = conf


@njit(cache=True)
def mrb_invalidate(b, s, h):
    i = mrb_lookup(b, s, h)
    if i >= 0:
        b.valid[i] = 0


@njit(cache=True)
def mrb_flush(b):
    b.valid[:] = 0


# --- engine helpers ---------------------------------------------------------

@njit(cache=True)
def _log(eng, rec, code, a, b):
    if not eng.params[E_LOG]:
        return
    n = eng.log_n[0]
    if n < eng.log.shape[0]:
        eng.log[n, 0] = rec
        eng.log[n, 1] = code
        eng.log[n, 2] = a
        eng.log[n, 3] = b
    eng.log_n[0] = n + 1


@njit(cache=True)
def _drain_evictions(eng, cores):
    m = eng.markov
    if eng.params[E_MRB]:
        for k in range(m.ev_n[0]):
            for c in range(len(cores)):
                mrb_invalidate(cores[c].mrb, m.ev[k, 0], m.ev[k, 1])
    m.ev_n[0] = 0
    eng.shadow.ev_n[0] = 0


@njit(cache=True)
def apply_partition(eng, cores, n, rec):
    m = eng.markov
    if n > eng.params[E_MAX_WAYS]:
        n = eng.params[E_MAX_WAYS]
    old = m.ways[0]
    if n == old:
        return
    cache_set_reserved(eng.l3, n)
    markov_resize(m, n)
    if eng.params[E_SHADOW]:
        markov_resize(eng.shadow, n)
    if n < old and eng.params[E_MRB]:
        for c in range(len(cores)):
            mrb_flush(cores[c].mrb)
    eng.counters[C_RESIZES] += 1
    _log(eng, rec, LOG_RESIZE, old, n)


@njit(cache=True)
def issue_prefetch(eng, core, target, rec):
    """0 = dropped duplicate, 1 = filled from L3, 2 = filled from memory."""
    C = eng.counters
    for i in range(core.n_inflight[0]):
        if core.inflight[i] == target:
            C[C_PF_DUPLICATE] += 1
            return 0
    if cache_contains(core.l2, target):
        C[C_PF_DUPLICATE] += 1
        return 0
    if core.n_inflight[0] < core.inflight.shape[0]:
        core.inflight[core.n_inflight[0]] = target
        core.n_inflight[0] += 1
    C[C_PF_ISSUED] += 1
    l3 = eng.l3
    if cache_find(l3, target) >= 0:
        cache_access(l3, target, False)
        C[C_L3_DATA] += 1
        C[C_PF_FROM_L3] += 1
        res = 1
    else:
        C[C_DRAM] += 1
        C[C_DRAM_PREFETCH] += 1
        C[C_PF_FROM_DRAM] += 1
        if eng.params[E_PF_FILL_L3]:
            cache_fill(l3, target, False)
        res = 2
    cache_fill(core.l2, target, True)
    count_fill(core.tr)
    _log(eng, rec, LOG_PREFETCH, target, res)
    return res


@njit(cache=True)
def _shadow_compare(eng, f1, t1, c1, f2, t2, c2):
    eng.counters[C_SHADOW_CHECKS] += 1
    if f1 != f2 or (f1 and (t1 != t2 or c1 != c2)):
        eng.counters[C_SHADOW_MISMATCHES] += 1


@njit(cache=True)
def markov_store(eng, cores, core, index, target, rec):
    """Route one Markov update through the MRB write filter."""
    m = eng.markov
    if m.ways[0] == 0:
        return
    P = eng.params
    s = index & m.set_mask
    h = hash10(index >> m.set_bits)
    if P[E_MRB] and m.fmt == TRIANGEL42:
        i = mrb_lookup(core.mrb, s, h)
        if i >= 0 and core.mrb.raw[i] == target and core.mrb.conf[i] == 1:
            eng.counters[C_WRITES_SUPPRESSED] += 1
            _log(eng, rec, LOG_SUPPRESS, index, target)
            if P[E_SHADOW]:
                st2 = markov_train(eng.shadow, index, target)
                eng.counters[C_SHADOW_CHECKS] += 1
                if st2 != TRAIN_UNCHANGED:
                    eng.counters[C_SHADOW_MISMATCHES] += 1
                _drain_evictions(eng, cores)
            return
    st = markov_train(m, index, target)
    if P[E_SHADOW]:
        st2 = markov_train(eng.shadow, index, target)
        _shadow_compare(eng, True, st, m.last[1], True, st2, eng.shadow.last[1])
    if st != TRAIN_SKIPPED:
        _log(eng, rec, LOG_STORE, index, target)
        if P[E_MRB]:
            for c in range(len(cores)):
                mrb_refresh(cores[c].mrb, s, h, m.last[0], m.last[1])
    _drain_evictions(eng, cores)


@njit(cache=True)
def prefetch_chain(eng, cores, core, line, degree, rec):
    m = eng.markov
    P = eng.params
    C = eng.counters
    core.n_inflight[0] = 0
    cur = line
    for _ in range(degree):
        C[C_CHAIN_STEPS] += 1
        s = cur & m.set_mask
        h = hash10(cur >> m.set_bits)
        found = False
        target = -1
        if P[E_MRB]:
            C[C_MRB_LOOKUPS] += 1
            i = mrb_lookup(core.mrb, s, h)
            if i >= 0:
                C[C_MRB_HITS] += 1
                found = True
                raw = core.mrb.raw[i]
                target = decode_target(m, raw)
                if P[E_SHADOW] and eng.shadow.policy[s] == eng.shadow.ways[0]:
                    f2, r2, c2 = markov_peek_raw(eng.shadow, s, h)
                    _shadow_compare(eng, True, raw, core.mrb.conf[i], f2, r2, c2)
        if not found:
            if m.ways[0] == 0:
                break
            found, target, conf = markov_lookup(m, cur)
            if P[E_SHADOW]:
                f2, t2, c2 = markov_lookup(eng.shadow, cur)
                _shadow_compare(eng, found, target, conf, f2, t2, c2)
            if found and P[E_MRB]:
                mrb_fill(core.mrb, s, h, m.last[0], m.last[1])
            _drain_evictions(eng, cores)
        if not found:
            break
        issue_prefetch(eng, core, target, rec)
        cur = target


@njit(cache=True)
def on_l2_event(eng, cores, core, pc, line, rec):
    """Train on a demand miss / prefetch first-hit and issue prefetches."""
    P = eng.params
    t = core.tr
    train_event(t, core.l2, pc, line)
    eng.counters[C_TRAIN_EVENTS] += 1
    out = t.out
    sizer = P[E_SIZER]
    if sizer == SIZER_DUELLER:
        dueller_record_cache(eng.dueller, line)
    if out[D_STORE]:
        index = out[D_INDEX]
        eng.counters[C_STORES] += 1
        if sizer == SIZER_DUELLER:
            dueller_record_markov(eng.dueller, index)
        elif sizer == SIZER_BLOOM:
            bloom_observe(eng.bloom, index)
            apply_partition(eng, cores, bloom_target_ways(eng.bloom), rec)
        markov_store(eng, cores, core, index, line, rec)
    if out[D_PREFETCH]:
        eng.counters[C_TRIGGERS] += 1
        prefetch_chain(eng, cores, core, line, out[D_DEGREE], rec)
    if sizer == SIZER_DUELLER:
        p = dueller_tick(eng.dueller)
        if p >= 0:
            _log(eng, rec, LOG_WINDOW, p, 0)
            apply_partition(eng, cores, p, rec)


@njit(cache=True)
def step(eng, cores, core, pc, line, is_store, rec):
    P = eng.params
    C = eng.counters
    C[C_RECORDS] += 1
    C[C_DEMAND] += 1
    if P[E_SIZER] == SIZER_BLOOM and P[E_KIND] != KIND_NONE:
        if bloom_tick(eng.bloom):
            apply_partition(eng, cores, bloom_target_ways(eng.bloom), rec)
    r = cache_access(core.l2, line, True)
    if r == MISS:
        C[C_L2_MISSES] += 1
        C[C_L3_DATA] += 1
        if cache_access(eng.l3, line, True) == MISS:
            C[C_L3_DEMAND_MISSES] += 1
            C[C_DRAM] += 1
            C[C_DRAM_DEMAND] += 1
            cache_fill(eng.l3, line, False)
        if cache_fill(core.l2, line, False) >= 0 and core.l2.victim[2]:
            C[C_WRITEBACKS] += 1
        count_fill(core.tr)
    elif r == PF_FIRST_HIT:
        C[C_PF_FIRST_HITS] += 1
    if is_store:
        cache_mark_dirty(core.l2, line)
    if r != HIT and P[E_KIND] != KIND_NONE and (P[E_TRAIN_STORES] or not is_store):
        on_l2_event(eng, cores, core, pc, line, rec)
    eng.hist[eng.markov.ways[0]] += 1


@njit(cache=True)
def reset_statistics(eng, cores):
    """Start the measured region: zero every counter, keep all state."""
    eng.counters[:] = 0
    eng.hist[:] = 0
    eng.l3.stats[:] = 0
    eng.markov.stats[:] = 0
    eng.shadow.stats[:] = 0
    for c in range(len(cores)):
        cores[c].l2.stats[:] = 0
        cores[c].tr.stats[:] = 0
        cache_age_prefetch_marks(cores[c].l2)


@njit(cache=True)
def simulate(eng, cores, core_of, pcs, lines, kinds, first):
    """Process all records; `first` is the global index of record 0."""
    warmup = eng.params[E_WARMUP]
    for i in range(lines.shape[0]):
        rec = first + i
        if rec == warmup and warmup > 0:
            reset_statistics(eng, cores)
        step(eng, cores, cores[core_of[i]], pcs[i], lines[i], kinds[i] != 0, rec)


@njit(cache=True)
def prefetches_used(cores):
    n = 0
    for c in range(len(cores)):
        n += cores[c].l2.stats[ST_PF_USED]
    return n


@njit(cache=True)
def markov_accesses(m):
    return m.stats[ST_READS] + m.stats[ST_WRITES] + m.stats[ST_REINDEX_ACCESSES]
