"""Trace records, trace files, and synthetic workload generators.

A trace is the stream of accesses seen at the L2 (the L1 is not modelled).
Internally traces are kept column-wise as three numpy arrays; the
:class:`TraceRecord` dataclass is the per-record view.

File formats
------------
text
    One record per line, ``<pc-hex> <addr-hex> <L|S>``.  Blank lines and lines
    starting with ``#`` are ignored.
binary
    The magic bytes ``TPF1`` followed by 17-byte records: pc (u64 LE),
    addr (u64 LE), kind (u8, 0 = load, 1 = store).
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .hashing import LINE_SHIFT

MAGIC = b"TPF1"
RECORD_DTYPE = np.dtype([("pc", "<u8"), ("addr", "<u8"), ("kind", "u1")])
assert RECORD_DTYPE.itemsize == 17


class Kind(IntEnum):
    DEMAND_LOAD = 0
    DEMAND_STORE = 1


class TraceFormatError(ValueError):
    def __init__(self, index, message):
        super().__init__(f"record {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class TraceRecord:
    pc: int
    addr: int
    kind: Kind = Kind.DEMAND_LOAD

    @property
    def line(self):
        return self.addr >> LINE_SHIFT


class Trace:
    """Column-oriented, immutable sequence of records."""

    def __init__(self, pc, addr, kind=None):
        pc = np.ascontiguousarray(pc, dtype=np.uint64)
        addr = np.ascontiguousarray(addr, dtype=np.uint64)
        if kind is None:
            kind = np.zeros(len(pc), dtype=np.uint8)
        kind = np.ascontiguousarray(kind, dtype=np.uint8)
        if not len(pc) == len(addr) == len(kind):
            raise ValueError("pc, addr and kind must have equal length")
        for a in (pc, addr, kind):
            a.flags.writeable = False
        self.pc, self.addr, self.kind = pc, addr, kind

    @classmethod
    def from_records(cls, records):
        records = list(records)
        return cls(
            [r.pc for r in records],
            [r.addr for r in records],
            [int(r.kind) for r in records],
        )

    def __len__(self):
        return len(self.pc)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trace(self.pc[i], self.addr[i], self.kind[i])
        return TraceRecord(int(self.pc[i]), int(self.addr[i]), Kind(int(self.kind[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            np.array_equal(self.pc, other.pc)
            and np.array_equal(self.addr, other.addr)
            and np.array_equal(self.kind, other.kind)
        )

    def lines(self):
        """Line numbers as int64 (what the kernels consume)."""
        return (self.addr >> np.uint64(LINE_SHIFT)).astype(np.int64)

    def pcs(self):
        return self.pc.astype(np.int64)

    def identity(self):
        """Content hash used to check that two reports describe the same trace."""
        h = hashlib.sha256()
        for a in (self.pc, self.addr, self.kind):
            h.update(a.tobytes())
        return h.hexdigest()[:16]


def interleave(traces):
    """Round-robin merge; returns (merged trace, core id per record)."""
    n = sum(len(t) for t in traces)
    pc = np.empty(n, dtype=np.uint64)
    addr = np.empty(n, dtype=np.uint64)
    kind = np.empty(n, dtype=np.uint8)
    core = np.empty(n, dtype=np.int64)
    pos = np.concatenate([np.arange(len(t), dtype=np.int64) for t in traces])
    cid = np.concatenate([np.full(len(t), c, dtype=np.int64) for c, t in enumerate(traces)])
    order = np.lexsort((cid, pos))
    pc[:] = np.concatenate([t.pc for t in traces])[order]
    addr[:] = np.concatenate([t.addr for t in traces])[order]
    kind[:] = np.concatenate([t.kind for t in traces])[order]
    core[:] = cid[order]
    return Trace(pc, addr, kind), core


# --- file I/O ---------------------------------------------------------------

def _fmt_of(path, fmt):
    if fmt is None:
        fmt = "binary" if os.fspath(path).endswith((".bin", ".tpf")) else "text"
    if fmt not in ("text", "binary"):
        raise ValueError(f"unknown trace format {fmt!r}")
    return fmt


def read_trace(path, fmt=None) -> Trace:
    fmt = _fmt_of(path, fmt)
    if fmt == "binary":
        with open(path, "rb") as f:
            data = f.read()
        if data[:4] != MAGIC:
            raise TraceFormatError(0, "missing TPF1 magic")
        body = data[4:]
        n, rem = divmod(len(body), RECORD_DTYPE.itemsize)
        if rem:
            raise TraceFormatError(n + 1, f"truncated record ({rem} trailing bytes)")
        rec = np.frombuffer(body, dtype=RECORD_DTYPE)
        bad = np.nonzero(rec["kind"] > 1)[0]
        if len(bad):
            raise TraceFormatError(int(bad[0]) + 1, f"invalid kind byte {rec['kind'][bad[0]]}")
        return Trace(rec["pc"], rec["addr"], rec["kind"])

    pcs, addrs, kinds = [], [], []
    with open(path) as f:
        idx = 0
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            idx += 1
            parts = line.split()
            if len(parts) != 3:
                raise TraceFormatError(idx, f"expected 3 fields, got {len(parts)}")
            try:
                pc, addr = int(parts[0], 16), int(parts[1], 16)
            except ValueError:
                raise TraceFormatError(idx, f"invalid hex in {line!r}") from None
            if not (0 <= pc < 1 << 64 and 0 <= addr < 1 << 64):
                raise TraceFormatError(idx, "value exceeds 64 bits")
            k = parts[2].upper()
            if k not in ("L", "S"):
                raise TraceFormatError(idx, f"invalid kind {parts[2]!r}")
            pcs.append(pc)
            addrs.append(addr)
            kinds.append(0 if k == "L" else 1)
    return Trace(pcs, addrs, kinds)


def write_trace(trace: Trace, path, fmt=None):
    fmt = _fmt_of(path, fmt)
    if fmt == "binary":
        rec = np.empty(len(trace), dtype=RECORD_DTYPE)
        rec["pc"], rec["addr"], rec["kind"] = trace.pc, trace.addr, trace.kind
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(rec.tobytes())
        return
    with open(path, "w") as f:
        for pc, addr, kind in zip(trace.pc.tolist(), trace.addr.tolist(), trace.kind.tolist()):
            f.write(f"{pc:#x} {addr:#x} {'S' if kind else 'L'}\n")


# --- synthetic generators ---------------------------------------------------

DEFAULT_PC = 0x400000
DEFAULT_BASE = 0x1000
# 2^21 lines = 128 MiB, 64x a 2 MiB L3
UNIFORM_FOOTPRINT_LINES = 1 << 21


def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


def _pc_column(n, pcs, period):
    """Assign PCs so that each position of the base sequence keeps its PC."""
    if pcs == 1:
        return np.full(n, DEFAULT_PC, dtype=np.uint64)
    pos = np.arange(n) % period
    return (DEFAULT_PC + 4 * (pos % pcs)).astype(np.uint64)


def cyclic(K, R, base=DEFAULT_BASE, pcs=1):
    _check(K >= 1 and R >= 1 and pcs >= 1, "cyclic needs K >= 1, R >= 1, pcs >= 1")
    one = base + (np.arange(K, dtype=np.uint64) << np.uint64(LINE_SHIFT))
    return Trace(_pc_column(K * R, pcs, K), np.tile(one, R))


def pointer_chase(K, R, seed=0, base=DEFAULT_BASE, pcs=1):
    """Like cyclic, but the K lines are visited in a random (fixed) order."""
    _check(K >= 1 and R >= 1 and pcs >= 1, "pointer_chase needs K >= 1, R >= 1, pcs >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(K).astype(np.uint64)
    # spread lines over a region 8x K so the walk does not look sequential
    slots = rng.choice(8 * K, size=K, replace=False).astype(np.uint64)
    one = base + (slots[order] << np.uint64(LINE_SHIFT))
    return Trace(_pc_column(K * R, pcs, K), np.tile(one, R))


def random_uniform(N, footprint_lines=UNIFORM_FOOTPRINT_LINES, seed=0, pcs=1):
    _check(N >= 0 and footprint_lines >= 1 and pcs >= 1, "random_uniform needs N >= 0")
    rng = np.random.default_rng(seed)
    lines = rng.integers(0, footprint_lines, size=N, dtype=np.uint64)
    if pcs == 1:
        pc = np.full(N, DEFAULT_PC, dtype=np.uint64)
    else:
        pc = (DEFAULT_PC + 4 * rng.integers(0, pcs, size=N)).astype(np.uint64)
    return Trace(pc, DEFAULT_BASE + (lines << np.uint64(LINE_SHIFT)))


def bernoulli_match(p, K, R=None, N=None, seed=0, base=DEFAULT_BASE):
    """Cyclic base sequence whose successors are replaced with probability 1-p.

    After each base access the next record is, with probability 1-p, a
    never-before-seen address from a disjoint region instead of the base
    successor; the base order then resumes.  Every base address therefore
    recurs once per cycle, and a recorded (x, successor) pair repeats on x's
    next visit with probability p.  p = 1 reproduces ``cyclic(K, R)``.
    Give either R (base cycles) or N (total records).
    """
    _check(0.0 <= p <= 1.0, "bernoulli_match needs 0 <= p <= 1")
    _check(K >= 1, "bernoulli_match needs K >= 1")
    _check((R is None) != (N is None), "bernoulli_match needs exactly one of R or N")
    _check((R or 0) >= 0 and (N or 0) >= 0, "bernoulli_match needs R, N >= 0")
    rng = np.random.default_rng(seed)
    if R is None:
        # enough base accesses to produce N records even with no insertions
        n_base = N
    else:
        n_base = K * R
    idx = np.arange(n_base, dtype=np.uint64) % np.uint64(K)
    extra = rng.random(n_base) >= p if p < 1.0 else np.zeros(n_base, dtype=bool)
    # the final base access of the trace has no successor
    if n_base:
        extra[-1] = False
    counts = 1 + extra.astype(np.int64)
    lines = np.repeat(idx, counts)
    pos = np.cumsum(counts) - 1
    fresh_base = np.uint64(1 << 30)
    lines[pos[extra]] = fresh_base + np.arange(int(extra.sum()), dtype=np.uint64)
    if N is not None:
        lines = lines[:N]
    return Trace(np.full(len(lines), DEFAULT_PC, dtype=np.uint64),
                 base + (lines << np.uint64(LINE_SHIFT)))


def fragmented_cyclic(K, R, tags, offset_bits=11, seed=0):
    """Cyclic pattern spread over `tags` distinct upper-address regions.

    The K lines are split into `tags` contiguous blocks, each placed at a
    random offset inside its own randomly chosen 2^offset_bits-line region, so
    the cycle touches exactly min(tags, K) distinct upper-address values.
    """
    _check(K >= 1 and R >= 1 and tags >= 1, "fragmented_cyclic needs K, R, tags >= 1")
    _check(-(-K // tags) <= 1 << offset_bits, "region too small for K/tags lines")
    rng = np.random.default_rng(seed)
    tags = min(tags, K)
    regions = rng.choice(1 << 20, size=tags, replace=False).astype(np.uint64) + np.uint64(1)
    i = np.arange(K, dtype=np.uint64)
    block = i * np.uint64(tags) // np.uint64(K)
    start = (np.arange(tags, dtype=np.uint64) * np.uint64(K) + np.uint64(tags - 1)) // np.uint64(tags)
    length = np.diff(np.append(start, np.uint64(K)))
    shift = rng.integers(0, (1 << offset_bits) - length + 1).astype(np.uint64)
    offset = i - start[block] + shift[block]
    one = (regions[block] << np.uint64(offset_bits)) | offset
    return Trace(np.full(K * R, DEFAULT_PC, dtype=np.uint64),
                 np.tile(one << np.uint64(LINE_SHIFT), R))


GENERATORS = {
    "cyclic": cyclic,
    "pointer_chase": pointer_chase,
    "random_uniform": random_uniform,
    "bernoulli_match": bernoulli_match,
    "fragmented_cyclic": fragmented_cyclic,
}

_FLOAT_PARAMS = {"p"}


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str
    params: tuple = ()

    @classmethod
    def parse(cls, text):
        """Parse ``name:key=value,key=value`` (values may be hex or use e-notation)."""
        name, _, rest = text.partition(":")
        name = name.strip()
        if name not in GENERATORS:
            raise ValueError(f"unknown synthetic generator {name!r}")
        params = []
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"synthetic parameter {item!r} is not key=value")
            params.append((key.strip(), _parse_number(key.strip(), value.strip())))
        return cls(name, tuple(sorted(params)))

    def __str__(self):
        if not self.params:
            return self.generator
        return self.generator + ":" + ",".join(f"{k}={v}" for k, v in self.params)

    def generate(self) -> Trace:
        try:
            return GENERATORS[self.generator](**dict(self.params))
        except TypeError as e:
            raise ValueError(f"bad parameters for {self.generator}: {e}") from None


def _parse_number(key, value):
    if key in _FLOAT_PARAMS:
        return float(value)
    try:
        return int(value, 0)
    except ValueError:
        f = float(value)
        if f != int(f):
            raise ValueError(f"parameter {key} must be an integer, got {value}") from None
        return int(f)


def generate(spec) -> Trace:
    if isinstance(spec, str):
        spec = SyntheticSpec.parse(spec)
    return spec.generate()
