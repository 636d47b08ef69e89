"""Decay-time processing unit: column sweep, DT counter, conflict flags,
row priority encoder, FIFO and the 26-bit event record."""
from __future__ import annotations

import enum
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

COUNTER_BITS = 10
COUNTER_MAX = (1 << COUNTER_BITS) - 1
FIFO_DEPTH = 16
STREAM_MAGIC = b"GSEV"
STREAM_VERSION = 1
_EPS = 1e-9  # guards floor() against representation error in dt / period


class ConflictFlag(enum.IntEnum):
    CONFLICT_FREE = 0b00
    ROW_COINCIDENT = 0b01
    MISSED_COLUMN = 0b10


@dataclass(frozen=True)
class ClockConfig:
    """DT counter clock; the period is 2**select_code microseconds."""
    select_code: int = 0

    def __post_init__(self):
        if not 0 <= self.select_code <= 7:
            raise ValueError("select_code must be in [0, 7]")

    @classmethod
    def from_period(cls, period_us: float) -> "ClockConfig":
        code = int(round(math.log2(period_us))) if period_us > 0 else -1
        if not 0 <= code <= 7 or 2**code != period_us:
            raise ValueError(f"clock period must be a power of two in [1, 128] us, got {period_us}")
        return cls(code)

    @property
    def period_us(self) -> int:
        return 1 << self.select_code

    @property
    def period(self) -> float:
        """Period in seconds."""
        return self.period_us * 1e-6


@dataclass(frozen=True)
class CasConfig:
    """Column-address sweep: one non-overlapping strobe per column."""
    pulse_width: float = 1.0  # us
    sweep_period: float = 110.0  # us
    n_columns: int = 110

    def __post_init__(self):
        if self.pulse_width <= 0 or self.n_columns < 1:
            raise ValueError("pulse_width and n_columns must be positive")
        if not math.isclose(self.pulse_width * self.n_columns, self.sweep_period, rel_tol=1e-12):
            raise ValueError("sweep_period must equal pulse_width * n_columns")


@dataclass(frozen=True)
class EventRecord:
    flag: ConflictFlag
    row: int
    col: int
    dt_counts: int

    def __post_init__(self):
        object.__setattr__(self, "flag", ConflictFlag(self.flag))
        if not 1 <= self.row <= 127:
            raise ValueError("row must fit 7 bits and be at least 1")
        if not 0 <= self.col <= 127:
            raise ValueError("col must fit 7 bits")
        if not 0 <= self.dt_counts <= COUNTER_MAX:
            raise ValueError("dt_counts must fit 10 bits")
        if self.flag is ConflictFlag.MISSED_COLUMN and self.col != 0:
            raise ValueError("a missed-column record carries col 0")


@dataclass
class Fifo:
    """Bounded queue that refuses new records when full (old data is kept)."""
    capacity: int = FIFO_DEPTH
    contents: deque = field(default_factory=deque)

    def __len__(self) -> int:
        return len(self.contents)

    @property
    def full(self) -> bool:
        return len(self.contents) >= self.capacity

    def pop(self):
        return self.contents.popleft()


def fifo_push(fifo: Fifo, record) -> bool:
    if fifo.full:
        return False
    fifo.contents.append(record)
    return True


def fifo_pop(fifo: Fifo):
    if not fifo.contents:
        raise IndexError("pop from empty FIFO")
    return fifo.contents.popleft()


def quantize_dt(dt_true, clock: ClockConfig):
    """Whole clock periods the count line stays high, saturating at 1023."""
    dt = np.asarray(dt_true, dtype=float)
    if np.any(dt < 0):
        raise ValueError("dt_true must be non-negative")
    counts = np.minimum(np.floor(dt / clock.period + _EPS), COUNTER_MAX).astype(np.int64)
    return counts if counts.ndim else int(counts)


def _check_col(col, cas: CasConfig):
    if np.any((np.asarray(col) < 1) | (np.asarray(col) > cas.n_columns)):
        raise ValueError(f"column outside [1, {cas.n_columns}]")


def cas_is_high(col, t, cas: CasConfig = CasConfig()):
    """Whether column ``col``'s strobe is high at time ``t`` (seconds)."""
    _check_col(col, cas)
    phase = np.mod(np.asarray(t, dtype=float) * 1e6, cas.sweep_period)
    lo = (np.asarray(col) - 1) * cas.pulse_width
    out = (phase >= lo) & (phase < lo + cas.pulse_width)
    return out if np.ndim(out) else bool(out)


def column_swept(col, start, stop, cas: CasConfig = CasConfig()):
    """Whether column ``col``'s strobe is high at some instant of [start, stop)."""
    start_us = np.asarray(start, dtype=float) * 1e6
    length = np.asarray(stop, dtype=float) * 1e6 - start_us
    offset = np.mod(start_us - (np.asarray(col) - 1) * cas.pulse_width, cas.sweep_period)
    out = (length > 0) & ((offset < cas.pulse_width) | (cas.sweep_period - offset < length))
    return out if np.ndim(out) else bool(out)


def resolve_column(pulse, cas: CasConfig = CasConfig()):
    """The pulse's column if its strobe fires while the pulse is active, else None."""
    _check_col(pulse.pixel_col, cas)
    if column_swept(pulse.pixel_col, pulse.start_time, pulse.start_time + pulse.dt_true, cas):
        return int(pulse.pixel_col)
    return None


def detect_row_coincidence(pulses_on_row: Sequence, cas: CasConfig = CasConfig()) -> list[ConflictFlag]:
    """Flag pulses of one row that overlap another pulse while both columns are swept."""
    n = len(pulses_on_row)
    flags = [ConflictFlag.CONFLICT_FREE] * n
    if n < 2:
        return flags
    if len({p.pixel_row for p in pulses_on_row}) > 1:
        raise ValueError("pulses must share a row")
    start = np.array([p.start_time for p in pulses_on_row], dtype=float)
    stop = start + np.array([p.dt_true for p in pulses_on_row], dtype=float)
    cols = np.array([p.pixel_col for p in pulses_on_row])
    hit = _coincident(start, stop, cols, cas)
    return [ConflictFlag.ROW_COINCIDENT if h else ConflictFlag.CONFLICT_FREE for h in hit]


def _coincident(start, stop, cols, cas) -> np.ndarray:
    order = np.argsort(start, kind="stable")
    hit = np.zeros(start.size, dtype=bool)
    for a_pos, a in enumerate(order):
        for b in order[a_pos + 1:]:
            if start[b] >= stop[a]:
                break
            lo, hi = start[b], min(stop[a], stop[b])
            if hi > lo and column_swept(cols[a], lo, hi, cas) and column_swept(cols[b], lo, hi, cas):
                hit[a] = hit[b] = True
    return hit


def coincidence_fraction(p: float) -> float:
    """Share of detections on a six-diode pixel that involve two or more diodes.

    Uses the leading-order sum over i >= 2 of C(6, i) p**i, divided by p.
    """
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    if p == 0:
        return 0.0
    return sum(comb(6, i) * p**i for i in range(2, 7)) / p


def coincidence_fraction_exact(p: float) -> float:
    """Same quantity with the full binomial weights (1 - p)**(6 - i)."""
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    if p == 0:
        return 0.0
    return sum(comb(6, i) * p**i * (1 - p) ** (6 - i) for i in range(2, 7)) / p


def priority_encode(ready_rows: Iterable[int]) -> int:
    rows = list(ready_rows)
    if not rows:
        raise ValueError("no rows are ready")
    return min(rows)


_FLAG_SHIFT, _ROW_SHIFT, _COL_SHIFT = 24, 17, 10
_WORD_MASK = (1 << 26) - 1


def pack_record(record: EventRecord) -> int:
    r = EventRecord(record.flag, record.row, record.col, record.dt_counts)  # revalidates
    return (int(r.flag) << _FLAG_SHIFT) | (r.row << _ROW_SHIFT) | (r.col << _COL_SHIFT) | r.dt_counts


def unpack_record(word: int) -> EventRecord:
    word = int(word)
    if not 0 <= word <= 0xFFFFFFFF:
        raise ValueError("word must be a 32-bit unsigned value")
    if word & ~_WORD_MASK:
        raise ValueError("padding bits above bit 25 must be zero")
    flag = (word >> _FLAG_SHIFT) & 0b11
    if flag == 0b11:
        raise ValueError("flag 11 is not defined")
    return EventRecord(ConflictFlag(flag), (word >> _ROW_SHIFT) & 0x7F, (word >> _COL_SHIFT) & 0x7F,
                       word & COUNTER_MAX)


def write_event_stream(path: str | Path, records: Iterable[EventRecord]) -> None:
    Path(path).write_bytes(encode_event_stream(records))


def encode_event_stream(records: Iterable[EventRecord]) -> bytes:
    words = np.array([pack_record(r) for r in records], dtype="<u4")
    return STREAM_MAGIC + struct.pack("<I", STREAM_VERSION) + words.tobytes()


def decode_event_stream(data: bytes) -> list[EventRecord]:
    if len(data) < 8 or data[:4] != STREAM_MAGIC:
        raise ValueError("not an event stream (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != STREAM_VERSION:
        raise ValueError(f"unsupported event-stream version {version}")
    body = data[8:]
    if len(body) % 4:
        raise ValueError("event stream truncated mid-word")
    return [unpack_record(w) for w in np.frombuffer(body, dtype="<u4")]


def read_event_stream(path: str | Path) -> list[EventRecord]:
    return decode_event_stream(Path(path).read_bytes())


@dataclass(frozen=True)
class ReadoutConfig:
    clock: ClockConfig = ClockConfig()
    cas: CasConfig = CasConfig()
    drain_interval: float | None = 10e-6  # s per record; None stalls the drain until the end
    fifo_depth: int = FIFO_DEPTH


@dataclass
class ReadoutResult:
    records: list[EventRecord]
    source_index: np.ndarray  # pulse index behind each emitted record
    dropped: int  # records refused by a full FIFO
    undetected: int  # pulses that never crossed threshold


def run_readout(pulses, config: ReadoutConfig = ReadoutConfig(), geometry=None) -> ReadoutResult:
    """Push a time-ordered pulse stream through the readout unit.

    ``pulses`` is a PulseBatch or a sequence of AnalogPulse. A record becomes
    ready when its count line falls; records ready in the same clock period
    enter the FIFO lowest row first. The FIFO is drained one record per
    ``drain_interval`` and whatever remains is flushed after the last pulse.
    """
    row, col, start, dt, det = _columns(pulses)
    if start.size > 1 and np.any(np.diff(start) < 0):
        raise ValueError("pulses must be sorted by start_time")
    if geometry is not None and row.size and (row.min() < 1 or row.max() > geometry.rows):
        raise ValueError("pulse row outside the geometry")
    idx = np.flatnonzero(det)
    undetected = int(start.size - idx.size)
    if idx.size == 0:
        return ReadoutResult([], np.zeros(0, dtype=np.int64), 0, undetected)
    row, col, start, dt = row[idx], col[idx], start[idx], dt[idx]
    stop = start + dt
    cas = config.cas
    _check_col(col, cas)

    counts = quantize_dt(dt, config.clock)
    resolved = column_swept(col, start, stop, cas)
    coincident = np.zeros(idx.size, dtype=bool)
    order = np.lexsort((start, row))
    bounds = np.flatnonzero(np.diff(row[order])) + 1
    for grp in np.split(order, bounds):
        if grp.size > 1:
            coincident[grp] = _coincident(start[grp], stop[grp], col[grp], cas)
    flags = np.where(coincident, ConflictFlag.ROW_COINCIDENT,
                     np.where(resolved, ConflictFlag.CONFLICT_FREE, ConflictFlag.MISSED_COLUMN))
    out_col = np.where(resolved, col, 0)

    # arbitration: completion slot first, then the priority encoder (lowest row)
    slot = np.floor(stop / config.clock.period + _EPS).astype(np.int64)
    ready_time = slot * config.clock.period
    arrival = np.lexsort((col, row, slot))

    fifo = Fifo(config.fifo_depth)
    emitted: list[int] = []
    dropped = 0
    step = config.drain_interval
    next_drain = step if step is not None else math.inf
    for k in arrival:
        while fifo.contents and next_drain <= ready_time[k]:
            emitted.append(fifo_pop(fifo))
            next_drain += step
        if not fifo.contents and step is not None and next_drain <= ready_time[k]:
            # idle link: the next pop slot is the first one after this arrival
            next_drain += step * math.ceil((ready_time[k] - next_drain) / step + _EPS)
        if not fifo_push(fifo, int(k)):
            dropped += 1
    emitted.extend(fifo.contents)

    records = [EventRecord(ConflictFlag(int(flags[k])), int(row[k]), int(out_col[k]), int(counts[k]))
               for k in emitted]
    return ReadoutResult(records, idx[np.asarray(emitted, dtype=np.int64)], dropped, undetected)


def readout_pipeline(pulses, clock: ClockConfig = ClockConfig(), cas: CasConfig = CasConfig(),
                     geometry=None, drain_interval: float | None = 10e-6,
                     fifo_depth: int = FIFO_DEPTH) -> list[EventRecord]:
    """Records emitted for ``pulses``, in drain order."""
    cfg = ReadoutConfig(clock, cas, drain_interval, fifo_depth)
    return run_readout(pulses, cfg, geometry).records


def _columns(pulses):
    if hasattr(pulses, "dt_true") and isinstance(pulses.dt_true, np.ndarray):
        return (np.asarray(pulses.pixel_row, dtype=np.int64), np.asarray(pulses.pixel_col, dtype=np.int64),
                np.asarray(pulses.start_time, dtype=float), np.asarray(pulses.dt_true, dtype=float),
                np.asarray(pulses.detected, dtype=bool))
    pulses = list(pulses)
    return (np.array([p.pixel_row for p in pulses], dtype=np.int64),
            np.array([p.pixel_col for p in pulses], dtype=np.int64),
            np.array([p.start_time for p in pulses], dtype=float),
            np.array([p.dt_true for p in pulses], dtype=float),
            np.array([p.detected for p in pulses], dtype=bool))
