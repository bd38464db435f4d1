"""Pulse sequences from Uhrig timing rules and their nested combinations.

A :class:`PulseSequence` stores free-evolution intervals in units of the
minimum interval ``tau`` together with the instantaneous Pauli pulse applied
after each interval.  Index 0 is the first interval executed.

Durations are exact-midpoint reals evaluated from the closed forms at the
current working precision (see :mod:`qddlab.hpmath`), never by subtracting
accumulated pulse times.
"""
from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

from flint import arb, fmpq

from .hpmath import current_digits, hp, to_decimal, tolerance


class PulseAxis(enum.IntEnum):
    """Pauli pulse modulo global phase.

    The value packs an x-bit and a z-bit, so the group product is XOR:
    ``X * Z == Y`` and ``X * X == I``.
    """

    I = 0
    X = 1
    Z = 2
    Y = 3

    def __mul__(self, other):
        if not isinstance(other, PulseAxis):
            return NotImplemented
        return PulseAxis(self.value ^ other.value)

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str) -> "PulseAxis":
        key = text.strip().upper()
        if key == "IDENTITY":
            key = "I"
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown pulse axis {text!r}") from None


I, X, Y, Z = PulseAxis.I, PulseAxis.X, PulseAxis.Y, PulseAxis.Z


@dataclass(frozen=True, eq=False)
class PulseSequence:
    """Intervals (units of ``tau``) with the pulse applied after each one.

    Constructions always have strictly positive intervals.  Zero-length
    intervals are accepted so that raw, not-yet-merged pulse lists can be
    expressed and handed to :func:`canonicalize`.
    """

    intervals: tuple
    pulses: tuple
    label: str = ""

    def __post_init__(self):
        intervals = tuple(hp(d) for d in self.intervals)
        pulses = tuple(p if isinstance(p, PulseAxis) else PulseAxis.parse(p) if isinstance(p, str)
                       else PulseAxis(p) for p in self.pulses)
        if not intervals:
            raise ValueError("a pulse sequence needs at least one interval")
        if len(intervals) != len(pulses):
            raise ValueError(f"{len(intervals)} intervals but {len(pulses)} pulses")
        if any(d < 0 for d in intervals):
            raise ValueError("interval durations must be non-negative")
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "pulses", pulses)

    def __len__(self) -> int:
        return len(self.intervals)

    def __repr__(self) -> str:
        durs = ", ".join(to_decimal(d, 6) for d in self.intervals[:8])
        more = ", ..." if len(self) > 8 else ""
        axes = "".join(p.name for p in self.pulses[:32])
        return f"PulseSequence({self.label!r}, intervals=[{durs}{more}], pulses={axes})"

    @property
    def interval_count(self) -> int:
        return len(self.intervals)

    @property
    def pulse_count(self) -> int:
        """Number of physical (non-identity) pulses."""
        return sum(1 for p in self.pulses if p is not I)

    @property
    def total_duration(self) -> arb:
        total = arb(0)
        for d in self.intervals:
            total += d
        return total.mid()

    @property
    def net_pulse(self) -> PulseAxis:
        net = I
        for p in self.pulses:
            net = net * p
        return net

    def is_canonical(self) -> bool:
        if any(d == 0 for d in self.intervals):
            return False
        return all(p is not I for p in self.pulses[:-1])

    def scaled(self, factor) -> "PulseSequence":
        factor = hp(factor)
        return PulseSequence(tuple((d * factor).mid() for d in self.intervals), self.pulses, self.label)

    def with_label(self, label: str) -> "PulseSequence":
        return PulseSequence(self.intervals, self.pulses, label)

    def float_intervals(self) -> list[float]:
        return [float(d) for d in self.intervals]


class _Builder:
    """Accumulates intervals; a pulse landing on an existing pulse is merged."""

    def __init__(self):
        self.intervals: list = []
        self.pulses: list = []

    def extend(self, seq: PulseSequence, scale=None) -> None:
        for d, p in zip(seq.intervals, seq.pulses):
            self.intervals.append(d if scale is None else (d * scale).mid())
            self.pulses.append(p)

    def pulse(self, axis: PulseAxis) -> None:
        self.pulses[-1] = self.pulses[-1] * axis

    def build(self, label: str) -> PulseSequence:
        return PulseSequence(tuple(self.intervals), tuple(self.pulses), label)


def _check_order(n: int, minimum: int = 0) -> None:
    if int(n) != n or n < minimum:
        raise ValueError(f"order must be an integer >= {minimum}, got {n!r}")


def _sin_pi(p: int, q: int) -> arb:
    return arb.sin_pi_fmpq(fmpq(p, q))


# -- closed-form timings ------------------------------------------------------

def uhrig_times(n: int, T=1) -> list:
    """Pulse times ``T sin^2(j pi / (2n+2))``.

    ``j`` runs to ``n`` for even ``n`` and to ``n+1`` for odd ``n`` (the final
    pulse at ``T``).  Order 0 is free evolution and has no pulses.
    """
    _check_order(n)
    T = hp(T)
    if T <= 0:
        raise ValueError("total time must be positive")
    last = n if n % 2 == 0 else n + 1
    return [(T * _sin_pi(j, 2 * n + 2) ** 2).mid() for j in range(1, last + 1)]


def normalized_intervals(n: int) -> list:
    """Interval lengths ``s_1 .. s_{n+1}`` relative to the first interval."""
    _check_order(n)
    q = 2 * n + 2
    csc = arb(1) / _sin_pi(1, q)
    count = n + 1
    half = (count + 1) // 2
    head = [arb(1)] + [(_sin_pi(2 * j - 1, q) * csc).mid() for j in range(2, half + 1)]
    # mirrored so the palindrome holds bit-for-bit
    return head + head[: count - half][::-1]


def total_normalized_time(n: int) -> arb:
    """``csc^2(pi / (2n+2))``: the UDD_n duration in units of its first interval."""
    _check_order(n)
    return (arb(1) / _sin_pi(1, 2 * n + 2) ** 2).mid()


def min_pulse_rate(n: int, lam) -> arb:
    """Pulse rate ``lam * csc^4(pi/(2n+2))`` above which ``lam S_n^2 tau < 1``."""
    _check_order(n)
    lam = hp(lam)
    if lam <= 0:
        raise ValueError("Hamiltonian strength must be positive")
    s = total_normalized_time(n)
    return (lam * s * s).mid()


# -- constructions -------------------------------------------------------------

def free_evolution(duration=1) -> PulseSequence:
    return PulseSequence((hp(duration),), (I,), "free")


def udd(n: int, axis: PulseAxis = X) -> PulseSequence:
    """Single-axis Uhrig sequence of order ``n``.

    Pulses follow intervals 1..n; the terminating pulse is ``axis`` for odd
    ``n`` (so the pulse count is even) and the identity otherwise.
    """
    _check_order(n)
    axis = PulseAxis(axis)
    if axis is I:
        raise ValueError("UDD needs a non-identity pulse axis")
    s = normalized_intervals(n)
    pulses = [axis] * n + [axis if n % 2 else I]
    return PulseSequence(tuple(s), tuple(pulses), f"UDD{axis.name} n={n}")


def qdd(m: int, n: int, outer: PulseAxis = Z, inner: PulseAxis = X) -> PulseSequence:
    """Nested sequence: an order-``m`` ``outer`` UDD whose free intervals are
    order-``n`` ``inner`` UDD sequences, each scaled by its outer interval.

    Interval ``(j, k)`` lasts ``s_j^(m) * s_k^(n)``; an inner terminating pulse
    that coincides with an outer pulse is merged into their product.
    """
    _check_order(m)
    _check_order(n)
    outer, inner = PulseAxis(outer), PulseAxis(inner)
    if I in (outer, inner) or outer is inner:
        raise ValueError("QDD needs two distinct non-identity axes")
    inner_seq = udd(n, inner)
    b = _Builder()
    for j, sj in enumerate(normalized_intervals(m), start=1):
        b.extend(inner_seq, sj)
        b.pulse(outer if (j <= m or m % 2) else I)
    return canonicalize(b.build(f"QDD m={m} n={n}"))


def universal_decoupler() -> PulseSequence:
    """Four unit intervals with pulses X, Y, X, Y."""
    return PulseSequence((1, 1, 1, 1), (X, Y, X, Y), "UD")


def pdd(n: int) -> PulseSequence:
    """The universal decoupler repeated ``n`` times."""
    _check_order(n, 1)
    b = _Builder()
    for _ in range(n):
        b.extend(universal_decoupler())
    return b.build(f"PDD n={n}")


def cdd(n: int) -> PulseSequence:
    """Concatenated decoupling: level ``k`` places the level ``k-1`` sequence
    in every free interval of the universal decoupler.

    Coincident pulses are merged; pulses that merge to the identity stay as
    identity slots, so the result keeps its ``4**n`` unit intervals.
    """
    _check_order(n, 1)
    seq = universal_decoupler()
    template = seq.pulses
    for _ in range(n - 1):
        b = _Builder()
        for p in template:
            b.extend(seq)
            b.pulse(p)
        seq = b.build("")
    return seq.with_label(f"CDD n={n}")


def cudd(n: int) -> PulseSequence:
    """Concatenated Uhrig decoupling with ``n`` binary Z levels.

    Level ``k`` is ``C_{k-1}, Z, C_{k-1}, Z`` (chronological) and every free
    interval of the innermost level is an X-type UDD_n at unit scale, giving
    ``(n+1) * 2**n`` intervals.  Identity slots are kept as in :func:`cdd`.
    Other placements of the Z levels give the same ``n * 2**n`` scaling;
    this one reduces to the universal decoupler at ``n = 1``.
    """
    _check_order(n, 1)
    seq = udd(n, X)
    for _ in range(n):
        b = _Builder()
        for _half in range(2):
            b.extend(seq)
            b.pulse(Z)
        seq = b.build("")
    return seq.with_label(f"CUDD n={n}")


def canonicalize(seq: PulseSequence) -> PulseSequence:
    """Merge coincident pulses and remove interior identity pulses.

    A zero-length interval means its pulse coincides with the previous one,
    so the two are multiplied.  An identity pulse between two intervals is
    dropped and the intervals are joined.  The net unitary is unchanged up to
    global phase.  A zero-length first interval (a pulse at time zero) has
    nothing to merge into and is kept.
    """
    scale = seq.total_duration
    if scale < 1:
        scale = arb(1)
    eps = tolerance(10) * scale
    intervals: list = []
    pulses: list = []
    for d, p in zip(seq.intervals, seq.pulses):
        if intervals and d <= eps:
            pulses[-1] = pulses[-1] * p
        elif pulses and pulses[-1] is I:
            intervals[-1] = (intervals[-1] + d).mid()
            pulses[-1] = p
        else:
            intervals.append(d)
            pulses.append(p)
    return PulseSequence(tuple(intervals), tuple(pulses), seq.label)


def equivalent(a: PulseSequence, b: PulseSequence, tol=None) -> bool:
    """Equality of canonical forms, durations compared to ``tol``."""
    tol = tolerance(10) if tol is None else hp(tol)
    ca, cb = canonicalize(a), canonicalize(b)
    if ca.pulses != cb.pulses:
        return False
    for x, y in zip(ca.intervals, cb.intervals):
        scale = abs(x) if abs(x) > 1 else arb(1)
        if abs(x - y) > tol * scale:
            return False
    return True


def physical_pulse_times(m: int, n: int, T=1, outer: PulseAxis = Z, inner: PulseAxis = X) -> list:
    """Absolute ``(time, axis)`` events of the nested sequence over total time ``T``.

    Outer pulses sit at the order-``m`` Uhrig times; inner pulses of outer
    segment ``j`` at ``tau_j sin^2(k pi/(2n+2)) + t_{j-1}``.  Events closer
    than the working tolerance are merged (X and Z become Y).
    """
    _check_order(m)
    _check_order(n)
    T = hp(T)
    if T <= 0:
        raise ValueError("total time must be positive")
    outer, inner = PulseAxis(outer), PulseAxis(inner)
    bounds = [(T * _sin_pi(j, 2 * m + 2) ** 2).mid() for j in range(m + 2)]
    inner_last = n if n % 2 == 0 else n + 1
    inner_frac = [(_sin_pi(k, 2 * n + 2) ** 2).mid() for k in range(1, inner_last + 1)]
    raw = []
    for j in range(1, m + 2):
        start = bounds[j - 1]
        width = (bounds[j] - start).mid()
        raw.extend(((width * f + start).mid(), inner) for f in inner_frac)
        if j <= m or m % 2:
            raw.append((bounds[j], outer))
    raw.sort(key=lambda e: e[0])
    eps = tolerance(10) * (T if T > 1 else arb(1))
    events: list = []
    for t, axis in raw:
        if events and abs(t - events[-1][0]) <= eps:
            events[-1] = (events[-1][0], events[-1][1] * axis)
        else:
            events.append((t, axis))
    return [(t, a) for t, a in events if a is not I]


def grid_view(n: int, outer: PulseAxis = Z, inner: PulseAxis = X) -> list:
    """The QDD_n outer-product table as rows of ``(frame, duration)`` cells.

    Row 0 is the top row (last outer slot) and column 0 the leftmost (last
    inner slot), matching the written operator order.  The frame of cell
    ``(j, k)`` is ``outer**(j-1) * inner**(k-1)``: the toggling frame in which
    that interval's evolution acts.
    """
    _check_order(n)
    s = normalized_intervals(n)
    rows = []
    for j in range(n + 1, 0, -1):
        outer_frame = outer if (j - 1) % 2 else I
        row = []
        for k in range(n + 1, 0, -1):
            inner_frame = inner if (k - 1) % 2 else I
            row.append((outer_frame * inner_frame, (s[j - 1] * s[k - 1]).mid()))
        rows.append(row)
    return rows


def sequence_from_frames(frames: Sequence, label: str = "") -> PulseSequence:
    """Sequence whose chronological intervals evolve in the given frames.

    The pulse between two intervals converts one frame to the next; the
    terminating pulse returns to the lab frame.
    """
    frames = list(frames)
    axes = [PulseAxis(f) for f, _ in frames]
    pulses = [a * b for a, b in zip(axes, axes[1:])] + [axes[-1]]
    if axes[0] is not I:
        raise ValueError("the first interval must evolve in the lab frame")
    return PulseSequence(tuple(d for _, d in frames), tuple(pulses), label)


def sequence_from_grid(grid: Sequence[Sequence], by: str = "rows") -> PulseSequence:
    """Read a :func:`grid_view` table back into a chronological sequence.

    Reading rows top to bottom (or columns left to right) gives the written,
    latest-first operator order, so the cells are reversed for chronology.
    Rows reproduce ``qdd(n, n, outer, inner)``; columns give the same
    construction with the two axes exchanged.
    """
    if by == "rows":
        cells = [c for row in grid for c in row]
    elif by == "columns":
        cells = [row[c] for c in range(len(grid[0])) for row in grid]
    else:
        raise ValueError("by must be 'rows' or 'columns'")
    return sequence_from_frames(reversed(cells), f"grid {by}")


# -- schedule CSV ----------------------------------------------------------------

class ScheduleFormatError(ValueError):
    """Malformed pulse-schedule CSV; ``lineno`` points at the offending line."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


SCHEDULE_HEADER = ("time", "axis")


def schedule(seq: PulseSequence) -> list:
    """Non-identity pulse events with times normalized to a total time of 1."""
    total = seq.total_duration
    events = []
    elapsed = arb(0)
    for d, p in zip(seq.intervals, seq.pulses):
        elapsed += d
        if p is not I:
            events.append(((elapsed / total).mid(), p))
    return events


def write_schedule(seq: PulseSequence, target, digits: int | None = None) -> None:
    """Write ``time,axis`` rows to a path or text stream."""
    digits = current_digits() if digits is None else digits
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="") as fh:
            write_schedule(seq, fh, digits)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(SCHEDULE_HEADER)
    for t, p in schedule(seq):
        writer.writerow((to_decimal(t, digits), p.name))


def schedule_text(seq: PulseSequence, digits: int | None = None) -> str:
    buf = io.StringIO()
    write_schedule(seq, buf, digits)
    return buf.getvalue()


def read_schedule(source) -> list:
    """Parse ``time,axis`` rows; times must increase strictly within (0, 1]."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return read_schedule(fh)
    rows = csv.reader(source)
    header = next(rows, None)
    if header is None or tuple(h.strip().lower() for h in header) != SCHEDULE_HEADER:
        raise ScheduleFormatError("expected header 'time,axis'", 1)
    events = []
    one = arb(1)
    slack = tolerance(10)
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ScheduleFormatError(f"expected 2 fields, got {len(row)}", lineno)
        try:
            t = hp(row[0])
        except ValueError:
            raise ScheduleFormatError(f"bad time {row[0]!r}", lineno) from None
        try:
            axis = PulseAxis.parse(row[1])
        except ValueError:
            raise ScheduleFormatError(f"bad axis {row[1]!r}", lineno) from None
        if axis is I:
            raise ScheduleFormatError("identity pulses are not listed in schedules", lineno)
        if t <= 0 or t > one + slack:
            raise ScheduleFormatError("time outside (0, 1]", lineno)
        if events and t <= events[-1][0]:
            raise ScheduleFormatError("times must increase strictly", lineno)
        events.append((t, axis))
    if not events:
        raise ScheduleFormatError("no pulse events", 2)
    return events


def sequence_from_schedule(events: Iterable, label: str = "schedule") -> PulseSequence:
    """Sequence from normalized events, in units of its shortest interval.

    A final identity-terminated interval is added when the last pulse ends
    before time 1.
    """
    events = list(events)
    intervals, pulses = [], []
    prev = arb(0)
    for t, axis in events:
        intervals.append((t - prev).mid())
        pulses.append(axis)
        prev = t
    if arb(1) - prev > tolerance(10):
        intervals.append((arb(1) - prev).mid())
        pulses.append(I)
    shortest = min(intervals)
    return PulseSequence(tuple((d / shortest).mid() for d in intervals), tuple(pulses), label)


def load_sequence(path) -> PulseSequence:
    return sequence_from_schedule(read_schedule(path), label=os.path.basename(str(path)))
