"""Transmission schedules, cycle simulation and channel-usage counts."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    EmptyScheduleError,
    IncompleteTraceError,
    InvalidInputError,
    OutOfDomainError,
    SimulationError,
)
from .model import NodeId, System

PULSES = (1, 2)


@dataclass(frozen=True)
class ProtocolConfig:
    inter_pulse_gap: float = 200e-6
    turn_gap: float = 1e-3
    cycles: int = 1
    timestamp_jitter_sd: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.inter_pulse_gap > 0 and self.turn_gap > 0):
            raise InvalidInputError("pulse and turn gaps must be > 0")
        if not self.timestamp_jitter_sd >= 0:
            raise InvalidInputError("timestamp jitter sd must be >= 0")
        if self.cycles < 1:
            raise InvalidInputError("at least one cycle is required")
        if self.rng_seed < 0:
            raise InvalidInputError("rng seed must be unsigned")


@dataclass(frozen=True)
class Pulse:
    sender: NodeId
    pulse_index: int
    emit_time: float


@dataclass(frozen=True)
class PulseSchedule:
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        times = [e.emit_time for e in entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidInputError("schedule emit times must be strictly increasing")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def span(self) -> float:
        if not self.entries:
            return 0.0
        return self.entries[-1].emit_time - self.entries[0].emit_time

    def shifted(self, dt: float) -> "PulseSchedule":
        return PulseSchedule(tuple(dataclasses.replace(e, emit_time=e.emit_time + dt) for e in self.entries))


@dataclass(frozen=True)
class TxRecord:
    sender: NodeId
    pulse_index: int
    local_timestamp: float
    true_time: float  # oracle only


@dataclass(frozen=True)
class RxRecord:
    receiver: NodeId
    sender: NodeId
    pulse_index: int
    local_timestamp: float
    true_time: float  # oracle only


@dataclass(frozen=True)
class CycleTrace:
    """Every timestamp produced during one cycle.

    Measurement code reads local timestamps through :meth:`t` and :meth:`r`;
    the ``true_time`` fields of the records are there for checks only.
    """

    cycle_index: int
    tx: tuple
    rx: tuple
    system: System

    @cached_property
    def _tx_index(self):
        return {(rec.sender, rec.pulse_index): rec for rec in self.tx}

    @cached_property
    def _rx_index(self):
        return {(rec.receiver, rec.sender, rec.pulse_index): rec for rec in self.rx}

    def has_tx(self, sender: NodeId, p: int) -> bool:
        return (sender, p) in self._tx_index

    def has_rx(self, receiver: NodeId, sender: NodeId, p: int) -> bool:
        return (receiver, sender, p) in self._rx_index

    def t(self, sender: NodeId, p: int) -> float:
        """Local transmit timestamp ``t_{sender,p}``."""
        try:
            return self._tx_index[(sender, p)].local_timestamp
        except KeyError:
            raise IncompleteTraceError(f"cycle {self.cycle_index}: no tx record for node {sender} pulse {p}") from None

    def r(self, receiver: NodeId, sender: NodeId, p: int) -> float:
        """Local receive timestamp ``r_receiver^{sender,p}``."""
        try:
            return self._rx_index[(receiver, sender, p)].local_timestamp
        except KeyError:
            raise IncompleteTraceError(
                f"cycle {self.cycle_index}: node {receiver} has no rx record of node {sender} pulse {p}"
            ) from None

    @property
    def span(self) -> float:
        """True time between the first and the last emission."""
        times = [rec.true_time for rec in self.tx]
        return max(times) - min(times) if times else 0.0

    def restricted(self, nodes: Iterable[NodeId] | None = None, drop: Iterable[tuple] = ()) -> "CycleTrace":
        """Sub-trace keeping only ``nodes`` and without the ``(sender, p)`` pulses in ``drop``."""
        keep = set(self.system.ids if nodes is None else nodes)
        dropped = set(drop)
        tx = tuple(rec for rec in self.tx if rec.sender in keep and (rec.sender, rec.pulse_index) not in dropped)
        rx = tuple(
            rec
            for rec in self.rx
            if rec.receiver in keep and rec.sender in keep and (rec.sender, rec.pulse_index) not in dropped
        )
        return CycleTrace(self.cycle_index, tx, rx, self.system)


def build_dpp_schedule(system: System, cfg: ProtocolConfig, start: float = 0.0) -> PulseSchedule:
    """Turn-based double pulses in system list order."""
    senders = system.transmitters
    if not senders:
        raise EmptyScheduleError("system has no Active or Bilateral node")
    entries = []
    t = start
    for i, sender in enumerate(senders):
        if i:
            t += cfg.turn_gap
        entries.append(Pulse(sender, 1, t))
        t += cfg.inter_pulse_gap
        entries.append(Pulse(sender, 2, t))
    return PulseSchedule(tuple(entries))


def cycle_period(system: System, cfg: ProtocolConfig) -> float:
    return build_dpp_schedule(system, cfg).span + cfg.turn_gap


def _cycle_rng(cfg: ProtocolConfig, cycle_index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, cycle_index])


def simulate_cycle(
    system: System,
    schedule: PulseSchedule,
    cfg: ProtocolConfig,
    cycle_index: int = 0,
    rng: np.random.Generator | None = None,
) -> CycleTrace:
    v = system.signal_speed
    jitter = cfg.timestamp_jitter_sd
    if jitter > 0 and rng is None:
        rng = _cycle_rng(cfg, cycle_index)
    receivers = [system.node(i) for i in system.receivers]
    tx, rx = [], []
    for pulse in schedule:
        sender = system.node(pulse.sender)
        if not sender.role.can_transmit:
            raise SimulationError(f"node {sender.id} ({sender.role.value}) cannot transmit")
        tx.append(TxRecord(sender.id, pulse.pulse_index, sender.clock.local_time(pulse.emit_time), pulse.emit_time))
        for node in receivers:
            if node.id == sender.id:
                continue
            arrival = pulse.emit_time + math.dist(sender.position, node.position) / v
            local = node.clock.local_time(arrival)
            if jitter > 0:
                local += rng.normal(0.0, jitter)
            if not math.isfinite(local):
                raise SimulationError(f"non-finite rx timestamp at node {node.id}")
            rx.append(RxRecord(node.id, sender.id, pulse.pulse_index, local, arrival))
    return CycleTrace(cycle_index, tuple(tx), tuple(rx), system)


def simulate(systems, cfg: ProtocolConfig) -> list:
    """Run ``cfg.cycles`` cycles back to back.

    ``systems`` is one System (static nodes) or a sequence with one System
    per cycle, which is how movement between cycles is expressed.
    """
    if isinstance(systems, System):
        per_cycle = [systems] * cfg.cycles
    else:
        per_cycle = list(systems)
        if len(per_cycle) != cfg.cycles:
            raise InvalidInputError(f"expected {cfg.cycles} systems, got {len(per_cycle)}")
    traces = []
    start = 0.0
    for c, system in enumerate(per_cycle):
        schedule = build_dpp_schedule(system, cfg, start)
        traces.append(simulate_cycle(system, schedule, cfg, c))
        start = schedule.entries[-1].emit_time + cfg.turn_gap
    return traces


# -- channel usage ---------------------------------------------------------


def message_count_dpp(m: int, t: int) -> int:
    """Signals for one DPP cycle with ``m`` Bilateral and ``t`` Active nodes."""
    if m < 0 or t < 0 or m + t < 1:
        raise OutOfDomainError("DPP needs at least one transmitting node")
    return 2 * (m + t)


def message_count_dpw(m: int, t: int) -> int:
    """Signals for one DPW cycle with ``m`` mirrors and ``t`` tags."""
    if m < 0 or t < 0:
        raise OutOfDomainError("counts must be non-negative")
    return 3 * m * t


def djkm_round_counts(k: int) -> tuple:
    if k <= 2:
        raise OutOfDomainError(f"DJKM counts are defined for k > 2 anchors, got {k}")
    return 2 * k - 1, 2 * math.ceil(k / 2) - 1


def message_count_djkm(k: int) -> int:
    n1, n2 = djkm_round_counts(k)
    return n1 + n2


@dataclass(frozen=True)
class DjkmEvent:
    """One DJKM transmission.

    ``pair`` is the (initiator, responder) exchange the message belongs to;
    a re-used response also opens the next exchange, recorded in ``opens``.
    Anchors are numbered 1..k.
    """

    round: int
    sender: int
    kind: str
    pair: tuple
    opens: tuple | None = None


def _djkm_chain(round_no: int, anchors: Sequence[int]) -> list:
    # each exchange is poll / response / final; a response doubles as the
    # poll of the responder's own exchange with its successor
    events = []
    pairs = list(zip(anchors, anchors[1:]))
    for i, (a, b) in enumerate(pairs):
        if i == 0:
            events.append(DjkmEvent(round_no, a, "poll", (a, b)))
        nxt = pairs[i + 1] if i + 1 < len(pairs) else None
        events.append(DjkmEvent(round_no, b, "response", (a, b), opens=nxt))
        events.append(DjkmEvent(round_no, a, "final", (a, b)))
    return events


def build_djkm_schedule(k: int) -> list:
    if k <= 2:
        raise OutOfDomainError(f"DJKM needs k > 2 anchors, got {k}")
    anchors = list(range(1, k + 1))
    round_two = anchors[::2]
    return _djkm_chain(1, anchors) + _djkm_chain(2, round_two)


# -- export ------------------------------------------------------------------

TRACE_COLUMNS = ("cycle", "kind", "node", "sender", "pulse_index", "local_ts_s", "true_ts_s")


def trace_rows(traces: Iterable[CycleTrace], include_truth: bool = True):
    for trace in traces:
        for rec in trace.tx:
            yield (trace.cycle_index, "tx", rec.sender, rec.sender, rec.pulse_index,
                   repr(rec.local_timestamp), repr(rec.true_time) if include_truth else "")
        for rec in trace.rx:
            yield (trace.cycle_index, "rx", rec.receiver, rec.sender, rec.pulse_index,
                   repr(rec.local_timestamp), repr(rec.true_time) if include_truth else "")


def write_trace_csv(traces: Iterable[CycleTrace], fh, include_truth: bool = True) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(trace_rows(traces, include_truth))
