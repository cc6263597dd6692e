"""Timespans, compound values, TDoA/ToA/direct values from cycle traces.

Naming of keys follows the subscript/superscript layout of the values:
``mu[(x, z, y)]`` is the compound value of receivers ``x``, ``z`` for
source ``y``, and ``tdoa[(x, z, y)]`` is ``d(y, z) - d(x, y)``, the
arrival-time difference of a pulse from ``y`` at ``z`` versus ``x``.
All inputs are local timestamps; nothing here looks at true times.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable

from .exceptions import (
    DegenerateScheduleError,
    InsufficientDataError,
    InvalidInputError,
    InvalidPairingError,
    InvalidRolesError,
)
from .model import NodeId, Role, System
from .protocol import PULSES, CycleTrace

DENOMINATOR_GUARD = 1e-12
FORMS = ("from_x", "from_z", "combined")


def pair_key(a: NodeId, b: NodeId) -> tuple:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class TdoaSpans:
    """Spans of one (receiver x, source y, bilateral z) triple.

    ``round_x``/``delay_x`` are measured on x's clock, ``round_z``/``delay_z``
    on z's clock; ``p`` picks which of z's pulses acts as the reply.
    """

    x: NodeId
    y: NodeId
    z: NodeId
    p: int
    round_x: float
    delay_x: float
    round_z: float
    delay_z: float


@dataclass(frozen=True)
class TwrSpans:
    y: NodeId
    z: NodeId
    q: int
    round_y: float
    delay_y: float
    round_z: float
    delay_z: float


def _require_distinct(*ids):
    if len(set(ids)) != len(ids):
        raise InvalidRolesError(f"nodes must be pairwise distinct, got {ids}")


def _check_pulse(p):
    if p not in PULSES:
        raise InvalidInputError(f"pulse index must be 1 or 2, got {p}")


def check_triple_roles(system: System, x: NodeId, y: NodeId, z: NodeId) -> None:
    _require_distinct(x, y, z)
    if not system.role(x).can_receive:
        raise InvalidRolesError(f"x={x} must be able to receive (Passive or Bilateral)")
    if not system.role(y).can_transmit:
        raise InvalidRolesError(f"y={y} must be able to transmit (Active or Bilateral)")
    if system.role(z) is not Role.BILATERAL:
        raise InvalidRolesError(f"z={z} must be Bilateral")


def admissible_triples(system: System) -> list:
    """All (x, y, z) with x receiving, y transmitting, z Bilateral, pairwise distinct."""
    return [
        (x, y, z)
        for x in system.receivers
        for y in system.transmitters
        for z in system.bilateral
        if len({x, y, z}) == 3
    ]


def bilateral_pairs(system: System) -> list:
    return list(itertools.combinations(system.bilateral, 2))


def extract_tdoa_spans(trace: CycleTrace, x: NodeId, y: NodeId, z: NodeId, p: int = 1) -> TdoaSpans:
    check_triple_roles(trace.system, x, y, z)
    _check_pulse(p)
    r_x_y1 = trace.r(x, y, 1)
    r_x_y2 = trace.r(x, y, 2)
    r_x_zp = trace.r(x, z, p)
    t_zp = trace.t(z, p)
    r_z_y1 = trace.r(z, y, 1)
    r_z_y2 = trace.r(z, y, 2)
    return TdoaSpans(
        x, y, z, p,
        round_x=r_x_zp - r_x_y1,
        delay_x=r_x_y2 - r_x_zp,
        round_z=r_z_y2 - t_zp,
        delay_z=t_zp - r_z_y1,
    )


def mu(spans: TdoaSpans, form: str = "combined") -> float:
    """Compound value of a triple; drift-free it equals d(y,z) - d(x,y) + d(x,z).

    ``from_x`` normalises by x's span, ``from_z`` by z's, ``combined`` by
    the mean of both, which halves the first-order clock error.
    """
    numerator = spans.round_x * spans.round_z - spans.delay_x * spans.delay_z
    if form == "from_x":
        denominator = spans.round_x + spans.delay_x
        scale = 1.0
    elif form == "from_z":
        denominator = spans.round_z + spans.delay_z
        scale = 1.0
    elif form == "combined":
        denominator = spans.round_x + spans.delay_x + spans.round_z + spans.delay_z
        scale = 2.0
    else:
        raise InvalidInputError(f"unknown form {form!r}, expected one of {FORMS}")
    if not denominator > DENOMINATOR_GUARD:
        raise DegenerateScheduleError(f"denominator {denominator!r} s is not above {DENOMINATOR_GUARD} s")
    return scale * numerator / denominator


def tdoa_from_mu(mu_value: float, d_xz: float) -> float:
    """TDoA of source y at receivers (x, z), given the x-z time of flight."""
    if d_xz < 0:
        raise InvalidInputError("d_xz must be >= 0")
    return mu_value - d_xz


def tdoa_alternate(mu_value: float, d_yz: float) -> float:
    """TDoA of source x at receivers (y, z), given the y-z time of flight."""
    if d_yz < 0:
        raise InvalidInputError("d_yz must be >= 0")
    return mu_value - d_yz


def extract_twr_spans(trace: CycleTrace, y: NodeId, z: NodeId, q: int = 1) -> TwrSpans:
    system = trace.system
    _require_distinct(y, z)
    for node in (y, z):
        if system.role(node) is not Role.BILATERAL:
            raise InvalidRolesError(f"node {node} must be Bilateral for two-way ranging")
    _check_pulse(q)
    r_y_zq = trace.r(y, z, q)
    t_zq = trace.t(z, q)
    return TwrSpans(
        y, z, q,
        round_y=r_y_zq - trace.t(y, 1),
        delay_y=trace.t(y, 2) - r_y_zq,
        round_z=trace.r(z, y, 2) - t_zq,
        delay_z=t_zq - trace.r(z, y, 1),
    )


def toa_distance(spans: TwrSpans) -> float:
    """Asymmetric double-sided two-way-ranging time of flight."""
    denominator = spans.round_y + spans.round_z + spans.delay_y + spans.delay_z
    if not denominator > DENOMINATOR_GUARD:
        raise DegenerateScheduleError(f"denominator {denominator!r} s is not above {DENOMINATOR_GUARD} s")
    return (spans.round_y * spans.round_z - spans.delay_y * spans.delay_z) / denominator


def direct_distance(mu_xzy: float, mu_zxy: float, keys: tuple | None = None) -> float:
    """Mean of the two orientations of a Bilateral receiver pair for one source.

    ``keys`` optionally carries the ``(x, z, y)`` keys of both inputs so a
    wrong pairing is caught instead of silently averaged.
    """
    if keys is not None:
        (x1, z1, y1), (x2, z2, y2) = keys
        if not (x1 == z2 and z1 == x2 and y1 == y2 and x1 != z1):
            raise InvalidPairingError(f"{keys[0]} and {keys[1]} are not mirrored keys of one source")
    return 0.5 * (mu_xzy + mu_zxy)


def mu_value(trace: CycleTrace, x: NodeId, y: NodeId, z: NodeId, p=None) -> float:
    """Combined compound value; ``p=None`` averages both reply pulses."""
    ps = PULSES if p is None else (p,)
    return sum(mu(extract_tdoa_spans(trace, x, y, z, pp)) for pp in ps) / len(ps)


def toa_value(trace: CycleTrace, y: NodeId, z: NodeId, q=None) -> float:
    """ToF between two Bilaterals averaged over both orientations (and both q if ``q=None``)."""
    qs = PULSES if q is None else (q,)
    vals = [toa_distance(extract_twr_spans(trace, a, b, qq)) for a, b in ((y, z), (z, y)) for qq in qs]
    return sum(vals) / len(vals)


def mu_symmetry_check(trace: CycleTrace, x: NodeId, y: NodeId, z: NodeId, p=None) -> tuple:
    """Both compound values that coincide when x and y swap roles, and their difference."""
    for node in (x, y, z):
        if trace.system.role(node) is not Role.BILATERAL:
            raise InvalidRolesError(f"node {node} must be Bilateral")
    mu_xzy = mu_value(trace, x, y, z, p)
    mu_yzx = mu_value(trace, y, x, z, p)
    return mu_xzy, mu_yzx, mu_xzy - mu_yzx


@dataclass(frozen=True)
class DistancePolicy:
    """Where known times of flight come from when converting to TDoA.

    Same-cycle ToA between Bilaterals wins by default; configured positions
    are only used for nodes flagged ``known_position``.
    """

    prefer_toa: bool = True
    use_known_positions: bool = True

    def lookup(self, a: NodeId, b: NodeId, toa: dict, system: System):
        from_toa = toa.get(pair_key(a, b))
        from_pos = None
        if self.use_known_positions and system.node(a).known_position and system.node(b).known_position:
            from_pos = system.tof(a, b)
        if self.prefer_toa:
            return from_toa if from_toa is not None else from_pos
        return from_pos if from_pos is not None else from_toa


@dataclass
class MeasurementSet:
    system: System
    cycle_index: int = 0
    mu: dict = field(default_factory=dict)
    mu_by_p: dict = field(default_factory=dict)
    toa: dict = field(default_factory=dict)
    toa_by_q: dict = field(default_factory=dict)
    tdoa: dict = field(default_factory=dict)
    direct: dict = field(default_factory=dict)
    mu_only: list = field(default_factory=list)

    @property
    def signal_speed(self) -> float:
        return self.system.signal_speed

    def toa_m(self, a: NodeId, b: NodeId) -> float:
        return self.toa[pair_key(a, b)] * self.signal_speed

    def is_empty(self) -> bool:
        return not (self.mu or self.toa)

    def basis_keys(self) -> list:
        """One compound value per node set.

        Within a set of three nodes every admissible orientation follows from
        any other one plus the ToA values between its Bilaterals, so one
        representative per set is kept: smallest list position for x, then
        for z.
        """
        order = self.system.order
        best = {}
        for key in self.mu:
            x, z, y = key
            rank = (order(x), order(z))
            members = frozenset(key)
            if members not in best or rank < best[members][0]:
                best[members] = (rank, key)
        return sorted((k for _, k in best.values()), key=lambda k: (order(k[0]), order(k[2]), order(k[1])))

    def rows(self) -> list:
        """Flat rows ``(kind, x, y, z, p_or_q, value_s, value_m)``; y is the source."""
        v = self.signal_speed
        out = []
        for (x, z, y), val in self.mu.items():
            for p in PULSES:
                if (x, z, y, p) in self.mu_by_p:
                    out.append(("mu", x, y, z, str(p), self.mu_by_p[(x, z, y, p)]))
            out.append(("mu", x, y, z, "mean", val))
        for (a, b), val in self.toa.items():
            for q in PULSES:
                if (a, b, q) in self.toa_by_q:
                    out.append(("toa", a, "", b, str(q), self.toa_by_q[(a, b, q)]))
            out.append(("toa", a, "", b, "mean", val))
        for (x, z, y), val in self.tdoa.items():
            out.append(("tdoa", x, y, z, "mean", val))
        for (x, z, y), val in self.direct.items():
            out.append(("direct", x, y, z, "mean", val))
        return [row + (row[-1] * v,) for row in out]

    def to_dict(self) -> dict:
        labels = self.system.labels()

        def entry(kind, x, y, z, val):
            d = {"x": x, "y": y, "z": z} if y is not None else {"a": x, "b": z}
            d.update(value_s=val, value_m=val * self.signal_speed)
            d["label"] = _label(kind, x, y, z, labels)
            return d

        return {
            "cycle": self.cycle_index,
            "mu": [entry("mu", x, y, z, v) for (x, z, y), v in self.mu.items()],
            "basis": [list(k) for k in self.basis_keys()],
            "tdoa": [entry("tdoa", x, y, z, v) for (x, z, y), v in self.tdoa.items()],
            "toa": [entry("toa", a, None, b, v) for (a, b), v in self.toa.items()],
            "direct": [entry("direct", x, y, z, v) for (x, z, y), v in self.direct.items()],
            "mu_only": [list(k) for k in self.mu_only],
        }


def _label(kind, x, y, z, labels):
    if kind == "toa":
        return f"d_{labels[x]}{labels[z]}"
    sym = {"mu": "mu", "tdoa": "T", "direct": "d"}[kind]
    return f"{sym}_{labels[x]}{labels[z]}^{labels[y]}"


def full_cycle_measurements(
    trace: CycleTrace,
    policy: DistancePolicy = DistancePolicy(),
    p=None,
    q=None,
) -> MeasurementSet:
    """Every value one cycle yields.

    TDoA values are produced twice over where possible: subtracting the
    receivers' time of flight gives the value for source y, subtracting the
    source-to-z time of flight gives the value for source x. Compound values
    for which neither distance is known end up in ``mu_only``.
    """
    system = trace.system
    ms = MeasurementSet(system, trace.cycle_index)
    ps = PULSES if p is None else (p,)
    qs = PULSES if q is None else (q,)

    for a, b in bilateral_pairs(system):
        per_q = []
        for qq in qs:
            val = 0.5 * (toa_distance(extract_twr_spans(trace, a, b, qq))
                         + toa_distance(extract_twr_spans(trace, b, a, qq)))
            ms.toa_by_q[(a, b, qq)] = val
            per_q.append(val)
        ms.toa[(a, b)] = sum(per_q) / len(per_q)

    for x, y, z in admissible_triples(system):
        vals = []
        for pp in ps:
            val = mu(extract_tdoa_spans(trace, x, y, z, pp))
            ms.mu_by_p[(x, z, y, pp)] = val
            vals.append(val)
        ms.mu[(x, z, y)] = sum(vals) / len(vals)

    estimates = {}
    for (x, z, y), val in ms.mu.items():
        found = False
        d_xz = policy.lookup(x, z, ms.toa, system)
        if d_xz is not None:
            estimates.setdefault((x, z, y), []).append(tdoa_from_mu(val, d_xz))
            found = True
        d_yz = policy.lookup(y, z, ms.toa, system)
        if d_yz is not None:
            estimates.setdefault((y, z, x), []).append(tdoa_alternate(val, d_yz))
            found = True
        if not found:
            ms.mu_only.append((x, z, y))
    ms.tdoa = {k: sum(v) / len(v) for k, v in estimates.items()}

    for (x, z, y), val in ms.mu.items():
        mirrored = (z, x, y)
        if x < z and mirrored in ms.mu:
            ms.direct[(x, z, y)] = direct_distance(val, ms.mu[mirrored], ((x, z, y), mirrored))
    return ms


@dataclass(frozen=True)
class SubschemeView:
    """A legacy scheme carved out of a DPP cycle and the TDoA it yields."""

    trace: CycleTrace
    key: tuple
    tdoa: float
    messages: int
    response_delay: float | None = None


def _known_tof(trace: CycleTrace, a: NodeId, b: NodeId, given):
    if given is not None:
        return given
    system = trace.system
    if system.node(a).known_position and system.node(b).known_position:
        return system.tof(a, b)
    if system.role(a) is Role.BILATERAL and system.role(b) is Role.BILATERAL:
        return toa_value(trace, a, b)
    raise InsufficientDataError(f"time of flight between {a} and {b} is neither given nor derivable")


def derive_dpw_view(trace: CycleTrace, x: NodeId, y: NodeId, z: NodeId, d_xz: float | None = None) -> SubschemeView:
    """Pulse/mirror/pulse sub-scheme: Passive x, Active y, Bilateral z without its second pulse."""
    system = trace.system
    _require_distinct(x, y, z)
    expected = ((x, Role.PASSIVE), (y, Role.ACTIVE), (z, Role.BILATERAL))
    for node, role in expected:
        if system.role(node) is not role:
            raise InvalidRolesError(f"node {node} must be {role.value} for the DPW view")
    d_xz = _known_tof(trace, x, z, d_xz)
    view = trace.restricted((x, y, z), drop=[(z, 2)])
    value = tdoa_from_mu(mu(extract_tdoa_spans(view, x, y, z, 1)), d_xz)
    return SubschemeView(view, (x, z, y), value, len(view.tx))


def derive_djkm_view(
    trace: CycleTrace, t: NodeId, an0: NodeId, an1: NodeId, d_anchors: float | None = None
) -> SubschemeView:
    """Single-pulse anchor exchange heard by a Passive node.

    The passive node's arrival-time difference minus the second anchor's
    reply delay and the anchor-to-anchor time of flight is the TDoA of the
    passive node towards the two anchors.
    """
    system = trace.system
    if an0 == an1:
        raise InvalidInputError("DJKM needs two distinct anchors")
    _require_distinct(t, an0, an1)
    if system.role(t) is not Role.PASSIVE:
        raise InvalidRolesError(f"node {t} must be Passive for the DJKM view")
    for node in (an0, an1):
        if system.role(node) is not Role.BILATERAL:
            raise InvalidRolesError(f"anchor {node} must be Bilateral")
    d_anchors = _known_tof(trace, an0, an1, d_anchors)
    view = trace.restricted((t, an0, an1), drop=[(an0, 2), (an1, 2)])
    arrival_diff = view.r(t, an1, 1) - view.r(t, an0, 1)
    reply_delay = view.t(an1, 1) - view.r(an1, an0, 1)
    return SubschemeView(view, (an0, an1, t), arrival_diff - reply_delay - d_anchors, len(view.tx), reply_delay)


def measurements_json(sets: Iterable[MeasurementSet]) -> str:
    sets = list(sets)
    payload = {
        "signal_speed_mps": sets[0].signal_speed if sets else None,
        "labels": {str(k): v for k, v in (sets[0].system.labels().items() if sets else [])},
        "cycles": [s.to_dict() for s in sets],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


MEASUREMENT_COLUMNS = ("cycle", "kind", "x", "y", "z", "p_or_q", "value_s", "value_m")


def measurement_rows(sets: Iterable[MeasurementSet]):
    for s in sets:
        for kind, x, y, z, pq, val_s, val_m in s.rows():
            yield (s.cycle_index, kind, x, y, z, pq, repr(val_s), repr(val_m))
