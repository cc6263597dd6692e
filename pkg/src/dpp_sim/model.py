"""Nodes, roles, clocks and the ground-truth geometry they imply.

All times are seconds, positions meters and speeds m/s. ``tof_distance``
returns a *time* (the distance divided by the signal speed), which is the
unit every measurement in this package is expressed in.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidInputError

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_MAX_DRIFT = 20e-6

NodeId = int


class Role(enum.Enum):
    PASSIVE = "passive"
    ACTIVE = "active"
    BILATERAL = "bilateral"

    @property
    def can_transmit(self) -> bool:
        return self is not Role.PASSIVE

    @property
    def can_receive(self) -> bool:
        return self is not Role.ACTIVE

    @property
    def letter(self) -> str:
        return self.name[0]

    @classmethod
    def parse(cls, value) -> "Role":
        """Accept a Role, its value (``"passive"``) or its letter (``"P"``)."""
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for role in cls:
            if text in (role.value, role.value[0]):
                return role
        raise InvalidInputError(f"unknown role {value!r}")


@dataclass(frozen=True)
class ClockModel:
    """Affine local clock: ``offset + (1 + drift) * t_true``.

    The drift stays constant for the lifetime of the object, so a new
    instance is needed whenever the oscillator is re-sampled.
    """

    offset: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.offset) and math.isfinite(self.drift)):
            raise InvalidInputError("clock offset and drift must be finite")
        if abs(self.drift) >= 1.0:
            raise InvalidInputError(f"|drift| must be < 1, got {self.drift}")

    @property
    def k(self) -> float:
        """Frequency ratio of the local clock against true time."""
        return 1.0 + self.drift

    def local_time(self, t_true):
        return self.offset + (1.0 + self.drift) * t_true


def local_time(clock: ClockModel, t_true: float) -> float:
    if not math.isfinite(t_true):
        raise InvalidInputError("true time must be finite")
    return clock.local_time(t_true)


IDEAL_CLOCK = ClockModel()


@dataclass(frozen=True)
class Node:
    id: NodeId
    role: Role
    position: tuple
    clock: ClockModel = IDEAL_CLOCK
    known_position: bool = False

    def __post_init__(self):
        if isinstance(self.id, bool) or not isinstance(self.id, (int, np.integer)) or self.id < 0:
            raise InvalidInputError(f"node id must be a non-negative integer, got {self.id!r}")
        role = Role.parse(self.role)
        pos = tuple(float(c) for c in self.position)
        if len(pos) not in (2, 3):
            raise InvalidInputError(f"node {self.id}: position must be 2D or 3D, got {len(pos)} components")
        if not all(math.isfinite(c) for c in pos):
            raise InvalidInputError(f"node {self.id}: position components must be finite")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "position", pos)

    @property
    def dim(self) -> int:
        return len(self.position)


@dataclass(frozen=True)
class System:
    """An ordered set of nodes sharing one signal speed.

    List order matters: it is the transmission turn order of a cycle.
    """

    nodes: tuple
    signal_speed: float = SPEED_OF_LIGHT
    max_drift: float = DEFAULT_MAX_DRIFT
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise InvalidInputError("a system needs at least one node")
        if not (math.isfinite(self.signal_speed) and self.signal_speed > 0):
            raise InvalidInputError("signal speed must be positive and finite")
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate node ids in {ids}")
        if len({n.dim for n in nodes}) != 1:
            raise InvalidInputError("all nodes must share one dimensionality")
        for n in nodes:
            if abs(n.clock.drift) > self.max_drift:
                raise InvalidInputError(
                    f"node {n.id}: |drift| {abs(n.clock.drift):.3g} exceeds max {self.max_drift:.3g}"
                )
        object.__setattr__(self, "_index", {n.id: i for i, n in enumerate(nodes)})

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __contains__(self, node_id):
        return node_id in self._index

    @property
    def dim(self) -> int:
        return self.nodes[0].dim

    @property
    def ids(self) -> list:
        return [n.id for n in self.nodes]

    def node(self, node_id: NodeId) -> Node:
        try:
            return self.nodes[self._index[node_id]]
        except KeyError:
            raise InvalidInputError(f"unknown node id {node_id}") from None

    def order(self, node_id: NodeId) -> int:
        return self._index[node_id]

    def role(self, node_id: NodeId) -> Role:
        return self.node(node_id).role

    def ids_with(self, *roles: Role) -> list:
        return [n.id for n in self.nodes if n.role in roles]

    @property
    def passive(self) -> list:
        return self.ids_with(Role.PASSIVE)

    @property
    def active(self) -> list:
        return self.ids_with(Role.ACTIVE)

    @property
    def bilateral(self) -> list:
        return self.ids_with(Role.BILATERAL)

    @property
    def transmitters(self) -> list:
        return self.ids_with(Role.ACTIVE, Role.BILATERAL)

    @property
    def receivers(self) -> list:
        return self.ids_with(Role.PASSIVE, Role.BILATERAL)

    def partition(self) -> dict:
        return {role: frozenset(self.ids_with(role)) for role in Role}

    def labels(self) -> dict:
        """Role letter plus per-role running index, e.g. ``P0``, ``A0``, ``B1``."""
        counters = {role: 0 for role in Role}
        out = {}
        for n in self.nodes:
            out[n.id] = f"{n.role.letter}{counters[n.role]}"
            counters[n.role] += 1
        return out

    def position(self, node_id: NodeId) -> np.ndarray:
        return np.asarray(self.node(node_id).position)

    def known_positions(self) -> dict:
        return {n.id: np.asarray(n.position) for n in self.nodes if n.known_position}

    def tof(self, a: NodeId, b: NodeId) -> float:
        return tof_distance(self.node(a), self.node(b), self.signal_speed)

    def replace_nodes(self, nodes: Iterable[Node]) -> "System":
        return dataclasses.replace(self, nodes=tuple(nodes))

    def with_clocks(self, clocks) -> "System":
        """Copy with clocks swapped; ``clocks`` maps id -> ClockModel (missing ids keep theirs)."""
        return self.replace_nodes(
            dataclasses.replace(n, clock=clocks.get(n.id, n.clock)) for n in self.nodes
        )

    def with_ideal_clocks(self) -> "System":
        return self.with_clocks({n.id: IDEAL_CLOCK for n in self.nodes})

    def with_positions(self, positions) -> "System":
        return self.replace_nodes(
            dataclasses.replace(n, position=tuple(positions.get(n.id, n.position))) for n in self.nodes
        )


def tof_distance(a: Node, b: Node, v: float) -> float:
    if a.dim != b.dim:
        raise InvalidInputError("nodes have different dimensionality")
    if not (math.isfinite(v) and v > 0):
        raise InvalidInputError("signal speed must be positive and finite")
    return math.dist(a.position, b.position) / v


def true_tdoa(x: Node, source_y: Node, z: Node, v: float) -> float:
    """Arrival-time difference of a pulse from ``source_y`` at ``z`` versus ``x``."""
    if len({x.id, source_y.id, z.id}) != 3:
        raise InvalidInputError("true_tdoa needs three distinct nodes")
    return tof_distance(source_y, z, v) - tof_distance(x, source_y, v)


def build_system(spec: Sequence, signal_speed: float = SPEED_OF_LIGHT, **kwargs) -> System:
    """Shorthand constructor: ``spec`` holds ``(role, position)`` or
    ``(role, position, known)`` tuples; ids are assigned in order."""
    nodes = []
    for i, entry in enumerate(spec):
        role, pos, *rest = entry
        nodes.append(Node(i, Role.parse(role), tuple(pos), known_position=bool(rest[0]) if rest else False))
    return System(tuple(nodes), signal_speed, **kwargs)
