"""JSON scenario files: schema, validation and conversion to runtime objects."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import DppError, ScenarioError
from .model import DEFAULT_MAX_DRIFT, SPEED_OF_LIGHT, ClockModel, Node, Role, System
from .protocol import ProtocolConfig

SEED_ENV = "DPP_SIM_SEED"
PPM = 1e-6


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class ClockSpec(_Strict):
    offset_s: float = 0.0
    drift_ppm: float = 0.0


class NodeSpec(_Strict):
    id: int = Field(ge=0)
    role: Literal["passive", "active", "bilateral"]
    position: List[float]
    known_position: bool = False
    clock: ClockSpec = ClockSpec()


class ProtocolSpec(_Strict):
    signal_speed_mps: float = Field(default=SPEED_OF_LIGHT, gt=0)
    inter_pulse_gap_s: float = Field(default=200e-6, gt=0)
    turn_gap_s: float = Field(default=1e-3, gt=0)
    cycles: int = Field(default=1, ge=1)
    p: Optional[Literal[1, 2]] = None
    q: Optional[Literal[1, 2]] = None


class NoiseSpec(_Strict):
    timestamp_jitter_sd_s: float = Field(default=0.0, ge=0)
    seed: int = Field(default=0, ge=0)


class ScenarioSpec(_Strict):
    dimensionality: Literal[2, 3]
    nodes: List[NodeSpec] = Field(min_length=1)
    protocol: ProtocolSpec = ProtocolSpec()
    noise: NoiseSpec = NoiseSpec()

    @model_validator(mode="after")
    def _positions_match_dimensionality(self):
        for i, node in enumerate(self.nodes):
            if len(node.position) != self.dimensionality:
                raise ValueError(
                    f"nodes[{i}].position has {len(node.position)} components, "
                    f"dimensionality is {self.dimensionality}"
                )
        return self


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: ScenarioSpec
    system: System
    config: ProtocolConfig
    p: Optional[int]
    q: Optional[int]


def _format_validation(source: str, exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ""
        for part in err["loc"]:
            path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
        lines.append(f"{source}: {path or '<root>'}: {err['msg']}")
    return "\n".join(lines)


def parse_scenario(text: str, source: str = "<scenario>", max_drift: float = DEFAULT_MAX_DRIFT,
                   env=None) -> Scenario:
    env = os.environ if env is None else env
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        spec = ScenarioSpec.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError(_format_validation(source, exc)) from None

    nodes = []
    for i, ns in enumerate(spec.nodes):
        try:
            clock = ClockModel(ns.clock.offset_s, ns.clock.drift_ppm * PPM)
            nodes.append(Node(ns.id, Role(ns.role), tuple(ns.position), clock, ns.known_position))
        except DppError as exc:
            raise ScenarioError(f"{source}: nodes[{i}]: {exc}") from None
    try:
        system = System(tuple(nodes), spec.protocol.signal_speed_mps, max_drift)
    except DppError as exc:
        raise ScenarioError(f"{source}: nodes: {exc}") from None

    seed = spec.noise.seed
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ScenarioError(f"{SEED_ENV} must be an unsigned integer, got {env[SEED_ENV]!r}") from None
        if seed < 0:
            raise ScenarioError(f"{SEED_ENV} must be an unsigned integer, got {seed}")
    config = ProtocolConfig(
        inter_pulse_gap=spec.protocol.inter_pulse_gap_s,
        turn_gap=spec.protocol.turn_gap_s,
        cycles=spec.protocol.cycles,
        timestamp_jitter_sd=spec.noise.timestamp_jitter_sd_s,
        rng_seed=seed,
    )
    name = Path(source).stem if source and not source.startswith("<") else source
    return Scenario(name, spec, system, config, spec.protocol.p, spec.protocol.q)


def bundled_scenarios() -> dict:
    """Name -> path of the example systems shipped with the package."""
    root = resources.files("dpp_sim") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".json")}


def load_scenario(path_or_name, max_drift: float = DEFAULT_MAX_DRIFT, env=None) -> Scenario:
    """Load a scenario file, or a bundled one by name (e.g. ``"fig8b"``)."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = bundled_scenarios()
        if str(path_or_name) in bundled:
            path = bundled[str(path_or_name)]
        else:
            raise ScenarioError(f"{path_or_name}: no such file or bundled scenario")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    return parse_scenario(text, str(path), max_drift, env)


def scenario_to_dict(system: System, config: ProtocolConfig, p=None, q=None) -> dict:
    """Inverse of :func:`parse_scenario` for writing generated systems to disk."""
    return {
        "dimensionality": system.dim,
        "nodes": [
            {
                "id": n.id,
                "role": n.role.value,
                "position": list(n.position),
                "known_position": n.known_position,
                "clock": {"offset_s": n.clock.offset, "drift_ppm": n.clock.drift / PPM},
            }
            for n in system.nodes
        ],
        "protocol": {
            "signal_speed_mps": system.signal_speed,
            "inter_pulse_gap_s": config.inter_pulse_gap,
            "turn_gap_s": config.turn_gap,
            "cycles": config.cycles,
            "p": p,
            "q": q,
        },
        "noise": {"timestamp_jitter_sd_s": config.timestamp_jitter_sd, "seed": config.rng_seed},
    }
