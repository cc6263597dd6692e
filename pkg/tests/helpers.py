"""Shared builders for the test suite."""

import math

import numpy as np

from dpp_sim.model import SPEED_OF_LIGHT, ClockModel, Node, Role, System
from dpp_sim.protocol import ProtocolConfig, build_dpp_schedule, simulate_cycle

# slow signal (1 m/s) needs long gaps or the span products lose precision
SLOW_CFG = ProtocolConfig(inter_pulse_gap=10.0, turn_gap=10.0)
FAST_CFG = ProtocolConfig()


def fixture_345(roles=("bilateral", "bilateral", "bilateral"), clocks=None) -> System:
    """X(0,0), Y(3,0), Z(3,4) at v = 1 m/s; ids 0, 1, 2."""
    clocks = clocks or [ClockModel()] * 3
    pts = [(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)]
    return System(tuple(Node(i, Role(r), p, c) for i, (r, p, c) in enumerate(zip(roles, pts, clocks))), 1.0)


def run_cycle(system, cfg=None, cycle_index=0):
    cfg = cfg or (SLOW_CFG if system.signal_speed < 1e3 else FAST_CFG)
    return simulate_cycle(system, build_dpp_schedule(system, cfg), cfg, cycle_index)


def random_system(rng, n_passive=1, n_active=1, n_bilateral=3, dim=2, scale=30.0,
                  max_drift=0.0, offset_range=10.0, v=SPEED_OF_LIGHT, shuffle=True) -> System:
    roles = ["passive"] * n_passive + ["active"] * n_active + ["bilateral"] * n_bilateral
    if shuffle:
        rng.shuffle(roles)
    nodes = []
    for i, role in enumerate(roles):
        pos = tuple(float(c) for c in rng.uniform(-scale, scale, dim))
        clock = ClockModel(float(rng.uniform(-offset_range, offset_range)),
                           float(rng.uniform(-max_drift, max_drift)) if max_drift else 0.0)
        nodes.append(Node(i, Role(role), pos, clock))
    return System(tuple(nodes), v, max(max_drift, 20e-6))


def true_mu(system, x, y, z):
    tof = system.tof
    return tof(y, z) - tof(x, y) + tof(x, z)


def harmonic_scale(eps_a, eps_b):
    """Exact factor an affine clock pair applies to compound values and ranges."""
    ka, kb = 1 + eps_a, 1 + eps_b
    return 2 * ka * kb / (ka + kb)


def ring(n, radius=10.0, center=(0.0, 0.0), phase=0.3):
    return [(center[0] + radius * math.cos(phase + 2 * math.pi * i / n),
             center[1] + radius * math.sin(phase + 2 * math.pi * i / n)) for i in range(n)]


def as_array(points):
    return np.asarray(points, dtype=float)


def tdoa_inputs(ms, node, anchors):
    """``(x, z, value)`` triples of a MeasurementSet that locate ``node``."""
    return [(x, z, t) for (x, z, y), t in ms.tdoa.items() if y == node and x in anchors and z in anchors]


def feasible_radius(anchors, keys, truth, v, value_bound, half_width, step):
    """Brute-force bound on how far a least-squares TDoA fit can land from ``truth``.

    Each value may be off by at most ``value_bound`` seconds. The global
    least-squares point then lies where the model misfit against the true
    values is at most twice the misfit of the truth against the measured
    ones, i.e. ``||m(p) - m(truth)|| <= 2 sqrt(n) value_bound``. Returns the
    largest distance from ``truth`` of a grid point in that set and whether
    the set touched the grid edge (in which case the radius is not a bound).
    """
    truth = np.asarray(truth, dtype=float)
    axis = np.arange(-half_width, half_width + step / 2, step)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = truth + np.stack([gx.ravel(), gy.ravel()], axis=1)

    def model(p):
        return np.stack([(np.linalg.norm(p - anchors[z], axis=-1) - np.linalg.norm(p - anchors[x], axis=-1)) / v
                         for x, z in keys], axis=-1)

    misfit = np.linalg.norm(model(pts) - model(truth[None, :]), axis=1)
    inside = misfit <= 2 * math.sqrt(len(keys)) * value_bound
    dist = np.linalg.norm(pts - truth, axis=1)
    edge = np.isclose(np.max(np.abs(pts - truth), axis=1), axis[-1])
    return float(dist[inside].max()), bool(np.any(inside & edge))
