"""Position solvers for ToA ranges and TDoA values.

Solvers work in meters internally; TDoA inputs are seconds and are scaled
by the signal speed. Residual norms on estimates are reported in seconds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConvergenceError,
    DegenerateGeometryError,
    InsufficientDataError,
    InvalidInputError,
    MetricInfeasibleError,
)
from .measure import MeasurementSet, pair_key
from .model import Role

MAX_ITER = 100
STEP_TOL = 1e-12
RESIDUAL_TOL = 1e-10  # meters
TIE_TOL = 1e-6  # meters


@dataclass
class PositionEstimate:
    node: int
    position: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    alternatives: list = field(default_factory=list)


@dataclass
class RelativeFrame:
    coordinates: dict
    gauge: dict
    residual_norm: float
    iterations: int
    converged: bool


@dataclass
class FitResult:
    x: np.ndarray
    cost_history: list
    iterations: int
    converged: bool

    @property
    def residual_norm(self) -> float:
        return math.sqrt(self.cost_history[-1])


def damped_gauss_newton(fun, jac, x0, max_iter=MAX_ITER, step_tol=STEP_TOL, residual_tol=RESIDUAL_TOL) -> FitResult:
    """Gauss-Newton that falls back to Levenberg damping when a step does not pay off.

    A step is only accepted when it does not increase the sum of squares,
    so ``cost_history`` is non-increasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    cost = float(r @ r)
    history = [cost]
    lam = 0.0
    for it in range(1, max_iter + 1):
        if math.sqrt(cost) < residual_tol:
            return FitResult(x, history, it - 1, True)
        J = jac(x)
        accepted = False
        while True:
            if lam > 0:
                A = np.vstack([J, math.sqrt(lam) * np.eye(x.size)])
                b = np.concatenate([-r, np.zeros(x.size)])
            else:
                A, b = J, -r
            step = np.linalg.lstsq(A, b, rcond=None)[0]
            x_new = x + step
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                lam = 0.0 if lam <= 1e-9 else lam / 10.0
                break
            lam = 1e-6 * max(1.0, float(np.max(np.abs(J)) ** 2)) if lam == 0 else lam * 10.0
            if lam > 1e12:
                break
        if not accepted:
            # no descent direction left: stationary point
            return FitResult(x, history, it, True)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        if np.linalg.norm(step) <= step_tol * (np.linalg.norm(x) + step_tol):
            return FitResult(x, history, it, True)
    return FitResult(x, history, max_iter, math.sqrt(cost) < residual_tol)


def _unit_rows(diff):
    norms = np.linalg.norm(diff, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return diff / safe[:, None] * (norms > 0)[:, None], norms


def _as_positions(anchors: dict) -> dict:
    return {k: np.asarray(v, dtype=float) for k, v in anchors.items()}


def solve_toa(distances: dict, anchors: dict, unknown: int, v: float = 1.0, **kw) -> PositionEstimate:
    """Nonlinear least-squares trilateration from ranges in meters."""
    anchors = _as_positions(anchors)
    rows = []
    for key, d in distances.items():
        a, b = tuple(key)
        other = b if a == unknown else a if b == unknown else None
        if other is None or other == unknown or other not in anchors:
            continue
        rows.append((anchors[other], float(d)))
    if not anchors:
        raise InsufficientDataError("no anchors given")
    dim = len(next(iter(anchors.values())))
    if len(rows) < dim + 1:
        raise InsufficientDataError(f"need {dim + 1} anchors with ranges to node {unknown}, have {len(rows)}")
    A = np.array([r[0] for r in rows])
    d = np.array([r[1] for r in rows])

    def fun(p):
        return np.linalg.norm(A - p, axis=1) - d

    def jac(p):
        return _unit_rows(p - A)[0]

    fit = damped_gauss_newton(fun, jac, A.mean(axis=0), **kw)
    if not np.all(np.isfinite(fit.x)):
        raise ConvergenceError(f"trilateration of node {unknown} diverged")
    return PositionEstimate(unknown, fit.x, fit.residual_norm / v, fit.iterations, fit.converged)


def _merge_tdoas(tdoas) -> dict:
    merged = {}
    for x, z, value in tdoas:
        if x == z:
            raise InvalidInputError("tdoa receivers must differ")
        key = pair_key(x, z)
        merged.setdefault(key, []).append(value if key == (x, z) else -value)
    return {k: sum(v) / len(v) for k, v in merged.items()}


def solve_tdoa(tdoas, anchors: dict, unknown: int, v: float, **kw) -> PositionEstimate:
    """Hyperbolic multilateration of a pulse source or passive listener.

    ``tdoas`` holds ``(x, z, value)`` with ``value = d(unknown, z) - d(x, unknown)``
    in seconds. When there are exactly ``dim + 1`` receivers two positions
    can fit equally well; the other one is then returned in ``alternatives``.
    """
    anchors = _as_positions(anchors)
    values = {k: t for k, t in _merge_tdoas(tdoas).items() if k[0] in anchors and k[1] in anchors}
    if not anchors:
        raise InsufficientDataError("no anchors given")
    dim = len(next(iter(anchors.values())))
    used = sorted({n for k in values for n in k})
    if len(values) < dim + 1 or len(used) < dim + 1:
        raise InsufficientDataError(
            f"node {unknown}: {len(values)} TDoA values over {len(used)} receivers, need {dim + 1} of each"
        )
    X = np.array([anchors[x] for x, _ in values])
    Z = np.array([anchors[z] for _, z in values])
    target = np.array([t * v for t in values.values()])

    def fun(p):
        return np.linalg.norm(Z - p, axis=1) - np.linalg.norm(X - p, axis=1) - target

    def jac(p):
        return _unit_rows(p - Z)[0] - _unit_rows(p - X)[0]

    pts = np.array([anchors[n] for n in used])
    centroid = pts.mean(axis=0)
    best = damped_gauss_newton(fun, jac, centroid, **kw)
    if not np.all(np.isfinite(best.x)):
        raise ConvergenceError(f"multilateration of node {unknown} diverged")
    alternatives = []
    minimal = len(used) == dim + 1
    # hyperbolic costs have local minima outside the receiver hull; restart
    # from a ring around it when the centroid start does not fit exactly
    if minimal or best.residual_norm > RESIDUAL_TOL:
        fits = [best] + [damped_gauss_newton(fun, jac, s, **kw) for s in _ring_starts(centroid, pts)]
        fits = [f for f in fits if np.all(np.isfinite(f.x))]
        best = min(fits, key=lambda f: f.residual_norm)
    if minimal:
        scale = 1.0 + float(np.max(np.linalg.norm(pts - centroid, axis=1)))
        for f in fits:
            if f.residual_norm <= best.residual_norm + TIE_TOL and np.linalg.norm(f.x - best.x) > 1e-6 * scale:
                if all(np.linalg.norm(f.x - a) > 1e-6 * scale for a in alternatives):
                    alternatives.append(f.x)
    return PositionEstimate(unknown, best.x, best.residual_norm / v, best.iterations, best.converged, alternatives)


def _ring_starts(centroid, pts):
    radius = 1.5 * max(float(np.max(np.linalg.norm(pts - centroid, axis=1))), 1e-9)
    dim = centroid.size
    if dim == 2:
        dirs = [np.array([math.cos(a), math.sin(a)]) for a in np.linspace(0, 2 * math.pi, 8, endpoint=False)]
    else:
        dirs = [np.array(d, dtype=float) / np.linalg.norm(d)
                for d in itertools.product((-1, 0, 1), repeat=3) if any(d)]
    return [centroid + radius * d for d in dirs]


# -- relative frames ---------------------------------------------------------


def _distance_matrix(distances: dict, nodes: list) -> np.ndarray:
    index = {n: i for i, n in enumerate(nodes)}
    D = np.full((len(nodes), len(nodes)), np.nan)
    np.fill_diagonal(D, 0.0)
    for key, d in distances.items():
        a, b = tuple(key)
        if a in index and b in index and a != b:
            if not (math.isfinite(d) and d >= 0):
                raise MetricInfeasibleError(f"distance {a}-{b} must be finite and >= 0, got {d}")
            D[index[a], index[b]] = D[index[b], index[a]] = float(d)
    return D


def _check_triangles(D: np.ndarray, nodes: list, rel_tol: float) -> None:
    scale = np.nanmax(D) if np.any(np.isfinite(D)) else 0.0
    n = len(nodes)
    for i, j, k in itertools.permutations(range(n), 3):
        if j < k and np.isfinite(D[i, j]) and np.isfinite(D[i, k]) and np.isfinite(D[j, k]):
            if D[j, k] > D[i, j] + D[i, k] + rel_tol * scale:
                raise MetricInfeasibleError(
                    f"distances violate the triangle inequality at nodes {nodes[j]}, {nodes[k]} via {nodes[i]}"
                )


def _complete_shortest_paths(D: np.ndarray) -> np.ndarray:
    G = np.where(np.isfinite(D), D, np.inf)
    n = len(G)
    for k in range(n):
        G = np.minimum(G, G[:, [k]] + G[[k], :])
    if not np.all(np.isfinite(G)):
        raise InsufficientDataError("distance graph is not connected")
    return G


def classical_embedding(D: np.ndarray, dim: int) -> np.ndarray:
    """Double-centering embedding of a complete distance matrix."""
    n = len(D)
    H = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * H @ (D**2) @ H
    evals, evecs = np.linalg.eigh(B)
    idx = np.argsort(evals)[::-1][:dim]
    top = evals[idx]
    # rounding leaves tiny eigenvalues whose roots would bend flat sets
    top = np.where(top > 1e-12 * max(float(top[0]), 0.0), top, 0.0)
    return evecs[:, idx] * np.sqrt(top)


def _gauge_fix(P: np.ndarray, nodes: list) -> tuple:
    n, dim = P.shape
    scale = max(float(np.max(np.linalg.norm(P - P.mean(axis=0), axis=1))), 1e-300)
    origin = 0
    axis_idx = next((i for i in range(1, n) if np.linalg.norm(P[i] - P[origin]) > 1e-9 * scale), None)
    if axis_idx is None:
        raise DegenerateGeometryError("all nodes coincide; no frame can be fixed")
    e1 = (P[axis_idx] - P[origin]) / np.linalg.norm(P[axis_idx] - P[origin])
    basis = [e1]
    gauge = {"origin": nodes[origin], "axis": nodes[axis_idx]}
    orient = []
    for i in range(n):
        if len(basis) == dim or i in (origin, axis_idx):
            continue
        w = P[i] - P[origin]
        for e in basis:
            w = w - (w @ e) * e
        if np.linalg.norm(w) > 1e-6 * scale:
            basis.append(w / np.linalg.norm(w))
            orient.append(nodes[i])
    if len(basis) < dim:
        raise DegenerateGeometryError(f"nodes do not span {dim} dimensions")
    Q = (P - P[origin]) @ np.array(basis).T
    Q[origin] = 0.0
    Q[axis_idx, 1:] = 0.0
    for depth, node in enumerate(orient, start=2):
        Q[nodes.index(node), depth:] = 0.0
    gauge["orientation"] = orient[0] if len(orient) == 1 else orient
    return Q, gauge


def embed_relative(distances: dict, nodes, dim: int = 2, feasibility_tol: float = 1e-3, **kw) -> RelativeFrame:
    """Coordinates reproducing pairwise ranges, fixed up to nothing.

    The first node sits at the origin, the next distinct node on the positive
    first axis and the next one spanning a new direction on the positive side
    of it (in 3D a fourth fixes the sign of the last axis).
    """
    nodes = list(nodes)
    if len(nodes) < dim + 1:
        raise InsufficientDataError(f"need at least {dim + 1} nodes for a {dim}D frame, got {len(nodes)}")
    D = _distance_matrix(distances, nodes)
    _check_triangles(D, nodes, feasibility_tol)
    P0 = classical_embedding(_complete_shortest_paths(D), dim)

    iu = [(i, j) for i, j in itertools.combinations(range(len(nodes)), 2) if np.isfinite(D[i, j])]
    I = np.array([i for i, _ in iu])
    J = np.array([j for _, j in iu])
    target = np.array([D[i, j] for i, j in iu])
    n = len(nodes)

    def fun(flat):
        P = flat.reshape(n, dim)
        return np.linalg.norm(P[I] - P[J], axis=1) - target

    def jac(flat):
        P = flat.reshape(n, dim)
        u = _unit_rows(P[I] - P[J])[0]
        out = np.zeros((len(iu), n * dim))
        rows = np.arange(len(iu))
        for c in range(dim):
            out[rows, I * dim + c] = u[:, c]
            out[rows, J * dim + c] = -u[:, c]
        return out

    fit = damped_gauss_newton(fun, jac, P0.ravel(), **kw)
    Q, gauge = _gauge_fix(fit.x.reshape(n, dim), nodes)
    if dim == 3 and not isinstance(gauge["orientation"], list):
        raise DegenerateGeometryError("3D frame needs two orientation nodes")
    # orientation nodes land on the positive side by construction of the basis
    coords = {node: Q[i] for i, node in enumerate(nodes)}
    return RelativeFrame(coords, gauge, fit.residual_norm, fit.iterations, fit.converged)


@dataclass
class MobileSolution:
    frame: RelativeFrame
    positions: dict
    estimates: dict
    unsolved: dict


def pipeline_mobile(measurements: MeasurementSet, system=None, **kw) -> MobileSolution:
    """Relative positions of a whole system without any known coordinates.

    Bilaterals are placed from their ToA ranges; every other node is then
    solved from the TDoA values where it is the source, in that frame.
    """
    system = system or measurements.system
    v = system.signal_speed
    dim = system.dim
    bilaterals = system.bilateral
    if len(bilaterals) < dim + 1:
        raise InsufficientDataError(f"a {dim}D frame needs {dim + 1} Bilateral nodes, system has {len(bilaterals)}")
    ranges = {pair: tof * v for pair, tof in measurements.toa.items()}
    frame = embed_relative(ranges, bilaterals, dim, **kw)
    positions = dict(frame.coordinates)
    estimates, unsolved = {}, {}
    for node in system.nodes:
        if node.role is Role.BILATERAL:
            continue
        values = [(x, z, t) for (x, z, y), t in measurements.tdoa.items()
                  if y == node.id and x in frame.coordinates and z in frame.coordinates]
        try:
            est = solve_tdoa(values, frame.coordinates, node.id, v, **kw)
        except (InsufficientDataError, ConvergenceError) as exc:
            unsolved[node.id] = str(exc)
            continue
        estimates[node.id] = est
        positions[node.id] = est.position
    return MobileSolution(frame, positions, estimates, unsolved)


def rigid_align(estimate: dict, truth: dict, allow_reflection: bool = True) -> tuple:
    """Best rotation/translation taking ``estimate`` onto ``truth``.

    Returns ``(R, t, rms)`` with ``aligned = p @ R.T + t``.
    """
    if set(estimate) != set(truth):
        raise InvalidInputError("estimate and truth must cover the same nodes")
    keys = sorted(truth)
    if len(keys) < 3:
        raise InsufficientDataError("alignment needs at least 3 nodes")
    A = np.array([np.asarray(estimate[k], dtype=float) for k in keys])
    B = np.array([np.asarray(truth[k], dtype=float) for k in keys])
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    sv = np.linalg.svd(B - cb, compute_uv=False)
    if sv.size < 2 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("truth points are collinear")
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    R = Vt.T @ U.T
    if not allow_reflection and np.linalg.det(R) < 0:
        S = np.eye(A.shape[1])
        S[-1, -1] = -1
        R = Vt.T @ S @ U.T
    t = cb - R @ ca
    aligned = A @ R.T + t
    rms = math.sqrt(float(np.mean(np.sum((aligned - B) ** 2, axis=1))))
    return R, t, rms


def procrustes_align(estimate: dict, truth: dict, allow_reflection: bool = True) -> float:
    """RMS position error after the best rigid alignment."""
    return rigid_align(estimate, truth, allow_reflection)[2]
