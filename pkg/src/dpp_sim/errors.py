"""Clock-drift error bounds and a Monte-Carlo check of them.

The analytic bounds are first order in the drift. The simulator is exact,
so the checks allow a second-order slack of ``eps_max**2 * cycle_span``,
never less than the rounding floor of double-precision timestamps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidInputError
from .measure import (
    admissible_triples,
    bilateral_pairs,
    mu_value,
    tdoa_from_mu,
    toa_value,
)
from .model import DEFAULT_MAX_DRIFT, ClockModel, System
from .protocol import ProtocolConfig, build_dpp_schedule, simulate_cycle

QUANTITIES = ("mu", "tdoa", "toa")
NUMERIC_FLOOR = 1e-13  # seconds; rounding of ~10 s timestamps through the span products


def mu_error_bound(eps_x: float, eps_z: float, mu_true: float) -> float:
    return (eps_x + eps_z) / 2.0 * mu_true


def tdoa_error_bound(eps_x: float, eps_z: float, d_xz: float) -> float:
    if d_xz < 0:
        raise InvalidInputError("d_xz must be >= 0")
    return (eps_x + eps_z) * d_xz


def toa_error_bound(eps_x: float, eps_z: float, d_xz: float) -> float:
    if d_xz < 0:
        raise InvalidInputError("d_xz must be >= 0")
    return (eps_x + eps_z) / 2.0 * d_xz


@dataclass(frozen=True)
class DjkmErrorParams:
    response_delay: float
    eps_t: float
    eps_b: float

    def __post_init__(self):
        if not self.response_delay > 0:
            raise InvalidInputError("response delay must be > 0")


def djkm_error_estimate(params: DjkmErrorParams) -> float:
    """Approximate worst-case TDoA error of single-reply anchor exchanges."""
    return params.response_delay * (params.eps_t - params.eps_b)


def second_order_slack(eps_max: float, cycle_span: float) -> float:
    return max(eps_max**2 * cycle_span, NUMERIC_FLOOR)


@dataclass
class ErrorBoundReport:
    quantity: str
    analytic_bound: float
    observed_max_abs_error: float
    trials: int
    slack_used: float
    samples: int = 0
    max_bound_ratio: float = 0.0
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass(frozen=True)
class ErrorSample:
    trial: int
    seed: tuple
    key: tuple
    error: float
    bound: float


def _sample_clocks(system: System, rng: np.random.Generator, eps_max: float, offset_range: float) -> dict:
    drifts = rng.uniform(-eps_max, eps_max, len(system))
    offsets = rng.uniform(-offset_range, offset_range, len(system))
    return {n.id: ClockModel(float(o), float(e)) for n, e, o in zip(system.nodes, drifts, offsets)}


def trial_errors(system: System, cfg: ProtocolConfig, quantity: str) -> list:
    """``(key, |error|, first-order bound)`` for every value of one simulated cycle.

    TDoA values use the true receiver distance, so only clock drift enters.
    """
    if quantity not in QUANTITIES:
        raise InvalidInputError(f"unknown quantity {quantity!r}")
    trace = simulate_cycle(system, build_dpp_schedule(system, cfg), cfg)
    eps = {n.id: abs(n.clock.drift) for n in system.nodes}
    out = []
    if quantity == "toa":
        for a, b in bilateral_pairs(system):
            d = system.tof(a, b)
            out.append(((a, b), abs(toa_value(trace, a, b) - d), toa_error_bound(eps[a], eps[b], d)))
        return out
    for x, y, z in admissible_triples(system):
        d_xz = system.tof(x, z)
        true_t = system.tof(y, z) - system.tof(x, y)
        measured_mu = mu_value(trace, x, y, z)
        if quantity == "mu":
            true_mu = true_t + d_xz
            out.append(((x, z, y), abs(measured_mu - true_mu), mu_error_bound(eps[x], eps[z], true_mu)))
        else:
            err = abs(tdoa_from_mu(measured_mu, d_xz) - true_t)
            out.append(((x, z, y), err, tdoa_error_bound(eps[x], eps[z], d_xz)))
    return out


def empirical_error_report(
    system: System,
    trials: int,
    quantity: str,
    cfg: ProtocolConfig = ProtocolConfig(),
    eps_max: float = DEFAULT_MAX_DRIFT,
    seed: int = 0,
    offset_range: float = 1.0,
    keep_samples: bool = False,
):
    """Monte-Carlo comparison of drift-induced errors against the analytic bounds.

    Each trial draws drifts uniformly in ``[-eps_max, eps_max]`` and offsets
    uniformly in ``[-offset_range, offset_range]`` seconds from the generator
    seeded with ``(seed, trial)``. Returns the report, plus the per-sample
    list when ``keep_samples`` is set.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    if cfg.timestamp_jitter_sd > 0:
        raise InvalidInputError("drift bounds are checked with jitter disabled")
    base = System(system.nodes, system.signal_speed, max(eps_max, system.max_drift))
    slack = second_order_slack(eps_max, build_dpp_schedule(base, cfg).span)
    report = ErrorBoundReport(quantity, 0.0, 0.0, trials, slack)
    samples = []
    for trial in range(trials):
        trial_seed = (seed, trial)
        rng = np.random.default_rng(trial_seed)
        sys_t = base.with_clocks(_sample_clocks(base, rng, eps_max, offset_range))
        for key, err, bound in trial_errors(sys_t, cfg, quantity):
            report.samples += 1
            report.analytic_bound = max(report.analytic_bound, bound)
            report.observed_max_abs_error = max(report.observed_max_abs_error, err)
            report.max_bound_ratio = max(report.max_bound_ratio, err / (bound + slack) if bound + slack > 0 else 0.0)
            if err > bound + slack:
                report.violations.append({"trial": trial, "seed": list(trial_seed), "key": list(key),
                                          "error": err, "bound": bound})
            if keep_samples:
                samples.append(ErrorSample(trial, trial_seed, key, err, bound))
    if keep_samples:
        return report, samples
    return report


def reports_json(reports) -> str:
    return json.dumps({r.quantity: r.to_dict() for r in reports}, indent=2, sort_keys=True)


def write_samples_csv(samples, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("trial", "key", "abs_error_s", "bound_s"))
    for s in samples:
        writer.writerow((s.trial, "-".join(map(str, s.key)), repr(s.error), repr(s.bound)))
