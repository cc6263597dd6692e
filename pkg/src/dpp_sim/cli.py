"""Command-line front end: ``dpp-sim <subcommand> --scenario <file|name> ...``"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import errors, measure, protocol, solve
from .exceptions import DppError
from .model import DEFAULT_MAX_DRIFT
from .scenario import PPM, bundled_scenarios, load_scenario

log = logging.getLogger("dpp_sim")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(args, filename: str, text: str) -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text)
    else:
        sys.stdout.write(text)


def _scenario(args):
    env = None
    if getattr(args, "seed", None) is not None:
        env = {"DPP_SIM_SEED": str(args.seed)}
    return load_scenario(args.scenario, max_drift=args.max_drift_ppm * PPM, env=env)


def _traces(sc):
    return protocol.simulate(sc.system, sc.config)


def _measure_all(sc):
    return [measure.full_cycle_measurements(tr, p=sc.p, q=sc.q) for tr in _traces(sc)]


# -- simulate --------------------------------------------------------------


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    buf = io.StringIO()
    protocol.write_trace_csv(_traces(sc), buf, include_truth=not args.no_truth)
    _emit(args, "trace.csv", buf.getvalue())
    return EXIT_OK


# -- measure ---------------------------------------------------------------


def _check_against_truth(ms: measure.MeasurementSet, span: float) -> list:
    """Values whose deviation from the geometry exceeds the drift bound plus slack."""
    system = ms.system
    eps = {n.id: abs(n.clock.drift) for n in system.nodes}
    eps_sys = max(eps.values())
    slack = errors.second_order_slack(eps_sys, span)
    tof = system.tof
    d_max = max((tof(a, b) for a in system.ids for b in system.ids if a < b), default=0.0)
    problems = []
    for (a, b), val in ms.toa.items():
        bound = errors.toa_error_bound(eps[a], eps[b], tof(a, b)) + slack
        if abs(val - tof(a, b)) > bound:
            problems.append(("toa", (a, b), val - tof(a, b), bound))
    for (x, z, y), val in ms.mu.items():
        true_mu = tof(y, z) - tof(x, y) + tof(x, z)
        bound = abs(errors.mu_error_bound(eps[x], eps[z], true_mu)) + slack
        if abs(val - true_mu) > bound:
            problems.append(("mu", (x, z, y), val - true_mu, bound))
    # tdoa and direct values combine compound values and ranges of at most 2 d_max each
    loose = 4 * eps_sys * d_max + slack
    for (x, z, y), val in ms.tdoa.items():
        err = val - (tof(y, z) - tof(x, y))
        if abs(err) > loose:
            problems.append(("tdoa", (x, z, y), err, loose))
    for (x, z, y), val in ms.direct.items():
        err = val - tof(x, z)
        if abs(err) > loose:
            problems.append(("direct", (x, z, y), err, loose))
    return problems


def cmd_measure(args) -> int:
    sc = _scenario(args)
    sets = _measure_all(sc)
    if args.format == "json":
        _emit(args, "measurements.json", measure.measurements_json(sets) + "\n")
    else:
        _emit(args, "measurements.csv", _csv_text(measure.MEASUREMENT_COLUMNS, measure.measurement_rows(sets)))
    if not args.strict:
        return EXIT_OK
    if sc.config.timestamp_jitter_sd > 0:
        log.warning("timestamp jitter is on; strict check only covers trace completeness")
        return EXIT_OK
    span = protocol.build_dpp_schedule(sc.system, sc.config).span
    failed = False
    for ms in sets:
        for kind, key, err, bound in _check_against_truth(ms, span):
            failed = True
            log.error("cycle %d: %s %s off by %.3e s (bound %.3e s)", ms.cycle_index, kind, key, err, bound)
    return EXIT_FAILED if failed else EXIT_OK


# -- bounds ----------------------------------------------------------------


def cmd_bounds(args) -> int:
    sc = _scenario(args)
    cfg = sc.config
    if cfg.timestamp_jitter_sd > 0:
        log.warning("ignoring timestamp jitter: drift bounds are checked without it")
        cfg = protocol.ProtocolConfig(cfg.inter_pulse_gap, cfg.turn_gap, 1, 0.0, cfg.rng_seed)
    reports = []
    for quantity in errors.QUANTITIES:
        report, samples = errors.empirical_error_report(
            sc.system, args.trials, quantity, cfg, eps_max=args.eps_max_ppm * PPM,
            seed=cfg.rng_seed, keep_samples=True,
        )
        reports.append(report)
        if args.out:
            buf = io.StringIO()
            errors.write_samples_csv(samples, buf)
            _emit(args, f"errors_{quantity}.csv", buf.getvalue())
    _emit(args, "bounds.json", errors.reports_json(reports) + "\n")
    if args.strict and not all(r.passed for r in reports):
        for r in reports:
            for v in r.violations[:5]:
                log.error("%s bound violated: %s", r.quantity, v)
        return EXIT_FAILED
    return EXIT_OK


# -- solve -----------------------------------------------------------------


def _estimate_entry(est: solve.PositionEstimate, method: str, truth=None) -> dict:
    d = {
        "method": method,
        "position": [float(c) for c in est.position],
        "residual_s": float(est.residual_norm),
        "iterations": est.iterations,
        "converged": bool(est.converged),
        "alternatives": [[float(c) for c in a] for a in est.alternatives],
    }
    if truth is not None:
        d["error_m"] = float(np.linalg.norm(est.position - truth))
    return d


def solve_cycle(ms: measure.MeasurementSet) -> dict:
    system = ms.system
    v = system.signal_speed
    labels = system.labels()
    known = system.known_positions()
    result = {"cycle": ms.cycle_index, "positions": {}, "unsolved": {}}
    if len(known) >= system.dim + 1:
        result["frame"] = "absolute"
        for node in system.nodes:
            entry_key = str(node.id)
            truth = np.asarray(node.position)
            if node.known_position:
                result["positions"][entry_key] = {"method": "known", "label": labels[node.id],
                                                  "position": list(node.position), "converged": True}
                continue
            values = [(x, z, t) for (x, z, y), t in ms.tdoa.items() if y == node.id and x in known and z in known]
            try:
                try:
                    est = solve.solve_tdoa(values, known, node.id, v)
                    method = "tdoa"
                except DppError:
                    ranges = {(node.id, b): ms.toa_m(node.id, b) for b in known
                              if measure.pair_key(node.id, b) in ms.toa}
                    est = solve.solve_toa(ranges, known, node.id, v)
                    method = "toa"
            except DppError as exc:
                result["unsolved"][entry_key] = str(exc)
                continue
            entry = _estimate_entry(est, method, truth)
            entry["label"] = labels[node.id]
            result["positions"][entry_key] = entry
        return result

    result["frame"] = "relative"
    sol = solve.pipeline_mobile(ms)
    result["gauge"] = sol.frame.gauge
    result["frame_residual_m"] = float(sol.frame.residual_norm)
    for node_id, pos in sol.positions.items():
        if node_id in sol.estimates:
            entry = _estimate_entry(sol.estimates[node_id], "tdoa")
        else:
            entry = {"method": "toa-frame", "position": [float(c) for c in pos],
                     "converged": bool(sol.frame.converged)}
        entry["label"] = labels[node_id]
        result["positions"][str(node_id)] = entry
    result["unsolved"] = {str(k): v for k, v in sol.unsolved.items()}
    truth = {n: system.position(n) for n in sol.positions}
    if len(truth) >= 3:
        try:
            result["procrustes_rms_m"] = solve.procrustes_align(sol.positions, truth)
        except DppError as exc:
            result["procrustes_rms_m"] = None
            log.warning("no alignment against truth: %s", exc)
    return result


def cmd_solve(args) -> int:
    sc = _scenario(args)
    results = [solve_cycle(ms) for ms in _measure_all(sc)]
    if args.format == "csv":
        rows = []
        for res in results:
            for node_id, entry in sorted(res["positions"].items(), key=lambda kv: int(kv[0])):
                pos = list(entry["position"]) + [""] * (3 - len(entry["position"]))
                rows.append((res["cycle"], res["frame"], node_id, entry["label"], entry["method"],
                             *(repr(c) if c != "" else "" for c in pos), entry.get("converged", "")))
        _emit(args, "positions.csv", _csv_text(
            ("cycle", "frame", "node", "label", "method", "x_m", "y_m", "z_m", "converged"), rows))
    else:
        _emit(args, "solution.json", _dump_json({"cycles": results}))
    if args.strict:
        bad = [(r["cycle"], k) for r in results for k, e in r["positions"].items() if not e.get("converged", True)]
        bad += [(r["cycle"], k) for r in results for k in r["unsolved"]]
        if bad:
            log.error("unsolved or non-converged nodes: %s", bad)
            return EXIT_FAILED
    return EXIT_OK


# -- counts / compare ------------------------------------------------------


def count_rows(dpp=None, dpw=None, djkm=None) -> list:
    rows = []
    if dpp is not None:
        m, t = dpp
        rows.append({"scheme": "DPP", "setup": f"m={m} t={t}", "signals": protocol.message_count_dpp(m, t)})
    if dpw is not None:
        m, t = dpw
        rows.append({"scheme": "DPW", "setup": f"m={m} t={t}", "signals": protocol.message_count_dpw(m, t)})
    if djkm is not None:
        n1, n2 = protocol.djkm_round_counts(djkm)
        rows.append({"scheme": "DJKM", "setup": f"k={djkm} (n1={n1} n2={n2})", "signals": n1 + n2})
        rows.append({"scheme": "DPP", "setup": f"m={djkm} t=0", "signals": protocol.message_count_dpp(djkm, 0)})
    return rows


def _table(rows, columns) -> str:
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in columns] if rows else [len(c) for c in columns]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(w) for c, w in zip(columns, widths)).rstrip())
    return "\n".join(lines) + "\n"


def cmd_counts(args) -> int:
    if args.dpp is None and args.dpw is None and args.djkm is None:
        args.dpp, args.dpw, args.djkm = (1, 1), (1, 1), 3
    rows = count_rows(args.dpp, args.dpw, args.djkm)
    columns = ("scheme", "setup", "signals")
    if args.format == "json":
        _emit(args, "counts.json", _dump_json(rows))
    elif args.format == "csv":
        _emit(args, "counts.csv", _csv_text(columns, [[r[c] for c in columns] for r in rows]))
    else:
        _emit(args, "counts.txt", _table(rows, columns))
    return EXIT_OK


def compare_report(system, djkm_delay: float, eps_max: float, reference_tof: float) -> dict:
    m, t = len(system.bilateral), len(system.active)
    counts = {
        "bilateral": m,
        "active": t,
        "DPP": protocol.message_count_dpp(m, t) if m + t else 0,
        "DPW": protocol.message_count_dpw(m, t),
        "DJKM": protocol.message_count_djkm(m) if m > 2 else None,
    }
    djkm_err = errors.djkm_error_estimate(errors.DjkmErrorParams(djkm_delay, eps_max, -eps_max))

    def row(label, d):
        dpp_err = errors.tdoa_error_bound(eps_max, eps_max, d)
        return {"pair": label, "d_xz_s": d, "dpp_bound_s": dpp_err, "djkm_estimate_s": djkm_err,
                "ratio": djkm_err / dpp_err if dpp_err > 0 else None}

    labels = system.labels()
    pairs = sorted({measure.pair_key(x, z) for x, _, z in measure.admissible_triples(system)})
    table = [row("reference", reference_tof)]
    table += [row(f"{labels[a]}-{labels[b]}", system.tof(a, b)) for a, b in pairs]
    return {"counts": counts, "eps_max": eps_max, "djkm_response_delay_s": djkm_delay, "errors": table}


def cmd_compare(args) -> int:
    sc = _scenario(args)
    report = compare_report(sc.system, args.djkm_delay_s, args.eps_max_ppm * PPM, args.reference_tof_s)
    if args.format == "json":
        _emit(args, "compare.json", _dump_json(report))
    else:
        cols = ("pair", "d_xz_s", "dpp_bound_s", "djkm_estimate_s", "ratio")
        rows = [[r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols] for r in report["errors"]]
        text = _csv_text(("scheme", "signals"), [(k, v) for k, v in report["counts"].items()])
        _emit(args, "compare.csv", text + "\n" + _csv_text(cols, rows))
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpp-sim", description="Double pulsed positioning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats=("csv", "json"), default="csv", scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True,
                           help=f"scenario JSON file or bundled name ({', '.join(bundled_scenarios())})")
            p.add_argument("--seed", type=int, help="override the scenario seed")
            p.add_argument("--max-drift-ppm", type=float, default=DEFAULT_MAX_DRIFT / PPM)
        p.add_argument("--out", help="write report files into this directory instead of stdout")
        p.add_argument("--format", choices=formats, default=default)
        p.add_argument("--strict", action="store_true", help="exit non-zero on failed checks")

    p = sub.add_parser("simulate", help="emit the timestamp trace as CSV")
    common(p, formats=("csv",))
    p.add_argument("--no-truth", action="store_true", help="leave the true-time column blank")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("measure", help="compound, TDoA, ToA and direct values")
    common(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("bounds", help="Monte-Carlo check of the drift error bounds")
    common(p, formats=("json",), default="json")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--eps-max-ppm", type=float, default=DEFAULT_MAX_DRIFT / PPM)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("solve", help="absolute or relative positions")
    common(p, default="json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("counts", help="signals per cycle for DPP, DPW and DJKM")
    common(p, formats=("text", "csv", "json"), default="text", scenario=False)
    p.add_argument("--dpp", nargs=2, type=int, metavar=("M", "T"), help="Bilateral and Active counts")
    p.add_argument("--dpw", nargs=2, type=int, metavar=("M", "T"), help="mirror and tag counts")
    p.add_argument("--djkm", type=int, metavar="K", help="anchor count")
    p.set_defaults(func=cmd_counts)

    p = sub.add_parser("compare", help="channel usage and worst-case TDoA errors against DPW/DJKM")
    common(p, default="json")
    p.add_argument("--djkm-delay-s", type=float, default=1e-3)
    p.add_argument("--eps-max-ppm", type=float, default=DEFAULT_MAX_DRIFT / PPM)
    p.add_argument("--reference-tof-s", type=float, default=5.0 / 299_792_458.0)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.WARNING)
    log.propagate = False
    try:
        return args.func(args)
    except DppError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    finally:
        log.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
