"""Command-line surface: simulate, identify, detect, eval.

All structured IO is JSON (diff-able for regression tests); bulk phasor
data is CSV.  Failures exit nonzero with a machine-readable error document
on stderr.  GRIDID_THREADS caps internal parallelism.
"""

import argparse
import json
import os
import sys
import time

from . import __version__, events, identify, simkit
from . import netmodel as nm
from . import phasors
from .exceptions import GridIdError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        json.dump({"error": {"type": "usage", "message": message}}, sys.stderr)
        sys.stderr.write("\n")
        raise SystemExit(2)


def _auto_or_float(value):
    if value == "auto":
        return "auto"
    return float(value)


def build_parser():
    parser = _Parser(prog="gridid",
                     description="Distribution-grid admittance identification toolkit")
    parser.add_argument("--version", action="version", version=f"gridid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write its dataset")
    p.add_argument("--spec", required=True, help="scenario JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", help="estimate the admittance matrix from a dataset")
    p.add_argument("--data", required=True, help="directory with phasors.csv (+ ground_truth.json)")
    p.add_argument("--method", choices=("lasso", "adaptive"), default="adaptive")
    p.add_argument("--lambda", dest="lam", type=_auto_or_float, default="auto")
    p.add_argument("--gamma", type=_auto_or_float, default="auto")
    p.add_argument("--prior", default=None, help="approximate Y-bus JSON to refine")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("detect", help="stream a dataset through the event detector")
    p.add_argument("--stream", required=True, help="phasor CSV consumed in slot order")
    p.add_argument("--ybus", required=True, help="pre-event Y-bus JSON")
    p.add_argument("--threshold", type=_auto_or_float, default="auto")
    p.add_argument("--window", type=int, default=None, help="localization window (slots)")
    p.add_argument("--out", required=True, help="event report JSON path")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="error metrics between estimate and truth")
    p.add_argument("--est", required=True, help="estimate: Y-bus JSON or identify report")
    p.add_argument("--truth", required=True, help="truth: Y-bus JSON or ground-truth JSON")
    p.add_argument("--block", choices=("trusted",), default=None)
    p.set_defaults(func=cmd_eval)
    return parser


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    spec = simkit.load_scenario(args.spec)
    ds, truth = simkit.run_scenario(spec)
    os.makedirs(args.out, exist_ok=True)
    phasors.save_phasor_csv(ds, os.path.join(args.out, "phasors.csv"))
    simkit.save_ground_truth(truth, os.path.join(args.out, "ground_truth.json"))
    nm.save_network(truth.network, os.path.join(args.out, "network.json"))
    print(json.dumps({
        "command": "simulate",
        "out": args.out,
        "terminals": ds.dim,
        "slots": ds.slots,
        "intervals": len(truth.intervals),
        "events": len(truth.events),
        "seed": spec.seed,
    }))
    return 0


def _load_truth_matrix(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "intervals" in doc:  # ground-truth document: pre-event model
        return nm.ybus_from_dict(doc["intervals"][0]["ybus"])
    if "ybus_estimate" in doc:  # identify report
        return nm.ybus_from_dict(doc["ybus_estimate"])
    return nm.ybus_from_dict(doc)


def cmd_identify(args):
    t0 = time.perf_counter()
    ds = phasors.load_phasor_csv(os.path.join(args.data, "phasors.csv"))
    truth_path = os.path.join(args.data, "ground_truth.json")
    truth = simkit.load_ground_truth(truth_path) if os.path.exists(truth_path) else None
    requested = {
        "method": args.method, "lambda": args.lam, "gamma": args.gamma,
        "prior": args.prior, "data": args.data,
    }
    if args.prior:
        prior = nm.load_ybus(args.prior)
        lam = 1e-6 if args.lam == "auto" else float(args.lam)
        y_hat = identify.refine_with_prior(ds, prior, lam)
        result = {
            "mode": "refine", "rank": ds.dim, "trusted_terminals": list(ds.terminals),
            "diagnostics": {"method": "ridge", "lambda": lam, "selected_by":
                            "default" if args.lam == "auto" else "fixed"},
        }
        y_trusted = y_hat
        trusted_terminals = ds.terminals
    else:
        part = identify.lowrank_identify(ds, method=args.method, lam=args.lam,
                                         gamma=args.gamma)
        y_hat = part.full_matrix()
        y_trusted = part.y22_matrix()
        trusted_terminals = part.trusted_terminals()
        result = {
            "mode": "lowrank", "rank": int(part.rank),
            "trusted_terminals": [list(t) for t in trusted_terminals],
            "trust": part.trust, "diagnostics": part.diagnostics,
        }
    metrics = None
    warnings = []
    if truth is not None:
        y_true = truth.intervals[0].ybus
        m1_full, m2_full = identify.error_metrics(y_hat, y_true)
        m1_tr, m2_tr = identify.error_metrics(
            y_trusted, y_true.submatrix(trusted_terminals))
        metrics = {
            "full": {"M1": m1_full, "M2": m2_full},
            "trusted": {"M1": m1_tr, "M2": m2_tr},
            "truth_intervals": len(truth.intervals),
        }
        if len(truth.intervals) > 1:
            warnings.append(
                "the stream spans admittance-changing events; metrics compare "
                "against the pre-event model only"
            )
    report = {
        "command": "identify",
        "config": {"requested": requested, "resolved": result["diagnostics"]},
        "rank": result["rank"],
        "trusted_terminals": result["trusted_terminals"] if result["mode"] != "refine"
        else [list(t) for t in ds.terminals],
        "metrics": metrics,
        "warnings": warnings,
        "wall_time_s": time.perf_counter() - t0,
        "ybus_estimate": nm.ybus_to_dict(y_hat),
    }
    with open(args.out, "w") as fh:
        json.dump(report, fh)
    summary = {"command": "identify", "out": args.out, "rank": report["rank"]}
    if metrics:
        summary["M1_trusted"] = metrics["trusted"]["M1"]
        summary["M2_trusted"] = metrics["trusted"]["M2"]
    print(json.dumps(summary))
    return 0


def cmd_detect(args):
    t0 = time.perf_counter()
    ds = phasors.load_phasor_csv(args.stream)
    y0 = nm.load_ybus(args.ybus)
    if y0.terminals != ds.terminals:
        raise GridIdError("model terminals do not match the stream")
    window = args.window
    warnings = []
    suggested = events.default_window(ds)
    if window is not None and window < suggested:
        warnings.append(
            f"window {window} is below the sparse-recovery heuristic {suggested}; "
            "support errors are likely"
        )
    tracked, state = events.run_detector(ds, y0, threshold=args.threshold,
                                         loc_window=window)
    report_events = []
    for ev in tracked:
        loc = ev.localization
        report_events.append({
            "t": ev.t,
            "residual": ev.residual,
            "threshold": ev.threshold,
            "delta_support": [[a[0], a[1], b[0], b[1]] for a, b in loc.support],
            "delta_values": [[i, j, v.real, v.imag] for i, j, v in loc.delta.triplets()],
            "method": ev.method,
            "window": window if window is not None else suggested,
            "resolved": ev.resolved,
        })
    whiteness = None
    if len(state.residuals) >= 20:
        tp = state.whiteness()
        whiteness = {"turning_points": tp.turning_points, "z": tp.z_score,
                     "p_value": tp.p_value, "verdict": tp.verdict}
    report = {
        "command": "detect",
        "config": {"stream": args.stream, "ybus": args.ybus,
                   "threshold": args.threshold, "window": window},
        "events": report_events,
        "quiet_residual_whiteness": whiteness,
        "warnings": warnings,
        "wall_time_s": time.perf_counter() - t0,
    }
    with open(args.out, "w") as fh:
        json.dump(report, fh)
    print(json.dumps({"command": "detect", "out": args.out,
                      "events": [ev["t"] for ev in report_events],
                      "warnings": warnings}))
    return 0


def cmd_eval(args):
    with open(args.est) as fh:
        est_doc = json.load(fh)
    trusted = None
    if "ybus_estimate" in est_doc:  # identify report
        y_est = nm.ybus_from_dict(est_doc["ybus_estimate"])
        trusted = [tuple(t) for t in est_doc.get("trusted_terminals", [])]
    else:
        y_est = nm.ybus_from_dict(est_doc)
    y_true = _load_truth_matrix(args.truth)
    if args.block == "trusted":
        if not trusted:
            raise GridIdError("--block trusted needs an identify report with a "
                              "trusted-terminal list as --est")
        y_est = y_est.submatrix(trusted)
        y_true = y_true.submatrix(trusted)
    m1, m2 = identify.error_metrics(y_est, y_true)
    print(json.dumps({"command": "eval", "M1": m1, "M2": m2,
                      "block": args.block or "full"}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (GridIdError, ValueError, OSError, json.JSONDecodeError) as exc:
        json.dump({"error": {"type": type(exc).__name__, "message": str(exc)}},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
