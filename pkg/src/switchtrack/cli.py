"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 criterion failure (``oracle-check``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DivergenceError, IncompatibleWeightsError, NonFiniteError, ProblemValidationError, \
    UnderdeterminedFitError
from .io import (SCHEMA_VERSION, bundled_document, header_line, load_config, read_weights, write_history,
                 write_json, write_step_changes, write_weights)
from .model import validate_problem
from .oracle import compare_with_oracle
from .rollout import CostatePolicy, ZeroPolicy, rollout
from .snac import train
from .switchopt import ValueCurve, method1_scalar, method2_analytic, method3_sweep, write_polynomial

OUTDIR_ENV = "SWITCHTRACK_OUTPUT_DIR"
REFERENCE_SWITCH_TIME = 2.654  # earlier single-run value for the bundled benchmark

log = logging.getLogger("switchtrack")


class CriterionFailure(Exception):
    pass


def _outdir(args):
    d = Path(args.outdir or os.environ.get(OUTDIR_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _out(args, name):
    path = Path(name)
    return path if path.is_absolute() else _outdir(args) / path


def _sibling(path, suffix):
    return path.with_name(path.stem + suffix)


def _load(args):
    loaded = load_config(args.config)
    report = validate_problem(loaded.problem)
    if not report.ok:
        raise ProblemValidationError("; ".join(f"{name}: {detail}" for name, detail in report.failures))
    return loaded


def _seed(args, loaded):
    return loaded.train.seed if args.seed is None else args.seed


def _progress(every):
    def report(k):
        if k % every == 0:
            log.info("trained step %d", k)
    return report


def _train(loaded, seed):
    cfg = loaded.train
    cfg.seed = seed
    return train(loaded.problem, loaded.grid, cfg, progress=_progress(max(1, loaded.grid.Nprime // 10)))


def _write_training(out_weights, net, report, loaded, seed):
    hdr = header_line(seed, loaded.config_hash)
    write_weights(out_weights, net, loaded, seed)
    write_history(_sibling(out_weights, ".history.csv"), report, hdr)
    write_step_changes(_sibling(out_weights, ".steps.csv"), net, hdr)
    summary = {"Nprime": loaded.grid.Nprime, **report.summary(),
               "inner_iterations": report.inner_iterations, "residual_rms": report.residual_rms}
    write_json(_sibling(out_weights, ".report.json"), summary, hdr)
    return summary


def cmd_train(args):
    loaded = _load(args)
    seed = _seed(args, loaded)
    net, report = _train(loaded, seed)
    out = _out(args, args.output)
    summary = _write_training(out, net, report, loaded, seed)
    print(f"trained {summary['Nprime']} steps in {summary['wall_time_s']:.1f} s -> {out}")
    return 0


def _x0(args, loaded):
    if args.x0 is not None:
        return np.asarray(args.x0, dtype=float)
    if loaded.x0 is None:
        raise ProblemValidationError("no initial state: pass --x0 or set x0 in the problem document")
    return loaded.x0


def _trajectory_summary(traj, p):
    e_N = traj.states[-1] - traj.refs[-1]
    return {"switch_times": traj.sw, "total_cost": traj.total_cost, "terminal_cost": traj.terminal_cost,
            "terminal_error": float(np.linalg.norm(e_N)),
            "rms_error": [traj.rms_error(i) for i in range(p.n)]}


def cmd_rollout(args):
    loaded = _load(args)
    p, grid = loaded.problem, loaded.grid
    seed = _seed(args, loaded)
    if args.policy == "zero":
        policy = ZeroPolicy()
    else:
        if not args.weights:
            raise ProblemValidationError("costate policy needs --weights")
        net, _ = read_weights(args.weights, loaded)
        policy = CostatePolicy(net)
    sw = np.asarray(args.tsw, dtype=float)
    traj = rollout(p, grid, sw, policy, _x0(args, loaded))
    out = _out(args, args.output)
    hdr = header_line(seed, loaded.config_hash)
    traj.to_csv(out, hdr)
    summary = {"policy": policy.kind, **_trajectory_summary(traj, p)}
    write_json(_sibling(out, ".summary.json"), summary, hdr)
    print(f"total cost {traj.total_cost:.6g}; rms error {summary['rms_error']} -> {out}")
    return 0


def _method1_curve(res, K=1):
    pts = sorted(set(res.history))
    cands = np.array([[t] for t, _ in pts], dtype=float).reshape(-1, K)
    J = np.array([y for _, y in pts])
    return ValueCurve(cands, J, np.isfinite(J), "method1")


def _method2_curve(m2, candidates):
    J = np.polynomial.polynomial.polyval(candidates[:, 0], m2.curve)
    return ValueCurve(candidates, J, np.ones(len(J), dtype=bool), "method2")


def run_sweep(net, p, grid, x0, method, npoints, lo=None, hi=None):
    """Returns ``(chosen_switch_vector, value_curve, extra)``."""
    blo, bhi = p.switch_bounds()
    lo = blo if lo is None else lo
    hi = bhi if hi is None else hi
    if method == 3:
        curve = method3_sweep(net, p, grid, x0, npoints=npoints, lo=lo, hi=hi)
        return curve.argmin, curve, {}
    if method == 1:
        sw, res = method1_scalar(net, p, grid, x0, lo, hi)
        curve = _method1_curve(res, p.K) if p.K == 1 else None
        return sw, curve, {"evaluations": res.evaluations, "grid_fallback": res.fallback, "J": res.value}
    if p.K != 1:
        raise NotImplementedError("method 2 is unsupported for more than one switch")
    m2 = method2_analytic(net, p, grid, x0, lo, hi)
    curve = _method2_curve(m2, np.linspace(lo, hi, npoints)[:, None])
    return np.array([m2.t_star]), curve, {"curl_defect": m2.curl_defect,
                                          "curl_defect_relative": m2.curl_defect_relative, "method2": m2}


def cmd_sweep(args):
    loaded = _load(args)
    p, grid = loaded.problem, loaded.grid
    seed = _seed(args, loaded)
    net, _ = read_weights(args.weights, loaded)
    x0 = _x0(args, loaded)
    sw, curve, extra = run_sweep(net, p, grid, x0, args.method, args.grid, args.lo, args.hi)
    out = _out(args, args.output)
    hdr = header_line(seed, loaded.config_hash)
    if curve is not None:
        curve.to_csv(out, hdr)
    m2 = extra.pop("method2", None)
    if m2 is not None:
        write_polynomial(_sibling(out, ".poly.txt"), m2.value_poly, hdr)
    write_json(_sibling(out, ".chosen.json"), {"method": args.method, "switch_times": sw, "x0": x0, **extra}, hdr)
    print(f"method {args.method}: switch times {np.round(sw, 6).tolist()}")
    return 0


def cmd_oracle_check(args):
    loaded = _load(args)
    p, grid = loaded.problem, loaded.grid
    seed = _seed(args, loaded)
    if args.max_inner is not None:
        loaded.train.max_inner = args.max_inner
    from .model import is_linear
    if not is_linear(p):
        raise ProblemValidationError("oracle requires linear modes")
    net, report = _train(loaded, seed)
    check = compare_with_oracle(net, p, grid, npoints=args.points, tol=args.tol)
    summary = {**check.summary(), "per_step_max": check.per_step_max, "train_wall_time_s": report.wall_time}
    hdr = header_line(seed, loaded.config_hash)
    write_json(_out(args, args.output), summary, hdr)
    verdict = "PASS" if check.passed else "FAIL"
    print(f"{verdict}: max relative costate error {check.overall:.3e} (tolerance {check.tolerance:g}, "
          f"worst step {check.worst_step}, median step {summary['median_step_error']:.3e})")
    if not check.passed:
        raise CriterionFailure(f"oracle mismatch {check.overall:.3e} > {check.tolerance:g}")
    return 0


def spike_report(net):
    """Location and size of the largest step-to-step weight change."""
    changes = net.step_changes()
    boundary = net.grid.steps_per_segment
    k = int(np.argmax(changes))
    window = changes[max(0, boundary - 100):boundary + 100]
    median = float(np.median(window))
    return {"argmax_khat": k, "segment_boundary_khat": boundary, "max_change": float(changes[k]),
            "window_median_change": median, "spike_ratio": float(changes[k] / median) if median > 0 else np.inf}


def reproduce_vdp(seed=42, outdir=".", npoints=30, lo=0.05, hi=2.95):
    """Full benchmark run; writes the artifact bundle and returns the summary."""
    start = time.perf_counter()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    loaded = load_config(bundled_document("vdp"))
    p, grid = loaded.problem, loaded.grid
    x0 = loaded.x0
    hdr = header_line(seed, loaded.config_hash)
    net, report = _train(loaded, seed)
    train_summary = _write_training(outdir / "weights.json", net, report, loaded, seed)

    sw3, curve3, _ = run_sweep(net, p, grid, x0, 3, npoints, lo, hi)
    curve3.to_csv(outdir / "value_curve_method3.csv", hdr)
    sw1, curve1, extra1 = run_sweep(net, p, grid, x0, 1, npoints, lo, hi)
    curve1.to_csv(outdir / "value_curve_method1.csv", hdr)
    sw2, curve2, extra2 = run_sweep(net, p, grid, x0, 2, npoints, lo, hi)
    curve2.to_csv(outdir / "value_curve_method2.csv", hdr)
    write_polynomial(outdir / "value_polynomial_method2.txt", extra2["method2"].value_poly, hdr)

    traj = rollout(p, grid, sw1, CostatePolicy(net), x0)
    traj.to_csv(outdir / "trajectory.csv", hdr)
    zero = rollout(p, grid, sw1, ZeroPolicy(), x0)
    zero.to_csv(outdir / "trajectory_zero_control.csv", hdr)
    rms_trained = traj.rms_error(1, (0.5, 2.0))
    rms_zero = zero.rms_error(1, (0.5, 2.0))

    rel_curl = extra2["curl_defect_relative"]
    summary = {
        "seed": seed,
        "Nprime": grid.Nprime,
        "x0": x0,
        "train": train_summary | {"inner_iterations": None, "residual_rms": None},
        "weight_change_spike": spike_report(net),
        "method1_switch_time": float(sw1[0]),
        "method1_evaluations": extra1["evaluations"],
        "method1_grid_fallback": extra1["grid_fallback"],
        "method3_switch_time": float(sw3[0]),
        "method2_switch_time": float(sw2[0]),
        "method2_curl_defect": extra2["curl_defect"],
        "method2_curl_defect_relative": rel_curl,
        "method1_method3_gap": float(abs(sw1[0] - sw3[0])),
        "method1_method3_agree": bool(abs(sw1[0] - sw3[0]) <= 0.1),
        "method2_method3_gap": float(abs(sw2[0] - sw3[0])),
        "method2_applicable": bool(rel_curl <= 1e-3),
        "reference_switch_time": REFERENCE_SWITCH_TIME,
        "trajectory": _trajectory_summary(traj, p),
        "rms_x2_trained_0.5_2": rms_trained,
        "rms_x2_zero_control_0.5_2": rms_zero,
        "rms_ratio": rms_trained / rms_zero,
    }
    summary["train"] = {k: v for k, v in summary["train"].items() if v is not None}
    summary["wall_time_s"] = time.perf_counter() - start
    write_json(outdir / "summary.json", summary, hdr)
    return summary


def cmd_reproduce_vdp(args):
    summary = reproduce_vdp(seed=42 if args.seed is None else args.seed, outdir=_outdir(args))
    print(f"N' = {summary['Nprime']}, wall time {summary['wall_time_s']:.1f} s")
    spike = summary["weight_change_spike"]
    print(f"largest weight change at khat = {spike['argmax_khat']} (ratio {spike['spike_ratio']:.1f})")
    print(f"switch time: method 1 {summary['method1_switch_time']:.4f}, method 3 "
          f"{summary['method3_switch_time']:.4f}, method 2 {summary['method2_switch_time']:.4f} "
          f"(curl defect {summary['method2_curl_defect_relative']:.2e}); reference value "
          f"{summary['reference_switch_time']}")
    print(f"rms(x2 - r2) over that in [0.5, 2]: trained {summary['rms_x2_trained_0.5_2']:.4g}, "
          f"zero control {summary['rms_x2_zero_control_0.5_2']:.4g}")
    return 0


def cmd_validate(args):
    loaded = load_config(args.config)
    report = validate_problem(loaded.problem)
    print(report)
    if not report.ok:
        raise ProblemValidationError("; ".join(f"{name}: {detail}" for name, detail in report.failures))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="switchtrack", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version",
                    version=f"switchtrack {__version__} (config schema {SCHEMA_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--outdir", default=None, help=f"output directory (default: ${OUTDIR_ENV} or cwd)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train costate networks")
    p.add_argument("config")
    p.add_argument("-o", "--output", default="weights.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", parents=[common], help="closed-loop trajectory")
    p.add_argument("config")
    p.add_argument("-w", "--weights")
    p.add_argument("--tsw", type=float, nargs="+", required=True)
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--policy", choices=["costate", "zero"], default="costate")
    p.add_argument("-o", "--output", default="trajectory.csv")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("sweep", parents=[common], help="choose switching times")
    p.add_argument("config")
    p.add_argument("-w", "--weights", required=True)
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--method", type=int, choices=[1, 2, 3], default=3)
    p.add_argument("--grid", type=int, default=30)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("-o", "--output", default="value_curve.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-check", parents=[common], help="compare against exact costates")
    p.add_argument("config")
    p.add_argument("--max-inner", type=int)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("-o", "--output", default="oracle_check.json")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("reproduce-vdp", parents=[common], help="Van der Pol benchmark bundle")
    p.set_defaults(func=cmd_reproduce_vdp)

    p = sub.add_parser("validate", parents=[common], help="check a problem document")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    warnings.simplefilter("default")
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (ProblemValidationError, IncompatibleWeightsError, UnderdeterminedFitError, NotImplementedError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except CriterionFailure as exc:
        print(f"criterion failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
