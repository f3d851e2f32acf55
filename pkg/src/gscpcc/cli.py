"""Command-line drivers: one subcommand per analysis, CSV + JSON artifacts.

Every artifact embeds the full configuration (code, rates, grids, seeds,
tolerances), so rerunning a command with the settings found in its JSON
output reproduces the numbers exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from fractions import Fraction

import numpy as np

from . import __version__
from .de import EnsembleParams, bp_threshold
from .codec import SimConfig, ber_experiment
from .kernels import BACKEND
from .potential import (
    capacity_bound,
    map_threshold_area,
    potential_profile,
    potential_threshold,
)
from .studio import TableJob, gap_vs_L, optimize_lambda, threshold_table
from .transfer import TWO_STATE, TabulateBudget, TransferCache
from .trellis import ConvCodeSpec, InvalidCodeSpec


class CliError(Exception):
    pass


def _parse_rate(text: str) -> float:
    return float(Fraction(text))


def _parse_lambda(text: str, q: int) -> float:
    if text.strip() in ("1/q", "max"):
        return 1.0 / q
    return float(Fraction(text))


def _budget_from_args(args) -> TabulateBudget:
    return TabulateBudget(trellis_len=args.mc_len, trials=args.mc_trials,
                          seed=args.mc_seed, grid_n=args.mc_grid)


def _add_common(sub):
    sub.add_argument("--out", default=None,
                     help="artifact prefix; writes PREFIX.csv and PREFIX.json")
    sub.add_argument("--config", default=None,
                     help="JSON file whose keys override the flags")
    sub.add_argument("--threads", type=int, default=1)
    sub.add_argument("--mc-len", type=int, default=200_000,
                     help="Monte-Carlo trellis length per table point")
    sub.add_argument("--mc-trials", type=int, default=1)
    sub.add_argument("--mc-seed", type=int, default=7)
    sub.add_argument("--mc-grid", type=int, default=201)
    sub.add_argument("--bisect-tol", type=float, default=1e-4)


def _add_ensemble(sub, need_lambda=True):
    sub.add_argument("--code", required=True, help='octal label, e.g. "1,5/7"')
    sub.add_argument("--rate", required=True, help='target rate, e.g. "1/2"')
    sub.add_argument("--q", type=int, required=True)
    if need_lambda:
        sub.add_argument("--lambda", dest="lam", default="1/q",
                         help='repetition ratio, a number or "1/q"')
    sub.add_argument("--m", type=int, default=0)
    sub.add_argument("--L", type=int, default=100)


def _write_artifacts(prefix, command, config, columns, rows, extra=None):
    """CSV with deterministic rows plus a JSON mirror with timing/extras."""
    if prefix is None:
        return
    with open(prefix + ".csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] for c in columns])
    payload = {
        "tool": "gscpcc", "version": __version__, "command": command,
        "backend": BACKEND, "config": config, "columns": columns,
        "rows": rows,
    }
    if extra:
        payload.update(extra)
    with open(prefix + ".json", "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _params_from_args(args) -> EnsembleParams:
    code = ConvCodeSpec.from_label(args.code)
    rate = _parse_rate(args.rate)
    lam = _parse_lambda(getattr(args, "lam", "1/q"), args.q)
    return EnsembleParams(code=code, rate=rate, q=args.q, lam=lam,
                          m=args.m, L=args.L)


def _config_dict(args, keys):
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def cmd_threshold(args) -> int:
    params = _params_from_args(args)
    cache = TransferCache(_budget_from_args(args))
    mode = args.mode or ("coupled" if args.m > 0 else "uncoupled")
    res = bp_threshold(params, mode, cache=cache, bisect_tol=args.bisect_tol)
    row = {**params.describe(), "mode": mode, "eps_star": res.eps_star,
           "lo": res.lo, "hi": res.hi,
           "iterations": res.iterations_total,
           "mc_len": args.mc_len, "mc_trials": args.mc_trials,
           "mc_seed": args.mc_seed, "bisect_tol": args.bisect_tol}
    cols = list(row)
    print(f"{mode} BP threshold: {res.eps_star:.4f} "
          f"(gap to capacity {1 - params.rate - res.eps_star:.4f})")
    _write_artifacts(args.out, "threshold", vars_config(args), cols, [row],
                     {"wall_time_s": res.wall_time_s})
    return 0


def cmd_potential(args) -> int:
    params = _params_from_args(args)
    cache = TransferCache(_budget_from_args(args))
    res = potential_threshold(params, cache=cache, bisect_tol=args.bisect_tol)
    row = {**params.describe(), "eps_c": res.eps,
           "mc_len": args.mc_len, "mc_seed": args.mc_seed,
           "bisect_tol": args.bisect_tol, "grid_n": res.settings["grid_n"]}
    bound = None
    if args.q >= 2:
        bound = capacity_bound(params.rate, args.q)
        row["capacity_bound_2state"] = bound
    cols = list(row)
    msg = f"potential threshold: {res.eps:.4f}"
    if bound is not None:
        msg += f"   2-state guarantee: {bound:.4f}"
    print(msg)
    rows = [row]
    extra = {}
    if args.curve:
        prof = potential_profile(params, res.eps, cache=cache)
        extra["potential_curve"] = {
            "eps": prof.eps, "x": prof.grid_x, "U": prof.U_values,
            "u_eps": prof.u_eps, "min_U_above_u": prof.min_U_above_u}
        if args.out:
            with open(args.out + "_potential.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "U"])
                for x, u in zip(prof.grid_x, prof.U_values):
                    w.writerow([repr(float(x)), repr(float(u))])
    _write_artifacts(args.out, "potential", vars_config(args), cols, rows, extra)
    return 0


def cmd_map(args) -> int:
    params = _params_from_args(args)
    budget = TabulateBudget(trellis_len=args.mc_len, trials=args.mc_trials,
                            seed=args.mc_seed, grid_n=args.mc_grid,
                            seed_with_y=True)
    res = map_threshold_area(params, cache=TransferCache(budget),
                             eps_step=args.eps_step,
                             refine_step=args.refine_step)
    row = {**params.describe(), "eps_map": res.eps_map, "label": res.label,
           "eps_step": args.eps_step, "refine_step": args.refine_step,
           "mc_len": args.mc_len, "mc_seed": args.mc_seed}
    print(f"{res.label}: {res.eps_map:.4f}")
    if args.out:
        with open(args.out + "_exit.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "h_bp"])
            for e, h in zip(res.eps_grid, res.h_values):
                w.writerow([repr(float(e)), repr(float(h))])
    _write_artifacts(args.out, "map", vars_config(args), list(row), [row],
                     {"wall_time_s": res.settings["wall_time_s"]})
    return 0


def cmd_optimize(args) -> int:
    code = ConvCodeSpec.from_label(args.code)
    rate = _parse_rate(args.rate)
    cache = TransferCache(_budget_from_args(args))
    grid = None
    if args.lambda_step:
        from .studio import feasible_lambda_grid
        grid = feasible_lambda_grid(rate, args.q, step=args.lambda_step)
    res = optimize_lambda(rate, args.q, args.m, code, grid, L=args.L,
                          cache=cache, bisect_tol=args.bisect_tol,
                          threads=args.threads, y_step=args.y_step)
    lo, hi = res.lambda_star.min(), res.lambda_star.max()
    tie = f"[{lo:.3f}, {hi:.3f}]" if len(res.lambda_star) > 1 else f"{lo:.3f}"
    print(f"lambda* = {tie}  threshold {res.threshold_star:.4f} "
          f"({len(res.lambda_grid)} grid points, {res.wall_time_s:.0f}s)")
    rows = [{"lam": float(l), "threshold": float(t)}
            for l, t in zip(res.lambda_grid, res.thresholds)]
    _write_artifacts(args.out, "optimize", vars_config(args),
                     ["lam", "threshold"], rows,
                     {"lambda_star": res.lambda_star,
                      "threshold_star": res.threshold_star,
                      "settings": res.settings,
                      "wall_time_s": res.wall_time_s})
    return 0


def cmd_table(args) -> int:
    with open(args.jobs) as fh:
        raw = json.load(fh)
    jobs = []
    for item in raw:
        lam = item.get("lam", "1/q")
        if isinstance(lam, str) and lam not in ("1/q", "optimize"):
            lam = float(Fraction(lam))
        jobs.append(TableJob(
            code=ConvCodeSpec.from_label(item["code"]),
            rate=_parse_rate(str(item["rate"])), q=int(item["q"]), lam=lam,
            m=int(item.get("m", 0)), L=int(item.get("L", 100)),
            kinds=tuple(item.get("kinds", ["bp"]))))
    cache = TransferCache(_budget_from_args(args))
    rows = threshold_table(jobs, cache=cache, bisect_tol=args.bisect_tol,
                           threads=args.threads)
    cols = ["code", "rate", "q", "lam", "m", "L", "kind", "threshold",
            "gap_to_capacity", "rho", "bisect_tol"]
    for row in rows:
        print(f"{row['code']} R={row['rate']:.4g} q={row['q']} "
              f"lam={row['lam']:.3f} m={row['m']} {row['kind']}: "
              f"{row['threshold']:.4f} (gap {row['gap_to_capacity']:.4f})")
    for row in rows:
        row.setdefault("lambda_star_lo", "")
        row.setdefault("lambda_star_hi", "")
    _write_artifacts(args.out, "table", vars_config(args),
                     cols + ["lambda_star_lo", "lambda_star_hi"], rows)
    return 0


def cmd_simulate(args) -> int:
    params = _params_from_args(args)
    config = SimConfig(params=params, K=args.K,
                       instance_seed=args.instance_seed,
                       criterion_enabled=args.criterion,
                       puncture=args.puncture,
                       max_intra=args.max_intra, max_inter=args.max_inter,
                       window=args.window, all_zero=not args.random_data)
    eps_list = [float(Fraction(e)) for e in args.eps]
    points = ber_experiment(config, eps_list, min_errors=args.min_errors,
                            max_bits=args.max_bits, seed=args.seed)
    rows = []
    for pt in points:
        print(f"eps={pt.eps:.4f}: BER={pt.ber:.3e} FER={pt.fer:.3e} "
              f"({pt.erased_bits} erased / {pt.bits} bits, {pt.frames} frames)")
        rows.append({
            "eps": pt.eps, "bits": pt.bits, "erased_bits": pt.erased_bits,
            "ber": pt.ber, "frames": pt.frames,
            "frame_errors": pt.frame_errors, "fer": pt.fer,
            "ci_low": pt.ci_low, "ci_high": pt.ci_high, "seed": pt.seed})
    cols = ["eps", "bits", "erased_bits", "ber", "frames", "frame_errors",
            "fer", "ci_low", "ci_high", "seed"]
    _write_artifacts(args.out, "simulate", vars_config(args), cols, rows)
    return 0


def cmd_gap(args) -> int:
    params = _params_from_args(args)
    cache = TransferCache(_budget_from_args(args))
    pts = gap_vs_L(params, args.L_list, cache=cache,
                   bisect_tol=args.bisect_tol)
    rows = []
    for p in pts:
        print(f"L={p.L}: terminated rate {p.rate_terminated:.4f} "
              f"threshold {p.threshold:.4f} gap {p.gap:.4f}")
        rows.append({"L": p.L, "rate_terminated": p.rate_terminated,
                     "threshold": p.threshold, "gap": p.gap})
    _write_artifacts(args.out, "gap", vars_config(args),
                     ["L", "rate_terminated", "threshold", "gap"], rows)
    return 0


def vars_config(args):
    skip = {"func"}
    return {k: v for k, v in vars(args).items()
            if k not in skip and not callable(v)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gscpcc",
        description="Spatially-coupled parallel concatenated codes on the "
                    "BEC: thresholds, potential analysis, simulation.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("threshold", help="BP threshold by bisection")
    _add_ensemble(p)
    p.add_argument("--mode", choices=["uncoupled", "coupled"], default=None)
    _add_common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("potential", help="potential threshold (and the "
                                         "2-state capacity guarantee)")
    _add_ensemble(p)
    p.add_argument("--curve", action="store_true",
                   help="also emit U(x) at the threshold")
    _add_common(p)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("map", help="area-theorem MAP estimate")
    _add_ensemble(p)
    p.add_argument("--eps-step", type=float, default=1e-3)
    p.add_argument("--refine-step", type=float, default=1e-5)
    _add_common(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("optimize", help="repetition-ratio sweep")
    _add_ensemble(p, need_lambda=False)
    p.add_argument("--lambda-step", type=float, default=None)
    p.add_argument("--y-step", type=float, default=0.0025)
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("table", help="batch threshold table from a job file")
    p.add_argument("--jobs", required=True, help="JSON list of row requests")
    _add_common(p)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("simulate", help="finite-length BER/FER experiment")
    _add_ensemble(p)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--eps", nargs="+", required=True)
    p.add_argument("--min-errors", type=int, default=300)
    p.add_argument("--max-bits", type=int, default=10_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--criterion", action="store_true",
                   help="enforce the coupled-bit spreading criterion")
    p.add_argument("--puncture", choices=["random", "fixed"], default="random")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--max-intra", type=int, default=20)
    p.add_argument("--max-inter", type=int, default=20)
    p.add_argument("--random-data", action="store_true",
                   help="encode random data instead of the zero codeword")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gap", help="gap to capacity versus coupling length")
    _add_ensemble(p)
    p.add_argument("--L-list", type=int, nargs="+", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gap)
    return ap


def _apply_config_file(args):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        for key, value in overrides.items():
            dest = key.replace("-", "_")
            if not hasattr(args, dest):
                raise CliError(f"unknown config key {key!r}")
            setattr(args, dest, value)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except (CliError, InvalidCodeSpec, ValueError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
