"""Command line interface: single runs, Monte Carlo sweeps, and self checks."""

from __future__ import annotations

import argparse
import json
import math
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ao, channel, experiments, rates
from .config import SystemConfig, even_split_coefficients, load_config, validate_config


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mestars",
        description="Sum secrecy rate optimization for a movable-element "
                    "transmitting/reflecting surface downlink.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one optimization run; JSON summary on stdout")
    p.add_argument("--config", type=Path, default=None,
                   help="system config file (flat key = value; defaults otherwise)")
    p.add_argument("--seed", type=int, default=None,
                   help="geometry seed (default: config rng_seed)")
    p.add_argument("--out", type=Path, default=None,
                   help="artifact directory: summary.json, stages.jsonl, position traces")

    p = sub.add_parser("sweep", help="scenario sweep to CSV")
    p.add_argument("--config", type=Path, required=True, help="scenario file")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--trials", type=int, default=None, help="override trials per point")
    p.add_argument("--threads", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", type=Path, required=True, help="CSV output path")

    p = sub.add_parser("gradcheck", help="verify the analytic position gradient "
                                         "against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=50, help="random instances")

    p = sub.add_parser("selftest", help="fast invariant suite; nonzero exit on failure")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=25, help="instances per check")
    return parser


def cmd_run(args):
    cfg = load_config(args.config) if args.config else validate_config(SystemConfig())
    seed = cfg.rng_seed if args.seed is None else args.seed
    geom = channel.sample_geometry(cfg, rng_seed=seed)
    log_path = None
    trace_dir = None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "traces").mkdir(exist_ok=True)
        log_path = str(args.out / "stages.jsonl")
        trace_dir = str(args.out / "traces")
    t0 = time.perf_counter()
    state = ao.run(geom, cfg, log_path=log_path, trace_dir=trace_dir)
    wall = time.perf_counter() - t0
    report = rates.rate_report(state.layout, state.coeffs, state.beamformer, geom, cfg)
    summary = {
        "status": state.status,
        "iterations": state.iteration,
        "sum_secrecy_rate": state.objective,
        "objective_history": list(state.objective_history),
        "user_rates": dict(report.user_rate),
        "eve_rates": {f"{e}:{u}": v for (e, u), v in report.eve_rate.items()},
        "max_sdp_gap": state.max_sdp_gap,
        "seed": seed,
        "wall_seconds": round(wall, 3),
    }
    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        (args.out / "summary.json").write_text(text + "\n", encoding="utf-8")
    return 0 if not state.status.startswith(("stage_failure", "init_infeasible")) else 1


def cmd_sweep(args):
    sc = experiments.scenario_from_file(args.config)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.trials is not None:
        sc = replace(sc, trials=args.trials)
    result = experiments.sweep(sc, out_path=args.out, threads=max(1, args.threads))
    for p in result.points:
        print(f"{p.scheme} {sc.sweep_var}={p.sweep_value}: mean={p.mean:.4f} "
              f"se={p.std_error:.4f} trials={p.trials}")
    if result.failures:
        print(f"{len(result.failures)} trial(s) failed; manifest at "
              f"{args.out}.failures.json", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args):
    res = experiments.gradient_check(instances=args.trials, rng_seed=args.seed)
    print(f"instances={res.instances} max_rel_error={res.max_rel_error:.3e} "
          f"bad_instances={res.bad_instances}")
    return 0 if res.passed else 1


def cmd_selftest(args):
    rng = np.random.default_rng(args.seed)
    checks = []

    worst = experiments.decomposition_check(instances=args.trials, rng_seed=args.seed)
    checks.append(("received power decomposition agreement", worst, 1e-9))

    worst = experiments.sdp_lambda_max_check(instances=args.trials, rng_seed=args.seed)
    checks.append(("interior-point lambda-max objective error", worst, 1e-6))

    worst = 0.0
    for _ in range(args.trials):
        coeffs = even_split_coefficients(int(rng.integers(2, 16)))
        worst = max(worst, float(np.max(np.abs(coeffs.beta_t + coeffs.beta_r - 1.0))))
    checks.append(("element energy split sums to one", worst, 1e-12))

    worst = 0.0
    cfg = validate_config(SystemConfig())
    geom = channel.sample_geometry(cfg, rng_seed=args.seed)
    for _ in range(args.trials):
        pos = rng.uniform(-cfg.region_edge / 2, cfg.region_edge / 2, size=2)
        f = channel.frv_stars_incident(pos, geom)
        worst = max(worst, float(np.max(np.abs(np.abs(f) - 1.0))))
    checks.append(("field response vectors unit modulus", worst, 1e-12))

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "geom.txt"
        channel.save_geometry(geom, path)
        back = channel.load_geometry(path)
        worst = max(
            float(np.max(np.abs(back.sigma_bs - geom.sigma_bs))),
            max(float(np.max(np.abs(back.sigma_user[k] - geom.sigma_user[k])))
                for k in geom.sigma_user),
            max(float(np.max(np.abs(back.stars_aod[k] - geom.stars_aod[k])))
                for k in geom.stars_aod),
            float(np.max(np.abs(back.bs_aod - geom.bs_aod))),
        )
    checks.append(("geometry snapshot round trip", worst, 0.0))

    ok = True
    for name, value, bound in checks:
        good = value <= bound and math.isfinite(value)
        ok = ok and good
        print(f"{'PASS' if good else 'FAIL'} {name}: {value:.3e} (bound {bound:g})")
    return 0 if ok else 1


def main(argv=None):
    args = _build_parser().parse_args(argv)
    return {"run": cmd_run, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "selftest": cmd_selftest}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
