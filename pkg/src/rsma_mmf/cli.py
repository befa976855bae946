"""Command line entry point ``mmf``."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import baselines, oracle
from .experiments import (
    EXHAUSTIVE,
    ConfigError,
    SweepConfig,
    budget_from_snr,
    generate_rayleigh,
    load_config,
    run_sweep,
    write_outputs,
    best_order_solution,
)
from .model import ChannelState, FblParams
from .sca import MmfInstance, SolverConfig

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_CELL_FAILED = 3


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _blocklength(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinite", "ifbl") else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmf", description="Max-min fair uplink RSMA power allocation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a single instance")
    p.add_argument("--users", type=int, default=2, help="number of users (ignored with --gains)")
    p.add_argument("--split", type=int, default=1, help="number of splitting users for rsma")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--gains", type=_float_list, help="comma-separated channel power gains")
    src.add_argument("--seed", type=int, default=0, help="seed for a Rayleigh draw")
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--blocklength", type=_blocklength, default=math.inf, help="N, or 'inf'")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--scheme", choices=(baselines.RSMA, baselines.NOMA, baselines.TIN), default=baselines.RSMA)
    p.add_argument("--order", choices=("heuristic", EXHAUSTIVE), default="heuristic")
    p.add_argument("--tol", type=float, default=1e-3, help="SCA stopping tolerance")

    s = sub.add_parser("sweep", help="run a Monte Carlo sweep")
    s.add_argument("--config", help="key=value config file (defaults used when omitted)")
    s.add_argument("--out", default="results", help="output directory")
    s.add_argument("--seed", type=int, help="override the master seed")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.add_argument("--timing", action="store_true", help="record wall-clock time per cell")

    v = sub.add_parser("verify", help="run the brute-force oracles against the solver")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=20, help="random instances for the grid oracle")
    v.add_argument("--resolution", type=float, default=1e-3)
    return parser


def _cmd_solve(args) -> int:
    try:
        if args.gains is not None:
            channel = ChannelState(args.gains)
        else:
            channel = generate_rayleigh(args.users, 1, args.seed)[0]
        fbl = FblParams(args.blocklength, args.epsilon)
        budget = budget_from_snr(args.snr_db)
        config = SolverConfig(tol_tau=args.tol)
        if args.scheme == baselines.RSMA:
            kind = baselines.SchemeKind(baselines.RSMA, args.split)
        else:
            kind = baselines.SchemeKind(args.scheme)
        instance = kind.instance(channel, fbl, budget)
        if args.order == EXHAUSTIVE and (kind.tag == baselines.TIN
                                         or instance.num_streams > oracle.MAX_ORDER_STREAMS):
            raise ValueError("exhaustive order needs a SIC scheme with at most "
                             f"{oracle.MAX_ORDER_STREAMS} streams")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    sol = baselines.solve_scheme(kind, channel, fbl, budget, config)
    if args.order == EXHAUSTIVE:
        sol = best_order_solution(instance, config, sol)
    np.set_printoptions(precision=6, suppress=True)
    print(f"scheme      {kind.tag}" + (f" (split {kind.split_count})" if kind.tag == baselines.RSMA else ""))
    print(f"gains       {channel.gains}")
    print(f"budget      {budget:g}  blocklength {fbl.blocklength:g}  epsilon {fbl.epsilon:g}")
    print(f"order       {' '.join(repr(s) for s in sol.order)}")
    print(f"powers      {sol.powers.powers}")
    print(f"user rates  {sol.user_rates}")
    print(f"min rate    {sol.t_star:.6f}")
    print(f"converged   {sol.converged} after {sol.iterations} iterations, certificate {sol.certificate:.2e}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        overrides = {"seed": args.seed, "timing": True if args.timing else None}
        config = load_config(args.config, **overrides) if args.config else SweepConfig(
            **{k: v for k, v in overrides.items() if v is not None})
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(done, total):
        if done == total or done % max(1, total // 20) == 0:
            print(f"\r{done}/{total} units", end="", file=sys.stderr, flush=True)

    result = run_sweep(config, jobs=args.jobs, progress=progress)
    print(file=sys.stderr)
    for path in write_outputs(result, args.out):
        print(f"wrote {path}")
    failed = result.failed
    if failed:
        print(f"{len(failed)} of {len(result.rows)} cells failed", file=sys.stderr)
        return EXIT_CELL_FAILED
    return EXIT_OK


def run_verify(seed: int = 0, instances: int = 20, resolution: float = 1e-3, out=print) -> bool:
    """Run the three oracles; returns True when every bound holds."""
    ok = True
    report = oracle.tangent_bound_check(10_000, seed=seed)
    good = report.passed
    out(f"{'PASS' if good else 'FAIL'} tangent bound: {report.violations} violations in {report.samples} samples")
    ok &= good

    channels = generate_rayleigh(2, instances, seed)
    worst = 0.0
    for i, ch in enumerate(channels):
        fbl = FblParams(250.0) if i % 2 else FblParams()
        inst = MmfInstance.heuristic(ch, 1, fbl, budget_from_snr(20.0))
        sol = baselines.rsma_solve(ch, 1, fbl, inst.budget)
        rep = oracle.grid_oracle_k2(inst, resolution, solver_value=sol.t_star)
        worst = max(worst, rep.delta / rep.best_value if rep.best_value > 0 else 0.0)
    good = worst <= 0.02
    out(f"{'PASS' if good else 'FAIL'} grid oracle: worst relative gap {worst:.2e} over {instances} instances")
    ok &= good

    worst = 0.0
    for ch in generate_rayleigh(2, 10, seed + 1):
        inst = MmfInstance.heuristic(ch, 1, FblParams(1500.0), budget_from_snr(20.0))
        worst = max(worst, oracle.order_oracle(inst).shortfall)
    good = worst <= 0.05
    out(f"{'PASS' if good else 'FAIL'} order oracle: heuristic order worst shortfall {worst:.2e}")
    ok &= good
    return bool(ok)


def _cmd_verify(args) -> int:
    try:
        ok = run_verify(args.seed, args.instances, args.resolution)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"solve": _cmd_solve, "sweep": _cmd_sweep, "verify": _cmd_verify}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
