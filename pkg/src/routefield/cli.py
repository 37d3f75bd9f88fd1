"""Command line entry point.

Verbs: solve-mfg, eval-nplayer, bench-runtime, oracle-check, export-flow.
Exit codes: 0 success, 2 configuration error, 3 size/budget error,
4 oracle mismatch, 5 I/O error.  Identical command + seed reproduces
byte-identical computational outputs (timing benchmarks measure wall
time and are exempt).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import io as dataio
from . import oracles
from .kernel import Policy, Scenario
from .mfg import (
    DEFAULT_OMD_SCHEDULE,
    OmdSchedule,
    forward_flow,
    omd_solve,
)
from .nplayer import (
    LivelockError,
    SizeBudgetError,
    deviation_incentive_exact,
    deviation_incentive_mc,
    mccfr_solve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_ORACLE = 4
EXIT_IO = 5


class OracleMismatch(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routefield",
        description="Mean-field routing game solver and finite-player validator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")

    p = sub.add_parser("solve-mfg", help="mirror-descent equilibrium; writes "
                                         "history.csv, flow.csv, policy.json")
    common(p)
    p.add_argument("--iterations", type=int, default=None,
                   help="override the schedule with N iterations at rate 1")

    p = sub.add_parser("eval-nplayer", help="deviation incentive of the learned "
                                            "policy in N-player games; writes estimates.csv")
    common(p)
    p.add_argument("--players", required=True,
                   help="comma-separated player counts, e.g. 2,5,30")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--mode", choices=("event", "tick"), default="event")

    p = sub.add_parser("bench-runtime", help="seconds per 10 iterations of the "
                                             "mean-field and regret solvers; writes timings.csv")
    common(p)
    p.add_argument("--players", required=True)
    p.add_argument("--iterations", type=int, default=10)

    p = sub.add_parser("oracle-check", help="closed-form/brute-force consistency "
                                            "checks; nonzero exit on mismatch")
    p.add_argument("--out", default=None, help="optional report directory")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-flow", help="solve and re-emit tick snapshots "
                                           "of the link proportions")
    common(p)
    p.add_argument("--iterations", type=int, default=None)
    return parser


def _load(args) -> tuple[Scenario, OmdSchedule]:
    config = dataio.load_scenario_config(args.scenario)
    scenario = dataio.build_scenario(config)
    schedule = config.omd_schedule or DEFAULT_OMD_SCHEDULE
    if getattr(args, "iterations", None):
        schedule = OmdSchedule(((args.iterations, 1.0),))
    return scenario, schedule


def _ensure_out(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create output directory {path}: {exc}") from exc


def _solve(scenario, schedule):
    policy, history = omd_solve(scenario, schedule)
    return policy, history, forward_flow(policy, scenario)


def cmd_solve_mfg(args) -> int:
    scenario, schedule = _load(args)
    _ensure_out(args.out)
    policy, history, flow = _solve(scenario, schedule)
    dataio.write_history(history, os.path.join(args.out, "history.csv"))
    dataio.write_flow(flow, os.path.join(args.out, "flow.csv"))
    dataio.write_policy(policy, os.path.join(args.out, "policy.json"))
    if history:
        last = history[-1]
        print(f"iterations={last.iteration} exploitability={last.exploitability:.6g} "
              f"mean_travel_time={last.mean_travel_time:.6g}")
    return EXIT_OK


def cmd_eval_nplayer(args) -> int:
    scenario, schedule = _load(args)
    _ensure_out(args.out)
    policy, _, _ = _solve(scenario, schedule)
    counts = [int(x) for x in args.players.split(",") if x]
    estimates = []
    for n in counts:
        est = deviation_incentive_mc(policy, n, scenario,
                                     n_samples=args.samples,
                                     rng_seed=args.seed, mode=args.mode)
        estimates.append((n, est))
        print(f"N={n} incentive={est.mean:.6g} +-{est.half_width_95:.2g} "
              f"({est.n_samples} samples)")
    dataio.write_estimates(estimates, os.path.join(args.out, "estimates.csv"))
    return EXIT_OK


def cmd_bench_runtime(args) -> int:
    scenario, schedule = _load(args)
    _ensure_out(args.out)
    counts = [int(x) for x in args.players.split(",") if x]
    iterations = max(1, args.iterations)
    rows = []
    for n in counts:
        start = time.perf_counter()
        omd_solve(scenario, OmdSchedule(((iterations, 1.0),)))
        omd_per_ten = (time.perf_counter() - start) / iterations * 10
        _, cfr_per_ten = mccfr_solve(scenario, n, iterations, rng_seed=args.seed)
        rows.append(("omd", n, omd_per_ten))
        rows.append(("mccfr", n, cfr_per_ten))
        print(f"N={n} omd={omd_per_ten:.4g}s/10it mccfr={cfr_per_ten:.4g}s/10it")
    dataio.write_timings(rows, os.path.join(args.out, "timings.csv"))
    return EXIT_OK


def cmd_export_flow(args) -> int:
    scenario, schedule = _load(args)
    _ensure_out(args.out)
    _, _, flow = _solve(scenario, schedule)
    dataio.write_flow(flow, os.path.join(args.out, "flow.csv"))
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    failures: list[str] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        status = "ok" if ok else "MISMATCH"
        print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
        if not ok:
            failures.append(name)

    # Closed-form deviation incentive vs exact enumeration, N = 1..12.
    scenario = oracles.pigou_scenario("linear", dt=0.01, horizon=5.0, cost_scale=2.0)
    policy = Policy.uniform(scenario)
    worst = 0.0
    for n in range(1, 13):
        formula = oracles.pigou_deviation_formula(n, 2.0)
        exact = deviation_incentive_exact(policy, n, scenario)
        worst = max(worst, abs(formula - exact))
    check("two-link deviation formula equals exact enumeration (N=1..12)",
          worst <= 1e-12, f"worst gap {worst:.2e}")

    # Linearity of the formula in the cost scale.
    lin = abs(oracles.pigou_deviation_formula(6, 4.0)
              - 2 * oracles.pigou_deviation_formula(6, 2.0))
    check("deviation formula linear in the cost scale", lin <= 1e-15)

    # Equilibrium split solves travel-time equalization for both variants.
    for variant in ("linear", "classic"):
        split = oracles.pigou_mf_equilibrium(oracles.PigouParams(2.0, variant))
        check(f"pigou {variant} equilibrium split is 1/2", abs(split - 0.5) <= 1e-9,
              f"split {split:.12f}")

    # Brute-force equilibria carry no unilateral improvement.
    equilibria, _ = oracles.brute_force_nash(scenario, 2)
    check("two-player pure equilibria exist", bool(equilibria))
    worst_gap = max(
        oracles.profile_deviation_gap(scenario, list(profile))
        for profile in equilibria
    )
    check("pure equilibria have zero deviation gap", worst_gap <= 1e-12,
          f"worst {worst_gap:.2e}")

    from .scenarios import braess_scenario

    braess = braess_scenario()
    braess_eq, _ = oracles.brute_force_nash(braess, 2)
    check("braess two-player equilibrium set nonempty", bool(braess_eq),
          f"{len(braess_eq)} equilibria")

    # Discontinuous costs: the step functions and the bounded-away
    # deviation incentive under mirror descent (no equilibrium exists).
    disc = oracles.discontinuous_pigou_scenario()
    c_strict = disc.network.links[0].congestion
    c_weak = disc.network.links[1].congestion
    check("step congestion at the threshold", c_strict(0.5) == 2.0 and c_weak(0.5) == 1.0)
    _, hist = omd_solve(disc, OmdSchedule(((200, 1.0),)))
    floor = min(h.exploitability for h in hist)
    check("no-equilibrium scenario keeps exploitability above 0.2",
          floor >= 0.2, f"floor {floor:.4f}")

    if args.out:
        _ensure_out(args.out)
        report = os.path.join(args.out, "oracle_report.txt")
        with open(report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("failures: %d\n" % len(failures))
            for name in failures:
                fh.write(f"MISMATCH {name}\n")
    if failures:
        raise OracleMismatch(f"{len(failures)} oracle checks failed")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "solve-mfg": cmd_solve_mfg,
        "eval-nplayer": cmd_eval_nplayer,
        "bench-runtime": cmd_bench_runtime,
        "oracle-check": cmd_oracle_check,
        "export-flow": cmd_export_flow,
    }
    try:
        return handlers[args.verb](args)
    except dataio.ConfigError as exc:
        print(f"error: config_error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dataio.TntpParseError as exc:
        print(f"error: parse_error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SizeBudgetError,) as exc:
        print(f"error: size_budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OracleMismatch as exc:
        print(f"error: oracle_mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (IOError, OSError) as exc:
        print(f"error: io_error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LivelockError as exc:
        print(f"error: livelock: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
