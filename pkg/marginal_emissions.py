"""
Marginal Emissions - Command Line Entry Point

Runs dispatch and marginal emissions analyses on a network JSON file and a
demand CSV file, writing CSV tables and a JSON summary.

Usage:
    python marginal_emissions.py validate   --network data/toy_network.json --demand data/toy_demand.csv
    python marginal_emissions.py dispatch   --network ... --demand ... --out results/
    python marginal_emissions.py lme        --network ... --demand ... --out results/
    python marginal_emissions.py static-lme --network ... --demand ... --out results/
    python marginal_emissions.py compare    --network ... --demand ... --day-len 24
    python marginal_emissions.py fd-check   --network ... --demand ... --fd-eps 1e-3
    python marginal_emissions.py report     --network ... --demand ... --out results/
    python marginal_emissions.py synth      --kind storage --seed 3 --out data/synthetic/

Exit codes: 0 ok, 1 usage, 2 invalid data, 3 solver failure,
4 degenerate marginal emissions (files are still written).

Author: Claire Namusoke
Date: October 2026
"""

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from analysis import (
    DEFAULT_DAY_LEN,
    ScenarioConfig,
    ScenarioError,
    ScenarioReport,
    run_scenario,
    write_report,
)
from dispatch_solver import UC_MODES
from grid_model import (
    DEFAULT_REG,
    DEFAULT_VOLL,
    GridModelError,
    load_demand,
    load_network,
    save_demand,
    save_network,
    validate_demand,
    validate_network,
)
from implicit_diff import DEFAULT_FD_EPS, DEGENERATE_POLICIES, JACOBIAN_FORMS
from synthetic import random_case, scale_case, storage_case

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3
EXIT_DEGENERATE = 4

FD_GAP_LIMIT = 1e-4


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"✗ {self.prog}: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="marginal_emissions", description="Locational marginal emissions toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(p):
        p.add_argument("--network", required=True, help="network JSON file")
        p.add_argument("--demand", required=True, help="demand CSV file (node_0..node_{n-1})")
        p.add_argument("--horizon", type=int, default=None, help="keep only the first N periods")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--tol", type=float, default=1e-8, help="KKT residual tolerance")
        p.add_argument("--reg", type=float, default=DEFAULT_REG, help="quadratic cost regularization")
        p.add_argument("--voll", type=float, default=DEFAULT_VOLL, help="curtailment cost ($/MWh)")
        p.add_argument("--seed", type=int, default=0, help="seed of the demand jitter")
        p.add_argument("--jitter", action="store_true", help="perturb demand by up to 1e-6 MW")
        p.add_argument("--uc-mode", choices=UC_MODES, default="heuristic_rounding")
        p.add_argument("--form", choices=JACOBIAN_FORMS, default="reduced", help="KKT Jacobian form")
        p.add_argument("--policy", choices=DEGENERATE_POLICIES, default="one_sided",
                       help="rates reported at degenerate points")
        p.add_argument("--fd-eps", type=float, default=DEFAULT_FD_EPS, help="finite difference step (MW)")
        p.add_argument("--day-len", type=int, default=DEFAULT_DAY_LEN, help="periods per RMS window")
        p.add_argument("--smoothing", type=float, default=None,
                       help="rolling window as a fraction of the horizon")
        p.add_argument("--dump-qp", default=None, help="write the QP as sparse triplets to this file")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--verbose", action="store_true")

    for name, help_text in [
        ("validate", "check network and demand files"),
        ("dispatch", "solve the dispatch and write dispatch.csv and lmp.csv"),
        ("lme", "write dynamic marginal emissions to lme.csv"),
        ("static-lme", "write static-approximation marginal emissions to lme_static.csv"),
        ("compare", "compare static and dynamic marginal emissions"),
        ("fd-check", "compare implicit and finite-difference marginal emissions"),
        ("report", "write every table and report.json"),
    ]:
        scenario_args(sub.add_parser(name, help=help_text))

    synth = sub.add_parser("synth", help="write a synthetic network and demand")
    synth.add_argument("--kind", choices=("random", "scale", "storage"), default="random")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--nodes", type=int, default=3)
    synth.add_argument("--gens", type=int, default=4)
    synth.add_argument("--horizon", type=int, default=3)
    synth.add_argument("--no-storage", action="store_true", help="storage case without batteries")
    synth.add_argument("--out", default="data/synthetic")
    return parser


def config_from_args(args, static: bool, fd_check: bool) -> ScenarioConfig:
    return ScenarioConfig(
        network=args.network, demand=args.demand, out_dir=args.out, horizon=args.horizon,
        tol=args.tol, reg=args.reg, voll=args.voll, seed=args.seed, uc_mode=args.uc_mode,
        jitter=args.jitter, static=static, fd_check=fd_check, fd_eps=args.fd_eps,
        day_len=args.day_len, smoothing=args.smoothing, lme_form=args.form,
        degenerate_policy=args.policy, dump_qp=args.dump_qp, workers=args.workers,
        verbose=args.verbose,
    )


def print_summary(report: ScenarioReport):
    print(f"\n📊 {report.n_nodes} nodes, {len(report.device_names)} devices, {report.horizon} periods")
    stats = report.solver_stats
    print(f"   Iterations: {stats['iterations']}  (polished: {stats['polished']})")
    print(f"   Max KKT residual: {max(stats['residuals'].values()):.2e}")
    print(f"   Dispatch time: {stats['wall_time']:.3f} s, marginal emissions time: {stats['lme_time']:.3f} s")
    if stats.get("simultaneous_storage"):
        print(f"⚠️  Storage charging and discharging together: {', '.join(stats['simultaneous_storage'])}")
    print(f"\n💨 Emissions: {report.emissions_total:,.4f} tCO2")
    print(f"   Mean dynamic LME: {np.mean(report.lme_dynamic):.4f} tCO2/MWh")
    if report.lme_static is not None:
        print(f"   Mean static LME:  {np.mean(report.lme_static):.4f} tCO2/MWh")


def cmd_validate(args) -> int:
    try:
        net = load_network(args.network)
        demand = load_demand(args.demand, n_nodes=net.n_nodes)
    except GridModelError as e:
        print(f"✗ {e}")
        return EXIT_DATA
    report = validate_network(net)
    if report.ok:
        report = validate_demand(net, demand)
    if not report.ok:
        print(f"✗ {len(report.violations)} problem(s) found:")
        for v in report.violations:
            print(f"   - {v}")
        return EXIT_DATA
    print(f"✓ Network OK: {net.n_nodes} nodes, {net.n_lines} lines, {len(net.devices)} devices, "
          f"{net.horizon} periods")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "random":
        net, demand = random_case(args.seed, n_nodes=args.nodes, n_gens=args.gens, horizon=args.horizon)
    elif args.kind == "scale":
        net, demand = scale_case(args.seed)
    else:
        net, demand = storage_case(args.seed, with_storage=not args.no_storage)
    os.makedirs(args.out, exist_ok=True)
    net_path = os.path.join(args.out, f"{args.kind}_{args.seed}_network.json")
    demand_path = os.path.join(args.out, f"{args.kind}_{args.seed}_demand.csv")
    if not (save_network(net, net_path) and save_demand(demand, demand_path)):
        return EXIT_DATA
    print(f"✓ Saved '{net_path}' and '{demand_path}'")
    return EXIT_OK


TABLES = {
    "dispatch": ("dispatch", "lmp"),
    "lme": ("lme",),
    "static-lme": ("lme_static",),
    "compare": ("lme", "lme_static"),
    "fd-check": ("lme",),
    "report": ("lme", "lme_static", "lmp", "dispatch", "report"),
}


def cmd_scenario(args) -> int:
    static = args.command in ("static-lme", "compare", "report")
    fd_check = args.command == "fd-check"
    try:
        report = run_scenario(config_from_args(args, static=static, fd_check=fd_check))
    except ScenarioError as e:
        print(f"✗ {e}")
        return EXIT_DATA if e.kind == "data" else EXIT_SOLVER

    print_summary(report)
    if not write_report(report, args.out, TABLES[args.command]):
        return EXIT_DATA
    print(f"\n✓ Results written to '{args.out}'")

    if args.command == "compare":
        metrics = report.metrics
        if metrics.get("rms_deviation_normalized") is not None:
            print(f"   Mean normalized RMS deviation: {100 * metrics['rms_deviation_normalized']:.2f}%")
        else:
            print(f"⚠️  Median dynamic LME is zero; absolute RMS deviation: "
                  f"{metrics['rms_deviation_absolute']:.6f} tCO2/MWh")
    if fd_check:
        gap = report.metrics["fd_max_gap"]
        mark = "✓" if gap <= FD_GAP_LIMIT else "✗"
        print(f"{mark} Max relative gap between implicit and finite-difference LMEs: {gap:.2e}")
        if gap > FD_GAP_LIMIT:
            return EXIT_SOLVER

    if report.degenerate.get("dynamic") or report.degenerate.get("static"):
        print("⚠️  Degenerate dispatch: marginal emissions are one-sided or least-squares estimates")
        return EXIT_DEGENERATE
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    print("=" * 70)
    print(f"MARGINAL EMISSIONS - {args.command.upper()}")
    print("=" * 70)
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "synth":
        return cmd_synth(args)
    return cmd_scenario(args)


if __name__ == "__main__":
    sys.exit(main())
