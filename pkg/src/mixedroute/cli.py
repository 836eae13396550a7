"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 non-convergence or failed self-test
(results are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .costs import CostModel, load_params
from .experiments import SweepSpec, default_gammas, emit_csv, price_of_anarchy, run_sweep
from .network import (NetworkError, RouteProbabilityMatrix, braess_fixture, enumerate_routes,
                      grid_network, parse_network_files)
from .plotting import PLOT_KINDS, emit_plot
from .so import SoObjective, gradient_check, solve_so, system_optimum_oracle
from .stackelberg import EquilibriumConfig, solve_mixed, split_demand
from .ue import UeConfig, solve_ue_msa

log = logging.getLogger("mixedroute")

OBJECTIVE_NAMES = {"time": "time", "energy-cv": "energy_cv", "energy-phev": "energy_phev"}

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("input")
    src.add_argument("--net", type=Path, help="TNTP network file")
    src.add_argument("--trips", type=Path, help="TNTP trips file (required with --net)")
    src.add_argument("--grid-seed", type=int, default=None,
                     help="use the synthetic 4x4 grid generated with this seed")
    src.add_argument("--config", type=Path, help="JSON cost-parameter overrides")
    p.add_argument("--gamma", type=float, default=1.0, help="CAV penetration rate")
    p.add_argument("--objective", choices=sorted(OBJECTIVE_NAMES), default="time")
    p.add_argument("--routes-per-od", type=int, default=3, metavar="K")
    p.add_argument("--restrict-ue", action="store_true",
                   help="non-CAVs choose among the same K routes as CAVs")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedroute",
                                     description="Mixed CAV / selfish traffic assignment.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("ue", "user equilibrium of the whole demand"),
                        ("so", "mixed equilibrium at one penetration rate"),
                        ("sweep", "penetration-rate sweep with CSV and SVG output"),
                        ("braess", "time and energy sweeps on the built-in Braess network"),
                        ("check", "gradient and oracle self-tests")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("sweep", "braess"):
            p.add_argument("--gamma-step", type=float, default=0.05)
            p.add_argument("--workers", type=int, default=1)
    return parser


def _load(args):
    if args.net is not None:
        if args.trips is None:
            raise NetworkError("--net requires --trips")
        net, ods = parse_network_files(args.net.read_text(), args.trips.read_text())
    elif args.trips is not None:
        raise NetworkError("--trips requires --net")
    elif args.grid_seed is not None:
        net, ods = grid_network(seed=args.grid_seed)
    else:
        net, ods, _ = braess_fixture()
    if args.routes_per_od < 1:
        raise ValueError("--routes-per-od must be at least 1")
    costs = CostModel(net, load_params(args.config))
    rs = enumerate_routes(net, ods, args.routes_per_od)
    return net, ods, rs, costs


def _eq_config(args, rs) -> EquilibriumConfig:
    cfg = EquilibriumConfig()
    so = replace(cfg.so, seed=args.seed)
    ue = replace(cfg.ue, route_set=rs) if args.restrict_ue else cfg.ue
    return replace(cfg, so=so, ue=ue)


def _objective(args) -> SoObjective:
    return SoObjective(OBJECTIVE_NAMES[args.objective])


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _fmt(v, unit=""):
    return "n/a" if v is None else f"{v:.4f}{unit}"


def cmd_ue(args) -> int:
    net, ods, rs, costs = _load(args)
    cfg = UeConfig(route_set=rs) if args.restrict_ue else UeConfig()
    res = solve_ue_msa(net, ods, None, costs, cfg)
    t = costs.travel_time(res.x_nc)
    _write_rows(args.out / "ue_links.csv", ["link_id", "tail", "head", "flow", "travel_time_min"],
                [(lk.id, lk.tail, lk.head, res.x_nc[i], t[i]) for i, lk in enumerate(net.links)])
    res.write_trace(args.out / "ue_trace.csv")
    demand = sum(od.demand for od in ods)
    avg = float(t @ res.x_nc) / demand if demand > 0 else 0.0
    print(f"ue: iterations={res.iterations} gap={res.final_gap:.3e} "
          f"avg_time_min={avg:.4f} converged={res.converged}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_so(args) -> int:
    net, ods, rs, costs = _load(args)
    res = solve_mixed(net, rs, ods, args.gamma, _objective(args), costs, _eq_config(args, rs))
    t = costs.travel_time(res.x)
    _write_rows(args.out / "so_links.csv",
                ["link_id", "tail", "head", "cav_flow", "noncav_flow", "total_flow", "travel_time_min"],
                [(lk.id, lk.tail, lk.head, res.x_c[i], res.x_nc[i], res.x[i], t[i])
                 for i, lk in enumerate(net.links)])
    ods_c, _ = split_demand(ods, args.gamma)
    rows = []
    for od, routes, probs in zip(ods_c, rs.routes_per_od, res.P_c.rows):
        for r, p in zip(routes, probs):
            rows.append((od.origin, od.destination, "-".join(map(str, r.links)), float(p), od.demand * p))
    _write_rows(args.out / "so_routes.csv",
                ["origin", "destination", "route_links", "probability", "cav_flow"], rows)
    _write_rows(args.out / "outer_trace.csv", ["iteration", "relative_change"],
                [(i + 1, v) for i, v in enumerate(res.outer_trace)])
    if res.so is not None:
        res.so.write_trace(args.out / "so_trace.csv")
    m = res.metrics
    print(f"so: gamma={args.gamma} objective={args.objective} outer_iterations={res.outer_iterations} "
          f"converged={res.converged}")
    print(f"  cav_time_min={_fmt(m.cav_time)} noncav_time_min={_fmt(m.noncav_time)} "
          f"cav_energy_usd={_fmt(m.cav_energy)} noncav_energy_usd={_fmt(m.noncav_energy)}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _sweep(args, net, ods, rs, costs, objective: str, prefix: str) -> bool:
    spec = SweepSpec(gammas=tuple(default_gammas(args.gamma_step)), objective=SoObjective(objective),
                     config=_eq_config(args, rs), seed=args.seed, workers=args.workers)
    result = run_sweep(spec, net, rs, ods, costs)
    emit_csv(result, args.out / f"{prefix}.csv")
    for kind in PLOT_KINDS:
        emit_plot(result, kind, args.out / f"{prefix}_{kind}.svg")
    poa = price_of_anarchy(result)
    bad = [r.gamma for r in result.rows if not r.converged]
    print(f"{prefix}: points={len(result.rows)} gamma1_savings_pct={poa:.4f} "
          f"nonconverged={bad if bad else 'none'}")
    return not bad


def cmd_sweep(args) -> int:
    net, ods, rs, costs = _load(args)
    ok = _sweep(args, net, ods, rs, costs, OBJECTIVE_NAMES[args.objective],
                f"sweep_{OBJECTIVE_NAMES[args.objective]}")
    return EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_braess(args) -> int:
    if args.net is not None or args.grid_seed is not None:
        raise NetworkError("braess always uses the built-in network; drop --net/--grid-seed")
    net, ods, rs, costs = _load(args)
    ok = True
    for objective in ("time", "energy_cv"):
        ok &= _sweep(args, net, ods, rs, costs, objective, f"braess_{objective}")
    return EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_check(args, n_points: int = 50) -> int:
    net, ods, rs, costs = _load(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    ods_c, ods_nc = split_demand(ods, 0.5)
    x_nc = solve_ue_msa(net, ods_nc, None, costs).x_nc
    for kind in ("time", "energy_cv"):
        worst = 0.0
        for i in range(n_points):
            P = RouteProbabilityMatrix([rng.dirichlet(np.ones(len(b))) if b else np.zeros(0)
                                        for b in rs.routes_per_od])
            worst = max(worst, gradient_check(P, x_nc, ods_c, rs, SoObjective(kind), costs, seed=i))
        rows.append((f"gradient_{kind}", worst, 1e-5))
    so = solve_so(net, rs, ods, None, SoObjective("time"), costs, replace(EquilibriumConfig().so, seed=args.seed))
    x_or = system_optimum_oracle(net, ods, costs)
    total_so = float(costs.travel_time(so.x_c) @ so.x_c)
    total_or = float(costs.travel_time(x_or) @ x_or)
    rel = abs(total_so - total_or) / max(total_or, 1e-300)
    rows.append(("oracle_total_time", rel, 1e-3))
    _write_rows(args.out / "check.csv", ["check", "value", "threshold", "passed"],
                [(n, v, th, "true" if v <= th else "false") for n, v, th in rows])
    for n, v, th in rows:
        print(f"{'PASS' if v <= th else 'FAIL'} {n}: {v:.3e} (threshold {th:g})")
    return EXIT_OK if all(v <= th for _, v, th in rows) else EXIT_NONCONVERGED


COMMANDS = {"ue": cmd_ue, "so": cmd_so, "sweep": cmd_sweep, "braess": cmd_braess, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        if not 0.0 <= args.gamma <= 1.0:
            raise ValueError("--gamma must lie in [0, 1]")
        args.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args)
    except (NetworkError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
