"""Penetration-rate sweeps and their CSV export."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .costs import CostModel
from .network import Network, ODPair, RouteSet
from .so import SoObjective
from .stackelberg import ClassMetrics, EquilibriumConfig, solve_mixed

CSV_COLUMNS = (
    "gamma",
    "cav_avg_time_min",
    "noncav_avg_time_min",
    "cav_energy_usd",
    "noncav_energy_usd",
    "cav_time_savings_pct",
    "noncav_time_savings_pct",
    "cav_energy_savings_pct",
    "noncav_energy_savings_pct",
    "converged",
    "outer_iterations",
)


def default_gammas(step: float = 0.05) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(n + 1)]


@dataclass(frozen=True)
class SweepSpec:
    gammas: tuple[float, ...] = tuple(default_gammas())
    objective: SoObjective = SoObjective()
    config: EquilibriumConfig = EquilibriumConfig()
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        g = list(self.gammas)
        if any(not 0.0 <= v <= 1.0 for v in g):
            raise ValueError("penetration rates must lie in [0, 1]")
        if g != sorted(set(g)):
            raise ValueError("penetration rates must be sorted and unique")


@dataclass
class SweepRow:
    gamma: float
    metrics: ClassMetrics
    converged: bool
    outer_iterations: int
    outer_trace: list[float] = field(default_factory=list)
    savings: dict[str, float | None] = field(default_factory=dict)


@dataclass
class SweepResult:
    rows: list[SweepRow]
    baseline_time: float | None
    baseline_energy: float | None
    objective: str = "time"

    def row(self, gamma: float) -> SweepRow:
        for r in self.rows:
            if math.isclose(r.gamma, gamma, abs_tol=1e-12):
                return r
        raise KeyError(f"no row for gamma={gamma}")

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)


def savings_pct(baseline: float | None, value: float | None) -> float | None:
    if baseline is None or value is None or baseline == 0:
        return None
    return (baseline - value) / baseline * 100.0


def _solve_point(args):
    net, rs, ods, gamma, obj, costs, cfg = args
    res = solve_mixed(net, rs, ods, gamma, obj, costs, cfg)
    return gamma, res.metrics, res.converged, res.outer_iterations, list(res.outer_trace)


def run_sweep(spec: SweepSpec, net: Network, rs: RouteSet, ods: Sequence[ODPair],
              costs: CostModel) -> SweepResult:
    """Mixed equilibrium at every penetration rate, with savings against gamma = 0."""
    cfg = replace(spec.config, so=replace(spec.config.so, seed=spec.seed))
    gammas = list(spec.gammas)
    need = gammas if 0.0 in gammas else [0.0] + gammas
    jobs = [(net, rs, ods, g, spec.objective, costs, cfg) for g in need]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            points = list(pool.map(_solve_point, jobs))
    else:
        points = [_solve_point(j) for j in jobs]
    by_gamma = {p[0]: p for p in points}
    base = by_gamma[0.0][1]
    base_t, base_e = base.noncav_time, base.noncav_energy
    rows = []
    for g in gammas:
        _, m, conv, iters, trace = by_gamma[g]
        if g == 0.0:
            sav = dict.fromkeys(("cav_time", "noncav_time", "cav_energy", "noncav_energy"), 0.0)
        else:
            sav = {
                "cav_time": savings_pct(base_t, m.cav_time),
                "noncav_time": savings_pct(base_t, m.noncav_time),
                "cav_energy": savings_pct(base_e, m.cav_energy),
                "noncav_energy": savings_pct(base_e, m.noncav_energy),
            }
        rows.append(SweepRow(g, m, conv, iters, trace, sav))
    return SweepResult(rows, base_t, base_e, spec.objective.kind)


def price_of_anarchy(sweep: SweepResult) -> float:
    """Fleet savings at full penetration relative to the all-selfish baseline, in percent."""
    try:
        sweep.row(0.0)
        full = sweep.row(1.0)
    except KeyError:
        raise ValueError("price of anarchy needs gamma = 0 and gamma = 1 in the sweep") from None
    key = "cav_time" if sweep.objective == "time" else "cav_energy"
    value = full.savings[key]
    if value is None:
        raise ValueError("fleet metric missing at gamma = 1")
    return value


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def sweep_table(result: SweepResult) -> list[dict]:
    out = []
    for r in result.rows:
        m, s = r.metrics, r.savings
        out.append({
            "gamma": r.gamma,
            "cav_avg_time_min": m.cav_time,
            "noncav_avg_time_min": m.noncav_time,
            "cav_energy_usd": m.cav_energy,
            "noncav_energy_usd": m.noncav_energy,
            "cav_time_savings_pct": s.get("cav_time"),
            "noncav_time_savings_pct": s.get("noncav_time"),
            "cav_energy_savings_pct": s.get("cav_energy"),
            "noncav_energy_savings_pct": s.get("noncav_energy"),
            "converged": r.converged,
            "outer_iterations": r.outer_iterations,
        })
    return out


def emit_csv(result: SweepResult, path) -> Path:
    """One row per penetration rate; empty cells mark a class with no demand."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in sweep_table(result):
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return path


def read_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for raw in reader:
            row = {}
            for c in CSV_COLUMNS:
                v = raw[c]
                if c == "converged":
                    row[c] = v == "true"
                elif c == "outer_iterations":
                    row[c] = int(v)
                else:
                    row[c] = None if v == "" else float(v)
            rows.append(row)
    return rows
