"""User equilibrium for selfish traffic by the Method of Successive Averages."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import CostModel
from .network import Network, NetworkError, ODPair, RouteSet, shortest_path_tree, validate_ods

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UeConfig:
    max_iterations: int = 2000
    tolerance: float = 1e-4
    line_search: bool = False  # Frank-Wolfe step instead of 1/k
    route_set: RouteSet | None = None  # restrict choices to these routes

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class UeResult:
    x_nc: np.ndarray
    iterations: int
    final_gap: float
    beckmann_value: float
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    # per O-D: link-id path -> flow carried
    path_flows: list[dict[tuple[int, ...], float]] = field(default_factory=list)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "gap", "beckmann"])
            for row in self.trace:
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def _shortest_paths(net: Network, ods: Sequence[ODPair], times: np.ndarray,
                    route_set: RouteSet | None = None):
    """Current best path (link ids) and its time for every O-D pair."""
    if route_set is not None:
        out = []
        for i, od in enumerate(ods):
            best = None
            for route in route_set.routes_per_od[i]:
                cost = float(sum(times[net.link_index(l)] for l in route.links))
                key = (cost, route.links)
                if best is None or key < best:
                    best = key
            if best is None:
                if od.demand > 0:
                    raise NetworkError(f"no route for O-D {od.origin}->{od.destination}")
                best = (0.0, ())
            out.append((best[1], best[0]))
        return out
    trees = {}
    out = []
    for od in ods:
        if od.origin not in trees:
            trees[od.origin] = shortest_path_tree(net, od.origin, times)
        tree = trees[od.origin]
        if od.destination not in tree:
            if od.demand > 0:
                raise NetworkError(f"destination {od.destination} unreachable from {od.origin}")
            out.append(((), 0.0))
            continue
        d, path = tree[od.destination]
        out.append((path, d))
    return out


def _load(net: Network, ods, paths) -> np.ndarray:
    y = np.zeros(net.n_links)
    for od, (path, _) in zip(ods, paths):
        if od.demand == 0:
            continue
        for lid in path:
            y[net.link_index(lid)] += od.demand
    return y


def all_or_nothing(net: Network, ods: Sequence[ODPair], times: np.ndarray,
                   route_set: RouteSet | None = None) -> np.ndarray:
    """Load every O-D demand onto its current shortest path."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("link times must be nonnegative")
    return _load(net, ods, _shortest_paths(net, ods, times, route_set))


def beckmann_objective(x_nc: np.ndarray, x_c: np.ndarray, costs: CostModel) -> float:
    """Sum over links of the integral of t from x_c to x_c + x_nc."""
    x_c = np.asarray(x_c, dtype=float)
    hi = x_c + np.asarray(x_nc, dtype=float)
    return float(np.sum(costs.integral(hi) - costs.integral(x_c)))


def _gap(tx: float, sp: float) -> float:
    if sp <= 0:
        return 0.0 if tx <= 0 else float("inf")
    return max((tx - sp) / sp, 0.0)


def wardrop_gap(net: Network, ods: Sequence[ODPair], x_nc: np.ndarray, x_c: np.ndarray,
                costs: CostModel, route_set: RouteSet | None = None) -> float:
    """Relative gap between experienced and shortest-path travel time."""
    if sum(od.demand for od in ods) == 0:
        return 0.0
    times = costs.travel_time(np.asarray(x_c) + np.asarray(x_nc))
    paths = _shortest_paths(net, ods, times, route_set)
    sp = sum(od.demand * d for od, (_, d) in zip(ods, paths))
    return _gap(float(times @ x_nc), sp)


def _line_search(x, d, x_c, costs, iters=60):
    # root of sum t(x_c + x + s d) . d on [0, 1]
    def slope(s):
        return float(costs.travel_time(x_c + x + s * d) @ d)
    if slope(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_ue_msa(net: Network, ods: Sequence[ODPair], x_c: np.ndarray | None,
                 costs: CostModel, cfg: UeConfig = UeConfig(),
                 warm_start: UeResult | None = None) -> UeResult:
    """Equilibrate ``ods`` with ``x_c`` held fixed as background flow.

    A ``warm_start`` solution is returned unchanged when it still meets the gap
    tolerance under the new background flow; otherwise MSA runs from scratch.
    """
    validate_ods(net, ods)
    x_c = np.zeros(net.n_links) if x_c is None else np.asarray(x_c, dtype=float)
    if x_c.shape != (net.n_links,):
        raise NetworkError("background flow has the wrong length")
    n = len(ods)
    path_flows: list[dict] = [{} for _ in range(n)]
    if sum(od.demand for od in ods) == 0:
        return UeResult(np.zeros(net.n_links), 1, 0.0, 0.0, True, [(1, 0.0, 0.0)], path_flows)

    rset = cfg.route_set
    if warm_start is not None and warm_start.x_nc.shape == (net.n_links,):
        gap = wardrop_gap(net, ods, warm_start.x_nc, x_c, costs, rset)
        if gap <= cfg.tolerance:
            x = warm_start.x_nc
            return UeResult(x, 1, gap, beckmann_objective(x, x_c, costs), True,
                            [(1, gap, beckmann_objective(x, x_c, costs))],
                            [dict(pf) for pf in warm_start.path_flows])

    paths = _shortest_paths(net, ods, costs.travel_time(x_c), rset)
    x = _load(net, ods, paths)
    for i, (od, (p, _)) in enumerate(zip(ods, paths)):
        if od.demand > 0:
            path_flows[i][p] = od.demand
    trace = []
    gap = float("inf")
    k = 1
    while True:
        times = costs.travel_time(x_c + x)
        paths = _shortest_paths(net, ods, times, rset)
        sp = sum(od.demand * d for od, (_, d) in zip(ods, paths))
        gap = _gap(float(times @ x), sp)
        trace.append((k, gap, beckmann_objective(x, x_c, costs)))
        if gap <= cfg.tolerance or k >= cfg.max_iterations:
            break
        k += 1
        y = _load(net, ods, paths)
        step = _line_search(x, y - x, x_c, costs) if cfg.line_search else 1.0 / k
        x = x + step * (y - x)
        for i, (od, (p, _)) in enumerate(zip(ods, paths)):
            if od.demand == 0:
                continue
            pf = path_flows[i]
            for key in pf:
                pf[key] *= 1.0 - step
            pf[p] = pf.get(p, 0.0) + step * od.demand
    converged = gap <= cfg.tolerance
    if not converged:
        log.warning("MSA stopped after %d iterations with gap %.3g", k, gap)
    x = np.maximum(x, 0.0)
    return UeResult(x, k, gap, beckmann_objective(x, x_c, costs), converged, trace, path_flows)
