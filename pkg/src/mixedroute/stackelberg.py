"""Mixed fleet/selfish equilibrium by alternating UE and fleet-optimum solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import CostModel
from .network import Network, ODPair, RouteProbabilityMatrix, RouteSet, route_demand
from .so import SoConfig, SoObjective, SoResult, solve_so
from .ue import UeConfig, UeResult, solve_ue_msa

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EquilibriumConfig:
    max_outer_iterations: int = 50
    tolerance: float = 1e-4  # relative L1 change of (x_c, x_nc)
    damping: float | None = None  # None: switch to 0.5 when oscillation is detected
    ue: UeConfig = UeConfig()
    so: SoConfig = SoConfig()

    def __post_init__(self):
        if self.tolerance <= 0 or self.max_outer_iterations < 1:
            raise ValueError("tolerance must be positive and max_outer_iterations >= 1")
        if self.damping is not None and not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class ClassMetrics:
    """Per-vehicle averages; None when the class has no demand."""

    cav_time: float | None
    noncav_time: float | None
    cav_energy: float | None
    noncav_energy: float | None


@dataclass
class EquilibriumResult:
    gamma: float
    x_c: np.ndarray
    x_nc: np.ndarray
    P_c: RouteProbabilityMatrix
    converged: bool
    outer_trace: list[float] = field(default_factory=list)
    metrics: ClassMetrics | None = None
    ue: UeResult | None = None
    so: SoResult | None = None
    damping_used: float = 1.0

    @property
    def x(self) -> np.ndarray:
        return self.x_c + self.x_nc

    @property
    def outer_iterations(self) -> int:
        return len(self.outer_trace)


def split_demand(ods: Sequence[ODPair], gamma: float):
    """Uniform per-O-D split into fleet (gamma) and selfish (1 - gamma) demand."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("penetration rate must lie in [0, 1]")
    cav = [ODPair(od.origin, od.destination, gamma * od.demand) for od in ods]
    noncav = [ODPair(od.origin, od.destination, od.demand - c.demand) for od, c in zip(ods, cav)]
    return cav, noncav


def per_class_metrics(x_c: np.ndarray, x_nc: np.ndarray, ods_c: Sequence[ODPair],
                      ods_nc: Sequence[ODPair], costs: CostModel) -> ClassMetrics:
    x = x_c + x_nc
    t = costs.travel_time(x)
    e = costs.cv_energy(x)

    def avg(vals, flows, demand):
        if demand <= 0:
            return None
        with np.errstate(invalid="ignore"):
            return float(np.sum(np.where(flows > 0, vals * flows, 0.0)) / demand)

    gc = sum(od.demand for od in ods_c)
    gn = sum(od.demand for od in ods_nc)
    return ClassMetrics(avg(t, x_c, gc), avg(t, x_nc, gn), avg(e, x_c, gc), avg(e, x_nc, gn))


def _oscillating(trace: list[float]) -> bool:
    if len(trace) < 6:
        return False
    diffs = np.diff(trace[-6:])
    signs = np.sign(diffs[diffs != 0])
    return int(np.sum(signs[1:] != signs[:-1])) >= 2


def solve_mixed(net: Network, rs: RouteSet, ods: Sequence[ODPair], gamma: float,
                obj: SoObjective, costs: CostModel, cfg: EquilibriumConfig = EquilibriumConfig(),
                ods_split: tuple[Sequence[ODPair], Sequence[ODPair]] | None = None) -> EquilibriumResult:
    """Fixed point of (selfish UE given fleet flow) and (fleet optimum given selfish flow).

    ``ods_split`` accepts an explicit (fleet, selfish) demand pair instead of the
    uniform split by ``gamma``.
    """
    ods_c, ods_nc = ods_split if ods_split is not None else split_demand(ods, gamma)
    g_route = route_demand(rs, ods_c)
    x_c = np.zeros(net.n_links)
    x_nc = np.zeros(net.n_links)
    p = None
    damping = cfg.damping if cfg.damping is not None else 1.0
    trace: list[float] = []
    converged = False
    ue_res = so_res = None
    for outer in range(cfg.max_outer_iterations):
        ue_res = solve_ue_msa(net, ods_nc, x_c, costs, cfg.ue, warm_start=ue_res)
        new_nc = ue_res.x_nc
        if so_res is None or not np.array_equal(new_nc, x_nc):
            start = None if p is None else RouteProbabilityMatrix.from_flat(rs, p)
            so_res = solve_so(net, rs, ods_c, new_nc, obj, costs, cfg.so, start=start)
        # else: same background flow, same fleet subproblem
        p_new = so_res.P_c.flat()
        if damping < 1.0 and p is not None:
            p_new = p + damping * (p_new - p)
        new_c = rs.incidence @ (g_route * p_new) if damping < 1.0 else so_res.x_c
        prev = np.concatenate([x_c, x_nc])
        cur = np.concatenate([new_c, new_nc])
        change = float(np.abs(cur - prev).sum() / max(np.abs(cur).sum(), 1e-300))
        trace.append(change)
        x_c, x_nc, p = new_c, new_nc, p_new
        if change <= cfg.tolerance:
            converged = True
            break
        if cfg.damping is None and damping == 1.0 and _oscillating(trace):
            log.info("outer iteration oscillates at gamma=%.3f; damping 0.5", gamma)
            damping = 0.5
    if not converged:
        log.warning("mixed equilibrium not converged at gamma=%.3f", gamma)
    metrics = per_class_metrics(x_c, x_nc, ods_c, ods_nc, costs)
    return EquilibriumResult(gamma, x_c, x_nc, RouteProbabilityMatrix.from_flat(rs, p),
                             converged, trace, metrics, ue_res, so_res, damping)
