"""Fleet-optimal (system-centric) routing of the controllable vehicles.

The decision variable is the route-choice matrix P_c over a frozen route set.
Optimisation is projected gradient with Armijo backtracking over the product
of per-O-D simplexes, carried out in route-flow coordinates f = g * p.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import CostModel, Mode, VehicleClass
from .network import Network, NetworkError, ODPair, RouteProbabilityMatrix, RouteSet, route_demand
from .ue import UeConfig, solve_ue_msa

log = logging.getLogger(__name__)

OBJECTIVES = ("time", "energy_cv", "energy_phev")


@dataclass(frozen=True)
class SoObjective:
    kind: str = "time"
    vehicle_class: VehicleClass = VehicleClass.PHEV
    e0: float | tuple[float, ...] = 5.0  # kWh at route start, scalar or per O-D

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.kind!r}; expected one of {OBJECTIVES}")
        e0 = self.e0 if isinstance(self.e0, tuple) else (self.e0,)
        if any(v < 0 for v in e0):
            raise ValueError("initial battery energy must be nonnegative")


@dataclass(frozen=True)
class SoConfig:
    max_iterations: int = 5000
    tolerance: float = 1e-7  # relative spread of marginal costs over used routes
    armijo: float = 1e-4
    backtrack: float = 0.5
    n_starts: int | None = None  # None: 1 for smooth objectives, 5 for energy_phev
    seed: int = 0
    smoothing_width: float = 2.0  # mph, logistic blend of the drive-cycle table
    stable_iterations: int = 5
    fd_check: bool = False

    def __post_init__(self):
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance must be positive and max_iterations >= 1")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ValueError("line-search parameters must lie in (0, 1)")


@dataclass
class SoResult:
    P_c: RouteProbabilityMatrix
    x_c: np.ndarray
    Y: np.ndarray | None
    objective_value: float
    kkt_residual: float
    converged: bool
    local_optimum: bool = False
    iterations: int = 0
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "projected_gradient_norm", "step_size"])
            for it, obj, pg, step in self.trace:
                w.writerow([it, repr(obj), repr(pg), repr(step)])


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum(p) = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_flows(f, blocks, g_od):
    out = np.empty_like(f)
    for s, g in zip(blocks, g_od):
        if s.stop == s.start:
            continue
        out[s] = g * project_simplex(f[s] / g) if g > 0 else 0.0
    return out


def _expand_e0(obj: SoObjective, rs: RouteSet) -> np.ndarray:
    if isinstance(obj.e0, tuple):
        if len(obj.e0) != rs.n_ods:
            raise NetworkError("per-O-D battery energy has the wrong length")
        return np.asarray(obj.e0, dtype=float)[rs.route_od]
    return np.full(rs.n_routes, float(obj.e0))


def solve_cd_cs_split(rs: RouteSet, x: np.ndarray, e0, costs: CostModel,
                      vclass: VehicleClass = VehicleClass.PHEV) -> np.ndarray:
    """Battery-use fractions Y (links x routes) minimising each route's energy bill.

    Per route this is a fractional knapsack: links are ranked by dollars saved
    per kWh of battery and driven electrically until the battery budget runs out.
    """
    vclass = VehicleClass(vclass)
    A = rs.incidence
    Y = np.zeros(A.shape)
    if vclass in (VehicleClass.HEV, VehicleClass.CV):
        return Y
    if vclass is VehicleClass.EV:
        return A.copy()
    e0 = np.broadcast_to(np.asarray(e0, dtype=float), (rs.n_routes,))
    prices = costs.params
    mu_cd = costs.mu_exact(vclass, Mode.CD, x)
    mu_cs = costs.mu_exact(vclass, Mode.CS, x)
    kwh = costs.length / mu_cd
    saving = prices.cv.gas_price * costs.length / mu_cs - prices.cdcs.electricity_price * kwh
    for r in range(rs.n_routes):
        links = [a for a in np.nonzero(A[:, r])[0] if costs.length[a] > 0 and saving[a] > 0]
        links.sort(key=lambda a: (-saving[a] / kwh[a], a))
        budget = e0[r]
        for a in links:
            if budget <= 0:
                break
            y = min(1.0, budget / kwh[a])
            Y[a, r] = y
            budget -= y * kwh[a]
    return Y


class _Problem:
    """Objective and route-flow gradient for one fleet routing instance."""

    def __init__(self, rs: RouteSet, g_route: np.ndarray, x_nc: np.ndarray,
                 obj: SoObjective, costs: CostModel, smoothing_width: float = 2.0):
        self.rs = rs
        self.A = rs.incidence
        self.g_route = g_route
        self.x_nc = np.asarray(x_nc, dtype=float)
        self.obj = obj
        self.costs = costs
        self.width = smoothing_width
        self.Y = None
        if obj.kind == "energy_phev":
            self.vclass = VehicleClass(obj.vehicle_class)
            self.e0 = _expand_e0(obj, rs)

    def link_flows(self, f):
        return self.A @ f

    def solve_y(self, f):
        x = self.link_flows(f) + self.x_nc
        return solve_cd_cs_split(self.rs, x, self.e0, self.costs, self.vclass)

    def _phev_terms(self, x, smooth):
        c = self.costs
        p = c.params
        gas = np.zeros_like(x)
        ele = np.zeros_like(x)
        dgas = np.zeros_like(x)
        dele = np.zeros_like(x)
        pos = c.length > 0
        for mode, price, out, dout in ((Mode.CS, p.cv.gas_price, gas, dgas),
                                       (Mode.CD, p.cdcs.electricity_price, ele, dele)):
            if (self.vclass, mode) not in p.cdcs.mu:
                continue
            if smooth:
                mu, dmu = c.mu_smooth(self.vclass, mode, x, self.width)
            else:
                mu, dmu = c.mu_exact(self.vclass, mode, x), np.zeros_like(x)
            out[pos] = (price * c.length / mu)[pos]
            dout[pos] = (-price * c.length * dmu / mu ** 2)[pos]
        return gas, ele, dgas, dele

    def _phev_y(self):
        if self.vclass is VehicleClass.EV:
            return self.A
        if self.vclass is VehicleClass.PHEV and self.Y is not None:
            return self.Y
        return np.zeros_like(self.A)

    def value(self, f, smooth=False):
        xc = self.link_flows(f)
        x = xc + self.x_nc
        kind = self.obj.kind
        if kind == "time":
            return float(self.costs.travel_time(x) @ xc)
        if kind == "energy_cv":
            phi = self.costs.cv_energy(x)
            with np.errstate(invalid="ignore"):
                return float(np.sum(np.where(xc > 0, phi * xc, 0.0)))
        gas, ele, _, _ = self._phev_terms(x, smooth)
        u = self._phev_y() * self.A @ f  # battery-driven CAV flow per link
        return float(gas @ (xc - u) + ele @ u)

    def route_marginals(self, f):
        """dJ/df_r for every route."""
        xc = self.link_flows(f)
        x = xc + self.x_nc
        kind = self.obj.kind
        if kind == "time":
            link = self.costs.travel_time(x) + xc * self.costs.d_travel_time(x)
            return self.A.T @ link
        if kind == "energy_cv":
            with np.errstate(invalid="ignore"):
                link = self.costs.cv_energy(x) + np.where(xc > 0, xc * self.costs.d_cv_energy(x), 0.0)
            return self.A.T @ link
        gas, ele, dgas, dele = self._phev_terms(x, smooth=True)
        Y = self._phev_y()
        u = Y * self.A @ f
        direct = (self.A * (gas[:, None] * (1 - Y) + ele[:, None] * Y)).sum(axis=0)
        return direct + self.A.T @ (dgas * (xc - u) + dele * u)


def _kkt_residual(f, c, blocks, g_od, used_tol=1e-9):
    worst = 0.0
    for s, g in zip(blocks, g_od):
        if g <= 0 or s.stop - s.start < 2:
            continue
        cs, fs = c[s], f[s]
        used = fs > used_tol * g
        lo = cs.min()
        spread = cs[used].max() - lo
        worst = max(worst, spread / max(abs(lo), 1e-12))
    return worst


def _objective_setup(rs, ods_c, x_nc):
    g_route = route_demand(rs, ods_c)
    g_od = np.array([od.demand for od in ods_c], dtype=float)
    for i, (od, block) in enumerate(zip(ods_c, rs.routes_per_od)):
        if od.demand > 0 and not block:
            raise NetworkError(f"no route for O-D {od.origin}->{od.destination}")
    if np.asarray(x_nc).shape != (rs.incidence.shape[0],):
        raise NetworkError("background flow has the wrong length")
    return g_route, g_od


def so_objective(P: RouteProbabilityMatrix, x_nc: np.ndarray, ods_c: Sequence[ODPair],
                 rs: RouteSet, obj: SoObjective, costs: CostModel, Y: np.ndarray | None = None) -> float:
    """Fleet cost at route split P; for energy_phev, Y defaults to the optimal split."""
    P.validate(rs)
    g_route, _ = _objective_setup(rs, ods_c, x_nc)
    prob = _Problem(rs, g_route, x_nc, obj, costs)
    f = g_route * P.flat()
    if obj.kind == "energy_phev":
        prob.Y = prob.solve_y(f) if Y is None else Y
    return prob.value(f)


def so_gradient(P: RouteProbabilityMatrix, x_nc: np.ndarray, ods_c: Sequence[ODPair],
                rs: RouteSet, obj: SoObjective, costs: CostModel, Y: np.ndarray | None = None,
                smoothing_width: float = 2.0) -> np.ndarray:
    """dJ/dp_ir for every route, flattened in route-set order."""
    g_route, _ = _objective_setup(rs, ods_c, x_nc)
    prob = _Problem(rs, g_route, x_nc, obj, costs, smoothing_width)
    f = g_route * P.flat()
    if obj.kind == "energy_phev":
        prob.Y = prob.solve_y(f) if Y is None else Y
    return g_route * prob.route_marginals(f)


def gradient_check(P: RouteProbabilityMatrix, x_nc: np.ndarray, ods_c: Sequence[ODPair],
                   rs: RouteSet, obj: SoObjective, costs: CostModel, *, h: float = 1e-6,
                   n_directions: int = 3, seed: int = 0) -> float:
    """Worst relative error of so_gradient against central differences.

    Directions are random, zero-sum within each O-D block, so the perturbed
    point stays on the simplex product. For energy_phev the CD/CS split is
    frozen at P and the smoothed drive-cycle table is differentiated.
    """
    rng = np.random.default_rng(seed)
    g_route, _ = _objective_setup(rs, ods_c, x_nc)
    prob = _Problem(rs, g_route, x_nc, obj, costs)
    p = P.flat()
    phev = obj.kind == "energy_phev"
    if phev:
        prob.Y = prob.solve_y(g_route * p)
    grad = g_route * prob.route_marginals(g_route * p)
    worst = 0.0
    for _ in range(n_directions):
        d = np.zeros_like(p)
        for s in rs.blocks():
            if s.stop - s.start > 1:
                v = rng.standard_normal(s.stop - s.start)
                d[s] = v - v.mean()
        norm = np.linalg.norm(d)
        if norm == 0:
            continue
        d /= norm
        hi = prob.value(g_route * (p + h * d), smooth=phev)
        lo = prob.value(g_route * (p - h * d), smooth=phev)
        fd = (hi - lo) / (2 * h)
        an = float(grad @ d)
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-300))
    return worst


def _finite(c):
    bad = ~np.isfinite(c)
    if bad.any():
        big = np.max(np.abs(c[~bad])) if (~bad).any() else 1.0
        c = np.where(bad, 1e6 * max(big, 1.0), c)
    return c


def _descend(prob: _Problem, f0, blocks, g_od, cfg: SoConfig):
    """Projected gradient from f0; returns (f, value, kkt, converged, iterations, trace)."""
    phev = prob.obj.kind == "energy_phev"
    f = _project_flows(f0, blocks, g_od)
    if phev:
        prob.Y = prob.solve_y(f)
    J = prob.value(f, smooth=phev)
    c = _finite(prob.route_marginals(f))
    scale = max(np.max(np.abs(c)), 1e-300)
    s = 0.1 * max(g_od.max(), 1e-12) / scale
    trace = [(0, prob.value(f) if phev else J, 0.0, 0.0)]
    stable = 0
    kkt = _kkt_residual(f, c, blocks, g_od)
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if kkt <= cfg.tolerance:
            converged = True
            it -= 1
            break
        s_min = s * 1e-16
        while True:
            f_new = _project_flows(f - s * c, blocks, g_od)
            d = f_new - f
            J_new = prob.value(f_new, smooth=phev)
            if np.isfinite(J_new) and J_new <= J + cfg.armijo * float(c @ d):
                break
            s *= cfg.backtrack
            if s < s_min:
                break
        if s < s_min or not np.any(d):
            log.debug("line search stalled at iteration %d", it)
            break
        c_new = _finite(prob.route_marginals(f_new))
        dc = c_new - c
        trace.append((it, J_new, float(np.linalg.norm(d) / s), s))
        curv = float(d @ dc)
        s = float(d @ d) / curv if curv > 0 else 2.0 * s
        f, J, c = f_new, J_new, c_new
        if phev:
            Y_new = prob.solve_y(f)
            dy = np.max(np.abs(Y_new - prob.Y)) if Y_new.size else 0.0
            stable = stable + 1 if (dy <= 1e-9 and np.max(np.abs(d)) <= cfg.tolerance * g_od.max()) else 0
            if dy > 0:
                prob.Y = Y_new
                J = prob.value(f, smooth=True)
                c = _finite(prob.route_marginals(f))
            trace[-1] = (it, prob.value(f), trace[-1][2], trace[-1][3])
            if stable >= cfg.stable_iterations:
                converged = True
                break
        kkt = _kkt_residual(f, c, blocks, g_od)
    else:
        converged = kkt <= cfg.tolerance
    return f, kkt, converged, it, trace


def solve_so(net: Network, rs: RouteSet, ods_c: Sequence[ODPair], x_nc: np.ndarray | None,
             obj: SoObjective, costs: CostModel, cfg: SoConfig = SoConfig(),
             start: RouteProbabilityMatrix | None = None) -> SoResult:
    """Optimal fleet route split given fixed background flow ``x_nc``."""
    x_nc = np.zeros(net.n_links) if x_nc is None else np.asarray(x_nc, dtype=float)
    g_route, g_od = _objective_setup(rs, ods_c, x_nc)
    blocks = rs.blocks()
    phev = obj.kind == "energy_phev"
    n_starts = cfg.n_starts if cfg.n_starts is not None else (5 if phev else 1)
    rng = np.random.default_rng(cfg.seed)
    starts = [start if start is not None else RouteProbabilityMatrix.uniform(rs)]
    for _ in range(n_starts - 1):
        starts.append(RouteProbabilityMatrix([rng.dirichlet(np.ones(len(b))) if b else np.zeros(0)
                                              for b in rs.routes_per_od]))
    if cfg.fd_check:
        err = gradient_check(starts[0], x_nc, ods_c, rs, obj, costs, seed=cfg.seed)
        if err > 1e-5:
            log.warning("gradient check failed: relative error %.3g", err)
    best = None
    for idx, P0 in enumerate(starts):
        prob = _Problem(rs, g_route, x_nc, obj, costs, cfg.smoothing_width)
        f, kkt, converged, iters, trace = _descend(prob, g_route * P0.flat(), blocks, g_od, cfg)
        if phev:
            prob.Y = prob.solve_y(f)
        value = prob.value(f)
        if best is None or value < best[0]:
            best = (value, idx, f, kkt, converged, iters, trace, prob.Y)
    value, _, f, kkt, converged, iters, trace, Y = best
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(g_route > 0, f / np.where(g_route > 0, g_route, 1.0), 0.0)
    rows = []
    for s, b in zip(blocks, rs.routes_per_od):
        row = p[s]
        if b and row.sum() == 0:  # zero-demand O-D: keep a valid simplex row
            row = np.full(len(b), 1.0 / len(b))
        rows.append(row)
    if not converged:
        log.warning("fleet optimum not converged (kkt residual %.3g)", kkt)
    return SoResult(RouteProbabilityMatrix(rows), rs.incidence @ f, Y if phev else None,
                    value, kkt, converged, local_optimum=phev, iterations=iters, trace=trace)


def system_optimum_oracle(net: Network, ods: Sequence[ODPair], costs: CostModel,
                          cfg: UeConfig = UeConfig(max_iterations=20000, tolerance=1e-5)) -> np.ndarray:
    """All-fleet time optimum found as a user equilibrium under marginal link costs."""
    res = solve_ue_msa(net, ods, None, costs.marginal_model(), cfg)
    return res.x_nc
