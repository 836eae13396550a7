"""Link travel-time and energy cost functions.

Every link's travel time is held as a polynomial in its flow, which covers
both the BPR curve and custom per-link functions, and gives closed-form
derivatives and antiderivatives for the solvers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .network import Link, Network

BPR_BETA = (1.0, 0.0, 0.0, 0.0, 0.15)
# Fuel-rate coefficients: theta_0..theta_4 on speed powers (mph), theta_5 on grade (%).
CV_THETA = (6.80, -1.4e-1, 3.92e-3, -5.20e-5, 2.57e-7, 1.37e-1)
GAS_PRICE = 2.75  # $/gal
GRAMS_PER_GALLON = 2835.0
ELECTRICITY_PRICE = 0.13  # $/kWh


@dataclass(frozen=True)
class BprParams:
    beta: tuple[float, ...] = BPR_BETA

    def __post_init__(self):
        if not self.beta or self.beta[0] <= 0 or any(b < 0 for b in self.beta):
            raise ValueError("BPR coefficients need beta_1 > 0 and all beta_i >= 0")


@dataclass(frozen=True)
class CvEnergyParams:
    theta: tuple[float, ...] = CV_THETA
    gas_price: float = GAS_PRICE
    grams_per_gallon: float = GRAMS_PER_GALLON

    def __post_init__(self):
        if len(self.theta) != 6:
            raise ValueError("theta needs six coefficients")
        if self.grams_per_gallon <= 0:
            raise ValueError("grams_per_gallon must be positive")
        if self.gas_price < 0:
            raise ValueError("gas price must be nonnegative")


class DriveCycle(str, Enum):
    NYC = "NYC"
    UDDS = "UDDS"
    HWFET = "HWFET"


class VehicleClass(str, Enum):
    PHEV = "PHEV"
    HEV = "HEV"
    EV = "EV"
    CV = "CV"


class Mode(str, Enum):
    CD = "CD"  # battery
    CS = "CS"  # engine


# mi/kWh for CD, mi/gal for CS
DEFAULT_MU = {
    (VehicleClass.PHEV, Mode.CD): {DriveCycle.HWFET: 5.7, DriveCycle.UDDS: 6.2, DriveCycle.NYC: 4.2},
    (VehicleClass.PHEV, Mode.CS): {DriveCycle.HWFET: 58.6, DriveCycle.UDDS: 69.4, DriveCycle.NYC: 45.7},
    (VehicleClass.HEV, Mode.CS): {DriveCycle.HWFET: 59.7, DriveCycle.UDDS: 69.5, DriveCycle.NYC: 48.0},
    (VehicleClass.EV, Mode.CD): {DriveCycle.HWFET: 5.2, DriveCycle.UDDS: 4.8, DriveCycle.NYC: 3.1},
    (VehicleClass.CV, Mode.CS): {DriveCycle.HWFET: 52.8, DriveCycle.UDDS: 32.1, DriveCycle.NYC: 16.4},
}


@dataclass(frozen=True)
class DriveCycleBands:
    """Speed thresholds (mph); a boundary speed belongs to the faster cycle."""

    nyc_upper: float = 20.0
    udds_upper: float = 40.0

    def __post_init__(self):
        if not 0 < self.nyc_upper < self.udds_upper:
            raise ValueError("drive-cycle thresholds must satisfy 0 < nyc < udds")


@dataclass(frozen=True)
class CdCsTable:
    mu: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_MU.items()})
    electricity_price: float = ELECTRICITY_PRICE
    bands: DriveCycleBands = DriveCycleBands()

    def __post_init__(self):
        for key, row in self.mu.items():
            if set(row) != set(DriveCycle):
                raise ValueError(f"mu table row {key} must cover every drive cycle")
            if any(v <= 0 for v in row.values()):
                raise ValueError(f"mu table row {key} has a nonpositive entry")


@dataclass(frozen=True)
class CostParams:
    """Everything the cost functions need, overridable from a config file."""

    bpr: BprParams = BprParams()
    cv: CvEnergyParams = CvEnergyParams()
    cdcs: CdCsTable = CdCsTable()


# ---------------------------------------------------------------------------
# scalar link functions


def time_poly(link: Link, params: BprParams = BprParams()) -> np.ndarray:
    """Coefficients of the link travel time as a polynomial in flow."""
    if link.cost_poly is not None:
        return np.asarray(link.cost_poly, dtype=float)
    j = np.arange(len(params.beta))
    return link.free_flow_time * np.asarray(params.beta) / link.capacity ** j


def bpr_travel_time(x: float, link: Link, params: BprParams = BprParams()) -> float:
    if x < 0:
        raise ValueError("negative flow")
    return float(np.polynomial.polynomial.polyval(x, time_poly(link, params)))


def marginal_travel_time(x: float, link: Link, params: BprParams = BprParams()) -> float:
    """d/dx [x t(x)] = t(x) + x t'(x)."""
    if x < 0:
        raise ValueError("negative flow")
    c = time_poly(link, params)
    return float(np.polynomial.polynomial.polyval(x, c * np.arange(1, len(c) + 1)))


def link_speed(x: float, link: Link, params: BprParams = BprParams()) -> float | None:
    """Average speed in mph, or None for a zero-length link (no energy contribution)."""
    if link.length == 0:
        return None
    t = bpr_travel_time(x, link, params)
    return math.inf if t == 0 else link.length / (t / 60.0)


def cv_energy_rate(v: float, grade: float = 0.0, params: CvEnergyParams = CvEnergyParams()) -> float:
    """Fuel use in g/mi at average speed ``v`` mph and road grade in percent."""
    if v < 0:
        raise ValueError("negative speed")
    th = params.theta
    return math.exp(sum(th[i] * v ** i for i in range(5)) + th[5] * grade)


def cv_link_energy_dollars(x: float, link: Link, params: CostParams = CostParams()) -> float:
    """Fuel cost of one vehicle traversing ``link`` at flow ``x``."""
    if x < 0:
        raise ValueError("negative flow")
    v = link_speed(x, link, params.bpr)
    if v is None:
        return 0.0
    e = cv_energy_rate(v, link.grade, params.cv)
    return params.cv.gas_price * link.length * e / params.cv.grams_per_gallon


def drive_cycle_for_speed(v: float, bands: DriveCycleBands = DriveCycleBands()) -> DriveCycle:
    if v < 0:
        raise ValueError("negative speed")
    if v < bands.nyc_upper:
        return DriveCycle.NYC
    if v < bands.udds_upper:
        return DriveCycle.UDDS
    return DriveCycle.HWFET


def mu_lookup(vclass, mode, cycle, table: CdCsTable = CdCsTable()) -> float:
    key = (VehicleClass(vclass), Mode(mode))
    if key not in table.mu:
        raise KeyError(f"{key[0].value} has no {key[1].value} mode")
    return table.mu[key][DriveCycle(cycle)]


# ---------------------------------------------------------------------------
# vectorized model used by the solvers


def _polyval_rows(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Horner over per-row coefficient matrix
    out = np.zeros_like(x, dtype=float)
    for j in range(coef.shape[1] - 1, -1, -1):
        out = out * x + coef[:, j]
    return out


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class CostModel:
    """Per-link cost functions for one network, evaluated on flow vectors."""

    def __init__(self, net: Network, params: CostParams = CostParams(), *, coef: np.ndarray | None = None):
        self.net = net
        self.params = params
        if coef is None:
            rows = [time_poly(lk, params.bpr) for lk in net.links]
            width = max(len(r) for r in rows)
            coef = np.zeros((len(rows), width))
            for i, r in enumerate(rows):
                coef[i, :len(r)] = r
        self.coef = coef
        self.dcoef = coef[:, 1:] * np.arange(1, coef.shape[1])
        if self.dcoef.shape[1] == 0:
            self.dcoef = np.zeros((coef.shape[0], 1))
        self.icoef = np.hstack([np.zeros((coef.shape[0], 1)), coef / np.arange(1, coef.shape[1] + 1)])
        self.length = np.array([lk.length for lk in net.links])
        self.grade = np.array([lk.grade for lk in net.links])

    def with_params(self, params: CostParams) -> CostModel:
        return CostModel(self.net, params)

    def marginal_model(self) -> CostModel:
        """Cost model whose link times are the marginal costs t + x t'."""
        return CostModel(self.net, self.params, coef=self.coef * np.arange(1, self.coef.shape[1] + 1))

    def scaled(self, factor: float) -> CostModel:
        return CostModel(self.net, self.params, coef=self.coef * factor)

    # time -----------------------------------------------------------------
    def travel_time(self, x: np.ndarray) -> np.ndarray:
        return _polyval_rows(self.coef, np.asarray(x, dtype=float))

    def d_travel_time(self, x: np.ndarray) -> np.ndarray:
        return _polyval_rows(self.dcoef, np.asarray(x, dtype=float))

    def integral(self, x: np.ndarray) -> np.ndarray:
        """Antiderivative of t from 0 to x."""
        return _polyval_rows(self.icoef, np.asarray(x, dtype=float))

    def marginal_time(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.travel_time(x) + x * self.d_travel_time(x)

    # speed & energy ---------------------------------------------------------
    def speed(self, x: np.ndarray) -> np.ndarray:
        """mph; NaN on zero-length links, inf where travel time is zero."""
        t = self.travel_time(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(t > 0, 60.0 * self.length / np.where(t > 0, t, 1.0), np.inf)
        return np.where(self.length > 0, v, np.nan)

    def _log_rate(self, v):
        th = self.params.cv.theta
        return th[0] + v * (th[1] + v * (th[2] + v * (th[3] + v * th[4])))

    def _dlog_rate(self, v):
        th = self.params.cv.theta
        return th[1] + v * (2 * th[2] + v * (3 * th[3] + v * 4 * th[4]))

    def cv_energy(self, x: np.ndarray) -> np.ndarray:
        """$ per vehicle on each link; zero on zero-length links."""
        v = self.speed(x)
        pos = self.length > 0
        th5 = self.params.cv.theta[5]
        k = self.params.cv.gas_price * self.length / self.params.cv.grams_per_gallon
        with np.errstate(over="ignore", invalid="ignore"):
            vv = np.where(pos, v, 0.0)
            rate = np.where(np.isfinite(vv), np.exp(self._log_rate(np.where(np.isfinite(vv), vv, 0.0)) + th5 * self.grade), np.inf)
            return np.where(pos, k * rate, 0.0)

    def d_cv_energy(self, x: np.ndarray) -> np.ndarray:
        """Derivative of :meth:`cv_energy` with respect to total link flow."""
        x = np.asarray(x, dtype=float)
        phi = self.cv_energy(x)
        v = self.speed(x)
        t = self.travel_time(x)
        dt = self.d_travel_time(x)
        pos = (self.length > 0) & np.isfinite(v) & np.isfinite(phi)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            vs = np.where(pos, v, 0.0)
            dv = np.where(pos, -vs * dt / np.where(pos, t, 1.0), 0.0)
            out = np.where(pos, phi * self._dlog_rate(vs) * dv, 0.0)
        return np.where((self.length > 0) & ~np.isfinite(phi), np.nan, out)

    # CD/CS ------------------------------------------------------------------
    def mu_exact(self, vclass, mode, x: np.ndarray) -> np.ndarray:
        """Table value per link for the drive cycle implied by the link speed."""
        table = self.params.cdcs
        row = table.mu[(VehicleClass(vclass), Mode(mode))]
        v = np.nan_to_num(self.speed(x), nan=0.0, posinf=1e9)
        b = table.bands
        return np.where(v < b.nyc_upper, row[DriveCycle.NYC],
                        np.where(v < b.udds_upper, row[DriveCycle.UDDS], row[DriveCycle.HWFET]))

    def mu_smooth(self, vclass, mode, x: np.ndarray, width: float):
        """Logistic blend of the table across band edges, plus d(mu)/dx."""
        table = self.params.cdcs
        row = table.mu[(VehicleClass(vclass), Mode(mode))]
        b = table.bands
        if width <= 0:
            return self.mu_exact(vclass, mode, x), np.zeros(len(self.length))
        s = width / 4.0
        x = np.asarray(x, dtype=float)
        v = np.nan_to_num(self.speed(x), nan=0.0, posinf=1e9)
        z1, z2 = (v - b.nyc_upper) / s, (v - b.udds_upper) / s
        s1, s2 = _logistic(z1), _logistic(z2)
        j1 = row[DriveCycle.UDDS] - row[DriveCycle.NYC]
        j2 = row[DriveCycle.HWFET] - row[DriveCycle.UDDS]
        mu = row[DriveCycle.NYC] + j1 * s1 + j2 * s2
        dmu_dv = (j1 * s1 * (1 - s1) + j2 * s2 * (1 - s2)) / s
        t = self.travel_time(x)
        dt = self.d_travel_time(x)
        ok = (self.length > 0) & (t > 0)
        dv = np.where(ok, -v * dt / np.where(ok, t, 1.0), 0.0)
        return mu, dmu_dv * dv


# ---------------------------------------------------------------------------
# config files


def load_params(path: str | Path | None) -> CostParams:
    """Read parameter overrides from a JSON key-value file.

    Recognised keys: ``beta``, ``theta``, ``gas_price``, ``grams_per_gallon``,
    ``electricity_price``, ``drive_cycle_thresholds`` ([nyc_upper, udds_upper])
    and ``mu`` ({class: {mode: {cycle: value}}}).  Unknown keys are an error.
    """
    params = CostParams()
    if path is None:
        return params
    data = json.loads(Path(path).read_text())
    known = {"beta", "theta", "gas_price", "grams_per_gallon", "electricity_price",
             "drive_cycle_thresholds", "mu"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    bpr = BprParams(tuple(data["beta"])) if "beta" in data else params.bpr
    cv = replace(params.cv,
                 theta=tuple(data.get("theta", params.cv.theta)),
                 gas_price=float(data.get("gas_price", params.cv.gas_price)),
                 grams_per_gallon=float(data.get("grams_per_gallon", params.cv.grams_per_gallon)))
    mu = {k: dict(v) for k, v in params.cdcs.mu.items()}
    for cls, modes in data.get("mu", {}).items():
        for mode, cycles in modes.items():
            key = (VehicleClass(cls), Mode(mode))
            row = mu.setdefault(key, {})
            for cycle, value in cycles.items():
                row[DriveCycle(cycle)] = float(value)
    bands = params.cdcs.bands
    if "drive_cycle_thresholds" in data:
        lo, hi = data["drive_cycle_thresholds"]
        bands = DriveCycleBands(float(lo), float(hi))
    cdcs = CdCsTable(mu, float(data.get("electricity_price", params.cdcs.electricity_price)), bands)
    return CostParams(bpr, cv, cdcs)
