"""
Counterfactual interventions and opportunity-loss estimation.

Count paths here use virtual-demand semantics: a path below zero means the
port was empty and that many rentals could not be served.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .generate import Ensemble, generate_ensemble
from .model import TrainedModel

_EPS = 1e-9


# -- opportunity losses ------------------------------------------------------

@dataclass
class OppLossInput:
    """
    One port-day. `boundary` holds observed counts at `times` (hour marks);
    `arrivals[k]` lists arrival timestamps inside interval k; `demand_rate[k]`
    is the imputed rental rate (per hour) while the port is empty in interval k.
    """

    boundary: np.ndarray
    arrivals: list
    demand_rate: np.ndarray
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.boundary = np.asarray(self.boundary, dtype=float)
        H = self.boundary.size - 1
        if self.times is None:
            self.times = np.arange(H + 1, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.demand_rate = np.broadcast_to(np.asarray(self.demand_rate, dtype=float), (H,)).copy()
        if len(self.arrivals) != H or self.times.size != H + 1:
            raise DataError("arrivals and times must match the number of intervals")
        if np.any(self.boundary < 0):
            raise DataError("boundary counts must be non-negative")
        for k, arr in enumerate(self.arrivals):
            t1, t2 = self.times[k], self.times[k + 1]
            if any(not t1 <= a <= t2 for a in arr):
                raise DataError(f"interval {k}: arrival outside [{t1}, {t2}]")

    @classmethod
    def from_hourly(cls, counts, demand_rate, times=None) -> "OppLossInput":
        """Net-flow reading of hourly counts: increases are arrivals spread evenly."""
        counts = np.asarray(counts, dtype=float)
        H = counts.size - 1
        times = np.arange(H + 1, dtype=float) if times is None else np.asarray(times, dtype=float)
        arrivals = []
        for k in range(H):
            n = int(max(counts[k + 1] - counts[k], 0))
            t1, t2 = times[k], times[k + 1]
            arrivals.append([t1 + (i + 1) * (t2 - t1) / (n + 1) for i in range(n)])
        return cls(counts, arrivals, demand_rate, times)


@dataclass
class OppLossResult:
    realized_rentals: list
    loss_times: list
    losses_per_interval: np.ndarray
    adjusted_path: np.ndarray  # at boundary times, may dip below zero
    trajectory: list = field(default_factory=list)  # (time, observed-model count, adjusted count)

    @property
    def total_losses(self) -> int:
        return int(self.losses_per_interval.sum())

    @property
    def virtual_rentals(self) -> list:
        return sorted(self.realized_rentals + self.loss_times)


def estimate_opportunity_losses(inp: OppLossInput) -> OppLossResult:
    """
    Replay each interval with realized rentals evenly spaced between its
    arrivals; a rental that finds the port empty waits for the next arrival.
    While the port is empty, virtual rentals accrue at the demand rate and
    every whole unit of accrued demand is an opportunity loss.
    """
    b, times = inp.boundary, inp.times
    H = b.size - 1
    realized, loss_times = [], []
    losses = np.zeros(H, dtype=np.int64)
    adjusted = np.empty(H + 1)
    adjusted[0] = b[0]
    demand = 0.0  # accrued imputed demand over the day
    lost = 0
    traj = [(times[0], b[0], b[0])]
    for k in range(H):
        t1, t2 = times[k], times[k + 1]
        arr = sorted(inp.arrivals[k])
        r = b[k] + len(arr) - b[k + 1]
        if r < 0 or not float(r).is_integer():
            raise DataError(f"interval {k} [{t1}, {t2}]: boundary counts {b[k]} -> {b[k + 1]} "
                            f"are inconsistent with {len(arr)} arrival(s)")
        r = int(r)
        rents = [t1 + (i + 1) * (t2 - t1) / (r + 1) for i in range(r)]
        events = sorted([(a, 0) for a in arr] + [(x, 1) for x in rents])  # arrivals first on ties
        stock, waiting = int(b[k]), 0
        empty_since = t1 if stock == 0 else None
        spans = []
        for when, kind in events:
            if kind == 0:
                stock += 1
                if waiting:
                    waiting -= 1
                    stock -= 1
                    realized.append(when)
                    traj.append((when, stock, stock - lost))
                    continue
                if empty_since is not None:
                    spans.append((empty_since, when))
                    empty_since = None
            else:
                if stock == 0:
                    waiting += 1
                    continue
                stock -= 1
                realized.append(when)
                if stock == 0:
                    empty_since = when
            traj.append((when, stock, stock - lost))
        if empty_since is not None:
            spans.append((empty_since, t2))
        if waiting or stock != b[k + 1]:
            raise DataError(f"interval {k}: replay ended at {stock}, observed {b[k + 1]}")
        rate = inp.demand_rate[k]
        for u, v in spans:
            if rate <= 0 or v <= u:
                continue
            before = demand
            demand += rate * (v - u)
            for n in range(math.floor(before + _EPS) + 1, math.floor(demand + _EPS) + 1):
                when = u + (n - before) / rate
                loss_times.append(min(when, v))
                losses[k] += 1
                lost += 1
                traj.append((min(when, v), 0, -lost))
        adjusted[k + 1] = b[k + 1] - lost
        traj.append((t2, b[k + 1], adjusted[k + 1]))
    traj.sort(key=lambda e: e[0])
    return OppLossResult(sorted(realized), sorted(loss_times), losses, adjusted, traj)


def default_demand_rates(day_counts) -> np.ndarray:
    """
    Mean hourly rentals per interval over days whose stock stays positive at
    both ends of that interval; rentals are read as net decreases.
    Input is (days, H + 1); returns (H,).
    """
    c = np.asarray(day_counts, dtype=float)
    if c.ndim == 1:
        c = c[None]
    rentals = np.maximum(c[:, :-1] - c[:, 1:], 0.0)
    ok = (c[:, :-1] > 0) & (c[:, 1:] > 0)
    n = ok.sum(axis=0)
    tot = np.where(ok, rentals, 0.0).sum(axis=0)
    return np.divide(tot, n, out=np.zeros(c.shape[1] - 1), where=n > 0)


def adjust_panel(counts, results: dict) -> np.ndarray:
    """
    Replace every (day, port) series with its loss-adjusted path.
    `results` maps (day index, port index) to an OppLossResult.
    """
    counts = np.asarray(counts, dtype=float)
    days, ports, T = counts.shape
    out = np.empty_like(counts)
    for i in range(days):
        for d in range(ports):
            res = results.get((i, d))
            if res is None:
                raise DataError(f"no opportunity-loss result for day {i}, port {d}")
            if res.adjusted_path.size != T:
                raise DataError(f"adjusted path for day {i}, port {d} has the wrong length")
            out[i, d] = res.adjusted_path
    return out


# -- interventions ------------------------------------------------------------

DEFAULT_ROUTES = {
    "Residential": {"Office": 0.9, "Others": 0.1},
    "Office": {"Residential": 0.9, "Others": 0.1},
    "Others": {"Residential": 0.5, "Office": 0.5},
}


@dataclass
class RoutingConfig:
    routes: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_ROUTES.items()})
    lag: int = 2  # grid hours from rental to arrival

    def destinations(self, source: str) -> dict:
        w = self.routes.get(source, {})
        total = sum(w.values())
        if w and abs(total - 1.0) > 1e-9:
            raise ConfigError(f"routing weights from {source} sum to {total}, not 1")
        if any(v < 0 for v in w.values()):
            raise ConfigError("routing weights must be non-negative")
        return w


@dataclass
class InterventionResult:
    added: float
    target: str
    labels: list
    primary: np.ndarray  # (P,)
    secondary: dict  # destination label -> (P,)
    before_mean: np.ndarray  # (D, S + 1)
    after_mean: np.ndarray

    @property
    def mean_primary(self) -> float:
        return float(self.primary.mean())

    @property
    def mean_secondary(self) -> dict:
        return {k: float(v.mean()) for k, v in self.secondary.items()}

    @property
    def total(self) -> float:
        return self.mean_primary + sum(self.mean_secondary.values())


def shortage(path) -> np.ndarray:
    """Depth of the deepest dip below zero, max(0, -min_t x(t)), along the last axis."""
    return np.maximum(0.0, -np.min(path, axis=-1))


def served_extra(path, supply) -> np.ndarray:
    """Extra rentals enabled by adding `supply(t)` bicycles to a virtual path."""
    return shortage(path) - shortage(np.asarray(path) + supply)


def primary_effect(path, a: float) -> np.ndarray:
    return np.minimum(a, shortage(path))


def resolve_group(name: str, labels) -> int:
    for k, lab in enumerate(labels):
        if lab.lower() == str(name).lower():
            return k
    raise ConfigError(f"unknown group {name!r}; expected one of {list(labels)}")


def effects_on_ensemble(counts, labels, a: float, target: str,
                        routing: Optional[RoutingConfig] = None) -> InterventionResult:
    """Primary and secondary effects of adding `a` bicycles at time 0 to `target`."""
    if a < 0:
        raise ConfigError("the number of added bicycles must be >= 0")
    routing = routing or RoutingConfig()
    labels = list(labels)
    g = resolve_group(target, labels)
    counts = np.asarray(counts, dtype=float)
    P, D, T = counts.shape
    x = counts[:, g, :]
    primary = primary_effect(x, a)
    # cumulative extra rentals at the target by each grid time
    used = np.minimum(a, np.maximum(0.0, -np.minimum.accumulate(x, axis=1)))
    lagged = np.zeros_like(used)
    if routing.lag < T:
        lagged[:, routing.lag:] = used[:, : T - routing.lag]
    after = counts.copy()
    after[:, g, :] += a
    secondary = {}
    for dest, w in routing.destinations(labels[g]).items():
        k = resolve_group(dest, labels)
        if k == g:
            raise ConfigError("routing cannot send bicycles back to the target")
        supply = w * lagged
        secondary[labels[k]] = served_extra(counts[:, k, :], supply)
        after[:, k, :] += supply
    return InterventionResult(float(a), labels[g], labels, primary, secondary,
                              counts.mean(axis=0), after.mean(axis=0))


def simulate_addition(model: TrainedModel, a: float, target: str,
                      routing: Optional[RoutingConfig] = None, n_paths: int = 1000,
                      seed: int = 0, mode: str = "reinjection", x0=None) -> InterventionResult:
    ens: Ensemble = generate_ensemble(model, x0, n_paths, seed, mode)
    return effects_on_ensemble(ens.counts, model.data.port_labels, a, target, routing)


def effect_report(result: InterventionResult, decimals: int = 0) -> list:
    """Rows (source, mean rentals); the total row is the sum of the rounded rows."""
    rows = [(f"Primary Effect in {result.target}", round(result.mean_primary, decimals))]
    for dest, v in result.mean_secondary.items():
        rows.append((f"Secondary Effect in {dest}", round(v, decimals)))
    total = sum(v for _, v in rows)
    rows.append(("Total effect", round(total, decimals) if decimals else total))
    return rows
