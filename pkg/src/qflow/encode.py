"""
SAX discretization of hourly count increments and the empirical statistics
the model is fitted against.

Panels are numpy arrays indexed [day, port, time]. Increments drop one time
step, so a 17-point count grid gives 16 increment steps.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError

DEFAULT_SMOOTHING = 1e-6
GRID_START_HOUR = 6
GRID_HOURS = 17


class DegenerateBinWarning(UserWarning):
    pass


@dataclass
class PanelData:
    counts: np.ndarray
    day_labels: list = field(default_factory=list)
    port_labels: list = field(default_factory=list)
    start_hour: int = GRID_START_HOUR

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 3:
            raise DataError(f"panel counts must be [day][port][time], got shape {self.counts.shape}")
        if not self.day_labels:
            self.day_labels = [str(i) for i in range(self.num_days)]
        if not self.port_labels:
            self.port_labels = [f"port{i}" for i in range(self.num_ports)]
        if len(self.day_labels) != self.num_days or len(self.port_labels) != self.num_ports:
            raise DataError("label lengths do not match the panel shape")

    @property
    def num_days(self):
        return self.counts.shape[0]

    @property
    def num_ports(self):
        return self.counts.shape[1]

    @property
    def num_times(self):
        return self.counts.shape[2]

    @property
    def hours(self):
        return [self.start_hour + t for t in range(self.num_times)]


@dataclass
class SaxCodebook:
    """Per (port, time) breakpoints, representative increments and means."""

    n_states: int
    breakpoints: np.ndarray  # (D, T, N-1)
    representatives: np.ndarray  # (D, T, N)
    means: np.ndarray  # (D, T)
    degenerate: np.ndarray = None  # (D, T) bool

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.representatives = np.asarray(self.representatives, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        if self.degenerate is None:
            self.degenerate = np.zeros(self.means.shape, dtype=bool)

    @property
    def num_ports(self):
        return self.means.shape[0]

    @property
    def num_steps(self):
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "breakpoints": self.breakpoints.tolist(),
            "representatives": self.representatives.tolist(),
            "means": self.means.tolist(),
            "degenerate": self.degenerate.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SaxCodebook":
        return cls(d["n_states"], np.array(d["breakpoints"], dtype=float).reshape(
            len(d["means"]), len(d["means"][0]), d["n_states"] - 1),
            d["representatives"], d["means"], np.array(d["degenerate"], dtype=bool))


@dataclass
class TransitionTensor:
    probs: np.ndarray  # (D, T, N, N), rows are "from" states
    counts: np.ndarray  # raw tallies, same shape
    empty_rows: np.ndarray  # (D, T, N) bool

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist(), "counts": self.counts.tolist(),
                "empty_rows": self.empty_rows.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionTensor":
        return cls(np.array(d["probs"], dtype=float), np.array(d["counts"], dtype=np.int64),
                   np.array(d["empty_rows"], dtype=bool))


@dataclass
class CorrelationTable:
    rho: np.ndarray  # (D, D, T)
    defined: np.ndarray  # (D, D, T) bool; False where a variance is zero


def _check_power_of_two(n):
    if n < 2 or n & (n - 1):
        raise ContractError(f"number of states must be a power of 2, got {n}")


def compute_increments(counts) -> np.ndarray:
    """First differences along the last (time) axis."""
    if isinstance(counts, PanelData):
        counts = counts.counts
    counts = np.asarray(counts)
    if counts.shape[-1] < 2:
        raise DataError("need at least two time points to form increments")
    return np.diff(counts, axis=-1)


def equal_frequency_breakpoints(values, n_bins: int) -> tuple:
    """
    Breakpoints splitting `values` into `n_bins` groups of similar size.

    Each cut is placed midway between two consecutive distinct sorted values,
    choosing the gap closest to the ideal equal-count position. When there are
    not enough distinct values, the remaining cuts go above the maximum so the
    extra bins stay empty. Returns (breakpoints, degenerate).
    """
    s = np.sort(np.asarray(values, dtype=float).ravel())
    n = s.size
    if n == 0:
        raise DataError("cannot fit breakpoints on an empty sample")
    gaps = np.flatnonzero(s[1:] > s[:-1]) + 1  # split positions p: s[p-1] < s[p]
    cuts, last = [], 0
    for k in range(1, n_bins):
        target = k * n / n_bins
        avail = gaps[gaps > last]
        # leave room for the cuts still to place
        remaining = n_bins - 1 - k
        if remaining and avail.size > remaining:
            avail = avail[: avail.size - remaining]
        if avail.size == 0:
            break
        p = int(avail[np.argmin(np.abs(avail - target))])
        cuts.append(0.5 * (s[p - 1] + s[p]))
        last = p
    degenerate = len(cuts) < n_bins - 1
    top = s[-1]
    while len(cuts) < n_bins - 1:
        top = max(top, cuts[-1] if cuts else top) + 1.0
        cuts.append(top)
    return np.array(cuts), degenerate


def equal_width_breakpoints(values, n_bins: int) -> tuple:
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = v.min(), v.max()
    if hi == lo:
        return lo + 1.0 + np.arange(n_bins - 1, dtype=float), True
    return np.linspace(lo, hi, n_bins + 1)[1:-1], False


def assign_states(values, breakpoints) -> np.ndarray:
    """Bin index of each value; a value equal to a breakpoint goes to the upper bin."""
    return np.searchsorted(np.asarray(breakpoints), values, side="right")


def symbolize(values, n_symbols: int, alphabet="abcdefghijklmnopqrstuvwxyz") -> list:
    bps, _ = equal_frequency_breakpoints(values, n_symbols)
    return [alphabet[i] for i in assign_states(values, bps)]


def _representatives(values, states, breakpoints, n_states):
    reps = np.full(n_states, np.nan)
    for j in range(n_states):
        members = values[states == j]
        if members.size:
            reps[j] = members.mean()
    empty = np.flatnonzero(np.isnan(reps))
    filled = np.flatnonzero(~np.isnan(reps))
    for j in empty:
        if 0 < j < n_states - 1:
            lo_b, hi_b = breakpoints[j - 1], breakpoints[j]
            reps[j] = 0.5 * (lo_b + hi_b)
        else:
            left = filled[filled < j]
            right = filled[filled > j]
            nb = ([reps[left[-1]]] if left.size else []) + ([reps[right[0]]] if right.size else [])
            reps[j] = np.mean(nb)
    return reps


def fit_codebook(increments, n_states: int, method: str = "quantile",
                 pooling: str = "per-time") -> SaxCodebook:
    """
    Fit SAX breakpoints and representative increments.

    increments: array [day, port, time]. method is "quantile" (equal
    frequency) or "width" (equal width); pooling "per-port" shares one set
    of breakpoints across all time steps of a port.
    """
    _check_power_of_two(n_states)
    inc = np.asarray(increments, dtype=float)
    _, D, T = inc.shape
    if method == "quantile":
        fit = equal_frequency_breakpoints
    elif method == "width":
        fit = equal_width_breakpoints
    else:
        raise ContractError(f"unknown binning method {method!r}")
    if pooling not in ("per-time", "per-port"):
        raise ContractError(f"unknown pooling {pooling!r}")

    bps = np.empty((D, T, n_states - 1))
    reps = np.empty((D, T, n_states))
    degenerate = np.zeros((D, T), dtype=bool)
    for d in range(D):
        if pooling == "per-port":
            pooled = inc[:, d, :].ravel()
            b, deg = fit(pooled, n_states)
            st = assign_states(pooled, b)
            r = _representatives(pooled, st, b, n_states)
            bps[d], reps[d], degenerate[d] = b, r, deg
            continue
        for t in range(T):
            v = inc[:, d, t]
            b, deg = fit(v, n_states)
            bps[d, t] = b
            reps[d, t] = _representatives(v, assign_states(v, b), b, n_states)
            degenerate[d, t] = deg
    if degenerate.any():
        bad = [tuple(x) for x in np.argwhere(degenerate)[:5]]
        warnings.warn(f"fewer distinct values than states at (port, time) {bad}",
                      DegenerateBinWarning, stacklevel=2)
    means = inc.mean(axis=0)
    return SaxCodebook(n_states, bps, reps, means, degenerate)


def discretize(increments, codebook: SaxCodebook) -> np.ndarray:
    inc = np.asarray(increments, dtype=float)
    _, D, T = inc.shape
    if (D, T) != (codebook.num_ports, codebook.num_steps):
        raise ContractError("codebook shape does not match the increment panel")
    out = np.empty(inc.shape, dtype=np.int64)
    for d in range(D):
        for t in range(T):
            out[:, d, t] = assign_states(inc[:, d, t], codebook.breakpoints[d, t])
    return out


def build_transitions(states, n_states: int, smoothing: float = DEFAULT_SMOOTHING) -> TransitionTensor:
    """
    Tally transitions from each day's time-0 state to its state at time t.

    Index t = 0 holds the trivial self-transition. Rows without any
    observation are set to uniform and reported in `empty_rows`.
    """
    states = np.asarray(states)
    if states.shape[0] < 1:
        raise DataError("need at least one day of states")
    _, D, T = states.shape
    counts = np.zeros((D, T, n_states, n_states), dtype=np.int64)
    for d in range(D):
        start = states[:, d, 0]
        for t in range(T):
            np.add.at(counts[d, t], (start, states[:, d, t]), 1)
    smoothed = counts + smoothing
    totals = counts.sum(axis=-1)
    empty = totals == 0
    norm = smoothed.sum(axis=-1, keepdims=True)
    probs = np.divide(smoothed, norm, out=np.full(smoothed.shape, 1.0 / n_states), where=norm > 0)
    probs[empty] = 1.0 / n_states
    return TransitionTensor(probs, counts, empty)


def pearson(x, y, mean_x=None, mean_y=None):
    """Pearson correlation about the given means; (0.0, False) when undefined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - (x.mean() if mean_x is None else mean_x)
    dy = y - (y.mean() if mean_y is None else mean_y)
    sxx, syy = dx @ dx, dy @ dy
    if sxx <= 0 or syy <= 0:
        return 0.0, False
    r = (dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0)), True


def empirical_correlations(increments, codebook: SaxCodebook) -> CorrelationTable:
    inc = np.asarray(increments, dtype=float)
    n_days, D, T = inc.shape
    if n_days < 2:
        raise DataError("correlations need at least two days")
    rho = np.zeros((D, D, T))
    defined = np.zeros((D, D, T), dtype=bool)
    for t in range(T):
        for d in range(D):
            rho[d, d, t], defined[d, d, t] = 1.0, True
            for d2 in range(d + 1, D):
                r, ok = pearson(inc[:, d, t], inc[:, d2, t],
                                codebook.means[d, t], codebook.means[d2, t])
                rho[d, d2, t] = rho[d2, d, t] = r
                defined[d, d2, t] = defined[d2, d, t] = ok
    return CorrelationTable(rho, defined)


def initial_state_distribution(states, n_states: int) -> np.ndarray:
    """Empirical law of the joint time-0 state, flat over N**D (port 0 most significant)."""
    states = np.asarray(states)
    n_days, D, _ = states.shape
    if n_days < 1:
        raise DataError("need at least one day of states")
    idx = np.ravel_multi_index(tuple(states[:, d, 0] for d in range(D)), (n_states,) * D)
    return np.bincount(idx, minlength=n_states ** D) / n_days
