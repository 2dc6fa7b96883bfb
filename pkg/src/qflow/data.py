"""
Port-count ingestion, group classification and aggregation, synthetic
commuter data, and model persistence.

Count files are CSV with columns ``port_id,date,hour,count[,rack_count]``;
hours are local 24h clock and only 6..22 are kept.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .encode import (CorrelationTable, GRID_HOURS, GRID_START_HOUR, PanelData, SaxCodebook,
                     TransitionTensor)
from .errors import DataError, ModelFormatError, ParseError
from .model import CostBreakdown, TrainConfig, TrainedModel, TrainingData
from .qsim import AnsatzParams, CircuitLayout

log = logging.getLogger(__name__)

GROUPS = ("Residential", "Office", "Others")
HOURS = tuple(range(GRID_START_HOUR, GRID_START_HOUR + GRID_HOURS))
COUNT_COLUMNS = ("port_id", "date", "hour", "count")
MODEL_FORMAT = "qflow-model"
MODEL_VERSION = "1.0"


@dataclass
class PortRecord:
    port_id: str
    rack_count: Optional[int] = None
    counts: dict = field(default_factory=dict)  # date string -> float array over HOURS, NaN if missing

    def days(self) -> list:
        return sorted(self.counts)

    def series(self, date: str) -> np.ndarray:
        return self.counts[date]

    def complete_days(self) -> list:
        return [d for d in self.days() if not np.isnan(self.counts[d]).any()]


@dataclass
class GroupAssignment:
    groups: dict  # port_id -> group name
    racks: dict = field(default_factory=dict)  # port_id -> rack count

    def ports_in(self, group: str) -> list:
        return sorted(p for p, g in self.groups.items() if g == group)

    def summary(self) -> list:
        """Table rows (group, ports, port share %, racks, rack share %), plus a Total row."""
        n_total = len(self.groups)
        r_total = sum(self.racks.get(p) or 0 for p in self.groups)
        rows = []
        for g in GROUPS:
            ports = self.ports_in(g)
            racks = sum(self.racks.get(p) or 0 for p in ports)
            rows.append((g, len(ports), 100.0 * len(ports) / n_total if n_total else 0.0,
                         racks, 100.0 * racks / r_total if r_total else 0.0))
        rows.append(("Total", n_total, 100.0 if n_total else 0.0, r_total, 100.0 if r_total else 0.0))
        return rows


# -- CSV ---------------------------------------------------------------------

def _parse_int(text, what, path, line):
    try:
        return int(text)
    except (TypeError, ValueError):
        try:
            val = float(text)
        except (TypeError, ValueError):
            raise ParseError(f"{what} {text!r} is not an integer", path, line) from None
        if not val.is_integer():
            raise ParseError(f"{what} {text!r} is not an integer", path, line)
        return int(val)


def load_counts(path, allow_negative: bool = False) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    records: dict = {}
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in COUNT_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {', '.join(missing)}", path, 1)
        has_racks = "rack_count" in header
        for row in reader:
            line = reader.line_num
            port = (row["port_id"] or "").strip()
            if not port:
                raise ParseError("empty port_id", path, line)
            date = (row["date"] or "").strip()
            try:
                dt.date.fromisoformat(date)
            except ValueError:
                raise ParseError(f"bad date {date!r}", path, line) from None
            hour = _parse_int(row["hour"], "hour", path, line)
            count = _parse_int(row["count"], "count", path, line)
            if count < 0 and not allow_negative:
                raise ParseError(f"negative count {count}", path, line)
            key = (port, date, hour)
            if key in seen:
                raise ParseError(f"duplicate entry for port {port} on {date} hour {hour}", path, line)
            seen.add(key)
            rec = records.get(port)
            if rec is None:
                rec = records[port] = PortRecord(port)
            if has_racks and (row.get("rack_count") or "").strip():
                racks = _parse_int(row["rack_count"], "rack_count", path, line)
                if rec.rack_count is None:
                    rec.rack_count = racks
            if hour not in HOURS:
                continue
            series = rec.counts.setdefault(date, np.full(GRID_HOURS, np.nan))
            series[hour - GRID_START_HOUR] = count
    out = [records[p] for p in sorted(records)]
    for rec in out:
        if rec.rack_count is None:
            continue
        over = [d for d, s in rec.counts.items() if np.nanmax(s, initial=-np.inf) > rec.rack_count]
        if over:
            warnings.warn(f"port {rec.port_id}: counts exceed {rec.rack_count} racks on {len(over)} day(s)",
                          stacklevel=2)
    return out


def write_counts(records: Iterable[PortRecord], path) -> None:
    records = list(records)
    with_racks = any(r.rack_count is not None for r in records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNT_COLUMNS + (("rack_count",) if with_racks else ()))
        for rec in records:
            for date in rec.days():
                for k, v in enumerate(rec.counts[date]):
                    if np.isnan(v):
                        continue
                    row = [rec.port_id, date, HOURS[k], int(round(v))]
                    if with_racks:
                        row.append("" if rec.rack_count is None else rec.rack_count)
                    w.writerow(row)


def is_weekday(date: str) -> bool:
    return dt.date.fromisoformat(date).weekday() < 5


def select_days(dates, weekdays_only: bool = False, exclude=()) -> list:
    exclude = set(exclude)
    return sorted(d for d in dates if d not in exclude and (not weekdays_only or is_weekday(d)))


# -- classification ------------------------------------------------------------

def commute_delta(rec: PortRecord, weekday_mask=None, exclude=()) -> float:
    """Mean over weekdays of count(9:00) - count(7:00)."""
    mask = weekday_mask if weekday_mask is not None else {0, 1, 2, 3, 4}
    exclude = set(exclude)
    i7, i9 = 7 - GRID_START_HOUR, 9 - GRID_START_HOUR
    diffs = []
    for date, series in rec.counts.items():
        if date in exclude or dt.date.fromisoformat(date).weekday() not in mask:
            continue
        if np.isnan(series[i7]) or np.isnan(series[i9]):
            continue
        diffs.append(series[i9] - series[i7])
    if not diffs:
        raise DataError(f"port {rec.port_id}: no weekday with both 7:00 and 9:00 counts")
    return float(np.mean(diffs))


def classify_delta(delta: float) -> str:
    if delta <= -2:
        return "Residential"
    if delta >= 2:
        return "Office"
    return "Others"


def classify_ports(records, weekday_mask=None, exclude=()) -> GroupAssignment:
    groups, racks = {}, {}
    for rec in records:
        groups[rec.port_id] = classify_delta(commute_delta(rec, weekday_mask, exclude))
        racks[rec.port_id] = rec.rack_count
    return GroupAssignment(groups, racks)


def aggregate_groups(records, assignment: GroupAssignment, dates=None) -> PanelData:
    """Sum port series per group on the 17-hour grid. Days missing any value are dropped."""
    records = list(records)
    missing = [r.port_id for r in records if r.port_id not in assignment.groups]
    if missing:
        raise DataError(f"ports without a group: {missing[:5]}")
    all_dates = sorted({d for r in records for d in r.counts})
    if dates is not None:
        wanted = set(dates)
        all_dates = [d for d in all_dates if d in wanted]
    keep = []
    for d in all_dates:
        if all(d in r.counts and not np.isnan(r.counts[d]).any() for r in records):
            keep.append(d)
    dropped = len(all_dates) - len(keep)
    if dropped:
        log.warning("dropped %d day(s) with incomplete port data", dropped)
    counts = np.zeros((len(keep), len(GROUPS), GRID_HOURS))
    gidx = {g: k for k, g in enumerate(GROUPS)}
    for rec in records:
        g = gidx[assignment.groups[rec.port_id]]
        for i, d in enumerate(keep):
            counts[i, g] += rec.counts[d]
    return PanelData(counts, list(keep), list(GROUPS))


def write_panel(panel: PanelData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "date", "t", "hour", "count"])
        for i, day in enumerate(panel.day_labels):
            for d, g in enumerate(panel.port_labels):
                for t in range(panel.num_times):
                    v = panel.counts[i, d, t]
                    w.writerow([g, day, t, panel.start_hour + t, _fmt(v)])


def read_panel(path) -> PanelData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    cells = {}
    groups, days, times = [], [], set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = ("group", "date", "t", "count")
        if not reader.fieldnames or any(c not in reader.fieldnames for c in need):
            raise ParseError("panel file needs columns group,date,t,count", path, 1)
        for row in reader:
            g, d = row["group"], row["date"]
            t = _parse_int(row["t"], "t", path, reader.line_num)
            try:
                v = float(row["count"])
            except ValueError:
                raise ParseError(f"bad count {row['count']!r}", path, reader.line_num) from None
            if g not in groups:
                groups.append(g)
            if d not in days:
                days.append(d)
            times.add(t)
            cells[(d, g, t)] = v
    T = max(times) + 1 if times else 0
    arr = np.full((len(days), len(groups), T), np.nan)
    for (d, g, t), v in cells.items():
        arr[days.index(d), groups.index(g), t] = v
    if np.isnan(arr).any():
        raise DataError(f"{path}: panel is not rectangular")
    return PanelData(arr, days, groups)


def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


# -- synthetic data ------------------------------------------------------------

@dataclass
class SynthSpec:
    group_sizes: dict = field(default_factory=lambda: {"Residential": 50, "Office": 36, "Others": 48})
    rack_range: tuple = (8, 12)
    base_fill: dict = field(default_factory=lambda: {"Residential": 0.85, "Office": 0.3,
                                                     "Others": 0.5})
    morning_flow: float = 2.0  # commute trips per Residential port per hour, 7-9
    evening_flow: float = 2.0  # return trips per Residential port per hour, 17-19
    commute_sd: float = 0.25  # day-to-day spread of the commute intensity
    weekend_factor: float = 0.2
    noise: float = 0.5  # random trips per port per hour
    start_date: str = "2024-04-01"
    num_days: int = 30

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "rack_range" in d:
            d["rack_range"] = tuple(d["rack_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {"group_sizes": dict(self.group_sizes), "rack_range": list(self.rack_range),
                "base_fill": dict(self.base_fill), "morning_flow": self.morning_flow,
                "evening_flow": self.evening_flow, "commute_sd": self.commute_sd,
                "weekend_factor": self.weekend_factor, "noise": self.noise,
                "start_date": self.start_date, "num_days": self.num_days}


_MORNING = (7, 8)  # increments 7->8 and 8->9
_EVENING = (17, 18)


def synth_generate(spec: SynthSpec, seed: int = 0) -> list:
    """
    Commuter-like port panel built from individual trips.

    Every trip moves one bicycle from an origin port to a destination port
    within the hour, so the fleet is conserved. In the morning window each
    Residential port sends commute trips to random Office ports; the evening
    window reverses the flow. A shared daily intensity scales both windows.
    Random trips between any two ports add noise. A rental from an empty
    port is lost and a trip to a full port is cancelled.
    """
    rng = np.random.default_rng(seed)
    start = dt.date.fromisoformat(spec.start_date)
    dates = [start + dt.timedelta(days=k) for k in range(spec.num_days)]
    ports = []
    for g in GROUPS:
        for k in range(spec.group_sizes.get(g, 0)):
            racks = int(rng.integers(spec.rack_range[0], spec.rack_range[1] + 1))
            ports.append((f"{g[:3].upper()}{k:03d}", g, racks))
    n = len(ports)
    racks = np.array([r for _, _, r in ports])
    res = [i for i, (_, g, _) in enumerate(ports) if g == "Residential"]
    off = [i for i, (_, g, _) in enumerate(ports) if g == "Office"]
    base = np.array([int(round(spec.base_fill.get(g, 0.5) * r)) for _, g, r in ports])
    records = [PortRecord(pid, r) for pid, _, r in ports]

    for date in dates:
        factor = 1.0 if date.weekday() < 5 else spec.weekend_factor
        z_am = factor * max(0.0, rng.normal(1.0, spec.commute_sd))
        z_pm = factor * max(0.0, rng.normal(1.0, spec.commute_sd))
        x = base.copy()
        grid = np.empty((n, GRID_HOURS))
        grid[:, 0] = x
        for k in range(1, GRID_HOURS):
            hour = HOURS[k - 1]
            trips = []
            if off and res:
                if hour in _MORNING:
                    per = int(round(spec.morning_flow * z_am))
                    trips += [(o, off[rng.integers(len(off))]) for o in res for _ in range(per)]
                elif hour in _EVENING:
                    per = int(round(spec.evening_flow * z_pm))
                    trips += [(off[rng.integers(len(off))], d) for d in res for _ in range(per)]
            if spec.noise > 0 and n > 1:
                m = int(rng.poisson(spec.noise * n))
                o = rng.integers(n, size=m)
                d = (o + rng.integers(1, n, size=m)) % n
                trips += list(zip(o.tolist(), d.tolist()))
            for j in rng.permutation(len(trips)):
                o, d = trips[j]
                if x[o] > 0 and x[d] < racks[d]:
                    x[o] -= 1
                    x[d] += 1
            grid[:, k] = x
        for rec, row in zip(records, grid):
            rec.counts[date.isoformat()] = row.copy()
    return records


def synth_group_panel(num_days: int = 21, correlation: float = -0.6, seed: int = 0,
                      base=(150.0, 60.0, 200.0), scale=(8.0, 8.0, 6.0),
                      profile_scale: float = 12.0) -> PanelData:
    """
    Group-level panel with a commuter mean profile and Gaussian hourly noise
    whose Residential/Office correlation is `correlation` at every hour.
    """
    rng = np.random.default_rng(seed)
    T = GRID_HOURS - 1
    prof = np.zeros((3, T))
    for h in _MORNING:
        prof[0, h - GRID_START_HOUR] = -profile_scale
        prof[1, h - GRID_START_HOUR] = profile_scale
    for h in _EVENING:
        prof[0, h - GRID_START_HOUR] = profile_scale
        prof[1, h - GRID_START_HOUR] = -profile_scale
    cov = np.diag(np.square(scale)).astype(float)
    cov[0, 1] = cov[1, 0] = correlation * scale[0] * scale[1]
    noise = rng.multivariate_normal(np.zeros(3), cov, size=(num_days, T))  # (days, T, 3)
    inc = np.rint(prof[None] + np.moveaxis(noise, -1, 1))
    counts = np.concatenate([np.broadcast_to(np.asarray(base)[None, :, None], (num_days, 3, 1)),
                             np.asarray(base)[None, :, None] + np.cumsum(inc, axis=2)], axis=2)
    start = dt.date(2024, 4, 1)
    days = [(start + dt.timedelta(days=k)).isoformat() for k in range(num_days)]
    return PanelData(counts, days, list(GROUPS))


# -- model persistence -----------------------------------------------------------

def _arr(a) -> dict:
    a = np.asarray(a)
    kind = "bool" if a.dtype == bool else ("int" if np.issubdtype(a.dtype, np.integer) else "float")
    return {"shape": list(a.shape), "dtype": kind, "data": a.ravel().tolist()}


def _unarr(d) -> np.ndarray:
    dtype = {"bool": bool, "int": np.int64, "float": float}[d["dtype"]]
    return np.array(d["data"], dtype=dtype).reshape(d["shape"])


def _payload(model: TrainedModel) -> dict:
    data = model.data
    cb = data.codebook
    return {
        "layout": model.layout.to_dict(),
        "params": {"theta1": _arr(model.params.theta1), "theta2": _arr(model.params.theta2),
                   "entangle": list(model.params.entangle)},
        "codebook": {"n_states": cb.n_states, "breakpoints": _arr(cb.breakpoints),
                     "representatives": _arr(cb.representatives), "means": _arr(cb.means),
                     "degenerate": _arr(cb.degenerate)},
        "transitions": {"probs": _arr(data.transitions.probs), "counts": _arr(data.transitions.counts),
                        "empty_rows": _arr(data.transitions.empty_rows)},
        "correlations": {"rho": _arr(data.correlations.rho),
                         "defined": _arr(data.correlations.defined)},
        "init_dist": _arr(data.init_dist),
        "initial_counts": _arr(data.initial_counts),
        "times": _arr(data.times),
        "port_labels": list(data.port_labels),
        "config": model.config.to_dict(),
        "cost_history": [[c.term1, c.term2] for c in model.cost_history],
        "status": model.status,
    }


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def save_model(model: TrainedModel, path) -> None:
    payload = _payload(model)
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "checksum": _checksum(payload),
           "payload": payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"{path}: no such file")
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} document")
    version = str(doc.get("version", ""))
    major = version.split(".")[0]
    if major != MODEL_VERSION.split(".")[0]:
        raise ModelFormatError(f"{path}: unsupported format version {version} "
                               f"(this build reads {MODEL_VERSION.split('.')[0]}.x)")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or _checksum(payload) != doc.get("checksum"):
        raise ModelFormatError(f"{path}: checksum mismatch")
    try:
        return _from_payload(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed payload ({exc})") from None


def _from_payload(p: dict) -> TrainedModel:
    layout = CircuitLayout(**p["layout"])
    params = AnsatzParams(_unarr(p["params"]["theta1"]), _unarr(p["params"]["theta2"]),
                          tuple(p["params"]["entangle"]))
    c = p["codebook"]
    cb = SaxCodebook(c["n_states"], _unarr(c["breakpoints"]), _unarr(c["representatives"]),
                     _unarr(c["means"]), _unarr(c["degenerate"]))
    tr = TransitionTensor(_unarr(p["transitions"]["probs"]), _unarr(p["transitions"]["counts"]),
                          _unarr(p["transitions"]["empty_rows"]))
    corr = CorrelationTable(_unarr(p["correlations"]["rho"]), _unarr(p["correlations"]["defined"]))
    data = TrainingData(cb, tr, corr, _unarr(p["init_dist"]), _unarr(p["initial_counts"]),
                        _unarr(p["times"]), list(p["port_labels"]))
    config = TrainConfig.from_dict(p["config"])
    history = [CostBreakdown(a, b) for a, b in p["cost_history"]]
    return TrainedModel(params, layout, data, config, history, p["status"])
