"""
Command-line pipeline: synth -> ingest -> opploss -> train -> sample / simulate.

Every command accepts ``--config FILE`` (a JSON object of settings). Explicit
flags win over the file, which wins over built-in defaults. The resolved
settings are echoed to stdout and written next to the outputs as config.json.

Exit codes: 0 ok, 2 usage or config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import data as qdata
from . import generate, scenario
from .encode import CorrelationTable, PanelData
from .errors import (ConfigError, ContractError, DataError, ModelFormatError, NumericalError,
                     QFlowError)
from .model import TrainConfig, prepare_training_data, train

log = logging.getLogger("qflow")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "synth": {"out": "counts.csv", "seed": 0, "num_days": 30, "noise": 0.5,
              "start_date": "2024-04-01", "synth_spec": None},
    "ingest": {"input": None, "out_dir": "ingest", "weekdays_only": False, "exclude_dates": [],
               "max_days": None},
    "opploss": {"panel": None, "out_dir": "opploss", "demand_rate": None},
    "train": {"panel": None, "out_dir": "train", "n_states": 2, "ancillas": 2, "layers": 2,
              "alpha": 1.0, "learning_rate": 0.1, "iterations": 300, "shots": None, "seed": 0},
    "sample": {"model": None, "out_dir": "sample", "n_paths": 1000, "mode": "reinjection",
               "seed": 0},
    "simulate": {"model": None, "out_dir": "simulate", "add": 100.0, "target": "Residential",
                 "n_paths": 1000, "mode": "reinjection", "seed": 0, "lag": 2, "routing": None,
                 "decimals": 0},
}


class UsageError(QFlowError):
    pass


# -- helpers -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0.0:
            return "0"
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    return str(v)


def _write_csv(path, header, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _resolve(cmd: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"{path}: config file not found")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"{path}: unknown setting(s) for {cmd}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _echo(cmd: str, cfg: dict, out_dir=None):
    text = json.dumps({"command": cmd, **cfg}, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        Path(out_dir, "config.json").write_text(text + "\n")


def _out_dir(cfg) -> Path:
    p = Path(cfg["out_dir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require(cfg, key):
    if cfg.get(key) in (None, ""):
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


# -- commands ----------------------------------------------------------------

def cmd_synth(cfg: dict) -> int:
    spec = qdata.SynthSpec.from_dict(cfg["synth_spec"]) if cfg["synth_spec"] else qdata.SynthSpec()
    spec.num_days = int(cfg["num_days"])
    spec.noise = float(cfg["noise"])
    spec.start_date = cfg["start_date"]
    cfg["synth_spec"] = spec.to_dict()
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _echo("synth", cfg)
    records = qdata.synth_generate(spec, int(cfg["seed"]))
    qdata.write_counts(records, out)
    Path(out.parent, "config.json").write_text(
        json.dumps({"command": "synth", **cfg}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(records)} ports to {out}")
    return EXIT_OK


def cmd_ingest(cfg: dict) -> int:
    src = _require(cfg, "input")
    exclude = cfg["exclude_dates"]
    if isinstance(exclude, str):
        exclude = [d for d in exclude.split(",") if d]
    cfg["exclude_dates"] = list(exclude)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records = qdata.load_counts(src)
    out = _out_dir(cfg)
    _echo("ingest", cfg, out)
    for w in caught:
        _warn(str(w.message))
    dates = qdata.select_days({d for r in records for d in r.counts},
                              weekdays_only=bool(cfg["weekdays_only"]), exclude=exclude)
    if cfg["max_days"]:
        dates = dates[: int(cfg["max_days"])]
    assignment = qdata.classify_ports(records, exclude=exclude)
    panel = qdata.aggregate_groups(records, assignment, dates)
    _write_csv(out / "groups.csv", ["port_id", "group", "rack_count"],
               [(p, g, "" if assignment.racks.get(p) is None else assignment.racks[p])
                for p, g in sorted(assignment.groups.items())])
    _write_csv(out / "summary.csv", ["group", "ports", "ports_pct", "racks", "racks_pct"],
               [(g, n, round(pp, 1), r, round(rp, 1)) for g, n, pp, r, rp in assignment.summary()])
    qdata.write_panel(panel, out / "panel.csv")
    print(f"{len(records)} ports, {panel.num_days} day(s) in panel")
    return EXIT_OK


def _read_rates(path, panel: PanelData) -> np.ndarray:
    """CSV with columns group,t,rate; t indexes the interval starting at grid point t."""
    rates = np.full((panel.num_ports, panel.num_times - 1), np.nan)
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                d = list(panel.port_labels).index(row["group"])
                rates[d, int(row["t"])] = float(row["rate"])
            except (KeyError, ValueError, IndexError):
                raise DataError(f"{path}: bad demand-rate row {row}") from None
    return rates


def cmd_opploss(cfg: dict) -> int:
    panel = qdata.read_panel(_require(cfg, "panel"))
    out = _out_dir(cfg)
    _echo("opploss", cfg, out)
    rates = _read_rates(cfg["demand_rate"], panel) if cfg["demand_rate"] else None
    defaults = np.stack([scenario.default_demand_rates(panel.counts[:, d])
                         for d in range(panel.num_ports)])
    if rates is None:
        _warn("no demand rates given; using the mean hourly rentals over days with stock")
        rates = defaults
    elif np.isnan(rates).any():
        _warn(f"{int(np.isnan(rates).sum())} demand rate(s) missing; "
              "filling with the mean hourly rentals over days with stock")
        rates = np.where(np.isnan(rates), defaults, rates)
    results, rows = {}, []
    for i, day in enumerate(panel.day_labels):
        for d, g in enumerate(panel.port_labels):
            series = panel.counts[i, d]
            if np.any(series < 0):
                raise DataError(f"negative observed count for {g} on {day}")
            res = scenario.estimate_opportunity_losses(
                scenario.OppLossInput.from_hourly(series, rates[d]))
            results[(i, d)] = res
            rows.append((g, day, res.total_losses, float(np.min(res.adjusted_path))))
    adjusted = scenario.adjust_panel(panel.counts, results)
    qdata.write_panel(PanelData(adjusted, panel.day_labels, panel.port_labels, panel.start_hour),
                      out / "adjusted_panel.csv")
    _write_csv(out / "losses.csv", ["group", "date", "losses", "min_adjusted"], rows)
    print(f"total losses: {sum(r[2] for r in rows)}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    panel = qdata.read_panel(_require(cfg, "panel"))
    out = _out_dir(cfg)
    tc = TrainConfig(alpha=cfg["alpha"], learning_rate=float(cfg["learning_rate"]),
                     iterations=int(cfg["iterations"]),
                     shots=None if cfg["shots"] in (None, 0) else int(cfg["shots"]),
                     seed=int(cfg["seed"]), num_layers=int(cfg["layers"]),
                     num_ancilla=int(cfg["ancillas"]))
    _echo("train", cfg, out)
    td = prepare_training_data(panel, int(cfg["n_states"]))
    model = train(td, tc)
    qdata.save_model(model, out / "model.json")
    _write_csv(out / "history.csv", ["iter", "term1", "term2", "total"],
               [(k, c.term1, c.term2, c.total) for k, c in enumerate(model.cost_history)])
    if model.status != "ok":
        print(f"training stopped: {model.status}", file=sys.stderr)
        return EXIT_NUMERIC
    h = model.cost_history
    print(f"cost {h[0].total:.6g} -> {h[-1].total:.6g}")
    return EXIT_OK


def cmd_sample(cfg: dict) -> int:
    model = qdata.load_model(_require(cfg, "model"))
    out = _out_dir(cfg)
    _echo("sample", cfg, out)
    n, mode, seed = int(cfg["n_paths"]), cfg["mode"], int(cfg["seed"])
    ens = generate.generate_ensemble(model, None, n, seed, mode)
    st = generate.ensemble_statistics(ens, model.codebook, model.data.correlations.rho)
    labels = model.data.port_labels
    header = [f"mode={mode} n_paths={n} seed={seed} degenerate={int(st.degenerate)}"]
    start = 6
    rows = []
    for d, g in enumerate(labels):
        for t in range(st.mean_counts.shape[1]):
            rows.append((g, t, start + t, st.mean_counts[d, t], st.std_counts[d, t]))
    _write_csv(out / "mean_curves.csv", ["group", "t", "hour", "mean", "std"], rows, header)
    rows = []
    data_rho = model.data.correlations
    for d in range(len(labels)):
        for d2 in range(d + 1, len(labels)):
            for t in range(st.rho.shape[2]):
                dr = data_rho.rho[d, d2, t] if isinstance(data_rho, CorrelationTable) else ""
                rows.append((labels[d], labels[d2], t, st.rho[d, d2, t],
                             int(st.defined[d, d2, t]), dr))
    _write_csv(out / "correlations.csv",
               ["group_a", "group_b", "t", "model_rho", "defined", "data_rho"], rows, header)
    rows = []
    for k in range(len(ens)):
        for t in range(st.increments.shape[2]):
            rows.append((k, t, *st.deviations[k, :, t]))
    _write_csv(out / "scatter.csv", ["path", "t", *[f"dev_{g}" for g in labels]], rows, header)
    print(f"sampled {n} path(s) in {mode} mode")
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    model = qdata.load_model(_require(cfg, "model"))
    labels = model.data.port_labels
    try:
        target = labels[scenario.resolve_group(cfg["target"], labels)]
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    routing = scenario.RoutingConfig(lag=int(cfg["lag"]))
    if cfg["routing"]:
        routing.routes = {k: dict(v) for k, v in cfg["routing"].items()}
    cfg["target"] = target
    cfg["routing"] = routing.routes
    out = _out_dir(cfg)
    _echo("simulate", cfg, out)
    res = scenario.simulate_addition(model, float(cfg["add"]), target, routing,
                                     int(cfg["n_paths"]), int(cfg["seed"]), cfg["mode"])
    report = scenario.effect_report(res, int(cfg["decimals"]))
    _write_csv(out / "effects.csv", ["source", "rentals"], report)
    rows = []
    for d, g in enumerate(labels):
        for t in range(res.before_mean.shape[1]):
            rows.append((g, t, 6 + t, res.before_mean[d, t], res.after_mean[d, t]))
    _write_csv(out / "curves.csv", ["group", "t", "hour", "before", "after"], rows)
    for name, v in report:
        print(f"{name}: {_fmt(v)}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "opploss": cmd_opploss,
            "train": cmd_train, "sample": cmd_sample, "simulate": cmd_simulate}


# -- parser ------------------------------------------------------------------

def _h(cmd, key, text):
    return f"{text} (default: {DEFAULTS[cmd][key]})"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qflow", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, text):
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", help="JSON settings file; flags take precedence")
        return sp

    s = add("synth", "write a synthetic commuter count CSV")
    s.add_argument("--out", help=_h("synth", "out", "output CSV"))
    s.add_argument("--seed", type=int, help=_h("synth", "seed", "random seed"))
    s.add_argument("--num-days", type=int, help=_h("synth", "num_days", "calendar days"))
    s.add_argument("--noise", type=float, help=_h("synth", "noise", "random trips per port-hour"))
    s.add_argument("--start-date", help=_h("synth", "start_date", "first date"))

    s = add("ingest", "classify ports and aggregate them into a group panel")
    s.add_argument("--input", help="count CSV (port_id,date,hour,count[,rack_count])")
    s.add_argument("--out-dir", help=_h("ingest", "out_dir", "output directory"))
    s.add_argument("--weekdays-only", action="store_true", default=None,
                   help=_h("ingest", "weekdays_only", "drop weekend days from the panel"))
    s.add_argument("--exclude-dates", help="comma-separated dates to drop (default: none)")
    s.add_argument("--max-days", type=int, help="keep only the first N selected days (default: all)")

    s = add("opploss", "estimate opportunity losses and write a demand-adjusted panel")
    s.add_argument("--panel", help="group panel CSV from ingest")
    s.add_argument("--out-dir", help=_h("opploss", "out_dir", "output directory"))
    s.add_argument("--demand-rate", help="CSV group,t,rate of rentals/hour while empty "
                                         "(default: mean hourly rentals over days with stock)")

    s = add("train", "fit the circuit to a group panel")
    s.add_argument("--panel", help="group panel CSV")
    s.add_argument("--out-dir", help=_h("train", "out_dir", "output directory"))
    s.add_argument("--n-states", type=int, help=_h("train", "n_states", "SAX states per port"))
    s.add_argument("--ancillas", type=int, help=_h("train", "ancillas", "ancilla qubits"))
    s.add_argument("--layers", type=int, help=_h("train", "layers", "entangling layers"))
    s.add_argument("--alpha", type=float, help=_h("train", "alpha", "correlation weight"))
    s.add_argument("--learning-rate", type=float, help=_h("train", "learning_rate", "Adam step"))
    s.add_argument("--iterations", type=int, help=_h("train", "iterations", "Adam iterations"))
    s.add_argument("--shots", type=int,
                   help="estimate probabilities from this many shots (default: exact)")
    s.add_argument("--seed", type=int, help=_h("train", "seed", "random seed"))

    for name, text in (("sample", "generate sample paths and ensemble statistics"),
                       ("simulate", "simulate adding bicycles at time 0")):
        s = add(name, text)
        s.add_argument("--model", help="model file from train")
        s.add_argument("--out-dir", help=_h(name, "out_dir", "output directory"))
        s.add_argument("--n-paths", type=int, help=_h(name, "n_paths", "sample paths"))
        s.add_argument("--mode", choices=generate.MODES, help=_h(name, "mode", "sampling mode"))
        s.add_argument("--seed", type=int, help=_h(name, "seed", "random seed"))
        if name == "simulate":
            s.add_argument("--add", type=float, help=_h(name, "add", "bicycles added"))
            s.add_argument("--target", help=_h(name, "target", "group receiving the bicycles"))
            s.add_argument("--lag", type=int, help=_h(name, "lag", "grid hours from rental to arrival"))
            s.add_argument("--decimals", type=int, help=_h(name, "decimals", "report rounding"))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="warning: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
