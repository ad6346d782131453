"""``windres`` command line: staged pipeline from raw CSVs to class-mean metric reports.

Stages and their artifacts under the output directory::

    ingest    ingest/manifest.json, ingest/rejections.json, ingest/areas/*, ingest/wind/*
    curve     curve/<station>.json, curve/<station>.csv
    fit       fit/<station>.json, fit/<station>_curve.csv   (v, mean_rate, exposure, fit)
    events    events/<station>.json, events/<station>_events.csv
    simulate  simulate/<station>/<name>.json
    report    report/<station>.csv, report/<station>.json, report/report.json

Every artifact carries a provenance block (artifact version, config hash, seed, flags).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import config as config_mod
from .config import ConfigError, provenance, resolve
from .curvefit import ExponentialFit, FitError, HardeningSpec, fit_exponential, shift_factor
from .events import METRIC_NAMES, SIZE_CLASSES, EventTable, SizeClass, extract_events
from .hardening import MonteCarloConfig, bin_outages, run_hardening
from .ingest import (IngestError, OutageSchema, Rejection, WindSchema, associate_areas,
                     filter_stale_outages, format_timestamp, parse_outages, parse_timestamp,
                     parse_wind, rejection_report, write_outages_csv, write_station_csv)
from .report import CLASS_NAMES, area_report, dumps, table_csv
from .restoration import (EARLIER, FASTER, CalibrationError, RestorationSpec, calibrate_target,
                          run_restoration)
from .synthgen import PRESETS, ScenarioSpec, generate, write_scenario
from .windalign import OutageRateCurve, interpolate, rate_curve

log = logging.getLogger("windres")

KINDS = ("hardening", EARLIER, FASTER)


class StageError(RuntimeError):
    """An upstream artifact is missing or unusable."""


# -- small helpers -------------------------------------------------------------

def _out(cfg) -> Path:
    return Path(cfg["out"])


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {path}: run `windres {stage}` (cmd_{stage}) first")
    return path


def _load_json(path: Path, stage: str) -> dict:
    return yaml.safe_load(_require(path, stage).read_text(encoding="utf-8"))


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def _class_table(arr: np.ndarray) -> dict:
    return {c: {m: _num(arr[i, j]) for j, m in enumerate(METRIC_NAMES)}
            for i, c in enumerate(CLASS_NAMES)}


def _manifest(cfg) -> dict:
    return _load_json(_out(cfg) / "ingest" / "manifest.json", "ingest")


def _area_ids(cfg, manifest) -> list[str]:
    ids = sorted(manifest["areas"])
    wanted = cfg.get("areas")
    if wanted:
        unknown = sorted(set(wanted) - set(ids))
        if unknown:
            raise ConfigError(f"areas {unknown} are not ingested stations")
        ids = [i for i in ids if i in set(wanted)]
    return ids


def _area_data(cfg, manifest, sid):
    base = _out(cfg) / "ingest"
    entry = manifest["areas"][sid]
    outages, _ = parse_outages(_require(base / entry["outages"], "ingest"))
    station = parse_wind(_require(base / entry["wind"], "ingest"))
    return outages, station


def _thresholds(cfg) -> tuple[int, int]:
    lo, hi = cfg["events"]["thresholds"]
    return int(lo), int(hi)


# -- stages --------------------------------------------------------------------

def cmd_ingest(cfg) -> int:
    src = cfg["outages"].get("path")
    if not src:
        raise ConfigError("outages.path is not set")
    if not cfg["wind"]:
        raise ConfigError("no wind stations configured (wind: [...])")
    records, rejections, rows = parse_outages(
        resolve(cfg, src), OutageSchema.from_mapping(cfg["outages"].get("schema")), with_rows=True)
    stations = []
    for w in cfg["wind"]:
        stations.append(parse_wind(resolve(cfg, w["path"]), WindSchema.from_mapping(w.get("schema")),
                                   w.get("station_id"), w.get("latitude"), w.get("longitude")))
    areas = associate_areas(records, stations)

    max_gap = cfg["ingest"]["max_gap"]
    prov = provenance(cfg, "ingest", max_gap=max_gap)
    out = _out(cfg) / "ingest"
    manifest = {"provenance": prov, "areas": {}, "n_parsed": len(records)}
    for area in areas:
        kept, dropped = filter_stale_outages(area, max_gap)
        rejections += [Rejection(rows[o.id], reason, o.id) for o, reason in dropped]
        sid = area.station.id
        kept_sorted = sorted(kept.outages, key=lambda o: (o.start, o.restore, o.id))
        write_outages_csv(out / "areas" / f"{sid}_outages.csv", kept_sorted, prov)
        write_station_csv(out / "wind" / f"{sid}.csv", area.station, prov)
        manifest["areas"][sid] = {
            "latitude": area.station.latitude,
            "longitude": area.station.longitude,
            "n_outages": len(kept_sorted),
            "n_wind_samples": len(area.station),
            "wind_start": format_timestamp(area.station.times[0]),
            "wind_end": format_timestamp(area.station.times[-1]),
            "outages": f"areas/{sid}_outages.csv",
            "wind": f"wind/{sid}.csv",
        }
        log.info("area %s: %d outages kept, %d dropped", sid, len(kept_sorted), len(dropped))
    starts = [o.start for a in areas for o in a.outages]
    manifest["outage_span"] = ([format_timestamp(min(starts)), format_timestamp(max(starts))]
                               if starts else None)
    manifest["n_rejected"] = len(rejections)
    _write(out / "rejections.json", dumps({"provenance": prov,
                                           "rejections": rejection_report(rejections)}))
    _write(out / "manifest.json", dumps(manifest))
    return 0


def _window(cfg, manifest, wind):
    spec = cfg["curve"]["window"]
    if spec in (None, "wind"):
        return None
    if spec == "auto":
        if not manifest.get("outage_span"):
            return None
        lo, hi = (parse_timestamp(t) for t in manifest["outage_span"])
        return (max(lo, wind.start), min(hi, wind.end))
    lo, hi = spec
    return (parse_timestamp(str(lo)), parse_timestamp(str(hi)))


def cmd_curve(cfg) -> int:
    manifest = _manifest(cfg)
    for sid in _area_ids(cfg, manifest):
        outages, station = _area_data(cfg, manifest, sid)
        wind = interpolate(station)
        window = _window(cfg, manifest, wind)
        curve = rate_curve(outages, wind, cfg["curve"]["v_max"], window)
        prov = provenance(cfg, "curve", area=sid,
                          window=None if window is None else [format_timestamp(w) for w in window])
        _write(_out(cfg) / "curve" / f"{sid}.json", dumps({"provenance": prov, **curve.to_dict()}))
        _write(_out(cfg) / "curve" / f"{sid}.csv", curve.to_csv(prov))
    return 0


def cmd_fit(cfg) -> int:
    manifest = _manifest(cfg)
    weighted = bool(cfg["fit"]["weighted"])
    for sid in _area_ids(cfg, manifest):
        curve = OutageRateCurve.from_dict(_load_json(_out(cfg) / "curve" / f"{sid}.json", "curve"))
        try:
            fit = fit_exponential(curve, weighted=weighted)
        except FitError as exc:
            raise FitError(f"area {sid}: {exc}") from exc
        prov = provenance(cfg, "fit", area=sid, weighted=weighted)
        _write(_out(cfg) / "fit" / f"{sid}.json", dumps({"provenance": prov, "fit": fit.to_dict()}))
        _write(_out(cfg) / "fit" / f"{sid}_curve.csv", curve.to_csv(prov, fit=fit))
        log.info("area %s: a=%.4g b=%.4g", sid, fit.a, fit.b)
    return 0


def cmd_events(cfg) -> int:
    manifest = _manifest(cfg)
    thresholds = _thresholds(cfg)
    zero_rates = bool(cfg["events"]["zero_rates"])
    for sid in _area_ids(cfg, manifest):
        outages, _ = _area_data(cfg, manifest, sid)
        events = extract_events(outages)
        prov = provenance(cfg, "events", area=sid, thresholds=list(thresholds),
                          absent_rates="zero" if zero_rates else "excluded")
        table = EventTable(events, thresholds)
        matrix = table.super_metrics(zero_rates=zero_rates)
        counts = {c: int(np.sum(table.classes == k)) for k, c in enumerate(CLASS_NAMES)}
        lines = ["# " + _compact(prov),
                 ",".join(["event", "start", "end", "size_class"] + list(METRIC_NAMES))]
        for i, e in enumerate(table.events):
            vals = ["" if math.isnan(x) else repr(float(x)) for x in matrix[i]]
            lines.append(",".join([str(i), format_timestamp(e.start), format_timestamp(e.end),
                                   CLASS_NAMES[table.classes[i]]] + vals))
        _write(_out(cfg) / "events" / f"{sid}_events.csv", "\n".join(lines) + "\n")
        _write(_out(cfg) / "events" / f"{sid}.json", dumps({
            "provenance": prov,
            "event_counts": counts,
            "n_outages": table.n_outages,
            "base": _class_table(table.class_means(matrix)),
        }))
    return 0


def _compact(obj) -> str:
    import json
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- counterfactuals -------------------------------------------------------------

def _entry_name(entry: dict) -> str:
    return entry.get("name") or entry["kind"]


def _run_entry(cfg, sid: str, entry: dict, events, outages, station) -> dict:
    kind = entry.get("kind")
    thresholds = _thresholds(cfg)
    zero_rates = bool(cfg["events"]["zero_rates"])
    if kind == "hardening":
        fit_doc = _load_json(_out(cfg) / "fit" / f"{sid}.json", "fit")
        fit = ExponentialFit.from_dict(fit_doc["fit"])
        if entry.get("shift_x") is not None:
            spec = HardeningSpec(shift_x=float(entry["shift_x"]))
        else:
            spec = HardeningSpec(target_reduction=float(entry.get("target_reduction", 0.10)))
        rho, x = shift_factor(fit, spec)
        mc = cfg["montecarlo"]
        mc_cfg = MonteCarloConfig(m=int(mc["m"]), d=float(mc["d"]), confidence=float(mc["confidence"]),
                                  seed=int(cfg["seed"]), adaptive=bool(mc["adaptive"]),
                                  max_factor=int(mc["max_factor"]), mode=mc["mode"],
                                  jobs=int(cfg["jobs"]))
        index = bin_outages(outages, interpolate(station))
        res = run_hardening(events, index, rho, mc_cfg, thresholds, zero_rates)
        res.parameters.update(shift_x=x, b=fit.b,
                              target_reduction=spec.target_reduction)
        return res.to_dict()
    if kind not in (EARLIER, FASTER):
        raise ConfigError(f"unknown counterfactual kind {kind!r}; expected one of {KINDS}")
    regroup = bool(cfg["restoration"]["regroup"])
    table = EventTable(events, thresholds)
    key = "t_earlier" if kind == EARLIER else "c_faster"
    calibration = None
    value = entry.get(key)
    if value is None:
        cal = entry.get("calibrate")
        if cal is None:
            raise ConfigError(f"counterfactual {_entry_name(entry)!r} needs {key} or a calibrate block")
        cal = {"target": 0.10, "metric": "outage_hours", "size_class": "large", **cal}
        value = calibrate_target(table, kind, float(cal["target"]), cal["metric"],
                                 SizeClass(cal["size_class"]), thresholds, regroup)
        calibration = cal
    spec = RestorationSpec(kind, **{key: float(value)})
    res = run_restoration(table, spec, thresholds, regroup)
    out = res.to_dict()
    if calibration is not None:
        out["parameters"]["calibrated_to"] = calibration
    return out


def _entries_for(cfg, args) -> list[dict]:
    kind = args.kind
    if kind == "all":
        entries = list(cfg["counterfactuals"])
        if not entries:
            raise ConfigError("no counterfactuals configured for `simulate all`")
        return entries
    if kind == "calibrate":
        cal = {"target": args.target, "metric": args.metric, "size_class": args.size_class}
        return [{"name": args.name or f"{args.mode}-calibrated", "kind": args.mode, "calibrate": cal}]
    entry = {"kind": kind}
    explicit = {"target_reduction": args.target_reduction, "shift_x": args.shift_x,
                "t_earlier": args.t_earlier, "c_faster": args.c_faster}
    entry.update({k: v for k, v in explicit.items() if v is not None})
    if len(entry) == 1:
        configured = [e for e in cfg["counterfactuals"] if e.get("kind") == kind]
        if configured and not args.name:
            return configured
    entry["name"] = args.name or kind
    return [entry]


def cmd_simulate(cfg, entries: Sequence[dict]) -> int:
    manifest = _manifest(cfg)
    for sid in _area_ids(cfg, manifest):
        _require(_out(cfg) / "events" / f"{sid}.json", "events")
        outages, station = _area_data(cfg, manifest, sid)
        events = extract_events(outages)
        for entry in entries:
            name = _entry_name(entry)
            result = _run_entry(cfg, sid, entry, events, outages, station)
            prov = provenance(cfg, "simulate", area=sid, name=name, **result["flags"])
            _write(_out(cfg) / "simulate" / sid / f"{name}.json",
                   dumps({"provenance": prov, "name": name, **result}))
            log.info("area %s: %s done", sid, name)
    return 0


# -- report ----------------------------------------------------------------------

def cmd_report(cfg) -> int:
    manifest = _manifest(cfg)
    combined = []
    names_cfg = [_entry_name(e) for e in cfg["counterfactuals"]]
    for sid in _area_ids(cfg, manifest):
        ev = _load_json(_out(cfg) / "events" / f"{sid}.json", "events")
        sim_dir = _out(cfg) / "simulate" / sid
        names = names_cfg or sorted(p.stem for p in sim_dir.glob("*.json"))
        results = []
        for name in names:
            doc = _load_json(sim_dir / f"{name}.json", "simulate")
            results.append((name, doc))
        prov = provenance(cfg, "report", area=sid, counterfactuals=[
            {"name": n, "kind": d["kind"], "parameters": d["parameters"], "flags": d["flags"]}
            for n, d in results])
        changes = [(n, d["percent_change"]) for n, d in results]
        _write(_out(cfg) / "report" / f"{sid}.csv", table_csv(ev["base"], changes, prov))
        rep = area_report(sid, ev["base"], ev["event_counts"], results)
        _write(_out(cfg) / "report" / f"{sid}.json", dumps({"provenance": prov, **rep}))
        combined.append(rep)
    _write(_out(cfg) / "report" / "report.json",
           dumps({"provenance": provenance(cfg, "report"), "areas": combined}))
    return 0


# -- synth -------------------------------------------------------------------------

def cmd_synth(cfg, dest: Optional[str] = None) -> int:
    out = Path(dest) if dest else resolve(cfg, cfg["synth"]["out"])
    scenarios = cfg["synth"]["scenarios"]
    if not scenarios:
        raise ConfigError("synth.scenarios is empty")
    merged, wind_entries, truth = [], [], []
    for i, raw in enumerate(scenarios):
        raw = dict(raw)
        name = raw.pop("preset", None)
        if name is not None and name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        raw.setdefault("seed", int(cfg["seed"]) + i)
        spec = ScenarioSpec.from_mapping({**(PRESETS[name] if name else {}), **raw})
        area = generate(spec)
        paths = write_scenario(out, spec, area)
        merged += area.outages
        wind_entries.append({"path": paths["wind"].name})
        truth.append({"station_id": spec.station_id, "a": spec.a, "b": spec.b,
                      "n_outages": len(area.outages)})
    prov = provenance(cfg, "synth")
    merged.sort(key=lambda o: (o.start, o.restore, o.id))
    write_outages_csv(out / "outages.csv", merged, prov)
    run_cfg = {"outages": {"path": "outages.csv"}, "wind": wind_entries, "seed": int(cfg["seed"])}
    _write(out / "windres.yaml", yaml.safe_dump(run_cfg, sort_keys=True))
    _write(out / "truth.json", dumps({"provenance": prov, "scenarios": truth}))
    log.info("wrote %d outages for %d scenario(s) to %s", len(merged), len(scenarios), out)
    return 0


# -- argument parsing ----------------------------------------------------------------

def _set_pairs(pairs: Sequence[str]) -> dict:
    out: dict = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--jobs", type=int, help="worker processes for Monte Carlo replicates")
    common.add_argument("--out", help="output directory for stage artifacts")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override any config value, e.g. montecarlo.m=500")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="windres", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("ingest", "parse, associate and clean outage and wind CSVs"),
                        ("curve", "area outage rate curve per station"),
                        ("fit", "exponential fit of each rate curve"),
                        ("events", "extract events and base class-mean metrics"),
                        ("report", "assemble base means and percent changes"),
                        ("run", "ingest through report, running every configured counterfactual")]:
        sub.add_parser(name, parents=[common], help=help_)

    sim = sub.add_parser("simulate", parents=[common], help="run a counterfactual")
    sim.add_argument("kind", choices=("hardening", EARLIER, FASTER, "calibrate", "all"))
    sim.add_argument("--name", help="artifact name (defaults to the kind)")
    sim.add_argument("--target-reduction", type=float, help="hardening: outage-rate reduction, e.g. 0.1")
    sim.add_argument("--shift-x", type=float, help="hardening: curve shift in mph")
    sim.add_argument("--t-earlier", type=float, help="earlier: hours")
    sim.add_argument("--c-faster", type=float, help="faster: contraction factor in (0, 1]")
    sim.add_argument("--mode", choices=(EARLIER, FASTER), default=EARLIER, help="calibrate: transform")
    sim.add_argument("--target", type=float, default=0.10, help="calibrate: fractional reduction")
    sim.add_argument("--metric", choices=METRIC_NAMES, default="outage_hours")
    sim.add_argument("--size-class", choices=[c.value for c in SIZE_CLASSES], default="large")

    syn = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    syn.add_argument("--dest", help="directory for generated files (default synth.out)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        flags = config_mod.deep_merge(_set_pairs(args.set),
                                      {"seed": args.seed, "jobs": args.jobs, "out": args.out})
        flags = {k: v for k, v in flags.items() if v is not None}
        cfg = config_mod.load_config(args.config, flags)
        cmd = args.command
        if cmd == "ingest":
            return cmd_ingest(cfg)
        if cmd == "curve":
            return cmd_curve(cfg)
        if cmd == "fit":
            return cmd_fit(cfg)
        if cmd == "events":
            return cmd_events(cfg)
        if cmd == "simulate":
            return cmd_simulate(cfg, _entries_for(cfg, args))
        if cmd == "report":
            return cmd_report(cfg)
        if cmd == "synth":
            return cmd_synth(cfg, args.dest)
        if cmd == "run":
            for step in (cmd_ingest, cmd_curve, cmd_fit, cmd_events):
                step(cfg)
            if cfg["counterfactuals"]:
                cmd_simulate(cfg, cfg["counterfactuals"])
            return cmd_report(cfg)
    except (ConfigError, StageError, IngestError, FitError, CalibrationError, ValueError, OSError) as exc:
        print(f"windres {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
