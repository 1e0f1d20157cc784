"""Command-line entry point: design, metrics, simulate, validate, export-plotdata."""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import tomli

from . import __version__
from .core import PRESETS, FactorGraph, SchemaError, load_codebook, save_codebook, validate_codebook_dict
from .lppam import LpPamError, LpPamSpec, n_alpha
from .mcbuild import PermutationSearchConfig
from .optimize import OptimizerConfig, optimize
from .pnmetrics import BudgetError, PnChannelParams, mpnm
from .sim import DETECTORS, run_ber

log = logging.getLogger("pncb")

EXIT_OK, EXIT_CONFIG, EXIT_SCHEMA, EXIT_BUDGET = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = problems if isinstance(problems, list) else [("", str(problems))]
        super().__init__("; ".join(f"{p or '/'}: {m}" for p, m in self.problems))


# --- config schemas -----------------------------------------------------------

_POINT = {
    "type": "object",
    "required": ["sigma_p2", "ebn0_db"],
    "additionalProperties": False,
    "properties": {"sigma_p2": {"type": "number", "minimum": 0}, "ebn0_db": {"type": "number"}},
}
_GRAPH = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "F": {"type": "array", "items": {"type": "array", "items": {"enum": [0, 1]}}},
        "slots": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
    },
    "oneOf": [{"required": ["preset"]}, {"required": ["F"]}],
}
_SWEEP = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {
            "type": "object",
            "required": ["start", "stop", "step"],
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in ("start", "stop", "step")},
        },
    ]
}

CONFIG_SCHEMAS = {
    "pncb-design/1": {
        "type": "object",
        "required": ["schema", "lppam", "objective"],
        "additionalProperties": False,
        "properties": {
            "schema": {"const": "pncb-design/1"},
            "name": {"type": "string"},
            "graph": _GRAPH,
            "lppam": {
                "type": "object",
                "required": ["M", "T"],
                "additionalProperties": False,
                "properties": {"M": {"type": "integer", "minimum": 2}, "T": {"type": "integer", "minimum": 2}},
            },
            "objective": {
                "type": "object",
                "required": ["sigma_p2"],
                "additionalProperties": False,
                "properties": {
                    "sigma_p2": {"type": "number", "minimum": 0},
                    "ebn0_db": {"type": "number"},
                    "mode": {"enum": ["active", "exact", "pruned"]},
                    "q": {"type": "integer", "minimum": 1},
                },
            },
            "search": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "strategy": {"enum": ["differential-evolution", "multistart-local"]},
                    "population": {"type": "integer", "minimum": 0},
                    "max_evaluations": {"type": "integer", "minimum": 1},
                    "rng_seed": {"type": "integer", "minimum": 0},
                    "alpha_max": {"type": "number", "minimum": 1},
                    "polish_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                    "bsa_restarts": {"type": "integer", "minimum": 1},
                },
            },
            "report": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"points": {"type": "array", "items": _POINT, "minItems": 1}},
            },
        },
    },
    "pncb-metrics/1": {
        "type": "object",
        "required": ["schema", "codebooks", "points"],
        "additionalProperties": False,
        "properties": {
            "schema": {"const": "pncb-metrics/1"},
            "codebooks": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "points": {"type": "array", "items": _POINT, "minItems": 1},
            "enumeration": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "mode": {"enum": ["auto", "exact", "pruned"]},
                    "q": {"type": "integer", "minimum": 1},
                    "samples": {"type": "integer", "minimum": 0},
                    "max_pairs": {"type": "integer", "minimum": 1},
                    "seed": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
    "pncb-simulate/1": {
        "type": "object",
        "required": ["schema", "codebooks", "ebn0_db", "sigma_p2"],
        "additionalProperties": False,
        "properties": {
            "schema": {"const": "pncb-simulate/1"},
            "codebooks": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "detectors": {"type": "array", "items": {"enum": list(DETECTORS)}, "minItems": 1},
            "ebn0_db": _SWEEP,
            "sigma_p2": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            "seed": {"type": "integer", "minimum": 0},
            "batch": {"type": "integer", "minimum": 1},
            "mpa_iters": {"type": "integer", "minimum": 1},
            "union_bound": {"type": "boolean"},
            "stopping": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "min_errors": {"type": "integer", "minimum": 1},
                    "max_bits": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}
COMMAND_SCHEMA = {"design": "pncb-design/1", "metrics": "pncb-metrics/1", "simulate": "pncb-simulate/1"}


def _bundled(kind: str, name: str):
    ref = resources.files("pncb").joinpath(kind, name)
    return ref if ref.is_file() else None


def resolve_path(name: str, base: Path | None, kind: str) -> Path:
    """File path as given, relative to the config's directory, or a bundled resource."""
    p = Path(name)
    for cand in ([p] if p.is_absolute() else [p] + ([base / p] if base else [])):
        if cand.is_file():
            return cand
    ext = ".toml" if kind == "configs" else ".json"
    ref = _bundled(kind, p.name if p.suffix else p.name + ext)
    if ref is not None:
        with resources.as_file(ref) as f:
            return Path(f)
    raise ConfigError([("", f"file not found: {name}")])


def load_config(path: str, command: str | None = None) -> tuple[dict, Path]:
    p = resolve_path(path, None, "configs")
    try:
        cfg = tomli.loads(p.read_text())
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError([("", f"{p}: {e}")]) from None
    validate_config(cfg, command)
    return cfg, p


def validate_config(cfg: dict, command: str | None = None) -> str:
    sid = cfg.get("schema")
    if command is not None and sid != COMMAND_SCHEMA[command]:
        raise ConfigError([("/schema", f"expected {COMMAND_SCHEMA[command]!r} for '{command}', got {sid!r}")])
    if sid not in CONFIG_SCHEMAS:
        raise ConfigError([("/schema", f"unknown config schema {sid!r}; known: {sorted(CONFIG_SCHEMAS)}")])
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMAS[sid])
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        raise ConfigError([("/" + "/".join(map(str, e.absolute_path)), e.message) for e in errs])
    return sid


# --- artifact helpers ---------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def _write_csv(path: Path, rows: list, fields: list) -> Path:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in fields})
    path.write_text(buf.getvalue())
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def write_manifest(out: Path, command: str, config: dict, seeds: dict, inputs: list, outputs: list,
                   started: dt.datetime) -> Path:
    manifest = {
        "subcommand": command,
        "config": config,
        "seeds": seeds,
        "version": __version__,
        "started": started.isoformat(),
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "inputs": {str(p): _digest(Path(p)) for p in inputs},
        "outputs": {Path(p).name: _digest(Path(p)) for p in outputs},
    }
    return _write_json(out / "manifest.json", manifest)


def _graph(cfg: dict | None) -> FactorGraph:
    cfg = cfg or {"preset": "4x6"}
    if "preset" in cfg:
        return PRESETS[cfg["preset"]]()
    return FactorGraph(np.array(cfg["F"]), np.array(cfg["slots"])) if "slots" in cfg else \
        FactorGraph.from_incidence(np.array(cfg["F"]))


def _sweep(spec) -> list:
    if isinstance(spec, list):
        return [float(x) for x in spec]
    n = int(math.floor((spec["stop"] - spec["start"]) / spec["step"] + 1e-9)) + 1
    return [round(spec["start"] + i * spec["step"], 10) for i in range(max(n, 0))]


def _metric_row(name: str, rep, extra: dict | None = None) -> dict:
    row = {"codebook": name}
    row.update({k: getattr(rep, k) for k in METRIC_FIELDS[1:] if hasattr(rep, k)})
    row.update(extra or {})
    return row


METRIC_FIELDS = ["codebook", "sigma_p2", "ebn0_db", "n0", "mpnm", "med", "pep_bound", "mode", "q",
                 "samples", "pairs_enumerated", "pairs_total"]


def report_metrics(cbs, point: dict, mode: str = "auto", q: int = 2, samples: int = 100_000,
                   max_pairs: int = 1 << 26, seed: int = 0):
    p = PnChannelParams.from_ebn0(cbs, point["sigma_p2"], point["ebn0_db"])
    if mode == "auto":
        P = cbs.M**cbs.J
        mode = "exact" if P * (P - 1) <= max_pairs else "pruned"
    return mpnm(cbs, p, mode=mode, q=q, samples=samples, seed=seed, max_pairs=max_pairs)


# --- subcommands --------------------------------------------------------------

def cmd_design(cfg: dict, base: Path, out: Path, seed: int | None, workers: int):
    fg = _graph(cfg.get("graph"))
    lp, ob, se = cfg["lppam"], cfg["objective"], cfg.get("search", {})
    try:
        LpPamSpec(lp["M"], lp["T"], (1.0,) * n_alpha(lp["T"]))
    except LpPamError as e:
        raise ConfigError([("/lppam", str(e))]) from None
    rng_seed = seed if seed is not None else se.get("rng_seed", 0)
    oc = OptimizerConfig(
        M=lp["M"], T=lp["T"], sigma_p2=ob["sigma_p2"], ebn0_db=ob.get("ebn0_db", 14.0),
        strategy=se.get("strategy", "differential-evolution"), population=se.get("population", 0),
        max_evaluations=se.get("max_evaluations", 10_000), rng_seed=rng_seed,
        alpha_max=se.get("alpha_max", 4.0), polish_fraction=se.get("polish_fraction", 0.1),
        objective_mode=ob.get("mode", "active"), objective_q=ob.get("q", 1),
        bsa=PermutationSearchConfig(restarts=se.get("bsa_restarts", 10), rng_seed=rng_seed),
        report_sigma_p2=None, report_ebn0_db=None,
    )
    res = optimize(oc, fg)
    res.codebooks.metadata["name"] = cfg.get("name", "design")
    points = cfg.get("report", {}).get("points") or [{"sigma_p2": oc.sigma_p2, "ebn0_db": oc.ebn0_db}]
    reports = [report_metrics(res.codebooks, pt) for pt in points]
    from .plotting import plot_trace

    outs = [
        _write_json(out / "config.json", cfg),
        _write_json(out / "design.json", {
            **res.design.to_dict(), "objective": res.objective, "evaluations": res.evaluations,
            "budget_exhausted": res.budget_exhausted, "rng_seed": rng_seed,
        }),
        save_codebook(res.codebooks, out / "codebook.json"),
        _write_csv(out / "trace.csv", [dict(zip(("evaluation", "objective", "best"), t)) for t in res.trace],
                   ["evaluation", "objective", "best"]),
        _write_json(out / "report.json", [r.to_dict() for r in reports]),
        _write_csv(out / "metrics.csv", [_metric_row("codebook", r) for r in reports], METRIC_FIELDS),
        plot_trace(res.trace, out / "trace.png", cfg.get("name", "")),
    ]
    for r in reports:
        log.info("MPNM %.4f at sigma_p2=%g, Eb/N0=%g dB (%s)", r.mpnm, r.sigma_p2, r.ebn0_db, r.mode)
    return [Path(o) for o in outs], {"rng_seed": rng_seed}, []


def _load_codebooks(names, base):
    out = []
    for n in names:
        path = resolve_path(n, base, "codebooks")
        out.append((Path(n).stem, path, load_codebook(path)))
    return out


def cmd_metrics(cfg: dict, base: Path, out: Path, seed: int | None, workers: int):
    en = cfg.get("enumeration", {})
    s = seed if seed is not None else en.get("seed", 0)
    rows, reps, inputs = [], [], []
    for name, path, cbs in _load_codebooks(cfg["codebooks"], base):
        inputs.append(path)
        for pt in cfg["points"]:
            r = report_metrics(cbs, pt, en.get("mode", "auto"), en.get("q", 2), en.get("samples", 100_000),
                               en.get("max_pairs", 1 << 26), s)
            rows.append(_metric_row(name, r))
            reps.append({"codebook": name, **r.to_dict()})
    outs = [_write_csv(out / "metrics.csv", rows, METRIC_FIELDS), _write_json(out / "metrics.json", reps)]
    return outs, {"seed": s}, inputs


RESULT_FIELDS = ["codebook", "detector", "sigma_p2", "ebn0_db", "n0", "seed", "bits", "bit_errors", "ber",
                 "ber_lo", "ber_hi", "frames", "frame_errors", "ser", "ser_lo", "ser_hi", "censored",
                 "pep_bound", "workers"]


def cmd_simulate(cfg: dict, base: Path, out: Path, seed: int | None, workers: int):
    s = seed if seed is not None else cfg.get("seed", 0)
    st = cfg.get("stopping", {})
    rows, inputs = [], []
    for name, path, cbs in _load_codebooks(cfg["codebooks"], base):
        inputs.append(path)
        for s2 in cfg["sigma_p2"]:
            for eb in _sweep(cfg["ebn0_db"]):
                p = PnChannelParams.from_ebn0(cbs, s2, eb)
                bound = report_metrics(cbs, {"sigma_p2": s2, "ebn0_db": eb}).pep_bound \
                    if cfg.get("union_bound", False) else None
                for det in cfg.get("detectors", ["ml-pn"]):
                    # same seed for every codebook, point and detector: paired channel draws
                    r = run_ber(cbs, p, det, st.get("min_errors", 400), st.get("max_bits", 20_000_000), s,
                                workers, cfg.get("batch", 2000), cfg.get("mpa_iters", 8))
                    rows.append({
                        "codebook": name, "detector": det, "sigma_p2": float(s2), "ebn0_db": float(eb),
                        "n0": p.n0, "seed": s, "bits": r.bits, "bit_errors": r.bit_errors, "ber": r.ber,
                        "ber_lo": r.ber_ci[0], "ber_hi": r.ber_ci[1], "frames": r.frames,
                        "frame_errors": r.frame_errors, "ser": r.ser, "ser_lo": r.ser_ci[0],
                        "ser_hi": r.ser_ci[1], "censored": int(r.censored), "pep_bound": bound,
                        "workers": workers,
                    })
                    log.info("%s %s sigma_p2=%g Eb/N0=%g: BER %.3g (%d errors)", name, det, s2, eb, r.ber,
                             r.bit_errors)
    from .plotting import plot_ber

    res = _write_csv(out / "results.csv", rows, RESULT_FIELDS)
    outs = [res, plot_ber(rows, out / "ber.png")]
    outs += export_plotdata([res], out)
    return outs, {"seed": s}, inputs


def export_plotdata(inputs: list, out: Path) -> list:
    """Wide plot-data tables (one column per curve) and figures from result or trace CSVs."""
    from .plotting import plot_ber, plot_trace

    outs = []
    for path in inputs:
        path = Path(path)
        with path.open(newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ConfigError([("", f"{path}: empty table")])
        cols = set(rows[0])
        if {"evaluation", "objective", "best"} <= cols:
            trace = [(int(r["evaluation"]), float(r["objective"]), float(r["best"])) for r in rows]
            outs.append(plot_trace(trace, out / f"{path.stem}.png"))
            continue
        need = {"codebook", "detector", "sigma_p2", "ebn0_db", "ber", "ser"}
        if not need <= cols:
            raise ConfigError([("", f"{path}: missing columns {sorted(need - cols)}")])
        for value in ("ber", "ser"):
            curves = sorted({(r["codebook"], r["detector"], r["sigma_p2"]) for r in rows})
            xs = sorted({float(r["ebn0_db"]) for r in rows})
            table = {x: {"ebn0_db": x} for x in xs}
            names = []
            for cb, det, s2 in curves:
                col = f"{cb}|{det}|{s2}"
                names.append(col)
                for r in rows:
                    if (r["codebook"], r["detector"], r["sigma_p2"]) == (cb, det, s2):
                        table[float(r["ebn0_db"])][col] = float(r[value])
            outs.append(_write_csv(out / f"plotdata_{value}.csv", [table[x] for x in xs], ["ebn0_db"] + names))
            outs.append(plot_ber(rows, out / f"{value}_plotdata.png", value))
    return outs


def cmd_validate(paths: list) -> list:
    """Check codebook JSON files and TOML configs; returns (path, kind) for each valid file."""
    checked, problems, schema_problems = [], [], []
    for name in paths:
        p = Path(name)
        if not p.is_file():
            problems.append((str(p), "file not found"))
            continue
        if p.suffix == ".toml":
            try:
                cfg = tomli.loads(p.read_text())
                checked.append((p, validate_config(cfg)))
            except tomli.TOMLDecodeError as e:
                problems.append((str(p), str(e)))
            except ConfigError as e:
                problems += [(f"{p}#{ptr}", msg) for ptr, msg in e.problems]
            continue
        try:
            d = json.loads(p.read_text())
            validate_codebook_dict(d)
            checked.append((p, d.get("schema", "codebook")))
        except json.JSONDecodeError as e:
            schema_problems.append((f"{p}", f"invalid JSON: {e}"))
        except SchemaError as e:
            schema_problems += [(f"{p}#{ptr}", msg) for ptr, msg in e.problems]
    if schema_problems:
        raise SchemaError(schema_problems + problems)
    if problems:
        raise ConfigError(problems)
    return checked


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pncb", description="Phase-noise-robust SCMA codebook toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="TOML config path or bundled config name (e.g. pncb1)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="maximum worker processes")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("design", help="optimize a codebook"))
    common(sub.add_parser("metrics", help="MPNM, MED and union bound of codebooks"))
    common(sub.add_parser("simulate", help="Monte-Carlo BER/SER sweep"))
    p = sub.add_parser("validate", help="check codebook JSON files and TOML configs")
    p.add_argument("paths", nargs="*")
    common(p, config_required=False)
    p = sub.add_parser("export-plotdata", help="plot-data CSV and figures from results or trace CSVs")
    p.add_argument("paths", nargs="*")
    common(p, config_required=False)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = dt.datetime.now(dt.timezone.utc)
    try:
        if args.workers < 1:
            raise ConfigError([("--workers", "must be >= 1")])
        if args.command == "validate":
            paths = list(args.paths) + ([args.config] if args.config else [])
            if not paths:
                raise ConfigError([("", "nothing to validate")])
            for p, kind in cmd_validate(paths):
                print(f"ok\t{kind}\t{p}")
            return EXIT_OK
        out = Path(args.out or f"pncb-out/{args.command}")
        if args.command == "export-plotdata":
            paths = [Path(x) for x in args.paths]
            paths = [p / "results.csv" if p.is_dir() else p for p in paths]
            missing = [str(p) for p in paths if not p.is_file()]
            if not paths or missing:
                raise ConfigError([("", f"input tables not found: {missing or 'none given'}")])
            out.mkdir(parents=True, exist_ok=True)
            outs = export_plotdata(paths, out)
            write_manifest(out, args.command, {"inputs": [str(p) for p in paths]}, {}, paths, outs, started)
            print(out)
            return EXIT_OK
        cfg, path = load_config(args.config, args.command)
        out.mkdir(parents=True, exist_ok=True)
        fn = {"design": cmd_design, "metrics": cmd_metrics, "simulate": cmd_simulate}[args.command]
        outs, seeds, inputs = fn(cfg, path.parent, out, args.seed, args.workers)
        write_manifest(out, args.command, cfg, seeds, [path] + list(inputs), outs, started)
        print(out)
        return EXIT_OK
    except ConfigError as e:
        for ptr, msg in e.problems:
            print(f"config error: {ptr or '/'}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemaError as e:
        for ptr, msg in e.problems:
            print(f"schema error: {ptr or '/'}: {msg}", file=sys.stderr)
        return EXIT_SCHEMA
    except BudgetError as e:
        print(f"budget refusal: {e}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
