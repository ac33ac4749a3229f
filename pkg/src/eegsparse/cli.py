"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 configuration or data error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import bench
from .headmodel import FORMAT_VERSION, leadfield_from_config, leadfield_info, load_leadfield, normalize_columns, \
    save_leadfield
from .model import ConfigError, DataError, NoiseSpec, SolverError
from .simulate import ErpSpec, sample_scenario, simulate_measurements, source_matrix, test_case_from_config
from .solvers import SOLVER_NAMES, get_solver


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _version() -> str:
    try:
        v = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        v = "unknown"
    return f"eegsparse {v} (lead field format {FORMAT_VERSION})"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
        node[parts[-1]] = _parse_value(raw)
    return doc


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _config(args) -> dict:
    doc = _read_json(args.config) if getattr(args, "config", None) else {}
    return apply_overrides(doc, args.set)


def _write_json(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_matrix(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {path}")
    try:
        if p.suffix == ".npy":
            Y = np.load(p)
        elif p.suffix == ".json":
            d = json.loads(p.read_text())
            Y = np.asarray(d["data"] if isinstance(d, dict) else d, float)
        else:
            Y = np.loadtxt(p, delimiter=",", ndmin=2)
    except (ValueError, KeyError, OSError) as exc:
        raise DataError(f"cannot read measurements from {path}: {exc}") from exc
    return np.asarray(Y, float)


def cmd_leadfield_gen(args) -> int:
    doc = _read_json(args.spec) if args.spec else {}
    doc = apply_overrides(doc, args.set)
    if args.dof is not None:
        doc["dof"] = args.dof
    try:
        lf = leadfield_from_config(doc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.normalize:
        lf = normalize_columns(lf)
    path = save_leadfield(lf, args.out, args.format)
    print(f"wrote {path}")
    return 0


def cmd_leadfield_info(args) -> int:
    _write_json(leadfield_info(load_leadfield(args.path)), None)
    return 0


def cmd_simulate(args) -> int:
    lf = load_leadfield(args.leadfield)
    doc = _config(args)
    try:
        tc = test_case_from_config(doc.get("test_case", args.test_case), float(doc.get("scale", args.scale)))
        noise = NoiseSpec.parse(doc.get("noise", args.noise))
        erp = ErpSpec.from_dict(doc["erp"]) if "erp" in doc else ErpSpec()
        scen = sample_scenario(tc, lf.source_space, args.seed, erp, noise)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    meas = simulate_measurements(lf, scen)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, meas.data, delimiter=",", fmt="%.17g")
    if args.truth:
        truth = scen.to_dict()
        truth["source_matrix_rows"] = np.flatnonzero(np.any(source_matrix(lf, scen) != 0, axis=1)).tolist()
        _write_json(truth, args.truth)
    print(f"wrote {out}")
    return 0


def cmd_solve(args) -> int:
    lf = load_leadfield(args.leadfield)
    if args.normalize and not lf.normalized:
        lf = normalize_columns(lf)
    Y = _load_matrix(args.measurements)
    options = {}
    for item in args.option or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"option {item!r} is not key=value")
        options[key] = _parse_value(raw)
    if args.alpha is not None:
        options["alpha"] = args.alpha
    solver = get_solver(args.solver, **options)
    est = solver(lf, Y)
    _write_json(est.to_dict(), args.out)
    return 0


def cmd_bench(args) -> int:
    doc = _config(args)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out:
        doc["output_dir"] = args.out
    cfg = bench.CampaignConfig.from_dict(doc)
    if not cfg.output_dir:
        raise ConfigError("bench needs an output directory (--out or output_dir)")
    results, _ = bench.run_campaign(cfg, workers=args.workers)
    failed = sum(r.failed for r in results)
    print(f"{len(results)} trials, {failed} failed -> {cfg.output_dir}")
    return 0


def cmd_report(args) -> int:
    src = Path(args.results)
    if src.is_dir():
        src = src / "results.json"
    if not src.exists():
        raise DataError(f"no such file: {src}")
    results = bench.load_results(src)
    for p in bench.report(results, args.format, args.out or src.parent):
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eegsparse", description="Sparse EEG source localization toolkit.")
    p.add_argument("--version", action="version", version=_version())
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted path, JSON value); repeatable")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    lf = sub.add_parser("leadfield", help="generate or inspect lead fields")
    lfs = lf.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = lfs.add_parser("gen", parents=[common], help="generate a spherical-head lead field")
    g.add_argument("--spec", help="JSON sphere spec (head_radius, grid_spacing, electrode_count, ...)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--format", choices=("bin", "csv"), default="bin")
    g.add_argument("--dof", type=int, choices=(1, 3))
    g.add_argument("--normalize", action="store_true", help="store unit-norm columns")
    g.set_defaults(func=cmd_leadfield_gen)
    i = lfs.add_parser("info", help="summarize a stored lead field")
    i.add_argument("path")
    i.set_defaults(func=cmd_leadfield_info)

    s = sub.add_parser("simulate", parents=[common], help="simulate measurements for one scenario")
    s.add_argument("--leadfield", required=True)
    s.add_argument("--config", help="JSON with test_case, scale, noise, erp")
    s.add_argument("--test-case", default="TC-I")
    s.add_argument("--scale", type=float, default=0.75, help="distance scale for test-case bounds")
    s.add_argument("--noise", default="none", help="e.g. none, pink-1, brown-4, sensor_percent-5")
    s.add_argument("--out", required=True, help="measurements CSV (channels x samples)")
    s.add_argument("--truth", help="write the ground-truth scenario JSON here")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("solve", parents=[common], help="run one solver")
    v.add_argument("--solver", required=True, choices=SOLVER_NAMES)
    v.add_argument("--leadfield", required=True)
    v.add_argument("--measurements", required=True, help="CSV, .npy or JSON matrix (channels x samples)")
    v.add_argument("--alpha", type=float, help="regularization parameter")
    v.add_argument("--option", action="append", metavar="KEY=VALUE", help="solver option; repeatable")
    v.add_argument("--normalize", action="store_true", help="normalize lead-field columns first")
    v.add_argument("--out", help="estimate JSON (default stdout)")
    v.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", parents=[common], help="run a Monte-Carlo campaign")
    b.add_argument("--config", help="campaign JSON")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", help="output directory (overrides output_dir)")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="re-render reports from results.json")
    r.add_argument("--results", required=True, help="results.json or the campaign directory")
    r.add_argument("--format", required=True, choices=("csv", "json", "md"))
    r.add_argument("--out", help="output directory (default: next to the results)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "seed", None) is None and args.command == "simulate":
            args.seed = 0
        if not hasattr(args, "set"):
            args.set = None
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:  # ConfigError and DataError included
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
