"""Monte-Carlo campaign runner: sample scenario, simulate, solve, evaluate,
then aggregate per cell with Student-t confidence intervals."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats

from . import carss as carss_mod
from .headmodel import leadfield_from_config, normalize_columns
from .metrics import EvaluationConfig, evaluate
from .model import ConfigError, NoiseSpec, SolverError
from .simulate import ErpSpec, sample_scenario, simulate_measurements, test_case_from_config
from .solvers import get_solver

CSV_COLUMNS = ("test_case", "noise", "space", "carss", "solver", "trial", "seed", "a_prime", "sr_mean",
               "dle_mm", "sd_mm", "reduced_to", "wall_ms", "failed")
AGG_COLUMNS = ("test_case", "noise", "space", "carss", "solver", "n", "failed", "a_prime_mean", "a_prime_ci",
               "sr_mean", "dle_mm_mean", "sd_mm_mean", "reduced_to_mean", "a_prime_paired_diff",
               "a_prime_paired_ci")
CARSS_MODES = {"off": (False,), "on": (True,), "both": (False, True)}
DEFAULT_SPACE = {"name": "sphere", "head_radius": 85.0, "grid_spacing": 10.0, "electrode_count": 64, "dof": 1}


@dataclass(frozen=True)
class SolverEntry:
    name: str
    options: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, entry) -> "SolverEntry":
        if isinstance(entry, str):
            return cls(entry)
        return cls(entry["name"], dict(entry.get("options", {})))

    def to_dict(self) -> dict:
        return {"name": self.name, "options": self.options}


@dataclass(frozen=True)
class CampaignConfig:
    spaces: tuple = (DEFAULT_SPACE,)
    solvers: tuple = (SolverEntry("sloreta"),)
    test_cases: tuple = ("TC-I",)
    test_case_scale: float = 0.75
    noise_levels: tuple = ("none",)
    trials: int = 30
    carss: str = "off"
    carss_tau: float = carss_mod.DEFAULT_TAU
    carss_stride: int = carss_mod.DEFAULT_STRIDE
    carss_floor: float = carss_mod.PEAK_FLOOR
    carss_peel_rounds: int = carss_mod.DEFAULT_PEEL_ROUNDS
    seed: int = 0
    erp: ErpSpec = ErpSpec()
    evaluation: EvaluationConfig = EvaluationConfig()
    output_dir: str | None = None
    timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.solvers or not self.test_cases or not self.spaces or not self.noise_levels:
            raise ConfigError("campaign needs at least one space, solver, test case and noise level")
        if self.carss not in CARSS_MODES:
            raise ConfigError("carss must be one of off, on, both")

    @property
    def space_names(self) -> list:
        return [s.get("name", f"space{i}") for i, s in enumerate(self.spaces)]

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown campaign keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "spaces" in kw:
                kw["spaces"] = tuple(dict(s) for s in kw["spaces"])
            if "solvers" in kw:
                kw["solvers"] = tuple(SolverEntry.parse(s) for s in kw["solvers"])
            for key in ("test_cases", "noise_levels"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            if "erp" in kw:
                kw["erp"] = ErpSpec.from_dict(kw["erp"])
            if "evaluation" in kw:
                ev = dict(kw["evaluation"])
                if ev.get("time_window") is not None:
                    ev["time_window"] = tuple(ev["time_window"])
                kw["evaluation"] = EvaluationConfig(**ev)
            return cls(**kw)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid campaign config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "spaces": [dict(s) for s in self.spaces],
            "solvers": [s.to_dict() for s in self.solvers],
            "test_cases": list(self.test_cases),
            "test_case_scale": self.test_case_scale,
            "noise_levels": list(self.noise_levels),
            "trials": self.trials,
            "carss": self.carss,
            "carss_tau": self.carss_tau,
            "carss_stride": self.carss_stride,
            "carss_floor": self.carss_floor,
            "carss_peel_rounds": self.carss_peel_rounds,
            "seed": self.seed,
            "erp": self.erp.to_dict(),
            "evaluation": {"neighborhood_levels": self.evaluation.neighborhood_levels,
                           "peak_floor_fraction": self.evaluation.peak_floor_fraction,
                           "time_window": self.evaluation.time_window},
            "output_dir": self.output_dir,
            "timing": self.timing,
        }


@dataclass(frozen=True)
class TrialResult:
    test_case: str
    noise: str
    space: str
    carss: bool
    solver: str
    trial: int
    seed: int
    metrics: dict | None
    reduction: dict | None = None
    wall_ms: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.metrics is None

    def row(self) -> dict:
        m = self.metrics or {}
        return {
            "test_case": self.test_case, "noise": self.noise, "space": self.space,
            "carss": "on" if self.carss else "off", "solver": self.solver, "trial": self.trial,
            "seed": self.seed, "a_prime": m.get("a_prime"), "sr_mean": m.get("sr_mean"),
            "dle_mm": m.get("dle_mm"), "sd_mm": m.get("sd_mm"),
            "reduced_to": self.reduction["n_kept"] if self.reduction else None,
            "wall_ms": self.wall_ms, "failed": int(self.failed),
        }

    def to_dict(self) -> dict:
        d = self.row()
        d["sr"] = (self.metrics or {}).get("sr")
        d["error"] = self.error
        if self.reduction:
            d["reduction"] = self.reduction
        return d


def derive_seed(seed: int, *key: int) -> int:
    """Stable 32-bit seed for a sub-stream keyed by cell/trial coordinates."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint32)[0])


@lru_cache(maxsize=8)
def _leadfields(space_json: str):
    raw = leadfield_from_config(json.loads(space_json))
    return raw, normalize_columns(raw)


def _space_leadfields(space: dict):
    cfg = {k: v for k, v in space.items() if k != "name"}
    return _leadfields(json.dumps(cfg, sort_keys=True))


@lru_cache(maxsize=8)
def _signatures(space_json: str):
    return carss_mod.build_signatures(_leadfields(space_json)[1])


def _run_unit(cfg: CampaignConfig, si: int, ti: int, ni: int, trial: int) -> list:
    """All solver/CARSS cells sharing one simulated measurement."""
    space = cfg.spaces[si]
    raw, norm = _space_leadfields(space)
    tc = test_case_from_config(cfg.test_cases[ti], cfg.test_case_scale)
    noise = NoiseSpec.parse(cfg.noise_levels[ni]) if isinstance(cfg.noise_levels[ni], str) \
        else NoiseSpec.from_dict(cfg.noise_levels[ni])
    scen_seed = derive_seed(cfg.seed, 1, ti, si, trial)
    scen = sample_scenario(tc, raw.source_space, scen_seed, cfg.erp, NoiseSpec())
    scen = replace(scen, noise=noise, seed=derive_seed(cfg.seed, 2, ti, si, trial, ni))
    Y = simulate_measurements(raw, scen, trial).data
    truth = [int(i) for i in scen.active_indices]
    out = []
    report = None
    space_name = cfg.space_names[si]
    unreduced = {}
    for use_carss in CARSS_MODES[cfg.carss]:
        if use_carss and report is None:
            key = json.dumps({k: v for k, v in space.items() if k != "name"}, sort_keys=True)
            report = carss_mod.reduce_solution_space(norm, Y, cfg.carss_tau, cfg.carss_stride,
                                                     signatures=_signatures(key), floor=cfg.carss_floor,
                                                     peel_rounds=cfg.carss_peel_rounds)
        for k, entry in enumerate(cfg.solvers):
            solver = get_solver(entry.name, **entry.options)
            t0 = time.perf_counter()
            metrics, err, red = None, None, None
            try:
                if use_carss:
                    red = {"n_kept": int(report.kept.size), "ratio": report.ratio,
                           "truth_kept": [int(t in set(report.kept.tolist())) for t in truth]}
                    if k in unreduced and report.kept.size == norm.n_sources:
                        est = unreduced[k]  # identity reduction reproduces the direct solve
                    else:
                        est = carss_mod.solve_reduced(solver, norm, Y, report)
                else:
                    est = unreduced[k] = solver(norm, Y)
                if not np.all(np.isfinite(est.amplitudes)):
                    raise SolverError("non-finite estimate")
                metrics = evaluate(est.amplitudes, norm, truth, cfg.evaluation)
            except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
                err = f"{type(exc).__name__}: {exc}"
            wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else None
            out.append(TrialResult(tc.name, noise.label, space_name, use_carss, entry.name, trial,
                                   scen_seed, metrics, red, wall, err))
    return out


def _units(cfg: CampaignConfig):
    return [(si, ti, ni, k) for si in range(len(cfg.spaces)) for ti in range(len(cfg.test_cases))
            for ni in range(len(cfg.noise_levels)) for k in range(cfg.trials)]


def run_trial(cfg: CampaignConfig, cell: dict, trial: int) -> TrialResult:
    """One cell (space, test_case, noise, carss, solver indices/names) for one trial."""
    si = cfg.space_names.index(cell.get("space", cfg.space_names[0]))
    ti = cell.get("test_case_index", 0)
    ni = cell.get("noise_index", 0)
    sub = replace(cfg, solvers=tuple(s for s in cfg.solvers if s.name == cell["solver"]) or cfg.solvers[:1],
                  carss="on" if cell.get("carss") else "off")
    return _run_unit(sub, si, ti, ni, trial)[0]


def _sort_key(cfg: CampaignConfig):
    solvers = [s.name for s in cfg.solvers]
    tcs = [test_case_from_config(t, cfg.test_case_scale).name for t in cfg.test_cases]
    noises = [NoiseSpec.parse(n).label if isinstance(n, str) else NoiseSpec.from_dict(n).label
              for n in cfg.noise_levels]
    spaces = cfg.space_names
    return lambda r: (spaces.index(r.space), tcs.index(r.test_case), noises.index(r.noise), r.carss,
                      solvers.index(r.solver), r.trial)


def _unit_worker(args):
    cfg_dict, unit = args
    return _run_unit(CampaignConfig.from_dict(cfg_dict), *unit)


def run_campaign(cfg: CampaignConfig, workers: int = 1, write: bool = True):
    """Run every cell and trial; returns ``(results, aggregates)``.

    Output is independent of ``workers``: every trial draws from its own
    seed sub-stream and results are sorted before aggregation.
    """
    out_dir = None
    if write and cfg.output_dir:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise OSError(f"output directory {out_dir} is not writable")
    units = _units(cfg)
    results = []
    if workers <= 1:
        for u in units:
            results.extend(_run_unit(cfg, *u))
    else:
        payload = [(cfg.to_dict(), u) for u in units]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_unit_worker, payload):
                results.extend(chunk)
    results.sort(key=_sort_key(cfg))
    aggs = aggregate(results)
    if out_dir is not None:
        for fmt in ("csv", "json", "md"):
            report(results, fmt, out_dir, aggregates=aggs, config=cfg)
    return results, aggs


def mean_ci(values, level: float = 0.95):
    """Mean and Student-t half-width; half-width is 0 for a single value."""
    v = np.asarray([x for x in values if x is not None], float)
    if v.size == 0:
        return None, None
    m = float(v.mean())
    if v.size < 2:
        return m, 0.0
    sd = float(v.std(ddof=1))
    return m, float(stats.t.ppf(0.5 + level / 2, v.size - 1) * sd / math.sqrt(v.size))


def aggregate(results) -> list:
    cells: dict = {}
    for r in results:
        cells.setdefault((r.test_case, r.noise, r.space, r.carss, r.solver), []).append(r)
    rows = []
    for key, rs in cells.items():
        ok = [r for r in rs if not r.failed]
        a_mean, a_ci = mean_ci([r.metrics["a_prime"] for r in ok])
        row = dict(zip(("test_case", "noise", "space", "carss", "solver"), key))
        row["carss"] = "on" if key[3] else "off"
        row.update({
            "n": len(ok), "failed": len(rs) - len(ok), "a_prime_mean": a_mean, "a_prime_ci": a_ci,
            "sr_mean": mean_ci([r.metrics["sr_mean"] for r in ok])[0],
            "dle_mm_mean": mean_ci([r.metrics["dle_mm"] for r in ok])[0],
            "sd_mm_mean": mean_ci([r.metrics["sd_mm"] for r in ok])[0],
            "reduced_to_mean": mean_ci([r.reduction["n_kept"] for r in ok if r.reduction])[0],
            "a_prime_paired_diff": None, "a_prime_paired_ci": None,
        })
        if key[3]:
            base = {r.trial: r for r in cells.get(key[:3] + (False, key[4]), []) if not r.failed}
            diffs = [r.metrics["a_prime"] - base[r.trial].metrics["a_prime"] for r in ok if r.trial in base]
            row["a_prime_paired_diff"], row["a_prime_paired_ci"] = mean_ci(diffs)
        rows.append(row)
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _markdown(results, aggs) -> str:
    lines = ["# Campaign summary", "",
             "A' mean with symmetric 95% Student-t half-width over successful trials.", ""]
    for tc in dict.fromkeys(a["test_case"] for a in aggs):
        lines += [f"## {tc}", ""]
        sub = [a for a in aggs if a["test_case"] == tc]
        solvers = list(dict.fromkeys(a["solver"] for a in sub))
        lines.append("| noise | space | carss | " + " | ".join(solvers) + " |")
        lines.append("|" + "---|" * (3 + len(solvers)))
        for key in dict.fromkeys((a["noise"], a["space"], a["carss"]) for a in sub):
            cells = []
            for s in solvers:
                a = next((x for x in sub if (x["noise"], x["space"], x["carss"], x["solver"]) == key + (s,)), None)
                if a is None or a["a_prime_mean"] is None:
                    cells.append("n/a")
                else:
                    txt = f"{a['a_prime_mean']:.3f} ± {a['a_prime_ci']:.3f}"
                    if a["failed"]:
                        txt += f" ({a['failed']} failed)"
                    cells.append(txt)
            lines.append(f"| {key[0]} | {key[1]} | {key[2]} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def report(results, fmt: str, out_dir, aggregates=None, config: CampaignConfig | None = None) -> list:
    """Write ``results.csv``/``aggregates.csv``, ``results.json`` or ``summary.md``."""
    if fmt not in ("csv", "json", "md"):
        raise ConfigError(f"unknown report format {fmt!r}")
    if not results:
        raise ValueError("no results to report")
    aggs = aggregates if aggregates is not None else aggregate(results)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        (out / "results.csv").write_text(_csv_text([r.row() for r in results], CSV_COLUMNS))
        (out / "aggregates.csv").write_text(_csv_text(aggs, AGG_COLUMNS))
        return [out / "results.csv", out / "aggregates.csv"]
    if fmt == "json":
        doc = {"config": config.to_dict() if config else None,
               "trials": [r.to_dict() for r in results], "aggregates": aggs}
        (out / "results.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
        return [out / "results.json"]
    (out / "summary.md").write_text(_markdown(results, aggs))
    return [out / "summary.md"]


def load_results(path) -> list:
    """Rebuild TrialResults from a ``results.json`` file."""
    doc = json.loads(Path(path).read_text())
    out = []
    for d in doc["trials"]:
        metrics = None if d["failed"] else {"a_prime": d["a_prime"], "sr_mean": d["sr_mean"],
                                            "dle_mm": d["dle_mm"], "sd_mm": d["sd_mm"], "sr": d.get("sr")}
        out.append(TrialResult(d["test_case"], d["noise"], d["space"], d["carss"] == "on", d["solver"],
                               d["trial"], d["seed"], metrics, d.get("reduction"), d["wall_ms"], d.get("error")))
    return out
