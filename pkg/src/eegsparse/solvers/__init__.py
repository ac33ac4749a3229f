"""Solver registry: ``get_solver(name, **options)`` returns ``f(leadfield, Y) -> SourceEstimate``."""

from __future__ import annotations

from dataclasses import fields
from functools import partial
from typing import Callable

from ..model import ConfigError, LeadField, SourceEstimate
from .extended import SissyOptions, sissy_solve, trap_music_estimate
from .linear import LinearSolverOptions, mne_solve, sloreta_solve
from .sparse import SparseSolverOptions, focuss_multi, irmxne_solve, mxne_solve, sbl_solve

Solver = Callable[[LeadField, object], SourceEstimate]

_LINEAR = {"mne": "identity", "wmne": "depth", "loreta": "laplacian"}
SOLVER_NAMES = ("mne", "wmne", "loreta", "sloreta", "focuss", "mxne", "irmxne",
                "sbl-wipf", "sbl-zhang", "trap-music", "sissy", "vb-sccd")

# bench-friendly defaults; any of them can be overridden per solver
DEFAULT_OPTIONS = {
    "focuss": {"focuss_stride": 20},
    "irmxne": {"reweight_rounds": 3},
}


def _build(cls, options: dict, **fixed):
    known = {f.name for f in fields(cls)}
    unknown = set(options) - known
    if unknown:
        raise ConfigError(f"unknown options for {cls.__name__}: {sorted(unknown)}")
    try:
        return cls(**{**options, **fixed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def get_solver(name: str, **options) -> Solver:
    if name not in SOLVER_NAMES:
        raise ConfigError(f"unknown solver {name!r}; choose from {', '.join(SOLVER_NAMES)}")
    options = {**DEFAULT_OPTIONS.get(name, {}), **options}
    if name in _LINEAR:
        return partial(mne_solve, opts=_build(LinearSolverOptions, options, weight_mode=_LINEAR[name]))
    if name == "sloreta":
        return partial(sloreta_solve, opts=_build(LinearSolverOptions, options))
    if name == "focuss":
        return partial(focuss_multi, opts=_build(SparseSolverOptions, options))
    if name == "mxne":
        return partial(mxne_solve, opts=_build(SparseSolverOptions, options))
    if name == "irmxne":
        return partial(irmxne_solve, opts=_build(SparseSolverOptions, options))
    if name.startswith("sbl-"):
        return partial(sbl_solve, opts=_build(SparseSolverOptions, options, sbl_variant=name[4:]))
    if name == "trap-music":
        unknown = set(options) - {"n_tilde", "drop_factor"}
        if unknown:
            raise ConfigError(f"unknown options for trap-music: {sorted(unknown)}")
        return partial(trap_music_estimate, **options)
    if name == "vb-sccd":
        return partial(sissy_solve, opts=_build(SissyOptions, options, alpha=0.0), name="vb-sccd")
    return partial(sissy_solve, opts=_build(SissyOptions, options), name="sissy")


__all__ = ["SOLVER_NAMES", "get_solver", "Solver"]
