"""Core domain types shared across the package.

Units are fixed throughout: positions in mm, scalp potentials in µV,
sampling rates in Hz. All containers are frozen; array fields are
copied and marked read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np

ORIENT_TOL = 1e-9
NORM_TOL = 1e-9
SPHERE_TOL = 1e-6


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _adjacency(adj) -> tuple:
    return tuple(tuple(int(j) for j in nb) for nb in adj)


@dataclass(frozen=True, eq=False)
class SourceSpace:
    """Dipole grid: positions (M, 3) in mm, orientations and neighbor lists.

    ``orientations`` is either an (M, 3) array of unit vectors (fixed
    orientation, ``dof=1``) or the marker ``"free"`` (``dof=3``).
    """

    positions: np.ndarray
    orientations: Union[np.ndarray, str]
    dof: int
    adjacency: tuple
    head_radius: float = np.inf
    spacing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions).reshape(-1, 3))
        if not isinstance(self.orientations, str):
            object.__setattr__(self, "orientations", _frozen(self.orientations).reshape(-1, 3))
        object.__setattr__(self, "adjacency", _adjacency(self.adjacency))

    @property
    def n_sources(self) -> int:
        return self.positions.shape[0]

    @property
    def depth(self) -> np.ndarray:
        """Distance of each source from the sphere centre (mm)."""
        return np.linalg.norm(self.positions, axis=1)

    def subset(self, indices: Sequence[int]) -> "SourceSpace":
        """Restrict to ``indices``; neighbor lists are re-indexed and pruned."""
        idx = np.asarray(indices, dtype=int)
        remap = {int(old): new for new, old in enumerate(idx)}
        adj = [[remap[j] for j in self.adjacency[i] if j in remap] for i in idx] if self.adjacency else ()
        orient = self.orientations if isinstance(self.orientations, str) else self.orientations[idx]
        return SourceSpace(self.positions[idx], orient, self.dof, adj, self.head_radius, self.spacing)

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "orientations": self.orientations if isinstance(self.orientations, str) else self.orientations.tolist(),
            "dof": self.dof,
            "adjacency": [list(a) for a in self.adjacency],
            "head_radius": None if np.isinf(self.head_radius) else float(self.head_radius),
            "spacing": float(self.spacing),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceSpace":
        hr = d.get("head_radius")
        return cls(
            np.asarray(d["positions"], dtype=float).reshape(-1, 3),
            d["orientations"] if isinstance(d["orientations"], str) else np.asarray(d["orientations"], dtype=float),
            int(d["dof"]),
            d.get("adjacency", ()),
            np.inf if hr is None else float(hr),
            float(d.get("spacing", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class ElectrodeArray:
    positions: np.ndarray
    adjacency: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions).reshape(-1, 3))
        object.__setattr__(self, "adjacency", _adjacency(self.adjacency))
        if not self.radius and self.positions.size:
            object.__setattr__(self, "radius", float(np.linalg.norm(self.positions, axis=1).mean()))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "adjacency": [list(a) for a in self.adjacency],
            "radius": float(self.radius),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ElectrodeArray":
        return cls(np.asarray(d["positions"], dtype=float), d.get("adjacency", ()), float(d.get("radius", 0.0)))


@dataclass(frozen=True, eq=False)
class LeadField:
    """Gain matrix ``N x (dof*M)`` with the source space and electrodes it maps.

    When ``normalized`` is set, ``column_weights`` holds the column norms
    the gain had before normalization, so ``gain * column_weights`` is the
    physical gain.
    """

    gain: np.ndarray
    source_space: SourceSpace
    electrodes: ElectrodeArray
    column_weights: np.ndarray = None
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gain", _frozen(self.gain))
        w = np.ones(self.gain.shape[1]) if self.column_weights is None else self.column_weights
        object.__setattr__(self, "column_weights", _frozen(w))

    @property
    def n_channels(self) -> int:
        return self.gain.shape[0]

    @property
    def n_sources(self) -> int:
        return self.source_space.n_sources

    @property
    def dof(self) -> int:
        return self.source_space.dof

    def block(self, j: int) -> np.ndarray:
        """Gain columns of source ``j`` (``N x dof``)."""
        d = self.dof
        return self.gain[:, d * j:d * (j + 1)]

    def columns(self, sources: Sequence[int]) -> np.ndarray:
        """Column indices belonging to the given sources."""
        s = np.asarray(sources, dtype=int)
        return (s[:, None] * self.dof + np.arange(self.dof)).ravel()

    def physical_gain(self) -> np.ndarray:
        return self.gain * self.column_weights if self.normalized else np.asarray(self.gain)

    def restrict(self, sources: Sequence[int]) -> "LeadField":
        cols = self.columns(sources)
        return LeadField(self.gain[:, cols], self.source_space.subset(sources), self.electrodes,
                         self.column_weights[cols], self.normalized)

    def to_dict(self) -> dict:
        return {
            "gain": self.gain.tolist(),
            "column_weights": self.column_weights.tolist(),
            "normalized": self.normalized,
            "source_space": self.source_space.to_dict(),
            "electrodes": self.electrodes.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeadField":
        return cls(np.asarray(d["gain"], dtype=float), SourceSpace.from_dict(d["source_space"]),
                   ElectrodeArray.from_dict(d["electrodes"]), np.asarray(d["column_weights"], dtype=float),
                   bool(d["normalized"]))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    kind: str = "none"  # none | white | pink | brown | sensor_percent
    amplitude: float = 0.0

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}-{self.amplitude:g}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "amplitude": float(self.amplitude)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(d.get("kind", "none"), float(d.get("amplitude", 0.0)))

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """Parse labels such as ``none``, ``pink-1`` or ``sensor_percent-5``."""
        if text == "none":
            return cls()
        kind, _, amp = text.rpartition("-")
        return cls(kind, float(amp))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Ground truth for one simulated trial.

    ``active_orientations`` is an (n, 3) array of unit moment directions,
    ``"fixed"`` (use the orientation carried by the lead field / source
    space) or ``"free"`` (directions drawn from ``seed`` at simulation).
    """

    active_indices: np.ndarray
    active_orientations: Union[np.ndarray, str]
    waveforms: np.ndarray
    fs: float
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "active_indices", _frozen(self.active_indices, int).ravel())
        if not isinstance(self.active_orientations, str):
            object.__setattr__(self, "active_orientations", _frozen(self.active_orientations).reshape(-1, 3))
        wf = np.array(self.waveforms, dtype=float)
        if wf.ndim == 1:
            wf = wf[None, :]
        object.__setattr__(self, "waveforms", _frozen(wf))

    @property
    def n_times(self) -> int:
        return self.waveforms.shape[1]

    def to_dict(self) -> dict:
        o = self.active_orientations
        return {
            "name": self.name,
            "active_indices": self.active_indices.tolist(),
            "active_orientations": o if isinstance(o, str) else o.tolist(),
            "waveforms": self.waveforms.tolist(),
            "fs": float(self.fs),
            "noise": self.noise.to_dict(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        o = d["active_orientations"]
        return cls(np.asarray(d["active_indices"], dtype=int), o if isinstance(o, str) else np.asarray(o, dtype=float),
                   np.asarray(d["waveforms"], dtype=float), float(d["fs"]), NoiseSpec.from_dict(d.get("noise", {})),
                   int(d.get("seed", 0)), d.get("name", ""))


@dataclass(frozen=True, eq=False)
class Measurements:
    data: np.ndarray
    fs: float
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(np.atleast_2d(self.data)))

    def to_dict(self) -> dict:
        return {"data": self.data.tolist(), "fs": float(self.fs), "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "Measurements":
        return cls(np.asarray(d["data"], dtype=float), float(d["fs"]), d.get("provenance", ""))


@dataclass(frozen=True, eq=False)
class SourceEstimate:
    amplitudes: np.ndarray
    solver_name: str
    iterations_used: int = 0
    converged: bool = True
    residual_norm: float = float("nan")
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _frozen(np.atleast_2d(self.amplitudes)))

    def to_dict(self) -> dict:
        return {
            "solver_name": self.solver_name,
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
            "residual_norm": float(self.residual_norm),
            "amplitudes": self.amplitudes.tolist(),
            "extras": _jsonable(self.extras),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceEstimate":
        return cls(np.asarray(d["amplitudes"], dtype=float), d["solver_name"], int(d["iterations_used"]),
                   bool(d["converged"]), float(d["residual_norm"]), dict(d.get("extras", {})))


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


# -- validation ---------------------------------------------------------------

def _check_adjacency(adj, n, label) -> list:
    out = []
    if not adj:
        return out
    if len(adj) != n:
        return [f"{label} adjacency length {len(adj)} != {n}"]
    sets = [set(a) for a in adj]
    for i, nb in enumerate(sets):
        for j in nb:
            if not 0 <= j < n:
                return [f"{label} adjacency index {j} out of range"]
            if j == i:
                return [f"{label} adjacency contains self-loop at {i}"]
            if i not in sets[j]:
                return [f"asymmetric adjacency: {j} in adj({i}) but {i} not in adj({j})"]
    return out


def _validate_source_space(ss: SourceSpace) -> list:
    v = []
    if ss.dof not in (1, 3):
        v.append(f"dof must be 1 or 3, got {ss.dof}")
    if not np.all(np.isfinite(ss.positions)):
        v.append("non-finite source position")
    if ss.dof == 1:
        if isinstance(ss.orientations, str):
            v.append("dof=1 requires explicit orientations")
        elif ss.orientations.shape != ss.positions.shape:
            v.append("orientation count does not match positions")
        else:
            norms = np.linalg.norm(ss.orientations, axis=1)
            if np.any(np.abs(norms - 1.0) > ORIENT_TOL):
                v.append("non-unit orientation")
    elif ss.dof == 3 and not isinstance(ss.orientations, str):
        norms = np.linalg.norm(ss.orientations, axis=1)
        if np.any(np.abs(norms - 1.0) > ORIENT_TOL):
            v.append("non-unit orientation")
    v += _check_adjacency(ss.adjacency, ss.n_sources, "source")
    if np.isfinite(ss.head_radius) and ss.n_sources and np.any(ss.depth >= ss.head_radius):
        v.append("source position outside head radius")
    return v


def _validate_electrodes(el: ElectrodeArray) -> list:
    v = []
    if el.count < 2:
        v.append(f"need at least 2 electrodes, got {el.count}")
    r = np.linalg.norm(el.positions, axis=1)
    if el.count and np.any(np.abs(r - el.radius) > SPHERE_TOL * el.radius):
        v.append("electrode off the scalp sphere")
    v += _check_adjacency(el.adjacency, el.count, "electrode")
    return v


def _validate_leadfield(lf: LeadField) -> list:
    v = _validate_source_space(lf.source_space) + _validate_electrodes(lf.electrodes)
    g = lf.gain
    if g.ndim != 2:
        return v + ["gain must be a matrix"]
    if not np.all(np.isfinite(g)):
        v.append("non-finite gain entry")
    if g.shape[0] != lf.electrodes.count:
        v.append(f"gain rows {g.shape[0]} != electrode count {lf.electrodes.count}")
    if g.shape[1] != lf.dof * lf.n_sources:
        v.append(f"gain columns {g.shape[1]} != dof*M = {lf.dof * lf.n_sources}")
    if lf.column_weights.shape != (g.shape[1],) or np.any(lf.column_weights <= 0):
        v.append("column weights must be positive, one per column")
    if lf.normalized and np.all(np.isfinite(g)):
        if np.any(np.abs(np.linalg.norm(g, axis=0) - 1.0) > NORM_TOL):
            v.append("normalized lead field has non-unit column")
    return v


def _validate_scenario(sc: Scenario) -> list:
    v = []
    idx = sc.active_indices
    if len(set(idx.tolist())) != idx.size:
        v.append("active indices not distinct")
    if np.any(idx < 0):
        v.append("negative active index")
    if sc.waveforms.shape[0] != idx.size:
        v.append("one waveform per active source required")
    if sc.n_times < 1:
        v.append("T must be >= 1")
    if not sc.fs > 0:
        v.append("fs must be positive")
    if not isinstance(sc.active_orientations, str):
        if sc.active_orientations.shape[0] != idx.size:
            v.append("one orientation per active source required")
        elif np.any(np.abs(np.linalg.norm(sc.active_orientations, axis=1) - 1) > ORIENT_TOL):
            v.append("non-unit orientation")
    elif sc.active_orientations not in ("fixed", "free"):
        v.append(f"unknown orientation marker {sc.active_orientations!r}")
    if sc.noise.kind not in ("none", "white", "pink", "brown", "sensor_percent"):
        v.append(f"unknown noise kind {sc.noise.kind!r}")
    return v


def _validate_measurements(m: Measurements) -> list:
    v = []
    if not np.all(np.isfinite(m.data)):
        v.append("non-finite measurement")
    if not m.fs > 0:
        v.append("fs must be positive")
    return v


def _validate_estimate(e: SourceEstimate) -> list:
    return [] if np.all(np.isfinite(e.amplitudes)) else ["non-finite estimate"]


def validate(obj, *, leadfield: LeadField | None = None) -> list:
    """Return a list of invariant violations; an empty list means valid.

    Passing ``leadfield`` additionally checks shape agreement for
    measurements, scenarios and estimates.
    """
    table = {
        SourceSpace: _validate_source_space,
        ElectrodeArray: _validate_electrodes,
        LeadField: _validate_leadfield,
        Scenario: _validate_scenario,
        Measurements: _validate_measurements,
        SourceEstimate: _validate_estimate,
    }
    fn = table.get(type(obj))
    if fn is None:
        raise TypeError(f"cannot validate {type(obj).__name__}")
    out = fn(obj)
    if leadfield is not None:
        if isinstance(obj, Measurements) and obj.data.shape[0] != leadfield.n_channels:
            out.append("measurement rows do not match electrode count")
        if isinstance(obj, SourceEstimate) and obj.amplitudes.shape[0] != leadfield.gain.shape[1]:
            out.append("estimate rows do not match lead field columns")
        if isinstance(obj, Scenario) and obj.active_indices.size and obj.active_indices.max() >= leadfield.n_sources:
            out.append("active index outside source space")
    return out


class ConfigError(ValueError):
    """Inconsistent configuration (exit code 2 at the CLI)."""


class DataError(ValueError):
    """Malformed or non-finite input data (exit code 2 at the CLI)."""


class SolverError(RuntimeError):
    """A solver failed numerically (exit code 3 at the CLI)."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration
