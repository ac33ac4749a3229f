"""Lead-field construction: synthetic spherical forward model, file I/O,
column normalization and grid adjacency.

The synthetic gain uses the potential of a current dipole in an infinite
homogeneous conductor,

    V(r_e) = d . (r_e - r_d) / (4 pi sigma |r_e - r_d|^3),

evaluated with positions in mm and moments in nA.m; gain entries are in
µV per nA.m.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .model import DataError, ElectrodeArray, LeadField, SourceSpace, validate

FORMAT_VERSION = "1"
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
SOURCE_RADIUS_FRACTION = 0.9
ELECTRODE_NEIGHBORS = 6


@dataclass(frozen=True)
class SphereSpec:
    head_radius: float = 85.0
    conductivity: float = 0.33
    grid_spacing: float = 10.0
    electrode_count: int = 64
    electrode_cap_angle: float = 120.0  # max polar angle from the vertex, degrees

    def __post_init__(self):
        if not self.head_radius > 0:
            raise ValueError("head_radius must be positive")
        if not self.grid_spacing > 0:
            raise ValueError("grid_spacing must be positive")
        if self.electrode_count < 2:
            raise ValueError("electrode_count must be >= 2")
        if not 0 < self.electrode_cap_angle <= 180:
            raise ValueError("electrode_cap_angle must lie in (0, 180]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SphereSpec":
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in keys})


def grid_positions(head_radius: float, spacing: float) -> np.ndarray:
    """Regular cubic grid through the origin, strictly inside 0.9 * radius."""
    limit = SOURCE_RADIUS_FRACTION * head_radius
    n = int(np.floor(limit / spacing))
    ax = np.arange(-n, n + 1) * spacing
    gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return pts[np.linalg.norm(pts, axis=1) < limit]


def cap_electrodes(count: int, radius: float, cap_angle_deg: float) -> np.ndarray:
    """Golden-angle spiral with equal-area spacing on the cap ``theta <= cap``."""
    zmin = np.cos(np.deg2rad(cap_angle_deg))
    i = np.arange(count)
    z = 1.0 - (1.0 - zmin) * (i + 0.5) / count
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    return radius * np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def electrode_adjacency(positions: np.ndarray, k: int = ELECTRODE_NEIGHBORS) -> list:
    """k nearest electrodes by geodesic (great-circle) distance, symmetrized."""
    u = positions / np.linalg.norm(positions, axis=1, keepdims=True)
    ang = np.arccos(np.clip(u @ u.T, -1.0, 1.0))
    np.fill_diagonal(ang, np.inf)
    k = min(k, len(positions) - 1)
    nearest = np.argsort(ang, axis=1, kind="stable")[:, :k]
    sets = [set() for _ in range(len(positions))]
    for i, row in enumerate(nearest):
        for j in row:
            sets[i].add(int(j))
            sets[int(j)].add(i)
    return [sorted(s) for s in sets]


def dipole_potential(electrodes: np.ndarray, source: np.ndarray, moment: np.ndarray,
                     conductivity: float) -> np.ndarray:
    """Potential (µV) at ``electrodes`` (mm) of a dipole ``moment`` (nA.m) at ``source``."""
    diff = (electrodes - source) * 1e-3
    dist = np.linalg.norm(diff, axis=1)
    volts = (diff @ np.asarray(moment, float)) * 1e-9 / (4.0 * np.pi * conductivity * dist ** 3)
    return volts * 1e6


def _unit_gain(electrodes: np.ndarray, sources: np.ndarray, conductivity: float) -> np.ndarray:
    # N x M x 3: potential of unit x/y/z moments at every source
    diff = (electrodes[:, None, :] - sources[None, :, :]) * 1e-3
    dist = np.linalg.norm(diff, axis=2)
    return diff * (1e-3 / (4.0 * np.pi * conductivity)) / dist[:, :, None] ** 3


def radial_orientations(positions: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(positions, axis=1, keepdims=True)
    out = np.tile([0.0, 0.0, 1.0], (len(positions), 1))
    nz = r[:, 0] > 0
    out[nz] = positions[nz] / r[nz]
    return out


def generate_sphere_leadfield(spec: SphereSpec, dof: int = 1) -> LeadField:
    """Build a deterministic synthetic lead field on a spherical head.

    ``dof=1`` sources are oriented radially (the centre source points to
    the vertex); ``dof=3`` yields x, y, z columns per source.
    """
    if dof not in (1, 3):
        raise ValueError("dof must be 1 or 3")
    pos = grid_positions(spec.head_radius, spec.grid_spacing)
    if len(pos) == 0:
        raise ValueError("empty source space: grid_spacing too large for head radius")
    elec = cap_electrodes(spec.electrode_count, spec.head_radius, spec.electrode_cap_angle)
    unit = _unit_gain(elec, pos, spec.conductivity)
    if dof == 3:
        gain = unit.reshape(len(elec), -1)
        orient = "free"
    else:
        orient = radial_orientations(pos)
        gain = np.einsum("nmk,mk->nm", unit, orient)
    ss = SourceSpace(pos, orient, dof, (), spec.head_radius, spec.grid_spacing)
    ss = SourceSpace(pos, orient, dof, grid_adjacency(ss, 1), spec.head_radius, spec.grid_spacing)
    el = ElectrodeArray(elec, electrode_adjacency(elec), spec.head_radius)
    return LeadField(gain, ss, el)


def normalize_columns(lf: LeadField) -> LeadField:
    """Scale every gain column to unit norm, keeping the original norms.

    Idempotent: a normalized lead field is returned unchanged.
    """
    if lf.normalized:
        return lf
    norms = np.linalg.norm(lf.gain, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"degenerate source column {int(np.flatnonzero(norms == 0)[0])}")
    return LeadField(lf.gain / norms, lf.source_space, lf.electrodes, lf.column_weights * norms, True)


def grid_adjacency(ss: SourceSpace, levels: int = 1) -> list:
    """Neighbor index sets on a regular grid.

    Level 1 holds the sources within sqrt(3) * spacing (the 26-neighborhood
    of a cubic grid); level k is the k-fold closure. Self is excluded.
    """
    if levels < 1:
        raise ValueError("levels must be a positive integer")
    m = ss.n_sources
    if ss.spacing > 0:
        tree = cKDTree(ss.positions)
        pairs = tree.query_pairs(np.sqrt(3.0) * ss.spacing * (1 + 1e-6), output_type="ndarray")
        a = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
        a = (a + a.T).tocsr()
    else:
        rows = [i for i, nb in enumerate(ss.adjacency) for _ in nb]
        cols = [j for nb in ss.adjacency for j in nb]
        a = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    return neighborhood_closure(a, levels)


def neighborhood_closure(adj, levels: int) -> list:
    """k-fold closure of an adjacency matrix or neighbor list, self excluded."""
    if not sparse.issparse(adj):
        m = len(adj)
        rows = [i for i, nb in enumerate(adj) for _ in nb]
        cols = [j for nb in adj for j in nb]
        adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    m = adj.shape[0]
    a = (adj != 0).astype(np.int64).tocsr()
    reach = a.copy()
    step = sparse.identity(m, dtype=np.int64, format="csr") + a
    for _ in range(levels - 1):
        reach = ((reach + sparse.identity(m, dtype=np.int64)) @ step != 0).astype(np.int64)
    reach = reach.tolil()
    reach.setdiag(0)
    reach = reach.tocsr()
    reach.eliminate_zeros()
    return [reach.indices[reach.indptr[i]:reach.indptr[i + 1]].tolist() for i in range(m)]


# -- file format ----------------------------------------------------------------

def save_leadfield(lf: LeadField, path, fmt: str = "bin") -> Path:
    """Write ``leadfield.json`` plus a sibling matrix file into directory ``path``.

    The binary matrix is column-major little-endian float64; ``fmt="csv"``
    writes a plain CSV matrix instead.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    ss, el = lf.source_space, lf.electrodes
    if fmt == "bin":
        matrix_name = "gain.bin"
        (out / matrix_name).write_bytes(np.asarray(lf.gain, dtype="<f8").tobytes(order="F"))
    elif fmt == "csv":
        matrix_name = "gain.csv"
        np.savetxt(out / matrix_name, lf.gain, delimiter=",", fmt="%.17g")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    header = {
        "format_version": FORMAT_VERSION,
        "N": lf.n_channels,
        "M": lf.n_sources,
        "dof": lf.dof,
        "units": {"position": "mm", "gain": "uV per nA.m"},
        "matrix": {"file": matrix_name, "dtype": "<f8", "order": "F"} if fmt == "bin" else {"file": matrix_name},
        "normalized": lf.normalized,
        "column_weights": lf.column_weights.tolist(),
        "source_positions": ss.positions.tolist(),
        "orientations": ss.orientations if isinstance(ss.orientations, str) else ss.orientations.tolist(),
        "source_adjacency": [list(a) for a in ss.adjacency],
        "head_radius": None if np.isinf(ss.head_radius) else ss.head_radius,
        "grid_spacing": ss.spacing,
        "electrode_positions": el.positions.tolist(),
        "electrode_adjacency": [list(a) for a in el.adjacency],
        "scalp_radius": el.radius,
    }
    (out / "leadfield.json").write_text(json.dumps(header, indent=1))
    return out


def load_leadfield(path) -> LeadField:
    """Read a lead field written by :func:`save_leadfield`.

    ``path`` may be the directory or the header file itself. Raises
    :class:`DataError` for shape mismatches or non-finite entries.
    """
    p = Path(path)
    header_path = p / "leadfield.json" if p.is_dir() else p
    try:
        h = json.loads(header_path.read_text())
        n, m, dof = int(h["N"]), int(h["M"]), int(h["dof"])
        mat = h["matrix"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable lead-field header {header_path}: {exc}") from exc
    mpath = header_path.parent / mat["file"]
    cols = dof * m
    if mpath.suffix == ".csv":
        gain = np.loadtxt(mpath, delimiter=",", ndmin=2)
        if gain.shape != (n, cols):
            raise DataError(f"gain shape {gain.shape} does not match declared N={n}, M={m}, dof={dof}")
    else:
        raw = np.fromfile(mpath, dtype=mat.get("dtype", "<f8"))
        if raw.size != n * cols:
            raise DataError(f"gain has {raw.size} entries, expected N*dof*M = {n * cols}")
        gain = raw.reshape((n, cols), order=mat.get("order", "F")).astype(float)
    if not np.all(np.isfinite(gain)):
        raise DataError("lead field contains non-finite entries")
    positions = np.asarray(h.get("source_positions") or np.zeros((m, 3)), dtype=float).reshape(-1, 3)
    orient = h.get("orientations")
    if orient is None:
        orient = "free" if dof == 3 else np.tile([0.0, 0.0, 1.0], (m, 1))
    elif not isinstance(orient, str):
        orient = np.asarray(orient, dtype=float)
    hr = h.get("head_radius")
    ss = SourceSpace(positions, orient, dof, h.get("source_adjacency") or (),
                     np.inf if hr is None else float(hr), float(h.get("grid_spacing") or 0.0))
    if len(positions) != m:
        raise DataError(f"{len(positions)} source positions for declared M={m}")
    el_pos = np.asarray(h.get("electrode_positions") or [], dtype=float).reshape(-1, 3)
    if len(el_pos) != n:
        raise DataError(f"{len(el_pos)} electrode positions for declared N={n}")
    el = ElectrodeArray(el_pos, h.get("electrode_adjacency") or (), float(h.get("scalp_radius") or 0.0))
    weights = h.get("column_weights")
    lf = LeadField(gain, ss, el, None if weights is None else np.asarray(weights, float),
                   bool(h.get("normalized", False)))
    problems = validate(lf)
    if problems:
        raise DataError("invalid lead field: " + "; ".join(problems))
    return lf


def leadfield_info(lf: LeadField) -> dict:
    depth = lf.source_space.depth
    return {
        "N": lf.n_channels,
        "M": lf.n_sources,
        "dof": lf.dof,
        "normalized": lf.normalized,
        "depth_mm": {"min": float(depth.min()), "max": float(depth.max())},
        "column_norm": {"min": float(np.linalg.norm(lf.gain, axis=0).min()),
                        "max": float(np.linalg.norm(lf.gain, axis=0).max())},
        "electrode_radius_mm": lf.electrodes.radius,
    }


def leadfield_from_config(cfg: dict) -> LeadField:
    """Build or load a lead field from a config entry.

    ``{"path": ...}`` loads a file; otherwise the keys of :class:`SphereSpec`
    plus ``dof`` describe a synthetic sphere.
    """
    if "path" in cfg:
        return load_leadfield(os.fspath(cfg["path"]))
    return generate_sphere_leadfield(SphereSpec.from_dict(cfg), int(cfg.get("dof", 1)))
