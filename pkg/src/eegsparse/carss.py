"""Certainty-based reduction of the solution space.

Stage I scores every lead-field column against the measured scalp maps:
a column is plausible at a time sample when a scalp peak sits at (or next
to) the column's own peak electrode, and its certainty is the folded
cosine between its normalized neighborhood shape and the measurement on
the same electrodes. Weak sources hidden under stronger ones are exposed
by peeling: the best-matching columns are fitted out of the map and peaks
are detected again on the residual. Stage II runs any solver on the
surviving columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ConfigError, LeadField, SourceEstimate
from .solvers._linalg import check_measurements

PEAK_FLOOR = 0.2
DEFAULT_TAU = 0.5
DEFAULT_STRIDE = 10
DEFAULT_PEEL_ROUNDS = 6
PEEL_STOP = 1e-6  # residual max relative to the map max


@dataclass(frozen=True, eq=False)
class PeakSignature:
    peak: np.ndarray          # (C,) peak electrode per column
    neighborhoods: tuple      # per electrode: sorted electrode indices incl. itself
    shape: np.ndarray         # (C, N) unit-norm shape, zero outside the neighborhood

    @property
    def n_columns(self) -> int:
        return self.peak.size


@dataclass(frozen=True, eq=False)
class ReductionReport:
    kept: np.ndarray
    certainty: np.ndarray
    peaks: dict
    ratio: float
    n_sources: int
    tau: float

    def to_dict(self) -> dict:
        return {
            "kept": self.kept.tolist(),
            "certainty": [float(c) for c in self.certainty],
            "peaks": {str(t): list(map(int, p)) for t, p in self.peaks.items()},
            "ratio": self.ratio,
            "n_sources": self.n_sources,
            "tau": self.tau,
        }


def _electrode_neighborhoods(adjacency) -> tuple:
    return tuple(tuple(sorted({e, *nb})) for e, nb in enumerate(adjacency))


def build_signatures(lf: LeadField, electrode_adjacency=None) -> PeakSignature:
    adj = electrode_adjacency if electrode_adjacency is not None else lf.electrodes.adjacency
    if not adj or len(adj) != lf.n_channels:
        raise ConfigError("peak signatures need an electrode adjacency for every channel")
    hoods = _electrode_neighborhoods(adj)
    K = lf.gain
    peak = np.argmax(np.abs(K), axis=0)
    shape = np.zeros((K.shape[1], K.shape[0]))
    for c in range(K.shape[1]):
        idx = list(hoods[peak[c]])
        v = K[idx, c]
        nv = np.linalg.norm(v)
        if nv > 0:
            shape[c, idx] = v / nv
    return PeakSignature(peak, hoods, shape)


def detect_scalp_peaks(y_t, electrode_adjacency, floor: float = PEAK_FLOOR) -> np.ndarray:
    """Electrodes whose ``|y|`` strictly beats every neighbor and reaches ``floor * max|y|``."""
    a = np.abs(np.asarray(y_t, float))
    top = a.max(initial=0.0)
    if top <= 0:
        return np.zeros(0, int)
    out = [e for e, nb in enumerate(electrode_adjacency)
           if a[e] >= floor * top and all(a[e] > a[j] for j in nb)]
    return np.array(out, dtype=int)


def _eligible_electrodes(peaks, hoods) -> np.ndarray:
    ok = np.zeros(len(hoods), bool)
    for p in peaks:
        ok[list(hoods[p])] = True
    return ok


def certainty_all(sig: PeakSignature, y_t, peaks) -> np.ndarray:
    """Certainty of every column for one scalp map with known detected peaks."""
    y = np.asarray(y_t, float)
    elig = _eligible_electrodes(peaks, sig.neighborhoods)
    hood_norm = np.array([np.linalg.norm(y[list(h)]) for h in sig.neighborhoods])
    num = np.abs(sig.shape @ y)
    den = hood_norm[sig.peak]
    cert = np.zeros(sig.n_columns)
    ok = elig[sig.peak] & (den > 0)
    cert[ok] = num[ok] / den[ok]
    return np.clip(cert, 0.0, 1.0)


def certainty(sig: PeakSignature, column: int, y_t, electrode_adjacency=None, peaks=None) -> float:
    """Folded cosine between a column's neighborhood shape and ``y_t``, or 0 without a nearby scalp peak."""
    if peaks is None:
        adj = electrode_adjacency if electrode_adjacency is not None else [
            tuple(j for j in h if j != e) for e, h in enumerate(sig.neighborhoods)]
        peaks = detect_scalp_peaks(y_t, adj)
    y = np.asarray(y_t, float)
    e = sig.peak[column]
    if not _eligible_electrodes(peaks, sig.neighborhoods)[e]:
        return 0.0
    idx = list(sig.neighborhoods[e])
    den = np.linalg.norm(y[idx])
    if den == 0:
        return 0.0
    return float(min(1.0, abs(sig.shape[column] @ y) / den))


def _peel_certainty(sig: PeakSignature, K: np.ndarray, y: np.ndarray, adj, tau: float, floor: float,
                    rounds: int) -> np.ndarray:
    """Best certainty per column over successive residuals of one scalp map.

    Each round scores the residual, picks the most certain column and refits
    ``y`` on all picks so far. Rounds stop once no column reaches ``tau``.
    """
    best = np.zeros(sig.n_columns)
    top = np.abs(y).max(initial=0.0)
    r = y
    picked = []
    for _ in range(rounds):
        p = detect_scalp_peaks(r, adj, floor)
        if not p.size:
            break
        c = certainty_all(sig, r, p)
        np.maximum(best, c, out=best)
        j = int(np.argmax(c))
        if c[j] < tau or j in picked:
            break
        picked.append(j)
        A = K[:, picked]
        r = y - A @ np.linalg.lstsq(A, y, rcond=None)[0]
        if np.abs(r).max() <= PEEL_STOP * top:
            break
    return best


def reduce_solution_space(lf: LeadField, Y, tau: float = DEFAULT_TAU, sample_stride: int = DEFAULT_STRIDE,
                          signatures: PeakSignature | None = None, floor: float = PEAK_FLOOR,
                          peel_rounds: int = DEFAULT_PEEL_ROUNDS) -> ReductionReport:
    """Keep sources whose certainty reaches ``tau`` at any sampled time.

    A source's certainty is the best over its dof columns, time samples and
    peeling rounds (``peel_rounds=1`` scores the raw maps only). At least
    ``N`` sources (``dof * N`` columns) are always kept, topped up by
    certainty with the lowest indices winning ties.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if peel_rounds < 1:
        raise ValueError("peel_rounds must be >= 1")
    Y = check_measurements(lf, Y)
    sig = signatures or build_signatures(lf)
    adj = lf.electrodes.adjacency
    best = np.zeros(sig.n_columns)
    peaks_at = {}
    for t in range(0, Y.shape[1], sample_stride):
        p = detect_scalp_peaks(Y[:, t], adj, floor)
        peaks_at[t] = p.tolist()
        if p.size:
            np.maximum(best, _peel_certainty(sig, lf.gain, Y[:, t], adj, tau, floor, peel_rounds), out=best)
    per_source = best.reshape(lf.n_sources, lf.dof).max(axis=1)
    kept = np.flatnonzero(per_source >= tau)
    floor_count = min(lf.n_sources, lf.n_channels)
    if kept.size < floor_count:
        order = np.argsort(-per_source, kind="stable")
        kept = np.union1d(kept, order[:floor_count - kept.size] if kept.size == 0 else
                          [i for i in order if i not in set(kept)][:floor_count - kept.size])
    kept = np.asarray(kept, dtype=int)
    return ReductionReport(kept, per_source[kept], peaks_at, kept.size / lf.n_sources, lf.n_sources, tau)


def solve_reduced(solver: Callable[[LeadField, np.ndarray], SourceEstimate], lf: LeadField, Y,
                  report: ReductionReport) -> SourceEstimate:
    """Solve on the kept columns and scatter back, zeros elsewhere."""
    Y = check_measurements(lf, Y)
    if report.kept.size == lf.n_sources and np.array_equal(report.kept, np.arange(lf.n_sources)):
        est = solver(lf, Y)
        extras = dict(est.extras, reduced_to=lf.n_sources)
        return SourceEstimate(est.amplitudes, est.solver_name, est.iterations_used, est.converged,
                              est.residual_norm, extras)
    sub = lf.restrict(report.kept)
    est = solver(sub, Y)
    dof = lf.dof
    cols = (report.kept[:, None] * dof + np.arange(dof)).ravel()
    X = np.zeros((lf.gain.shape[1], est.amplitudes.shape[1]))
    X[cols] = est.amplitudes
    extras = dict(est.extras, reduced_to=int(report.kept.size), kept=report.kept)
    return SourceEstimate(X, est.solver_name, est.iterations_used, est.converged, est.residual_norm, extras)
