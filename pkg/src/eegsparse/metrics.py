"""Evaluation metrics for source estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .headmodel import neighborhood_closure


@dataclass(frozen=True)
class EvaluationConfig:
    neighborhood_levels: int = 2
    peak_floor_fraction: float = 0.1
    time_window: tuple | None = None

    def __post_init__(self):
        if self.neighborhood_levels < 1:
            raise ValueError("neighborhood_levels must be >= 1")
        if not 0.0 <= self.peak_floor_fraction < 1.0:
            raise ValueError("peak_floor_fraction must lie in [0, 1)")


def collapse_amplitude(X, dof: int = 1, window: tuple | None = None) -> np.ndarray:
    """Per-source RMS over ``window`` of the per-sample dof-norm."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.ndim == 2 and X.shape[1] == 0:
        raise ValueError("empty time window")
    start, stop = (0, X.shape[1]) if window is None else window
    if not 0 <= start < stop <= X.shape[1]:
        raise ValueError("empty time window")
    W = X[:, start:stop]
    per_sample = np.sum(W.reshape(X.shape[0] // dof, dof, -1) ** 2, axis=1)
    return np.sqrt(per_sample.mean(axis=1))


def local_peaks(values, adjacency, floor_fraction: float = 0.1) -> np.ndarray:
    """Sources strictly above all level-1 neighbors and at least ``floor_fraction * max``.

    Plateaus of equal neighboring values produce no peak.
    """
    v = np.asarray(values, float)
    top = v.max(initial=0.0)
    if top <= 0:
        return np.zeros(0, int)
    out = [i for i in range(v.size)
           if v[i] >= floor_fraction * top and v[i] > 0 and all(v[i] > v[j] for j in adjacency[i])]
    return np.array(out, dtype=int)


def _balls(adjacency, levels: int):
    return [set(nb) | {i} for i, nb in enumerate(neighborhood_closure(adjacency, levels))]


def success_rate(truth, peaks, adjacency, levels: int = 2):
    """Per-truth hit indicators (a peak inside its ``levels`` ball) and their mean."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    balls = _balls(adjacency, levels)
    p = set(int(i) for i in peaks)
    hits = np.array([1 if balls[int(t)] & p else 0 for t in truth], dtype=int)
    return hits, float(hits.mean()) if hits.size else 0.0


def hit_false_rates(truth, peaks, adjacency, levels: int = 2, positions=None):
    """Greedy nearest-first one-to-one matching of peaks to truths.

    Candidate pairs are peaks inside a truth's ``levels`` ball, ordered by
    distance (graph hop count when ``positions`` is absent), then indices.
    Returns ``(HR, FR)`` with ``FR = unmatched peaks / max(1, #peaks)``.
    """
    truth = [int(t) for t in truth]
    peaks = [int(p) for p in peaks]
    balls = _balls(adjacency, levels)
    pairs = []
    for ti, t in enumerate(truth):
        for pi, p in enumerate(peaks):
            if p in balls[t]:
                d = (float(np.linalg.norm(np.asarray(positions[t]) - positions[p]))
                     if positions is not None else _hops(adjacency, t, p, levels))
                pairs.append((d, ti, pi))
    pairs.sort()
    used_t, used_p = set(), set()
    for _, ti, pi in pairs:
        if ti not in used_t and pi not in used_p:
            used_t.add(ti)
            used_p.add(pi)
    hr = len(used_t) / len(truth) if truth else 0.0
    fr = (len(peaks) - len(used_p)) / max(1, len(peaks))
    return hr, fr


def _hops(adjacency, a: int, b: int, limit: int) -> int:
    frontier, seen = {a}, {a}
    for h in range(limit + 1):
        if b in frontier:
            return h
        frontier = {j for i in frontier for j in adjacency[i]} - seen
        seen |= frontier
    return limit + 1


def a_prime(hr: float, fr: float) -> float:
    return ((hr - fr) + 1.0) / 2.0


def _nearest(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2), axis=1)


def dle(truth_positions, estimate_positions) -> float:
    """Symmetric mean nearest-neighbor distance between two point sets."""
    a = np.atleast_2d(np.asarray(truth_positions, float))
    b = np.atleast_2d(np.asarray(estimate_positions, float))
    if a.size == 0 or b.size == 0:
        raise ValueError("undefined DLE")
    return float(_nearest(a, b).mean() / 2.0 + _nearest(b, a).mean() / 2.0)


def spatial_dispersion(amplitudes, truth_positions, source_positions) -> float:
    """Amplitude-weighted RMS distance of the map from the nearest true source."""
    s = np.asarray(amplitudes, float)
    t = np.atleast_2d(np.asarray(truth_positions, float))
    if t.size == 0:
        raise ValueError("undefined SD: no true sources")
    w = s * s
    total = w.sum()
    if total <= 0:
        raise ValueError("undefined SD")
    d = _nearest(np.asarray(source_positions, float), t)
    return float(np.sqrt(np.sum(d * d * w) / total))


def evaluate(X, lf, truth, cfg: EvaluationConfig | None = None) -> dict:
    """All metrics for one estimate against true source indices."""
    cfg = cfg or EvaluationConfig()
    ss = lf.source_space
    amp = collapse_amplitude(X, lf.dof, cfg.time_window)
    peaks = local_peaks(amp, ss.adjacency, cfg.peak_floor_fraction)
    sr, sr_mean = success_rate(truth, peaks, ss.adjacency, cfg.neighborhood_levels)
    hr, fr = hit_false_rates(truth, peaks, ss.adjacency, cfg.neighborhood_levels, ss.positions)
    pos = ss.positions
    out = {"a_prime": a_prime(hr, fr), "hr": hr, "fr": fr, "sr": sr.tolist(), "sr_mean": sr_mean,
           "n_peaks": int(peaks.size), "dle_mm": None, "sd_mm": None}
    if peaks.size:
        out["dle_mm"] = dle(pos[list(truth)], pos[peaks])
    if amp.max(initial=0.0) > 0:
        out["sd_mm"] = spatial_dispersion(amp, pos[list(truth)], pos)
    return out
