"""Minimum-norm family: MNE, depth-weighted MNE, LORETA and sLORETA, plus
regularization-parameter selection (SVD heuristic and L-curve)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from ..model import LeadField, SourceEstimate
from ._linalg import RANK_RTOL, check_measurements, pinvh

WEIGHT_MODES = ("identity", "depth", "laplacian")
ALPHA_RULES = ("svd_heuristic", "l_curve")
LAPLACIAN_LOADING = 1e-10


@dataclass(frozen=True)
class LinearSolverOptions:
    weight_mode: str = "identity"
    alpha: Union[float, str] = "svd_heuristic"
    lcurve_grid: tuple | None = None

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if isinstance(self.alpha, str):
            if self.alpha not in ALPHA_RULES:
                raise ValueError(f"alpha rule must be one of {ALPHA_RULES}")
        elif self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def alpha_svd_heuristic(lf) -> float:
    """``0.01 * s1**2`` for the largest singular value ``s1`` of the gain."""
    K = lf.gain if isinstance(lf, LeadField) else np.asarray(lf)
    s1 = np.linalg.norm(K, 2)
    return 0.01 * s1 ** 2


def laplacian_operator(lf: LeadField) -> sparse.csr_matrix:
    """Grid Laplacian with zero (Dirichlet) boundary, one copy per dof.

    ``B = d_max * I - A`` on level-1 adjacency; boundary sources keep the
    full diagonal, which makes ``B`` nonsingular.
    """
    adj = lf.source_space.adjacency
    m = lf.n_sources
    if not adj:
        raise ValueError("laplacian weighting needs source adjacency")
    rows = [i for i, nb in enumerate(adj) for _ in nb]
    cols = [j for nb in adj for j in nb]
    A = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    dmax = max(len(nb) for nb in adj)
    B = dmax * sparse.identity(m, format="csr") - A
    if lf.dof > 1:
        B = sparse.kron(B, sparse.identity(lf.dof), format="csr")
    return B


def _inverse_weight_gain(lf: LeadField, mode: str) -> np.ndarray:
    """``W^-1 K^T`` for the requested weighting (``dof*M x N``)."""
    K = lf.gain
    if mode == "identity":
        return K.T.copy()
    w = np.sum(K * K, axis=0)
    if mode == "depth":
        return K.T / w[:, None]
    B = laplacian_operator(lf).toarray()
    omega = np.sqrt(w)
    W = (omega[:, None] * (B.T @ B)) * omega[None, :]
    W[np.diag_indices_from(W)] += LAPLACIAN_LOADING * np.max(np.diag(W))
    return sla.cho_solve(sla.cho_factor(W, lower=True), K.T)


def _regularized_solve(G: np.ndarray, Y: np.ndarray, alpha: float) -> np.ndarray:
    # (G + alpha I)^+ Y with the shared rank cutoff
    w, V = np.linalg.eigh((G + G.T) / 2.0 + alpha * np.eye(G.shape[0]))
    top = np.max(np.abs(w))
    keep = w > RANK_RTOL * top
    return V[:, keep] @ ((V[:, keep].T @ Y) / w[keep][:, None])


def resolve_alpha(lf: LeadField, Y: np.ndarray, opts: LinearSolverOptions, gram: np.ndarray | None = None) -> float:
    if not isinstance(opts.alpha, str):
        return float(opts.alpha)
    if opts.alpha == "svd_heuristic":
        if opts.weight_mode == "identity" or gram is None:
            return alpha_svd_heuristic(lf)
        return 0.01 * np.linalg.eigvalsh(gram)[-1]
    grid = opts.lcurve_grid
    if grid is None:
        s1sq = alpha_svd_heuristic(lf) / 0.01
        grid = tuple(s1sq * np.logspace(-6, 0, 25))
    return alpha_lcurve(lf, Y, grid, weight_mode=opts.weight_mode)


def mne_solve(lf: LeadField, Y, opts: LinearSolverOptions | None = None) -> SourceEstimate:
    """Weighted minimum-norm estimate ``X = W^-1 K^T (K W^-1 K^T + alpha I)^+ Y``."""
    opts = opts or LinearSolverOptions()
    Y = check_measurements(lf, Y)
    WiKt = _inverse_weight_gain(lf, opts.weight_mode)
    G = lf.gain @ WiKt
    alpha = resolve_alpha(lf, Y, opts, G)
    X = WiKt @ _regularized_solve(G, Y, alpha)
    res = float(np.linalg.norm(Y - lf.gain @ X))
    name = {"identity": "mne", "depth": "wmne", "laplacian": "loreta"}[opts.weight_mode]
    return SourceEstimate(X, name, 1, True, res, {"alpha": alpha, "weight_mode": opts.weight_mode})


def _sloreta_operator(K: np.ndarray, alpha: float) -> np.ndarray:
    n = K.shape[0]
    H = np.eye(n) - np.full((n, n), 1.0 / n)
    G = H @ (K @ K.T) @ H + alpha * H
    return K.T @ H @ pinvh(G)


def _inv_sqrt_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    top = np.max(np.abs(w)) if w.size else 0.0
    keep = w > RANK_RTOL * top
    return (V[:, keep] / np.sqrt(w[keep])) @ V[:, keep].T


def sloreta_solve(lf: LeadField, Y, opts: LinearSolverOptions | None = None) -> SourceEstimate:
    """Standardized LORETA.

    The centred minimum-norm current of each source is standardized by
    the matching diagonal block of the resolution matrix ``T K``. The
    returned amplitudes are these standardized currents, so their squared
    per-source norm is the standardized power (also kept in ``extras``).
    """
    opts = opts or LinearSolverOptions()
    Y = check_measurements(lf, Y)
    alpha = resolve_alpha(lf, Y, LinearSolverOptions("identity", opts.alpha, opts.lcurve_grid))
    K = lf.gain
    Top = _sloreta_operator(K, alpha)
    J = Top @ Y
    dof = lf.dof
    if dof == 1:
        r = np.sum(Top * K.T, axis=1)
        scale = np.zeros_like(r)
        pos = r > RANK_RTOL * np.max(r)
        scale[pos] = 1.0 / np.sqrt(r[pos])
        Z = J * scale[:, None]
    else:
        Z = np.zeros_like(J)
        for j in range(lf.n_sources):
            sl = slice(dof * j, dof * (j + 1))
            S = Top[sl] @ K[:, sl]
            Z[sl] = _inv_sqrt_psd(S) @ J[sl]
    power = np.sum(Z.reshape(lf.n_sources, dof, -1) ** 2, axis=1)
    res = float(np.linalg.norm(Y - K @ J))
    return SourceEstimate(Z, "sloreta", 1, True, res, {"alpha": alpha, "power": power})


def lcurve_corner(log_residual: Sequence[float], log_norm: Sequence[float], alphas: Sequence[float]) -> float:
    """Grid value at the point of maximum signed three-point curvature.

    Points must be ordered by increasing alpha. Ties go to the smaller
    alpha. Raises ``ValueError("degenerate L-curve")`` with fewer than
    three distinct points.
    """
    p = np.column_stack([log_residual, log_norm]).astype(float)
    alphas = np.asarray(alphas, float)
    if len(np.unique(np.round(p, 12), axis=0)) < 3 or len(np.unique(alphas)) < 3:
        raise ValueError("degenerate L-curve")
    best, best_k = None, -np.inf
    for i in range(1, len(p) - 1):
        a, b, c = p[i - 1], p[i], p[i + 1]
        ab, bc, ac = b - a, c - b, c - a
        den = np.linalg.norm(ab) * np.linalg.norm(bc) * np.linalg.norm(ac)
        if den == 0:
            continue
        k = 2.0 * (ab[0] * bc[1] - ab[1] * bc[0]) / den
        if k > best_k + 1e-12:
            best, best_k = i, k
    if best is None:
        raise ValueError("degenerate L-curve")
    return float(alphas[best])


def lcurve_points(lf: LeadField, Y, grid: Sequence[float], weight_mode: str = "identity"):
    Y = check_measurements(lf, Y)
    WiKt = _inverse_weight_gain(lf, weight_mode)
    G = lf.gain @ WiKt
    res, nrm = [], []
    for a in grid:
        X = WiKt @ _regularized_solve(G, Y, a)
        res.append(np.linalg.norm(Y - lf.gain @ X))
        nrm.append(np.linalg.norm(X))
    return np.asarray(res), np.asarray(nrm)


def alpha_lcurve(lf: LeadField, Y, grid: Sequence[float], weight_mode: str = "identity") -> float:
    """Pick alpha at the knee of log solution norm versus log residual."""
    grid = np.asarray(sorted(float(a) for a in grid))
    if len(grid) < 3 or np.any(grid <= 0):
        raise ValueError("degenerate L-curve")
    res, nrm = lcurve_points(lf, Y, grid, weight_mode)
    with np.errstate(divide="ignore"):
        lr, ln = np.log(res), np.log(nrm)
    ok = np.isfinite(lr) & np.isfinite(ln)
    return lcurve_corner(lr[ok], ln[ok], grid[ok])
