"""Subspace scanning (TRAP-MUSIC) and extended-source solvers built on a
grid variation operator (VB-SCCD, SISSY)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from ..model import LeadField, SolverError, SourceEstimate, SourceSpace
from ._linalg import RANK_RTOL, check_measurements, compress_time, expand_time, pinv

EIG_DROP_RATIO = 0.01
NULL_DIRECTION_TOL = 1e-6


@dataclass(frozen=True)
class SubspaceModel:
    U_s: np.ndarray
    eigenvalues: np.ndarray
    n_est: int
    n_tilde: int


def estimate_signal_subspace(Y, n_tilde_hint: int | None = None) -> SubspaceModel:
    """Eigen-split of ``C = Y Y^T``.

    ``n_est`` counts eigenvalues at or above ``0.01 * lambda_1``; the scan
    budget is the hint if given, else ``n_est + 2`` (capped at N).
    """
    Y = np.atleast_2d(np.asarray(Y, float))
    n, t = Y.shape
    if t < n:
        warnings.warn("fewer time samples than channels; covariance is rank deficient", stacklevel=2)
    w, U = np.linalg.eigh(Y @ Y.T)
    order = np.argsort(w)[::-1]
    w, U = np.maximum(w[order], 0.0), U[:, order]
    if w[0] <= 0:
        raise ValueError("empty signal")
    n_est = int(np.sum(w >= EIG_DROP_RATIO * w[0]))
    n_tilde = int(n_tilde_hint) if n_tilde_hint is not None else n_est + 2
    if not 1 <= n_tilde <= n:
        raise ValueError(f"scan budget must lie in [1, {n}]")
    return SubspaceModel(U[:, :n_tilde].copy(), w, n_est, n_tilde)


def _localizer(QK: np.ndarray, Ur: np.ndarray, dof: int) -> np.ndarray:
    """Subspace correlation of every (projected) source block with ``span(Ur)``."""
    m = QK.shape[1] // dof
    if dof == 1:
        den = np.linalg.norm(QK, axis=0)
        num = np.linalg.norm(Ur.T @ QK, axis=0)
        mu = np.zeros(m)
        ok = den > RANK_RTOL * max(den.max(initial=0.0), np.finfo(float).tiny)
        mu[ok] = num[ok] / den[ok]
        return np.minimum(mu, 1.0)
    mu = np.zeros(m)
    scale = np.linalg.norm(QK, 2) if QK.size else 0.0
    for j in range(m):
        G = QK[:, dof * j:dof * (j + 1)]
        U, s, _ = np.linalg.svd(G, full_matrices=False)
        keep = s > RANK_RTOL * max(scale, np.finfo(float).tiny)
        if keep.any():
            mu[j] = min(np.linalg.norm(Ur.T @ U[:, keep], 2), 1.0)
    return mu


def _best_orientation(G: np.ndarray, Ur: np.ndarray) -> np.ndarray:
    # generalized eigenvector maximizing |P G v| / |G v|
    A = G.T @ Ur @ Ur.T @ G
    B = G.T @ G
    B = B + RANK_RTOL * np.trace(B) * np.eye(len(B))
    _, V = sla.eigh(A, B)
    return V[:, -1]


def trap_music(lf: LeadField, sub: SubspaceModel, drop_factor: float = 0.5, truncate: bool = True):
    """Recursive scan with out-projection and subspace truncation.

    Iteration ``i`` (1-based) projects out the topographies found so far,
    keeps ``n_tilde - i + 1`` leading left singular vectors of ``Q_i U_s``
    (all ``n_tilde`` when ``truncate`` is false, i.e. RAP behavior) and
    picks the source with the largest localizer. Scanning stops when the
    maximum falls below ``drop_factor`` times the first maximum or after
    ``n_tilde`` iterations. Subspace directions with numerically zero
    eigenvalue, or annihilated by the out-projection, are not scanned.
    Returns ``(indices, trace)`` where ``trace``
    holds every evaluated maximum, including the one that triggered the stop.
    """
    K = lf.gain
    dof, n = lf.dof, lf.n_channels
    # directions with numerically zero eigenvalue carry no signal
    live = sub.eigenvalues[:sub.n_tilde] > RANK_RTOL * sub.eigenvalues[0]
    U_eff = sub.U_s[:, live]
    found: list[int] = []
    topo: list[np.ndarray] = []
    trace: list[float] = []
    for i in range(1, sub.n_tilde + 1):
        if topo:
            B = np.column_stack(topo)
            Q = np.eye(n) - B @ pinv(B)
        else:
            Q = np.eye(n)
        U, s, _ = np.linalg.svd(Q @ U_eff, full_matrices=False)
        k = sub.n_tilde - i + 1 if truncate else sub.n_tilde
        k = min(k, int(np.sum(s > NULL_DIRECTION_TOL)))
        Ur = U[:, :k]
        QK = Q @ K
        mu = _localizer(QK, Ur, dof) if k > 0 else np.zeros(lf.n_sources)
        if found:
            mu[found] = -np.inf
        if not np.any(mu > 0):
            if not found:
                raise SolverError("degenerate projection", i)
            trace.append(0.0)
            break
        j = int(np.argmax(mu))
        trace.append(float(mu[j]))
        if found and mu[j] < drop_factor * trace[0]:
            break
        found.append(j)
        G = K[:, dof * j:dof * (j + 1)]
        topo.append(G[:, 0] if dof == 1 else G @ _best_orientation(Q @ G, Ur))
    return found, trace


def trap_music_estimate(lf: LeadField, Y, n_tilde: int | None = None, drop_factor: float = 0.5) -> SourceEstimate:
    """TRAP-MUSIC followed by a least-squares fit of the found sources."""
    Y = check_measurements(lf, Y)
    sub = estimate_signal_subspace(Y, n_tilde)
    found, trace = trap_music(lf, sub, drop_factor)
    dof = lf.dof
    cols = (np.asarray(found, int)[:, None] * dof + np.arange(dof)).ravel()
    X = np.zeros((lf.gain.shape[1], Y.shape[1]))
    if cols.size:
        X[cols] = pinv(lf.gain[:, cols]) @ Y
    res = float(np.linalg.norm(Y - lf.gain @ X))
    return SourceEstimate(X, "trap-music", len(trace), True, res,
                          {"found": found, "localizer_trace": trace, "n_est": sub.n_est, "n_tilde": sub.n_tilde})


@dataclass(frozen=True)
class VariationOperator:
    matrix: sparse.csr_matrix
    edges: tuple = field(default=())

    @property
    def n_edges(self) -> int:
        return self.matrix.shape[0]


def variation_operator(ss: SourceSpace) -> VariationOperator:
    """One row per unordered level-1 edge, ``+1`` at the lower index, ``-1`` at the higher."""
    edges = sorted({(min(i, j), max(i, j)) for i, nb in enumerate(ss.adjacency) for j in nb if i != j})
    p, m = len(edges), ss.n_sources
    rows = np.repeat(np.arange(p), 2)
    cols = np.array(edges, dtype=int).ravel() if p else np.zeros(0, int)
    vals = np.tile([1.0, -1.0], p)
    V = sparse.csr_matrix((vals, (rows, cols)), shape=(p, m))
    return VariationOperator(V, tuple(edges))


@dataclass(frozen=True)
class SissyOptions:
    lam: float | None = None  # absolute; None -> lam_fraction * lam_max
    lam_fraction: float = 0.05
    alpha: float = 0.1
    rho: float | None = None  # None -> |K|_2^2
    max_iter: int = 1000
    tol: float = 1e-4


def _group_soft(Z: np.ndarray, thr: float) -> np.ndarray:
    # row-wise shrinkage: elementwise l1 over space, l2 over (compressed) time
    nz = np.linalg.norm(Z, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return Z * np.where(nz > thr, 1.0 - thr / nz, 0.0)


def sissy_solve(lf: LeadField, Y, V: VariationOperator | None = None, opts: SissyOptions | None = None,
                *, name: str | None = None) -> SourceEstimate:
    """ADMM for ``0.5 |Y - K X|_F^2 + lam (|V X|_1 + alpha |X|_1)``.

    Splitting ``Z = D X`` with ``D = [V; alpha I]`` (per dof component).
    The penalty couples time samples row-wise, which keeps it invariant
    under the SVD time compression. ``alpha = 0`` gives VB-SCCD.
    """
    opts = opts or SissyOptions()
    Y = check_measurements(lf, Y)
    V = V or variation_operator(lf.source_space)
    dof = lf.dof
    K = lf.gain
    Vd = sparse.kron(V.matrix, sparse.identity(dof), format="csr") if dof > 1 else V.matrix
    D = sparse.vstack([Vd, opts.alpha * sparse.identity(K.shape[1])], format="csr") if opts.alpha > 0 else Vd
    Yr, Vt = compress_time(Y)
    KtY = K.T @ Yr
    lam = opts.lam
    if lam is None:
        lam = opts.lam_fraction * lam_max(lf, Y, V, opts.alpha)
    s1sq = np.linalg.norm(K, 2) ** 2
    rho = opts.rho if opts.rho is not None else s1sq
    DtD = (D.T @ D).toarray()
    H = K.T @ K + rho * DtD
    H[np.diag_indices_from(H)] += RANK_RTOL * s1sq
    try:
        cf = sla.cho_factor(H, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError("system factorization failed", 0) from exc
    Z = np.zeros((D.shape[0], Yr.shape[1]))
    U = np.zeros_like(Z)
    X = np.zeros((K.shape[1], Yr.shape[1]))
    trace, prim, dual = [], [], []

    def objective(X):
        R = Yr - K @ X
        return 0.5 * float(np.sum(R * R)) + lam * float(np.sum(np.linalg.norm(D @ X, axis=1)))

    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        X = sla.cho_solve(cf, KtY + rho * (D.T @ (Z - U)))
        DX = D @ X
        Z_old = Z
        Z = _group_soft(DX + U, lam / rho)
        U = U + DX - Z
        r = np.linalg.norm(DX - Z)
        d = rho * np.linalg.norm(D.T @ (Z - Z_old))
        trace.append(objective(X))
        prim.append(float(r))
        dual.append(float(d))
        eps_p = opts.tol * max(np.linalg.norm(DX), np.linalg.norm(Z), np.finfo(float).tiny)
        eps_d = opts.tol * max(rho * np.linalg.norm(D.T @ U), np.finfo(float).tiny)
        if r <= eps_p and d <= eps_d:
            converged = True
            break
    Xf = expand_time(X, Vt)
    res = float(np.linalg.norm(Y - K @ Xf))
    label = name or ("vb-sccd" if opts.alpha == 0 else "sissy")
    return SourceEstimate(Xf, label, it, converged, res,
                          {"lam": lam, "alpha": opts.alpha, "rho": rho, "objective": trace,
                           "primal_residual": prim, "dual_residual": dual})


def lam_max(lf: LeadField, Y, V: VariationOperator | None = None, alpha: float = 0.1) -> float:
    """Scale of ``lam`` at which the penalty dominates: ``|K^T Y|`` row norms over ``|D|_1`` column mass."""
    Y = check_measurements(lf, Y)
    V = V or variation_operator(lf.source_space)
    g = np.linalg.norm(lf.gain.T @ Y, axis=1)
    colmass = np.asarray(abs(V.matrix).sum(axis=0)).ravel()
    colmass = np.repeat(colmass, lf.dof) + alpha
    return float(np.max(g / np.maximum(colmass, np.finfo(float).tiny)))


def watershed_regions(values, adjacency, merge_fraction: float = 0.01) -> np.ndarray:
    """Label a nonnegative map by flooding from its local maxima.

    Nodes are visited in decreasing order. A node touching no labelled
    neighbor opens a region; a node touching several regions merges those
    whose dynamic (peak minus current level) is below
    ``merge_fraction * max`` and otherwise joins its highest neighbor.
    Zero-valued nodes stay unlabelled (-1).
    """
    v = np.asarray(values, float)
    labels = np.full(v.size, -1)
    if v.size == 0 or v.max() <= 0:
        return labels
    parent: list[int] = []
    peak: list[float] = []

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    floor = merge_fraction * v.max()
    for i in np.argsort(-v, kind="stable"):
        if v[i] <= 0:
            break
        nbrs = [j for j in adjacency[i] if labels[j] >= 0]
        if not nbrs:
            labels[i] = len(parent)
            parent.append(len(parent))
            peak.append(v[i])
            continue
        roots = sorted({find(labels[j]) for j in nbrs}, key=lambda r: -peak[r])
        top = roots[0]
        for r in roots[1:]:
            if peak[r] - v[i] < floor:
                parent[r] = top
        best = max(nbrs, key=lambda j: (v[j], -j))
        labels[i] = find(labels[best])
    roots = np.array([find(l) if l >= 0 else -1 for l in labels])
    _, dense = np.unique(roots[roots >= 0], return_inverse=True)
    out = np.full(v.size, -1)
    out[roots >= 0] = dense
    return out


def automatic_threshold(values, adjacency, keep_fraction: float = 0.10, merge_fraction: float = 0.01) -> np.ndarray:
    """Sources of watershed regions whose peak reaches ``keep_fraction * max``.

    Each kept region is trimmed to members at or above the same level.
    """
    v = np.asarray(values, float)
    if v.size == 0 or not np.any(v > 0):
        return np.zeros(0, int)
    labels = watershed_regions(v, adjacency, merge_fraction)
    level = keep_fraction * v.max()
    keep = []
    for lab in np.unique(labels[labels >= 0]):
        members = np.flatnonzero(labels == lab)
        if v[members].max() >= level:
            keep.extend(members[v[members] >= level].tolist())
    return np.array(sorted(keep), dtype=int)
