"""Sparse solvers: FOCUSS, mixed-norm (MxNE / irMxNE) and two sparse
Bayesian learning variants."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla

from ..model import LeadField, SolverError, SourceEstimate
from ._linalg import check_measurements, compress_time, expand_time, pinv_solve
from .linear import LinearSolverOptions, mne_solve

IRMXNE_EPS = 1e-10
KKT_RTOL = 1e-4
ACTIVE_SET_GROWTH = 10


@dataclass(frozen=True)
class SparseSolverOptions:
    max_iter: int = 50
    tol: float = 1e-6
    alpha: float | None = None  # absolute; None -> alpha_fraction * alpha_max
    alpha_fraction: float = 0.2
    max_sweeps: int = 5000  # block coordinate descent budget
    focuss_init: str = "uniform"
    focuss_prune: float = 1e-10
    focuss_stride: int = 1
    sbl_variant: str = "wipf"
    wipf_lambda: float = 0.2
    zhang_prune: float = 1e-3
    baseline_samples: int = 0
    reweight_rounds: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.focuss_init not in ("uniform", "mne"):
            raise ValueError("focuss_init must be 'uniform' or 'mne'")
        if self.sbl_variant not in ("wipf", "zhang"):
            raise ValueError("sbl_variant must be 'wipf' or 'zhang'")


# -- FOCUSS ---------------------------------------------------------------------

def _as_leadfield_gain(lf):
    return lf.gain if isinstance(lf, LeadField) else np.atleast_2d(np.asarray(lf, float))


def focuss_solve(lf, y, opts: SparseSolverOptions | None = None) -> SourceEstimate:
    """FOCUSS on one measurement vector.

    Iterates ``C = diag(x_prev)``, ``q = (K C)^+ y``, ``x = C q``. Entries
    below ``focuss_prune * max|x|`` are set to zero; zeros stay zero.
    """
    opts = opts or SparseSolverOptions()
    K = _as_leadfield_gain(lf)
    y = np.asarray(y, float).ravel()
    if y.size != K.shape[0]:
        raise ValueError("measurement length does not match lead field rows")
    if opts.focuss_init == "mne" and isinstance(lf, LeadField):
        x = mne_solve(lf, y[:, None], LinearSolverOptions()).amplitudes[:, 0].copy()
    else:
        x = np.ones(K.shape[1])
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        S = np.flatnonzero(x)
        if S.size == 0:
            converged = True
            break
        q = pinv_solve(K[:, S] * x[S], y)
        x_new = np.zeros_like(x)
        x_new[S] = x[S] * q
        if not np.all(np.isfinite(x_new)):
            raise SolverError("diverged", it)
        peak = np.max(np.abs(x_new))
        x_new[np.abs(x_new) < opts.focuss_prune * peak] = 0.0
        ref = np.linalg.norm(x)
        change = np.linalg.norm(x_new - x) / ref if ref > 0 else 0.0
        x = x_new
        if change < opts.tol:
            converged = True
            break
    res = float(np.linalg.norm(y - K @ x))
    return SourceEstimate(x[:, None], "focuss", it, converged, res, {"support": np.flatnonzero(x)})


def focuss_multi(lf: LeadField, Y, opts: SparseSolverOptions | None = None) -> SourceEstimate:
    """Instantaneous FOCUSS applied to every ``focuss_stride``-th sample."""
    opts = opts or SparseSolverOptions()
    Y = check_measurements(lf, Y)
    samples = np.arange(0, Y.shape[1], max(1, opts.focuss_stride))
    cols, iters, conv = [], [], True
    for t in samples:
        est = focuss_solve(lf, Y[:, t], opts)
        cols.append(est.amplitudes[:, 0])
        iters.append(est.iterations_used)
        conv &= est.converged
    X = np.column_stack(cols)
    res = float(np.linalg.norm(Y[:, samples] - lf.gain @ X))
    return SourceEstimate(X, "focuss", int(max(iters)), conv, res,
                          {"samples": samples, "iterations_per_sample": iters})


# -- mixed norm -----------------------------------------------------------------

def prox_l21(X, threshold: float) -> np.ndarray:
    """Row-wise group soft thresholding: ``r * max(0, 1 - threshold/|r|)``."""
    X = np.atleast_2d(np.asarray(X, float))
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(norms > 0, np.maximum(0.0, 1.0 - threshold / norms), 0.0)
    return X * shrink


def l21_norm(X: np.ndarray, dof: int = 1) -> float:
    return float(np.sum(np.linalg.norm(X.reshape(X.shape[0] // dof, -1), axis=1)))


def _block_view(K: np.ndarray, dof: int):
    n, d = K.shape
    return K.reshape(n, d // dof, dof).transpose(1, 0, 2)  # M x N x dof


def alpha_max(K: np.ndarray, Y: np.ndarray, dof: int = 1) -> float:
    """Smallest alpha whose MxNE solution is identically zero."""
    G = K.T @ Y
    return float(np.max(np.linalg.norm(G.reshape(G.shape[0] // dof, -1), axis=1)))


def _resolve_sparse_alpha(K, Y, dof, opts) -> float:
    if opts.alpha is not None:
        return float(opts.alpha)
    return opts.alpha_fraction * alpha_max(K, Y, dof)


def _bcd(Kb, L, Yr, alpha, active, Xb, R, objective, max_sweeps, tol, trace):
    """Block coordinate descent restricted to ``active`` sources.

    Works on the active Gram matrix, so a block step costs one row-block
    product instead of a residual update; ``R`` is refreshed per sweep.
    """
    idx = np.asarray(active, int)
    dof = Kb.shape[2]
    KA = Kb[idx].transpose(1, 0, 2).reshape(Kb.shape[1], -1)
    G = KA.T @ KA
    C = KA.T @ Yr
    XA = Xb[idx].reshape(-1, Yr.shape[1])
    steps = 1.0 / L[idx]
    thresholds = alpha * steps
    ok = False
    sweeps = 0
    prev = objective(R, Xb)
    for sweeps in range(1, max_sweeps + 1):
        for b in range(idx.size):
            s = slice(b * dof, (b + 1) * dof)
            z = XA[s] + (C[s] - np.dot(G[s], XA)) * steps[b]
            nz = math.sqrt(np.vdot(z, z))
            if nz > thresholds[b]:
                z *= 1.0 - thresholds[b] / nz
            else:
                z[:] = 0.0
            XA[s] = z
        Xb[idx] = XA.reshape(idx.size, dof, -1)
        R[:] = Yr - KA @ XA
        cur = objective(R, Xb)
        trace.append(cur)
        if prev - cur <= tol * max(abs(prev), np.finfo(float).tiny):
            ok = True
            break
        prev = cur
    return sweeps, ok


def mxne_solve(lf: LeadField, Y, opts: SparseSolverOptions | None = None, *, weights: np.ndarray | None = None,
               candidates: np.ndarray | None = None, tol: float | None = None) -> SourceEstimate:
    """Minimize ``0.5 |Y - K X|_F^2 + alpha |X|_21`` by block coordinate descent.

    Sources enter an active set in order of KKT violation; each block step
    is a proximal step with step size ``1/L_j``, ``L_j = |K_j|_2^2``.
    Sweeps stop on relative objective change below ``tol``; the solve
    counts as converged once the optimality conditions hold to
    ``KKT_RTOL`` (otherwise violators join the set or ``tol`` tightens).
    ``weights`` (per source) scales the penalty, as used by irMxNE;
    ``candidates`` restricts the sources that may become active.
    """
    opts = opts or SparseSolverOptions()
    tol = opts.tol if tol is None else tol
    Y = check_measurements(lf, Y)
    dof = lf.dof
    m = lf.n_sources
    K = lf.gain
    w = np.ones(m) if weights is None else np.asarray(weights, float)
    cand = np.arange(m) if candidates is None else np.asarray(candidates, int)
    Kw = K / np.repeat(w, dof)[None, :]  # column scaling absorbs the penalty weights
    Yr, Vt = compress_time(Y)
    r = Yr.shape[1]
    Kb = _block_view(Kw, dof)
    alpha = _resolve_sparse_alpha(K, Y, dof, opts)
    L = np.array([np.linalg.norm(Kb[j], 2) ** 2 for j in range(m)])
    Xb = np.zeros((m, dof, r))
    R = Yr.copy()

    def objective(R, Xb):
        return 0.5 * float(np.sum(R * R)) + alpha * float(np.sum(np.linalg.norm(Xb.reshape(m, -1), axis=1)))

    def correlations():
        return np.linalg.norm(np.einsum("mnd,nr->mdr", Kb[cand], R).reshape(len(cand), -1), axis=1)

    trace = [objective(R, Xb)]
    corr = correlations()
    converged = True
    total_sweeps = 0
    if corr.max(initial=0.0) > alpha:
        first = np.argsort(-corr, kind="stable")[:ACTIVE_SET_GROWTH]
        active = cand[first[corr[first] > alpha]].tolist()
        converged = False
        tol_now = tol
        while total_sweeps < opts.max_sweeps:
            sweeps, _ = _bcd(Kb, L, Yr, alpha, active, Xb, R, objective,
                             opts.max_sweeps - total_sweeps, tol_now, trace)
            total_sweeps += sweeps
            corr = correlations()
            in_active = np.isin(cand, active)
            nonzero = np.any(Xb[cand].reshape(len(cand), -1) != 0, axis=1)
            outside = np.flatnonzero(~in_active & (corr > alpha * (1 + KKT_RTOL)))
            loose = (nonzero & (np.abs(corr / alpha - 1) > KKT_RTOL)) | (~nonzero & (corr > alpha * (1 + KKT_RTOL)))
            if outside.size == 0 and not loose.any():
                converged = True
                break
            if outside.size:
                outside = outside[np.argsort(-corr[outside], kind="stable")][:ACTIVE_SET_GROWTH]
                active.extend(cand[outside].tolist())
            else:
                tol_now /= 10.0
    Xw = Xb.reshape(m * dof, r)
    Xr = Xw / np.repeat(w, dof)[:, None]
    X = expand_time(Xr, Vt)
    res = float(np.linalg.norm(Y - K @ X))
    support = np.flatnonzero(np.any(Xb.reshape(m, -1) != 0, axis=1))
    return SourceEstimate(X, "mxne", total_sweeps, converged, res,
                          {"alpha": alpha, "objective": trace, "active": support})


def irmxne_solve(lf: LeadField, Y, opts: SparseSolverOptions | None = None) -> SourceEstimate:
    """Iteratively reweighted MxNE (quasi l_{2,0.5} penalty).

    Round 1 is plain MxNE. Each later round re-solves with per-source
    penalty weights ``1 / (2 sqrt(|x_j| + eps))`` over the previous support.
    """
    opts = opts or SparseSolverOptions()
    Y = check_measurements(lf, Y)
    rounds = max(1, opts.reweight_rounds)
    dof = lf.dof
    alpha = _resolve_sparse_alpha(lf.gain, Y, dof, opts)
    fixed = replace(opts, alpha=alpha)
    est = mxne_solve(lf, Y, fixed)
    supports = [est.extras["active"].tolist()]
    total = est.iterations_used
    for _ in range(1, rounds):
        support = est.extras["active"]
        if support.size == 0:
            break
        norms = np.linalg.norm(est.amplitudes.reshape(lf.n_sources, -1), axis=1)
        w = np.full(lf.n_sources, np.inf)
        w[support] = 1.0 / (2.0 * np.sqrt(norms[support] + IRMXNE_EPS))
        w_safe = np.where(np.isfinite(w), w, 1.0)
        est = mxne_solve(lf, Y, fixed, weights=w_safe, candidates=support)
        supports.append(est.extras["active"].tolist())
        total += est.iterations_used
    extras = dict(est.extras)
    extras["supports"] = supports
    return SourceEstimate(est.amplitudes, "irmxne", total, est.converged, est.residual_norm, extras)


# -- sparse Bayesian learning -----------------------------------------------------

def neg_log_evidence(K: np.ndarray, gamma_cols: np.ndarray, sigma2: float, C: np.ndarray, T: int) -> float:
    """``T log|Sigma_Y| + tr(Sigma_Y^-1 C)`` with ``C = Y Y^T``."""
    S = (K * gamma_cols) @ K.T + sigma2 * np.eye(K.shape[0])
    cf = sla.cho_factor(S, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return T * logdet + float(np.trace(sla.cho_solve(cf, C)))


def sbl_solve(lf: LeadField, Y, opts: SparseSolverOptions | None = None) -> SourceEstimate:
    """Type-II (evidence) maximization with one variance per source block.

    ``Sigma_Y = K Gamma K^T + sigma^2 I``; gamma (and, for the ``wipf``
    variant, sigma^2) follow majorization-minimization updates, so the
    negative log evidence is non-increasing. ``zhang`` fixes sigma^2 and prunes gamma below
    ``zhang_prune * max(gamma)`` each iteration (at most 50 iterations);
    a pruning that would raise the evidence cost is postponed.
    The posterior mean is returned.
    """
    opts = opts or SparseSolverOptions()
    Y = check_measurements(lf, Y)
    K = lf.gain
    dof, m = lf.dof, lf.n_sources
    n, T = Y.shape
    name = f"sbl-{opts.sbl_variant}"
    if not np.any(Y):
        return SourceEstimate(np.zeros((dof * m, T)), name, 0, True, 0.0,
                              {"gamma": np.zeros(m), "sigma2": 0.0, "neg_log_evidence": []})
    Yr, _ = compress_time(Y)
    C = Yr @ Yr.T
    power = float(np.sum(Y * Y)) / (n * T)
    if opts.sbl_variant == "zhang":
        if opts.baseline_samples > 1:
            sigma2 = float(np.var(Y[:, :opts.baseline_samples]))
        else:
            sigma2 = 1e-2 * float(np.var(Y))
        sigma2 = max(sigma2, 1e-12 * power)
        max_iter = min(opts.max_iter, 50)
        learn_noise = False
    else:
        sigma2 = opts.wipf_lambda * power
        max_iter = opts.max_iter
        learn_noise = True
    floor = 1e-8 * power
    gamma = np.ones(m)
    unpruned = None
    trace = []
    converged = False
    it = 0

    def evaluate(gamma, it):
        act = np.flatnonzero(gamma > 0)
        cols = (act[:, None] * dof + np.arange(dof)).ravel()
        Ka = K[:, cols]
        S = (Ka * np.repeat(gamma[act], dof)) @ Ka.T + sigma2 * np.eye(n)
        try:
            cf = sla.cho_factor(S, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError("covariance factorization failed", it) from exc
        SiY = sla.cho_solve(cf, Yr)
        cost = T * 2.0 * np.sum(np.log(np.diag(cf[0]))) + float(np.sum(Yr * SiY))
        return act, Ka, cf, SiY, cost

    for it in range(1, max_iter + 1):
        act, Ka, cf, SiY, cost = evaluate(gamma, it)
        if unpruned is not None and trace and cost > trace[-1]:
            # pruning is not a descent step; keep this iteration's gammas unpruned
            gamma = unpruned
            act, Ka, cf, SiY, cost = evaluate(gamma, it)
        trace.append(cost)
        SiK = sla.cho_solve(cf, Ka)
        # majorization-minimization step: gamma <- gamma * |K_i^T S^-1 Y| / sqrt(T tr(K_i^T S^-1 K_i))
        num = np.sqrt(np.sum((Ka.T @ SiY).reshape(-1, dof * Yr.shape[1]) ** 2, axis=1))
        den = np.sqrt(T * np.sum((Ka * SiK).reshape(n, -1, dof), axis=(0, 2)))
        new_gamma = np.zeros(m)
        new_gamma[act] = gamma[act] * num / np.maximum(den, np.finfo(float).tiny)
        if learn_noise:
            Si = sla.cho_solve(cf, np.eye(n))
            sigma2 = max(sigma2 * np.linalg.norm(SiY) / np.sqrt(T * np.trace(Si)), floor)
        unpruned = None
        if opts.sbl_variant == "zhang":
            small = (new_gamma > 0) & (new_gamma < opts.zhang_prune * new_gamma.max())
            if small.any():
                unpruned = new_gamma.copy()
                new_gamma[small] = 0.0
        change = np.max(np.abs(new_gamma - gamma)) / max(new_gamma.max(), np.finfo(float).tiny)
        gamma = new_gamma
        if change < opts.tol:
            converged = True
            break
    act = np.flatnonzero(gamma > 0)
    cols = (act[:, None] * dof + np.arange(dof)).ravel()
    g = np.repeat(gamma[act], dof)
    Ka = K[:, cols]
    S = (Ka * g) @ Ka.T + sigma2 * np.eye(n)
    X = np.zeros((dof * m, T))
    X[cols] = g[:, None] * (Ka.T @ sla.cho_solve(sla.cho_factor(S, lower=True), Y))
    res = float(np.linalg.norm(Y - K @ X))
    return SourceEstimate(X, name, it, converged, res,
                          {"gamma": gamma, "sigma2": sigma2, "neg_log_evidence": trace})
