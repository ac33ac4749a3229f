import numpy as np
from scipy import linalg as sla

from ..model import DataError

RANK_RTOL = 1e-12


def pinv(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """SVD pseudo-inverse; singular values below ``rtol * s1`` count as zero."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.T.shape)
    keep = s > rtol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def pinv_solve(A: np.ndarray, b: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """``A^+ b`` with the shared cutoff.

    Wide matrices are first reduced by an LQ factorization ``A = R^T Q^T``,
    which keeps the singular values (and so the cutoff) unchanged.
    """
    n, m = A.shape
    if m > 2 * n:
        Q, R = sla.qr(A.T, mode="economic", check_finite=False)
        return Q @ pinv_solve(R.T, b, rtol)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((A.shape[1],) + b.shape[1:])
    keep = s > rtol * s[0]
    coef = U[:, keep].T @ b
    coef = coef / (s[keep] if coef.ndim == 1 else s[keep][:, None])
    return Vt[keep].T @ coef


def pinvh(S: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix via eigendecomposition."""
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    top = np.max(np.abs(w)) if w.size else 0.0
    if top == 0:
        return np.zeros_like(S)
    keep = w > rtol * top
    return (V[:, keep] / w[keep]) @ V[:, keep].T


def compress_time(Y: np.ndarray):
    """Return ``(Yr, Vt)`` with ``Y == Yr @ Vt`` and ``Yr`` at most rank(Y) columns wide.

    Row-wise penalties and Frobenius residuals are invariant under the
    orthonormal map, so multi-sample solvers may run on ``Yr``. Singular
    values below the shared rank cutoff are dropped.
    """
    n, t = Y.shape
    if t <= n:
        return Y, None
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    if s[0] == 0:
        return np.zeros((n, 1)), np.zeros((1, t))
    keep = s > RANK_RTOL * s[0]
    return U[:, keep] * s[keep], Vt[keep]


def expand_time(Xr: np.ndarray, Vt) -> np.ndarray:
    return Xr if Vt is None else Xr @ Vt


def check_measurements(lf, Y) -> np.ndarray:
    Y = np.asarray(getattr(Y, "data", Y), dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != lf.n_channels:
        raise DataError(f"measurements have {Y.shape[0]} rows, lead field has {lf.n_channels} channels")
    if not np.all(np.isfinite(Y)):
        raise DataError("measurements contain non-finite values")
    return Y
