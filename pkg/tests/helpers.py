"""Small hand-built lead fields for solver unit tests."""

import numpy as np

from eegsparse.model import ElectrodeArray, LeadField, SourceSpace


def matrix_lf(K, dof: int = 1, spacing: float = 10.0) -> LeadField:
    """Wrap a raw gain matrix; sources sit on a line with chain adjacency."""
    K = np.asarray(K, dtype=float)
    n, cols = K.shape
    m = cols // dof
    pos = np.column_stack([np.arange(m) * spacing, np.zeros(m), np.zeros(m)])
    orient = "free" if dof == 3 else np.tile([0.0, 0.0, 1.0], (m, 1))
    adj = [[j for j in (i - 1, i + 1) if 0 <= j < m] for i in range(m)]
    epos = np.column_stack([np.cos(np.arange(n)), np.sin(np.arange(n)), np.zeros(n)]) * 100.0
    eadj = [[(i - 1) % n, (i + 1) % n] if n > 2 else [j for j in range(n) if j != i] for i in range(n)]
    return LeadField(K, SourceSpace(pos, orient, dof, adj, spacing=spacing), ElectrodeArray(epos, eadj))


def two_sparse_instance(seed):
    """Unit-norm Gaussian columns (as every solver sees after normalization),
    two nonzeros with magnitudes in [0.5, 2] and random signs."""
    r = np.random.default_rng(seed)
    K = r.standard_normal((8, 16))
    K /= np.linalg.norm(K, axis=0)
    supp = np.sort(r.choice(16, 2, replace=False))
    x = np.zeros(16)
    x[supp] = r.choice([-1, 1], 2) * r.uniform(0.5, 2.0, 2)
    return K, K @ x
