"""Principal components by power iteration with deflation."""

from __future__ import annotations

import numpy as np

POWER_TOL = 1e-9
POWER_MAX_ITER = 10_000


def _sign_fix(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def leading_eigenvector(cov: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER,
                        exclude: np.ndarray | None = None):
    """Dominant eigenpair of a symmetric PSD matrix.

    Starts from a fixed vector so the result is deterministic; stops when the
    iterate moves less than ``tol`` (in 2-norm, up to sign). Columns of
    ``exclude`` are projected out on every step, which keeps deflated
    components exactly orthogonal to the earlier ones.
    """
    d = cov.shape[0]

    def project(u):
        if exclude is not None and exclude.size:
            u = u - exclude @ (exclude.T @ u)
        return u

    v = np.ones(d) / np.sqrt(d)
    # a start orthogonal to the dominant direction would stall; nudge it
    v = project(v + np.arange(1, d + 1) * 1e-3)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = project(cov @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0, _sign_fix(v)
        w /= lam
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            v = w
            break
        v = w
    return float(v @ cov @ v), _sign_fix(v)


def principal_components(x: np.ndarray, k: int = 2, tol: float = POWER_TOL):
    """Scores, loadings (columns) and variances of the top ``k`` components.

    Loadings are sign-fixed so each one's largest-magnitude entry is positive.
    Returns fewer than ``k`` components when the data has fewer dimensions.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("expected a non-empty 2-d array")
    centered = x - x.mean(axis=0)
    k = min(k, x.shape[1])
    cov = centered.T @ centered / centered.shape[0]
    loadings, variances = [], []
    for _ in range(k):
        basis = np.stack(loadings, axis=1) if loadings else None
        lam, v = leading_eigenvector(cov, tol, exclude=basis)
        loadings.append(v)
        variances.append(lam)
        cov = cov - lam * np.outer(v, v)
        cov = 0.5 * (cov + cov.T)
    loadings = np.stack(loadings, axis=1)
    return centered @ loadings, loadings, np.array(variances)
