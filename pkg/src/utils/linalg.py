"""Dense linear algebra helpers shared by the solvers and the certification code."""

import numpy as np
import scipy.linalg as la

from src.utils.errors import LinearAlgebraFailure


PINV_RTOL = 1e-10


def pinv(A, rtol=PINV_RTOL):
    """
    Moore-Penrose pseudoinverse through an explicit SVD.

    Singular values below rtol * sigma_max are truncated.

    Args:
        A: A matrix
        rtol: Relative truncation threshold

    Returns:
        Tuple (pseudoinverse, numerical rank)
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    U, s, Vt = la.svd(A, full_matrices=False, lapack_driver="gesvd")
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape), 0
    keep = s > rtol * s[0]
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * s_inv) @ U.T, int(keep.sum())


def sym(A):
    return 0.5 * (A + A.T)


def regularized_cholesky(H, start=1e-8, limit=1e8):
    """
    Cholesky factor of H + delta*I with the smallest delta from an increasing ladder.

    Returns:
        Tuple (cho_factor result, delta)
    """
    scale = max(1.0, float(np.max(np.abs(np.diag(H))))) if H.size else 1.0
    delta = 0.0
    while True:
        try:
            factor = la.cho_factor(H + delta * scale * np.eye(H.shape[0]), lower=True, check_finite=False)
            if np.all(np.isfinite(factor[0])):
                return factor, delta * scale
        except la.LinAlgError:
            pass
        delta = start if delta == 0.0 else delta * 10.0
        if delta > limit:
            raise LinearAlgebraFailure("Matrix is not positive definite under any tried regularization")


def psd_step_length(X, dX):
    """
    Largest alpha with X + alpha*dX positive semidefinite, for X positive definite.

    Returns inf when dX keeps X in the cone for every alpha >= 0.
    """
    try:
        L = la.cholesky(X, lower=True, check_finite=False)
    except la.LinAlgError:
        raise LinearAlgebraFailure("Iterate left the positive definite cone")
    Linv_dX = la.solve_triangular(L, dX, lower=True, check_finite=False)
    M = la.solve_triangular(L, Linv_dX.T, lower=True, check_finite=False)
    lam_min = la.eigvalsh(sym(M), subset_by_index=[0, 0], check_finite=False)[0]
    return np.inf if lam_min >= 0 else -1.0 / lam_min


def nonneg_step_length(x, dx):
    negative = dx < 0
    if not np.any(negative):
        return np.inf
    return float(np.min(-x[negative] / dx[negative]))
