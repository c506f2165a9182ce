"""Small dense symmetric linear algebra.

All matrices are 2d numpy arrays. Generalized inverses default to the
Moore-Penrose pseudoinverse computed from a symmetric eigendecomposition;
eigenvalues below ``rank_tol`` times the largest absolute eigenvalue are
treated as zero.
"""
import warnings

import numpy as np

from .errors import DimensionError, IllDefinedSchur, InvalidMatrix, SingularTopBlock

RANK_TOL = 1e-9
SYMMETRY_TOL = 1e-10


class SchurWarning(UserWarning):
    """Schur complement taken with a pseudoinverse of a singular top block."""


def as_symmetric(M):
    """Validate a square finite matrix and return its symmetrized copy."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidMatrix(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidMatrix("matrix has non-finite entries")
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    if np.abs(M - M.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise InvalidMatrix("matrix is not symmetric")
    return (M + M.T) / 2


def sym_eig(M):
    """Eigenvalues in descending order and the matching orthonormal basis."""
    gamma, V = np.linalg.eigh(as_symmetric(M))
    return gamma[::-1], V[:, ::-1]


def _kept(gamma, rank_tol, scale=0.0):
    top = max(np.abs(gamma).max(initial=0.0), scale)
    if top == 0.0:
        return np.zeros_like(gamma, dtype=bool)
    return np.abs(gamma) > rank_tol * top


def numerical_rank(M, rank_tol=RANK_TOL):
    gamma, _ = sym_eig(M)
    return int(_kept(gamma, rank_tol).sum())


def matrix_rank(A, rank_tol=RANK_TOL):
    """Rank of a general (possibly rectangular) matrix, relative tolerance."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    return int((sv > rank_tol * sv.max()).sum()) if sv.max() > 0 else 0


def mp_pinv(M, rank_tol=RANK_TOL, scale=0.0):
    """Moore-Penrose pseudoinverse of a symmetric matrix.

    Eigenvalues up to rank_tol * max(gamma_max, scale) count as zero; pass
    ``scale`` when M is derived from a larger matrix, so that pure round-off
    is not inverted.
    """
    gamma, V = sym_eig(M)
    keep = _kept(gamma, rank_tol, scale)
    Vk = V[:, keep]
    P = (Vk / gamma[keep]) @ Vk.T
    return (P + P.T) / 2


def _split(B, p):
    B = as_symmetric(B)
    n = B.shape[0]
    if not 1 <= p < n:
        raise DimensionError(f"partition {p} invalid for order {n}")
    return B[:p, :p], B[:p, p:], B[p:, p:]


def _top_inverse(B11, rank_tol):
    gamma = np.linalg.eigvalsh(B11)
    if gamma.min() > rank_tol * max(gamma.max(), 1.0):
        return np.linalg.inv(B11), True
    return mp_pinv(B11, rank_tol), False


def schur_complement(B, p, rank_tol=RANK_TOL):
    """Schur complement ``B22 - B12' B11^{-1} B12`` of the leading p x p block.

    A singular B11 falls back to its pseudoinverse (with a SchurWarning),
    which is only meaningful when C(B12) lies inside C(B11).
    """
    B11, B12, B22 = _split(B, p)
    inv11, regular = _top_inverse(B11, rank_tol)
    if not regular:
        resid = B11 @ inv11 @ B12 - B12
        if np.abs(resid).max(initial=0.0) > 1e-8 * max(np.abs(B12).max(initial=0.0), 1.0):
            raise IllDefinedSchur("column space of B12 is not inside that of B11")
        warnings.warn("singular top block; pseudoinverse used", SchurWarning, stacklevel=2)
    S = B22 - B12.T @ inv11 @ B12
    return (S + S.T) / 2


def block_ginverse(B, p, rank_tol=RANK_TOL):
    """Generalized inverse of a nonnegative definite B built from its Schur complement.

    With B11 invertible and BS^- the pseudoinverse of the Schur complement::

        G = [[B11^-1 + B11^-1 B12 BS^- B12' B11^-1, -B11^-1 B12 BS^-],
             [-BS^- B12' B11^-1,                     BS^-          ]]
    """
    B11, B12, B22 = _split(B, p)
    inv11, regular = _top_inverse(B11, rank_tol)
    if not regular:
        raise SingularTopBlock("leading block is singular")
    S = B22 - B12.T @ inv11 @ B12
    S_minus = mp_pinv((S + S.T) / 2, rank_tol, scale=np.abs(B).max())
    T = inv11 @ B12
    G = np.block([[inv11 + T @ S_minus @ T.T, -T @ S_minus], [-S_minus @ T.T, S_minus]])
    return (G + G.T) / 2


def range_residual(A, M, rank_tol=RANK_TOL):
    """Largest entry of ``M M^+ A - A``; zero iff C(A) lies in C(M)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    M = as_symmetric(M)
    if A.shape[0] != M.shape[0]:
        raise DimensionError(f"A has {A.shape[0]} rows, M has order {M.shape[0]}")
    if A.shape[1] == 0:
        return 0.0
    return float(np.abs(M @ mp_pinv(M, rank_tol) @ A - A).max())


def range_check(A, M, tol=1e-8, rank_tol=RANK_TOL):
    """True iff the column space of A is contained in that of M (within tol)."""
    A = np.asarray(A, dtype=float)
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    return range_residual(A, M, rank_tol) <= tol * scale
