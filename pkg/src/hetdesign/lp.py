"""Dense two-phase primal simplex for min c'x s.t. Cx = b, x >= 0.

Returns basic feasible solutions, which is the property sparsification
relies on: a vertex has at most rank(C) nonzero coordinates.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import LPInfeasible, NotConverged

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
DEPENDENT_ROW_TOL = 1e-10
# switch to Bland's rule after this many consecutive degenerate pivots
DEGENERATE_LIMIT = 50


@dataclass
class LPResult:
    x: np.ndarray
    basis: np.ndarray
    objective: float
    iterations: int
    rank: int


def independent_rows(C, b, tol=DEPENDENT_ROW_TOL):
    """Drop linearly dependent rows of [C | b]; raise if the system is inconsistent."""
    C = np.asarray(C, dtype=float)
    if C.shape[0] == 0:
        return C, np.asarray(b, float), 0
    _, R, piv = scipy.linalg.qr(C.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag.max(initial=0.0), 1.0)))
    keep = np.sort(piv[:rank])
    Ck, bk = C[keep], np.asarray(b, float)[keep]
    if rank < C.shape[0]:
        sol, *_ = np.linalg.lstsq(Ck, bk, rcond=None)
        scale = max(np.abs(b).max(initial=0.0), 1.0)
        if np.abs(C @ sol - b).max() > 1e-8 * scale:
            raise LPInfeasible("equality constraints are inconsistent")
    return Ck, bk, rank


def _pivot(T, row, col):
    T[row] /= T[row, col]
    factor = T[:, col].copy()
    factor[row] = 0.0
    T -= np.outer(factor, T[row])


def _run(T, basis, cost_row, allowed, max_iter):
    """Simplex iterations on tableau T whose row ``cost_row`` holds reduced costs."""
    m = T.shape[0] - 1
    degenerate = 0
    for it in range(max_iter):
        reduced = T[cost_row, :-1]
        candidates = np.flatnonzero((reduced < -PIVOT_TOL) & allowed)
        if candidates.size == 0:
            return it
        if degenerate >= DEGENERATE_LIMIT:
            col = int(candidates[0])
        else:
            col = int(candidates[np.argmin(reduced[candidates])])
        column = T[:m, col]
        positive = column > PIVOT_TOL
        if not positive.any():
            raise LPInfeasible("objective is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[positive] = T[:m, -1][positive] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = int(ties[np.argmin(basis[ties])])
        degenerate = degenerate + 1 if best <= FEAS_TOL else 0
        _pivot(T, row, col)
        basis[row] = col
    raise NotConverged(f"simplex did not finish in {max_iter} iterations")


def simplex(C, b, c, max_iter=50_000):
    """Minimize c'x over {x >= 0 : Cx = b}; the result is a vertex."""
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    n = C.shape[1]
    C = C.copy()
    flip = b < 0
    C[flip] *= -1
    b[flip] *= -1
    C, b, rank = independent_rows(C, b)
    m = C.shape[0]

    # phase 1: artificial columns n..n+m-1, objective in the last row
    T = np.zeros((m + 2, n + m + 1))
    T[:m, :n] = C
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = c
    T[m + 1, :n] = -C.sum(axis=0)
    T[m + 1, -1] = -b.sum()
    basis = np.arange(n, n + m)
    work = np.vstack([T[:m], T[m + 1:]])
    allowed = np.ones(n + m, dtype=bool)
    iters = _run(work, basis, m, allowed, max_iter)
    T[:m], T[m + 1] = work[:m], work[m]
    if -T[m + 1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        raise LPInfeasible(f"no nonnegative solution (phase-1 residual {-T[m + 1, -1]:.3g})")

    # drive remaining artificials out of the basis
    for row in np.flatnonzero(basis >= n):
        candidates = np.flatnonzero(np.abs(T[row, :n]) > PIVOT_TOL)
        if candidates.size:
            _pivot(T[:m + 1], row, int(candidates[0]))
            basis[row] = int(candidates[0])

    keep = basis < n
    T2 = np.vstack([T[:m][keep], np.zeros(n + m + 1)])
    basis = basis[keep]
    T2 = np.delete(T2, np.arange(n, n + m), axis=1)
    T2[-1, :n] = c
    T2[-1, -1] = 0.0
    for row, col in enumerate(basis):
        T2[-1] -= T2[-1, col] * T2[row]
    iters += _run(T2, basis, T2.shape[0] - 1, np.ones(n, dtype=bool), max_iter)

    x = np.zeros(n)
    # re-solve the basic values from the original rows to shed tableau round-off
    CB = C[:, basis]
    xb, *_ = np.linalg.lstsq(CB, b, rcond=None)
    xb[np.abs(xb) < FEAS_TOL] = 0.0
    if np.any(xb < -1e-7):
        xb = T2[:-1, -1]
    x[basis] = np.maximum(xb, 0.0)
    return LPResult(x, np.sort(basis), float(c @ x), iters, rank)
