"""Sparse optimal designs with the same information as a product design.

Any design xi whose treatment marginal is w*, whose covariate sums are
orthogonal to the treatment contrasts, and whose covariate moments match
those of alpha* in the directions K picks out, has the information matrix
of w* (x) alpha*. These conditions are linear in xi, so a vertex of the
feasible polytope gives an equally good design with at most rank(C) support
points.
"""
from dataclasses import dataclass, field

import numpy as np

from .criteria import CriterionSpec, info_matrix_full, phi_p
from .errors import LPInfeasible, VerificationFailed
from .linalg import RANK_TOL, block_ginverse, matrix_rank, mp_pinv
from .lp import simplex
from .model import marginals, moment_matrix, point_weights, regressor_matrix

SUPPORT_TOL = 1e-12
VERIFY_TOL = 1e-8


@dataclass
class ConstraintSet:
    """Rows C xi (sense) b over the flat design; senses are '=' or '<='."""

    C: np.ndarray
    b: np.ndarray
    row_tags: list
    senses: list = field(default=None)

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.senses is None:
            self.senses = ["="] * self.b.size
        if not (self.C.shape[0] == self.b.size == len(self.row_tags) == len(self.senses)):
            raise ValueError("constraint rows, right-hand sides, tags and senses disagree")
        if any(s not in ("=", "<=") for s in self.senses):
            raise ValueError("constraint sense must be '=' or '<='")

    @property
    def equalities(self):
        mask = np.array([s == "=" for s in self.senses], dtype=bool)
        return self.C[mask], self.b[mask]

    @property
    def inequalities(self):
        mask = np.array([s == "<=" for s in self.senses], dtype=bool)
        return self.C[mask], self.b[mask]

    def residual(self, xi):
        r = self.C @ xi - self.b
        return np.where(np.array(self.senses) == "<=", np.maximum(r, 0.0), np.abs(r))

    def extend(self, other):
        return ConstraintSet(np.vstack([self.C, other.C]), np.concatenate([self.b, other.b]),
                             list(self.row_tags) + list(other.row_tags),
                             list(self.senses) + list(other.senses))


@dataclass
class VertexSolution:
    x: np.ndarray
    support_size: int
    basis_rank: int


def _block_rows(spec, per_treatment):
    """Rows acting as ``per_treatment[i]`` on the block of treatment i."""
    rows = np.zeros((per_treatment[0].shape[0], spec.n_points))
    for i, block in enumerate(per_treatment):
        rows[:, i * spec.d:(i + 1) * spec.d] = block
    return rows


def information_constraints(spec, interest, w_star, alpha_star, rank_tol=RANK_TOL):
    """Linear conditions under which xi has the information of w* (x) alpha*."""
    w = np.asarray(w_star, dtype=float)
    alpha = np.asarray(alpha_star, dtype=float)
    Q1, K, G = interest.Q1, interest.K, spec.g
    v1, d, v2 = spec.v1, spec.d, spec.v2
    blocks, rhs, tags = [], [], []

    fix = np.kron(np.eye(v1), np.ones((1, d)))
    blocks.append(fix)
    rhs.append(w)
    tags += ["marginal-fix"] * v1

    for a in range(v2):
        rows = _block_rows(spec, [np.outer(Q1[i] / w[i], G[:, a]) for i in range(v1)])
        blocks.append(rows)
        rhs.append(np.zeros(rows.shape[0]))
    tags += ["covariate-resistance"] * (v2 * Q1.shape[1])

    if interest.s2 > 0:
        mean = alpha @ G
        S = (G * alpha[:, None]).T @ G - np.outer(mean, mean)
        SK = mp_pinv(S, rank_tol) @ K
        U = G @ SK
        for i in range(v1):
            rows = np.zeros((interest.s2, spec.n_points))
            rows[:, i * d:(i + 1) * d] = U.T
            blocks.append(rows)
            rhs.append(w[i] * (alpha @ U))
        tags += ["treat-res"] * (v1 * interest.s2)
        L = float(spec.lam @ w)
        V = (G - mean) @ SK
        for a in range(v2):
            rows = _block_rows(spec, [spec.lam[i] / L * (G[:, a][:, None] * V).T
                                      for i in range(v1)])
            blocks.append(rows)
            rhs.append(K[a])
        tags += ["cov-opt"] * (v2 * interest.s2)

    blocks.append(np.ones((1, spec.n_points)))
    rhs.append([1.0])
    tags.append("normalization")
    return ConstraintSet(np.vstack(blocks), np.concatenate([np.ravel(r) for r in rhs]), tags)


def covariate_total_constraints(spec, totals):
    """sum_i xi(i, k) = totals[k] for every covariate point k."""
    totals = np.asarray(totals, dtype=float)
    if totals.size != spec.d:
        raise ValueError(f"need {spec.d} covariate totals, got {totals.size}")
    C = np.tile(np.eye(spec.d), (1, spec.v1))
    return ConstraintSet(C, totals, ["covariate-total"] * spec.d)


def moment_matching_constraints(spec, xi_ref):
    """M(xi) = M(xi_ref), one row per upper-triangular moment entry, plus sum xi = 1."""
    F = regressor_matrix(spec) * np.sqrt(point_weights(spec))[:, None]
    rows_idx, cols_idx = np.triu_indices(spec.n_params)
    C = F[:, rows_idx].T * F[:, cols_idx].T
    C = np.vstack([C, np.ones(spec.n_points)])
    b = C @ np.asarray(xi_ref, dtype=float)
    b[-1] = 1.0
    return ConstraintSet(C, b, ["moment"] * (C.shape[0] - 1) + ["normalization"])


def user_constraints(spec, equalities=(), inequalities=()):
    """Constraints from lists of (row, rhs) pairs over the flat design."""
    rows, rhs, senses = [], [], []
    for sense, items in (("=", equalities), ("<=", inequalities)):
        for row, value in items:
            row = np.asarray(row, dtype=float)
            if row.size != spec.n_points:
                raise ValueError(f"constraint row has {row.size} entries, grid has {spec.n_points}")
            rows.append(row)
            rhs.append(float(value))
            senses.append(sense)
    if not rows:
        return None
    return ConstraintSet(np.array(rows), rhs, ["user"] * len(rows), senses)


def lp_vertex_solve(cs, c=None, seed=0):
    """A vertex of {xi >= 0 : cs}, minimizing c (uniform random from ``seed`` if None)."""
    Ce, be = cs.equalities
    Ci, bi = cs.inequalities
    n = cs.C.shape[1]
    if c is None:
        c = np.random.default_rng(seed).uniform(size=n)
    c = np.asarray(c, dtype=float)
    if Ci.shape[0]:
        m_i = Ci.shape[0]
        C = np.vstack([np.hstack([Ce, np.zeros((Ce.shape[0], m_i))]),
                       np.hstack([Ci, np.eye(m_i)])])
        b = np.concatenate([be, bi])
        c = np.concatenate([c, np.zeros(m_i)])
    else:
        C, b = Ce, be
    res = simplex(C, b, c)
    x = res.x[:n]
    return VertexSolution(x, int(np.count_nonzero(x > SUPPORT_TOL)), res.rank)


def verify_transfer(spec, xi, w_star, alpha_star, interest, tol=VERIFY_TOL, rank_tol=RANK_TOL):
    """Max entry of |M(xi) G A - A| for G = diag(M1^-1(w*), L^-1 M2(alpha*)^-).

    G is a generalized inverse of the product moment matrix; a zero residual
    means xi transfers the full information of w* (x) alpha*.
    """
    w = np.asarray(w_star, dtype=float)
    alpha = np.asarray(alpha_star, dtype=float)
    v1 = spec.v1
    H = np.hstack([np.ones((spec.d, 1)), spec.g])
    M2 = (H * alpha[:, None]).T @ H
    L = float(spec.lam @ w)
    Gi = np.zeros((spec.n_params,) * 2)
    Gi[:v1, :v1] = np.diag(1.0 / (spec.lam * w))
    Gi[v1:, v1:] = block_ginverse(M2, 1, rank_tol) / L
    A = interest.A
    residual = float(np.abs(moment_matrix(spec, xi) @ Gi @ A - A).max())
    return residual <= tol * max(1.0, np.abs(A).max()), residual


@dataclass
class SparsifyResult:
    xi: np.ndarray
    constraints: ConstraintSet
    report: dict


def _verify(spec, interest, xi, xi_star, w, alpha, crit, rank_tol):
    ok_transfer, transfer = verify_transfer(spec, xi, w, alpha, interest, rank_tol=rank_tol)
    N_new = info_matrix_full(spec, xi, interest, rank_tol).N
    N_ref = info_matrix_full(spec, xi_star, interest, rank_tol).N
    info_diff = float(np.linalg.norm(N_new - N_ref) / max(1.0, np.linalg.norm(N_ref)))
    phi_new = phi_p(info_matrix_full(spec, xi, interest, rank_tol), crit, rank_tol)
    phi_ref = phi_p(info_matrix_full(spec, xi_star, interest, rank_tol), crit, rank_tol)
    phi_diff = abs(phi_new - phi_ref) / max(1.0, abs(phi_ref))
    diagnostics = {"transfer_residual": transfer, "info_difference": info_diff,
                   "criterion_difference": phi_diff, "criterion_value": phi_new}
    ok = ok_transfer and info_diff <= VERIFY_TOL and phi_diff <= VERIFY_TOL
    return ok, diagnostics


def sparsify(spec, interest, xi_star, constraints=None, seed=0, restarts=20,
             crit=None, rank_tol=RANK_TOL):
    """Sparsest LP vertex found over ``restarts`` random objectives.

    Marginals w*, alpha* are read off ``xi_star``; extra ``constraints`` (a
    ConstraintSet) are appended to the information-preserving conditions.
    Raises LPInfeasible when the combined system has no nonnegative
    solution and VerificationFailed when the vertex loses information.
    """
    crit = crit or CriterionSpec(-1.0)
    xi_star = np.asarray(xi_star, dtype=float)
    w, alpha = marginals(xi_star, spec.v1)
    cs = information_constraints(spec, interest, w, alpha, rank_tol)
    if constraints is not None:
        cs = cs.extend(constraints)
    rank = matrix_rank(cs.C[[s == "=" for s in cs.senses]], 1e-10)
    rng = np.random.default_rng(seed)
    best = None
    for restart in range(max(1, restarts)):
        c = rng.uniform(size=spec.n_points)
        try:
            vertex = lp_vertex_solve(cs, c)
        except LPInfeasible:
            if restart == 0:
                raise
            continue
        if best is None or vertex.support_size < best[1].support_size:
            best = (restart, vertex)
    restart, vertex = best
    xi = np.where(vertex.x > SUPPORT_TOL, vertex.x, 0.0)
    drift = abs(xi.sum() - 1.0)
    xi = xi / xi.sum()
    ok, diagnostics = _verify(spec, interest, xi, xi_star, w, alpha, crit, rank_tol)
    diagnostics["constraint_residual"] = float(cs.residual(xi).max())
    if not ok:
        raise VerificationFailed("sparsified design does not preserve the information matrix",
                                 diagnostics=diagnostics)
    support_star = int(np.count_nonzero(xi_star > SUPPORT_TOL))
    support = int(np.count_nonzero(xi))
    # the product design already satisfies the conditions unless extra constraints exclude it
    if support_star <= support and constraints is None:
        xi, support = xi_star.copy(), support_star
    report = {
        "support_product": support_star,
        "support_sparse": support,
        "constraint_rows": int(cs.C.shape[0]),
        "constraint_rank": int(rank),
        "zero_guarantee": int(spec.n_points - rank),
        "clamp_drift": float(drift),
        "restart": int(restart),
        **diagnostics,
    }
    return SparsifyResult(xi, cs, report)


def snap_to_constraints(cs, xi, support_tol=SUPPORT_TOL):
    """Least-squares correction of xi on its own support so that C xi = b.

    Used for designs printed at limited precision. Returns the corrected
    design and the largest change made.
    """
    xi = np.asarray(xi, dtype=float)
    Ce, be = cs.equalities
    S = np.flatnonzero(xi > support_tol)
    sol, *_ = np.linalg.lstsq(Ce[:, S], be - Ce[:, S] @ xi[S], rcond=None)
    y = np.zeros_like(xi)
    y[S] = xi[S] + sol
    return y, float(np.abs(y - xi).max())
