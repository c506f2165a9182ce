"""Treatment-plus-covariate model: design space, regressors, designs, moments.

A design on the grid {1..v1} x {1..d} is stored as a flat vector where the
pair (i, k) (1-based) lives at position ``(i-1)*d + (k-1)``, so the covariate
index varies fastest. Marginal designs are plain probability vectors.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyLevels, NotContrasts, ZeroRowQ1
from .linalg import RANK_TOL, matrix_rank

DESIGN_SUM_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelSpec:
    """Treatments with efficiency function ``lam`` and a finite covariate table ``g``.

    ``g`` has one row g(k) per covariate point (shape d x v2).
    """

    lam: np.ndarray
    g: np.ndarray
    treatment_labels: tuple = None
    covariate_labels: tuple = None

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1:
            raise ValueError("lambda must be one value per treatment")
        g = np.asarray(self.g, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.ndim != 2 or g.shape[0] < 1:
            raise ValueError("covariate table must have at least one point")
        if lam.size < 2:
            raise ValueError("need at least two treatments")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("efficiency function must be positive and finite")
        if not np.all(np.isfinite(g)):
            raise ValueError("covariate table has non-finite entries")
        object.__setattr__(self, "lam", _frozen(lam))
        object.__setattr__(self, "g", _frozen(g))

    @property
    def v1(self):
        return self.lam.size

    @property
    def d(self):
        return self.g.shape[0]

    @property
    def v2(self):
        return self.g.shape[1]

    @property
    def n_params(self):
        return self.v1 + 1 + self.v2

    @property
    def n_points(self):
        return self.v1 * self.d


@dataclass(frozen=True)
class InterestSpec:
    """Target system A'theta with A = diag(Q1, Q2) and Q2' = (0, K')."""

    Q1: np.ndarray
    K: np.ndarray
    A: np.ndarray
    rank: int
    rank_deficient: bool

    @property
    def s1(self):
        return self.Q1.shape[1]

    @property
    def s2(self):
        return self.K.shape[1]

    @property
    def Q2(self):
        return self.A[self.Q1.shape[0]:, self.s1:]


@dataclass(frozen=True)
class ExactDesign:
    counts: np.ndarray
    n: int = field(default=None)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be nonnegative integers")
        counts = counts.astype(int)
        total = int(counts.sum())
        if self.n is not None and self.n != total:
            raise ValueError(f"counts sum to {total}, expected {self.n}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", total)

    def as_design(self):
        return self.counts / self.n


def check_probability(x, name="design"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has negative or non-finite weights")
    if abs(x.sum() - 1.0) > DESIGN_SUM_TOL:
        raise ValueError(f"{name} weights sum to {x.sum():.12g}, not 1")
    return x


def check_design(spec, xi):
    xi = check_probability(xi)
    if xi.size != spec.n_points:
        raise DimensionError(f"design has {xi.size} entries, grid has {spec.n_points}")
    return xi


def design_index(spec, i, k):
    """Flat position of the 1-based grid point (i, k)."""
    if not (1 <= i <= spec.v1 and 1 <= k <= spec.d):
        raise IndexError(f"grid point ({i}, {k}) outside {spec.v1} x {spec.d}")
    return (i - 1) * spec.d + (k - 1)


def regressor(spec, i, k):
    """f(i, k) = (e_i', 1, g(k)')' for 1-based treatment i and covariate point k."""
    design_index(spec, i, k)
    e = np.zeros(spec.v1)
    e[i - 1] = 1.0
    return np.concatenate([e, [1.0], spec.g[k - 1]])


def regressor_matrix(spec):
    """All regressors stacked in design order, shape (v1*d, v1+1+v2)."""
    E = np.repeat(np.eye(spec.v1), spec.d, axis=0)
    H = np.tile(covariate_regressors(spec), (spec.v1, 1))
    return np.hstack([E, H])


def covariate_regressors(spec):
    """Rows h(k) = (1, g(k)')."""
    return np.hstack([np.ones((spec.d, 1)), spec.g])


def point_weights(spec):
    """lambda_i repeated over the grid in design order."""
    return np.repeat(spec.lam, spec.d)


def moment_matrix(spec, xi):
    """M(xi) = sum xi(i,k) lambda_i f(i,k) f(i,k)'."""
    xi = np.asarray(xi, dtype=float)
    if xi.size != spec.n_points:
        raise DimensionError(f"design has {xi.size} entries, grid has {spec.n_points}")
    F = regressor_matrix(spec)
    M = (F * (xi * point_weights(spec))[:, None]).T @ F
    return (M + M.T) / 2


def marginals(xi, v1):
    """Marginal treatment weights w and covariate weights alpha of a flat design."""
    table = np.asarray(xi, dtype=float).reshape(v1, -1)
    return table.sum(axis=1), table.sum(axis=0)


def weighted_covariate_marginal(spec, xi):
    """Covariate marginal with treatment i weighted by lambda_i: alpha_k ~ sum_i lambda_i xi(i,k).

    Under heteroscedastic errors this, not the plain marginal, is the covariate
    design whose product with w dominates xi.
    """
    table = np.asarray(xi, dtype=float).reshape(spec.v1, spec.d) * spec.lam[:, None]
    alpha = table.sum(axis=0)
    return alpha / alpha.sum()


def product_design(w, alpha):
    return np.outer(np.asarray(w, float), np.asarray(alpha, float)).ravel()


def treatment_moment(spec, w):
    return np.diag(spec.lam * np.asarray(w, dtype=float))


def covariate_moment(spec, alpha):
    """Return (M2(alpha), S(alpha)); S is the Schur complement of the constant term."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size != spec.d:
        raise DimensionError(f"covariate design has {alpha.size} entries, expected {spec.d}")
    H = covariate_regressors(spec)
    M2 = (H * alpha[:, None]).T @ H
    mean = alpha @ spec.g
    S = (spec.g * alpha[:, None]).T @ spec.g - np.outer(mean, mean)
    return (M2 + M2.T) / 2, (S + S.T) / 2


def assemble_A(Q1, K, v1, v2, rank_tol=RANK_TOL):
    """Build the interest system for contrasts Q1 (v1 x s1) and covariate functions K (v2 x s2)."""
    Q1 = np.asarray(Q1, dtype=float)
    if Q1.ndim == 1:
        Q1 = Q1[:, None]
    if K is None or np.size(K) == 0:
        K = np.zeros((v2, 0))
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.shape[0] != v2:
        raise DimensionError(f"K must have {v2} rows, got {K.shape[0]}")
    if Q1.shape[0] != v1:
        raise DimensionError(f"Q1 must have {v1} rows, got {Q1.shape[0]}")
    if Q1.shape[1] < 1:
        raise ZeroRowQ1("Q1 has no columns")
    scale = max(np.abs(Q1).max(), 1.0)
    if np.abs(Q1.sum(axis=0)).max() > 1e-10 * scale * v1:
        raise NotContrasts("columns of Q1 do not sum to zero")
    if np.any(np.all(np.abs(Q1) <= 1e-14 * scale, axis=1)):
        raise ZeroRowQ1("Q1 has a row of zeros: some treatment carries no interest")
    s1, s2 = Q1.shape[1], K.shape[1]
    A = np.zeros((v1 + 1 + v2, s1 + s2))
    A[:v1, :s1] = Q1
    A[v1 + 1:, s1:] = K
    rank = matrix_rank(A, rank_tol)
    return InterestSpec(_frozen(Q1), _frozen(K), _frozen(A), rank, rank < s1 + s2)


def build_factorial_covariates(levels):
    """Full factorial of the given per-dimension levels, lexicographic order."""
    levels = [list(map(float, lv)) for lv in levels]
    if not levels or any(len(lv) == 0 for lv in levels):
        raise EmptyLevels("every covariate dimension needs at least one level")
    return np.array(list(itertools.product(*levels)), dtype=float)


def build_onehot_covariates(group_sizes):
    """Concatenated one-hot codes over all level combinations of qualitative covariates."""
    sizes = [int(s) for s in group_sizes]
    if not sizes or any(s < 2 for s in sizes):
        raise ValueError("each qualitative covariate needs at least two levels")
    eyes = [np.eye(s) for s in sizes]
    rows = [np.concatenate([eyes[j][c] for j, c in enumerate(combo)])
            for combo in itertools.product(*(range(s) for s in sizes))]
    return np.array(rows)


def control_contrasts(v1):
    """Test-minus-control comparisons tau_i - tau_1, as a v1 x (v1-1) matrix."""
    return np.vstack([-np.ones(v1 - 1), np.eye(v1 - 1)])


def centering(v):
    return np.eye(v) - np.ones((v, v)) / v


def centered_groups(group_sizes):
    """Block-diagonal centering, one block per qualitative covariate."""
    sizes = [int(s) for s in group_sizes]
    n = sum(sizes)
    K = np.zeros((n, n))
    start = 0
    for s in sizes:
        K[start:start + s, start:start + s] = centering(s)
        start += s
    return K
