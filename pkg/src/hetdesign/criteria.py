"""Information matrices and Kiefer's Phi_p criteria.

For a rank-deficient target system the information matrix is the
pseudoinverse of A' M^- A and the criterion is evaluated on its positive
eigenvalues; fewer positive eigenvalues than the target rank means
information has been lost and the criterion value is 0.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDesign, InfeasibleMarginal
from .linalg import RANK_TOL, matrix_rank, mp_pinv, range_check, range_residual, sym_eig
from .model import covariate_moment, moment_matrix

NEG_INF = float("-inf")

_ALIASES = {"D": 0.0, "A": -1.0, "E": NEG_INF}


@dataclass(frozen=True)
class CriterionSpec:
    """Phi_p with p in [-inf, 0]; ``s`` overrides the effective dimension."""

    p: float = -1.0
    s: int = None

    def __post_init__(self):
        p = float(self.p)
        if math.isnan(p) or p > 0:
            raise ValueError(f"criterion exponent must lie in [-inf, 0], got {self.p}")
        object.__setattr__(self, "p", p)

    @property
    def label(self):
        for name, value in _ALIASES.items():
            if self.p == value:
                return name
        return f"p={self.p:g}"


def parse_criterion(value):
    """Accept 'D'/'A'/'E', '-inf' or a number."""
    if isinstance(value, CriterionSpec):
        return value
    if isinstance(value, str):
        key = value.strip()
        if key.upper() in _ALIASES:
            return CriterionSpec(_ALIASES[key.upper()])
        if key.lower() in ("-inf", "-infinity"):
            return CriterionSpec(NEG_INF)
        return CriterionSpec(float(key))
    return CriterionSpec(float(value))


@dataclass(frozen=True)
class InfoMatrix:
    """Information matrix N with its count of positive eigenvalues.

    ``target_rank`` is the number of positive eigenvalues a non-degenerate
    design delivers (the rank of the target system).
    """

    N: np.ndarray
    positive_rank: int
    target_rank: int


def _positive_eigs(N, rank_tol=RANK_TOL):
    gamma, _ = sym_eig(N)
    top = gamma.max(initial=0.0)
    if top <= 0:
        return gamma[:0]
    return gamma[gamma > rank_tol * top]


def _info_from_dispersion(C, full_rank, target_rank, rank_tol):
    C = (C + C.T) / 2
    N = np.linalg.inv(C) if full_rank else mp_pinv(C, rank_tol)
    N = (N + N.T) / 2
    return InfoMatrix(N, int(_positive_eigs(N, rank_tol).size), target_rank)


def info_matrix_full(spec, xi, interest, rank_tol=RANK_TOL):
    """N_A(xi) = (A' M^+(xi) A)^{-1}, or its pseudoinverse for rank-deficient A."""
    M = moment_matrix(spec, xi)
    A = interest.A
    if not range_check(A, M, rank_tol=rank_tol):
        raise InfeasibleDesign(
            "C(A) is not contained in C(M(xi)); "
            f"max residual {range_residual(A, M, rank_tol):.3g}")
    C = A.T @ mp_pinv(M, rank_tol) @ A
    return _info_from_dispersion(C, not interest.rank_deficient, interest.rank, rank_tol)


def info_matrix_treatment(spec, w, Q1, rank_tol=RANK_TOL):
    """N_Q1(w) = (Q1' diag(1/(lambda_i w_i)) Q1)^{-1} for w > 0."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise InfeasibleMarginal("treatment design must put positive weight on every treatment")
    Q1 = np.asarray(Q1, dtype=float)
    C = (Q1.T / (spec.lam * w)) @ Q1
    r = matrix_rank(Q1, rank_tol)
    return _info_from_dispersion(C, r == Q1.shape[1], r, rank_tol)


def info_matrix_covariate(spec, alpha, K, rank_tol=RANK_TOL):
    """N_K(alpha) = (K' S^+(alpha) K)^{-1}, S the Schur complement of M2(alpha)."""
    K = np.asarray(K, dtype=float)
    _, S = covariate_moment(spec, alpha)
    if not range_check(K, S, rank_tol=rank_tol):
        raise InfeasibleMarginal(
            "C(K) is not contained in C(S(alpha)); "
            f"max residual {range_residual(K, S, rank_tol):.3g}")
    C = K.T @ mp_pinv(S, rank_tol) @ K
    r = matrix_rank(K, rank_tol)
    return _info_from_dispersion(C, r == K.shape[1], r, rank_tol)


def phi_p(N, crit, rank_tol=RANK_TOL):
    """Kiefer's Phi_p on the positive eigenvalues of N.

    p = 0 gives the geometric mean, p = -inf the smallest positive eigenvalue.
    Returns 0 when N has fewer than ``s`` positive eigenvalues.
    """
    if isinstance(N, InfoMatrix):
        s_default, N = N.target_rank, N.N
    else:
        N = np.asarray(N, dtype=float)
        s_default = N.shape[0]
    s = crit.s if crit.s is not None else s_default
    gamma = _positive_eigs(N, rank_tol)
    if s == 0:
        return 0.0
    if gamma.size < s:
        return 0.0
    gmin = gamma.min()
    if crit.p == NEG_INF:
        return float(gmin)
    if crit.p == 0:
        return float(np.exp(np.log(gamma).sum() / s))
    # factor out gmin so that (gamma/gmin)^p <= 1 for any p < 0
    ratio = np.sum((gamma / gmin) ** crit.p) / s
    return float(gmin * ratio ** (1.0 / crit.p))


def criterion_value(spec, xi, interest, crit, rank_tol=RANK_TOL):
    """Phi_p(N_A(xi)), with 0 for designs under which A'theta is not estimable."""
    try:
        info = info_matrix_full(spec, xi, interest, rank_tol)
    except InfeasibleDesign:
        return 0.0
    return phi_p(info, crit, rank_tol)


def product_info(spec, w, alpha, interest, rank_tol=RANK_TOL):
    """Block-diagonal information of w (x) alpha: diag(N_Q1(w), (sum lambda_i w_i) N_K(alpha))."""
    N1 = info_matrix_treatment(spec, w, interest.Q1, rank_tol)
    if interest.s2 == 0:
        return N1
    N2 = info_matrix_covariate(spec, alpha, interest.K, rank_tol)
    scale = float(spec.lam @ np.asarray(w, dtype=float))
    s1 = interest.s1
    N = np.zeros((s1 + interest.s2,) * 2)
    N[:s1, :s1] = N1.N
    N[s1:, s1:] = scale * N2.N
    return InfoMatrix(N, N1.positive_rank + N2.positive_rank, interest.rank)


def efficiency(spec, exact, reference, interest, crit, rank_tol=RANK_TOL):
    """Phi(N_A(counts/n)) / Phi(N_A(reference)); 0 if the exact design is infeasible."""
    ref_value = phi_p(info_matrix_full(spec, reference, interest, rank_tol), crit, rank_tol)
    if ref_value <= 0:
        raise InfeasibleDesign("reference design has zero criterion value")
    if exact.n <= 0:
        raise ValueError("exact design has no trials")
    return criterion_value(spec, exact.as_design(), interest, crit, rank_tol) / ref_value

