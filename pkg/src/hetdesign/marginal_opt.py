"""Optimal product designs from the two marginal problems.

The covariate design alpha* maximizes Phi_p(N_K(alpha)) in the homoscedastic
covariate model; the treatment design w* then maximizes the product-design
criterion, in which the covariate block enters only through
phi* = tr(N_K(alpha*)^p) scaled by (sum_i lambda_i w_i)^p.

Both problems are concave maximizations over a probability simplex and are
solved by a vertex-exchange method: weight moves from the support point with
the smallest gradient entry to the point with the largest, with an exact line
search on the directional derivative. E-optimality is reached through a
decreasing-p homotopy with Richardson extrapolation in 1/p.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .criteria import (NEG_INF, criterion_value, info_matrix_covariate,
                       phi_p, _positive_eigs)
from .errors import InfeasibleInterest, NotConverged, OracleTooLarge
from .linalg import RANK_TOL, matrix_rank, mp_pinv, range_check
from .model import covariate_moment, covariate_regressors, point_weights, product_design, regressor_matrix


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-4
    gap_tol: float = 1e-14
    improve_tol: float = 0.0
    max_iter: int = 100_000
    floor: float = 1e-9
    homotopy: tuple = (-8.0, -16.0, -32.0, -64.0, -128.0)
    homotopy_limit: float = -8192.0
    agree_tol: float = 1e-9


@dataclass
class MarginalSolution:
    weights: np.ndarray
    criterion_value: float
    phi_star: float
    iterations: int
    converged: bool
    spectrum: np.ndarray = field(default=None, repr=False)


@dataclass
class ProductSolution:
    w: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    value: float
    treatment: MarginalSolution
    covariate: MarginalSolution
    report: dict


def _weighted_inverse(mu, V, p, s):
    """log Phi_p from positive dispersion eigenvalues and the gradient weight matrix.

    For the dispersion C = A' M^- A with positive eigenvalues mu, the
    information matrix has eigenvalues 1/mu, and d log Phi / dx_j equals
    b_j' W b_j whenever dC/dx_j = -b_j b_j'.
    """
    if p == 0:
        return -np.log(mu).sum() / s, (V / mu) @ V.T / s
    q = -p
    top = mu.max()
    r = mu / top
    total = np.sum(r ** q)
    logphi = -np.log(top) - (np.log(total) - np.log(s)) / q
    return logphi, (V * r ** (q - 1)) @ V.T / (top * total)


class _LinearMomentObjective:
    """log Phi_p(N) for M(x) = sum_j x_j u_j u_j' and target matrix A."""

    def __init__(self, U, A, p, s, rank_tol=RANK_TOL):
        self.U, self.A, self.p, self.s, self.rank_tol = U, A, p, s, rank_tol
        self.n = U.shape[0]

    def _dispersion(self, x):
        M = (self.U * x[:, None]).T @ self.U
        M = (M + M.T) / 2
        Mp = mp_pinv(M, self.rank_tol)
        scale = max(np.abs(self.A).max(), 1.0)
        if np.abs(M @ Mp @ self.A - self.A).max() > 1e-8 * scale:
            return None, None
        C = self.A.T @ Mp @ self.A
        return (C + C.T) / 2, Mp

    def value(self, x):
        C, _ = self._dispersion(x)
        if C is None:
            return -np.inf
        mu = _positive_eigs(C, self.rank_tol)
        if mu.size < self.s:
            return -np.inf
        if self.p == NEG_INF:
            return -np.log(mu.max())
        return _weighted_inverse(mu, np.eye(mu.size), self.p, self.s)[0]

    def evaluate(self, x):
        C, Mp = self._dispersion(x)
        if C is None:
            return -np.inf, None
        gamma, V = np.linalg.eigh(C)
        top = gamma.max(initial=0.0)
        keep = gamma > self.rank_tol * top if top > 0 else gamma > np.inf
        if keep.sum() < self.s:
            return -np.inf, None
        logphi, W = _weighted_inverse(gamma[keep], V[:, keep], self.p, self.s)
        B = self.U @ Mp @ self.A
        return logphi, np.einsum("ij,jk,ik->i", B, W, B)


class _TreatmentObjective:
    """log Phi_p(N_A(w (x) alpha*)) as a function of w.

    The covariate block contributes the dispersions ``cov_disp / L(w)``,
    L(w) = sum_i lambda_i w_i, where ``cov_disp`` are the reciprocals of the
    positive eigenvalues of N_K(alpha*).
    """

    def __init__(self, lam, Q1, p, s, cov_disp, rank_tol=RANK_TOL):
        self.lam, self.Q1, self.p, self.s = lam, Q1, p, s
        self.cov_disp = np.asarray(cov_disp, dtype=float)
        self.rank_tol = rank_tol
        self.r1 = matrix_rank(Q1, rank_tol)
        self.n = lam.size

    def _parts(self, w):
        if np.any(w <= 0):
            return None
        C = (self.Q1.T / (self.lam * w)) @ self.Q1
        gamma, V = np.linalg.eigh((C + C.T) / 2)
        keep = gamma > self.rank_tol * gamma.max()
        if keep.sum() < self.r1:
            return None
        return gamma[keep], V[:, keep], float(self.lam @ w)

    def value(self, w):
        parts = self._parts(w)
        if parts is None:
            return -np.inf
        mu, _, L = parts
        disp = np.concatenate([mu, self.cov_disp / L])
        if self.p == NEG_INF:
            return -np.log(disp.max())
        if self.p == 0:
            return -np.log(disp).sum() / self.s
        q = -self.p
        top = disp.max()
        return -np.log(top) - (np.log(np.sum((disp / top) ** q)) - np.log(self.s)) / q

    def evaluate(self, w):
        parts = self._parts(w)
        if parts is None:
            return -np.inf, None
        mu, V, L = parts
        proj = self.Q1 @ V  # row i holds q_i' V
        curv = self.lam * w ** 2
        if self.p == 0:
            quad = np.sum(proj ** 2 / mu, axis=1)
            value = (-np.log(mu).sum() + self.cov_disp.size * np.log(L)
                     - np.log(self.cov_disp).sum()) / self.s
            grad = (quad / curv + self.cov_disp.size * self.lam / L) / self.s
            return value, grad
        q = -self.p
        cov = self.cov_disp / L
        top = max(mu.max(), cov.max(initial=0.0))
        r_t, r_c = mu / top, cov / top
        total = np.sum(r_t ** q) + np.sum(r_c ** q)
        value = -np.log(top) - (np.log(total) - np.log(self.s)) / q
        quad = np.sum(proj ** 2 * r_t ** (q - 1), axis=1)
        grad = quad / (curv * top * total) + self.lam / L * np.sum(r_c ** q) / total
        return value, grad


def _line_search(obj, x, jp, jm, tmax):
    """Maximize obj along e_jp - e_jm on [0, tmax] by a root of the directional derivative."""

    def slope(t):
        y = x.copy()
        y[jp] += t
        y[jm] -= t
        val, g = obj.evaluate(y)
        if not np.isfinite(val):
            return -1e300
        return g[jp] - g[jm]

    if slope(tmax) >= 0:
        return tmax
    return brentq(slope, 0.0, tmax, xtol=1e-17, rtol=4 * np.finfo(float).eps, maxiter=200)


def _vertex_exchange(obj, x0, floor, opts):
    x = np.array(x0, dtype=float)
    val, g = obj.evaluate(x)
    if not np.isfinite(val):
        raise InfeasibleInterest("starting design is infeasible")
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        jp = int(np.argmax(g))
        movable = x > floor * (1 + 1e-12) + 1e-300
        jm = int(np.argmin(np.where(movable, g, np.inf)))
        gap = g[jp] - g @ x
        if gap <= opts.gap_tol or g[jp] - g[jm] <= opts.gap_tol:
            converged = True
            break
        tmax = x[jm] - floor
        t = _line_search(obj, x, jp, jm, tmax)
        y = x.copy()
        y[jp] += t
        y[jm] -= t
        new_val, new_g = obj.evaluate(y)
        if not np.isfinite(new_val) or new_val < val:
            converged = gap <= np.sqrt(opts.gap_tol)
            break
        x, g, improvement, val = y, new_g, new_val - val, new_val
        # the value resolves only ~sqrt(eps) in x, so stalls are judged by step length
        if t < tmax and (t <= 1e-15 or improvement < opts.improve_tol):
            converged = True
            break
    else:
        raise NotConverged(f"vertex exchange did not converge in {opts.max_iter} iterations",
                           best=x)
    x = _newton_polish(obj, x, floor)
    val = obj.value(x)
    return x, val, it, converged


def _spread(g, support):
    return g[support].max() - g[support].min()


def _newton_polish(obj, x, floor, steps=4, h=1e-7):
    """Equalize the gradient over the support by Newton steps on the simplex.

    The exchange method stalls once value changes fall below rounding, which
    leaves x accurate to about sqrt(eps); Newton on the gradient itself goes further.
    """
    support = np.flatnonzero(x > max(floor, 0.0) * 10 + 1e-10)
    m = support.size
    if m < 2:
        return x
    _, g = obj.evaluate(x)
    for _ in range(steps):
        H = np.empty((m, m))
        for col, j in enumerate(support):
            step = min(h, (x[j] - floor) / 2)
            up, down = x.copy(), x.copy()
            up[j] += step
            down[j] -= step
            H[:, col] = (obj.evaluate(up)[1][support] - obj.evaluate(down)[1][support]) / (2 * step)
        H = (H + H.T) / 2
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = H
        kkt[:m, m] = kkt[m, :m] = 1.0
        rhs = np.concatenate([-(g[support] - g[support].mean()), [0.0]])
        try:
            dx = np.linalg.solve(kkt, rhs)[:m]
        except np.linalg.LinAlgError:
            break
        room = np.where(dx < 0, (x[support] - floor) / np.maximum(-dx, 1e-300), np.inf)
        y = x.copy()
        y[support] += min(1.0, 0.5 * room.min()) * dx
        val, gy = obj.evaluate(y)
        if not np.isfinite(val) or _spread(gy, support) >= _spread(g, support):
            break
        x, g = y, gy
    return x


def _project(x, floor):
    y = np.maximum(x, floor)
    return y / y.sum()


def _homotopy_stages(opts):
    stages = list(opts.homotopy)
    p = stages[-1]
    while p * 2 >= opts.homotopy_limit:
        p *= 2
        stages.append(p)
    return stages


def _maximize(make_objective, x0, crit, floor, opts):
    """Run the exchange method for finite p, or the homotopy for p = -inf."""
    if crit.p != NEG_INF:
        return _vertex_exchange(make_objective(crit.p), x0, floor, opts)
    exact = make_objective(NEG_INF)
    x, total = np.array(x0, dtype=float), 0
    path, estimates = [], []
    converged = False
    for p in _homotopy_stages(opts):
        x, _, its, _ = _vertex_exchange(make_objective(p), x, floor, opts)
        total += its
        path.append(x)
        if len(path) >= 3:
            # exponents double between stages: cancel the 1/p and 1/p^2 error terms
            estimates.append((8 * path[-1] - 6 * path[-2] + path[-3]) / 3)
        if len(estimates) >= 2 and p <= opts.homotopy[-1]:
            if np.abs(estimates[-1] - estimates[-2]).max() < opts.agree_tol:
                converged = True
                break
    best = x
    for candidate in (estimates[-1:] + [2 * path[-1] - path[-2]]) if len(path) > 1 else []:
        candidate = _project(candidate, floor)
        if exact.value(candidate) >= exact.value(x) - 1e-12 * abs(exact.value(x)):
            best = candidate
            break
    return best, exact.value(best), total, converged


def _covariate_target(K):
    K = np.asarray(K, dtype=float)
    return np.vstack([np.zeros((1, K.shape[1])), K])


def _spectrum_summary(gamma, crit):
    if crit.p == NEG_INF:
        return float(gamma.min())
    return float(np.sum(gamma ** crit.p))


def optimize_covariate(spec, K, crit, opts=None, rank_tol=RANK_TOL):
    """Phi_p-optimal marginal covariate design for K'beta.

    ``phi_star`` is tr(N_K(alpha*)^p) for finite p (the rank for p = 0) and
    the optimal smallest eigenvalue for p = -inf.
    """
    opts = opts or SolverOptions()
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.shape[1] == 0:
        raise ValueError("no covariate functions of interest")
    uniform = np.full(spec.d, 1.0 / spec.d)
    _, S = covariate_moment(spec, uniform)
    if not range_check(K, S, rank_tol=rank_tol):
        raise InfeasibleInterest(
            "C(K) is not contained in C(S(alpha)) for any alpha on this covariate set")
    s = matrix_rank(K, rank_tol)
    H = covariate_regressors(spec)
    Q2 = _covariate_target(K)

    def make(p):
        return _LinearMomentObjective(H, Q2, p, s, rank_tol)

    alpha, _, its, converged = _maximize(make, uniform, crit, 0.0, opts)
    alpha = alpha / alpha.sum()
    info = info_matrix_covariate(spec, alpha, K, rank_tol)
    gamma = _positive_eigs(info.N, rank_tol)
    return MarginalSolution(alpha, phi_p(info, crit, rank_tol), _spectrum_summary(gamma, crit),
                            its, converged, gamma)


def optimize_treatment(spec, Q1, crit, phi_star=0.0, s2=0, cov_spectrum=None, opts=None,
                       rank_tol=RANK_TOL):
    """Optimal marginal treatment design w* for the product design with a fixed alpha*.

    Pass either ``cov_spectrum`` (positive eigenvalues of N_K(alpha*)) or the
    scalar ``phi_star`` with the covariate rank ``s2``. With neither, only the
    treatment contrasts are of interest. For p = 0 and a scalar phi_star the
    reported value omits the constant factor det(N_K(alpha*))^(1/s).
    """
    opts = opts or SolverOptions()
    Q1 = np.asarray(Q1, dtype=float)
    if Q1.ndim == 1:
        Q1 = Q1[:, None]
    if phi_star < 0:
        raise ValueError("phi_star must be nonnegative")
    s1 = matrix_rank(Q1, rank_tol)
    if cov_spectrum is not None:
        cov_disp = 1.0 / np.asarray(cov_spectrum, dtype=float)
        s2 = cov_disp.size
    elif s2 == 0 or phi_star == 0:
        cov_disp, s2 = np.zeros(0), 0
    elif crit.p == NEG_INF:
        cov_disp = np.array([1.0 / phi_star])
    elif crit.p == 0:
        cov_disp = np.ones(int(s2))
    else:
        # one pseudo-eigenvalue carrying the whole trace tr(N_K^p) = phi_star
        cov_disp = np.array([phi_star ** (-1.0 / crit.p)])
    s = s1 + int(s2)

    def make(p):
        return _TreatmentObjective(spec.lam, Q1, p, s, cov_disp, rank_tol)

    uniform = np.full(spec.v1, 1.0 / spec.v1)
    w, logphi, its, converged = _maximize(make, uniform, crit, opts.floor, opts)
    if np.any(w <= opts.floor * (1 + 1e-6)):
        warnings.warn("treatment weight floor is binding at the solution", RuntimeWarning,
                      stacklevel=2)
    if crit.p == NEG_INF:
        star = float(cov_disp.size and 1.0 / cov_disp.max())
    elif crit.p == 0:
        star = float(s2)
    else:
        star = float(np.sum(cov_disp ** crit.p))
    return MarginalSolution(w, float(np.exp(logphi)), star, its, converged)


def optimal_product(spec, interest, crit, opts=None, alpha=None, rank_tol=RANK_TOL):
    """Phi_p-optimal product design w* (x) alpha*.

    Without covariate functions of interest any alpha is optimal; ``alpha``
    (default uniform) is then used as the covariate marginal.
    """
    opts = opts or SolverOptions()
    if interest.s2 > 0:
        cov = optimize_covariate(spec, interest.K, crit, opts, rank_tol)
        alpha = cov.weights
        treat = optimize_treatment(spec, interest.Q1, crit, cov_spectrum=cov.spectrum,
                                   opts=opts, rank_tol=rank_tol)
    else:
        cov = None
        alpha = np.full(spec.d, 1.0 / spec.d) if alpha is None else np.asarray(alpha, float)
        alpha = alpha / alpha.sum()
        treat = optimize_treatment(spec, interest.Q1, crit, opts=opts, rank_tol=rank_tol)
    w = treat.weights
    xi = product_design(w, alpha)
    value = criterion_value(spec, xi, interest, crit, rank_tol)
    report = {
        "criterion": crit.label,
        "p": crit.p,
        "w": w.tolist(),
        "alpha": alpha.tolist(),
        "treatment_value": treat.criterion_value,
        "covariate_value": cov.criterion_value if cov else None,
        "phi_star": cov.phi_star if cov else 0.0,
        "value": value,
        "support": int(np.count_nonzero(xi > 1e-12)),
        "converged": bool(treat.converged and (cov is None or cov.converged)),
        "iterations": treat.iterations + (cov.iterations if cov else 0),
    }
    return ProductSolution(w, alpha, xi, value, treat, cov, report)


def optimize_joint(spec, interest, crit, opts=None, rank_tol=RANK_TOL):
    """Maximize Phi_p(N_A(xi)) directly over all designs on the v1*d grid.

    Independent of the product-design route; used to cross-check it.
    """
    opts = opts or SolverOptions()
    U = regressor_matrix(spec) * np.sqrt(point_weights(spec))[:, None]
    uniform = np.full(spec.n_points, 1.0 / spec.n_points)

    def make(p):
        return _LinearMomentObjective(U, interest.A, p, interest.rank, rank_tol)

    xi, _, its, converged = _maximize(make, uniform, crit, 0.0, opts)
    xi = xi / xi.sum()
    return xi, criterion_value(spec, xi, interest, crit, rank_tol), converged


def _lex_triangles(r):
    """All (a, b) with a + b <= r in lexicographic order."""
    counts = np.arange(r + 1, 0, -1)
    a = np.repeat(np.arange(r + 1), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    b = np.arange(a.size) - np.repeat(starts, counts)
    return a, b


def _count(dim, total):
    return math.comb(total + dim - 1, dim - 1)


def _all_compositions(dim, total):
    """Every nonnegative integer vector of length dim summing to total, lexicographic."""
    if dim == 1:
        return np.array([[total]])
    if dim == 2:
        a = np.arange(total + 1)
        return np.column_stack([a, total - a])
    if dim == 3:
        a, b = _lex_triangles(total)
        return np.column_stack([a, b, total - a - b])
    parts = [np.column_stack([np.full(_count(dim - 1, total - first), first),
                              _all_compositions(dim - 1, total - first)])
             for first in range(total + 1)]
    return np.vstack(parts)


def _compositions(dim, total, block=2_000_000):
    """Lexicographic blocks of compositions, each at most about ``block`` rows."""
    if _count(dim, total) <= block:
        yield _all_compositions(dim, total)
        return
    for first in range(total + 1):
        for rest in _compositions(dim - 1, total - first, block):
            yield np.column_stack([np.full(rest.shape[0], first), rest])


def simplex_grid_oracle(objective, dim, resolution, batched=False):
    """Exhaustive maximization over the simplex grid with denominator ``resolution``.

    ``objective`` maps a probability vector to a value; with ``batched`` it
    maps an (m, dim) array to m values. Ties go to the lexicographically
    smallest grid point. Non-finite values count as -inf.
    """
    if dim > 6:
        raise OracleTooLarge(f"grid oracle limited to dim <= 6, got {dim}")
    if resolution < 10:
        raise ValueError("resolution must be at least 10")
    best_point, best_value = None, -np.inf
    for block in _compositions(dim, resolution):
        pts = block / resolution
        if batched:
            vals = np.asarray(objective(pts), dtype=float)
        else:
            vals = np.array([objective(row) for row in pts], dtype=float)
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        j = int(np.argmax(vals))
        if best_point is None or vals[j] > best_value:
            best_point, best_value = pts[j].copy(), float(vals[j])
    return best_point, best_value
