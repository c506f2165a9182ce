"""Independent batched criterion evaluations for the simplex-grid oracle.

Written from the definitions without the package's information-matrix code,
so that agreement with the solver is a two-route check.
"""
import numpy as np

NEG_INF = float("-inf")


def _stack(flat, n):
    """(m, n*n) row-major entries to (m, n, n)."""
    return flat.reshape(-1, n, n)


def _sym_eigs(mats):
    """Eigenvalues of a stack of symmetric matrices; closed form up to order 2."""
    n = mats.shape[1]
    if n == 1:
        return mats[:, :, 0]
    if n == 2:
        a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 1]
        half_tr = (a + c) / 2
        rad = np.sqrt(((a - c) / 2) ** 2 + b ** 2)
        return np.column_stack([half_tr - rad, half_tr + rad])
    return np.linalg.eigvalsh(mats)


def _inverse(mats):
    n = mats.shape[1]
    if n == 1:
        return 1.0 / mats
    if n == 2:
        a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 1]
        det = a * c - b * b
        out = np.empty_like(mats)
        out[:, 0, 0], out[:, 1, 1] = c / det, a / det
        out[:, 0, 1] = out[:, 1, 0] = -b / det
        return out
    return np.linalg.inv(mats)


def _phi_from_dispersion(disp, extra, p):
    """Phi_p of diag(disp^{-1}, diag(1/extra)) from dispersion blocks.

    ``disp`` is (m, s1, s1) and ``extra`` (m, s2) holds dispersions of the
    second block. A and D need no eigenvalues: A from traces, D from
    determinants.
    """
    s = disp.shape[1] + extra.shape[1]
    if p == -1:
        total = np.trace(disp, axis1=1, axis2=2) + extra.sum(axis=1)
        return s / total
    if p == 0:
        sign, logdet = np.linalg.slogdet(disp)
        logdet = logdet + np.log(extra).sum(axis=1)
        return np.where(sign > 0, np.exp(-logdet / s), -np.inf)
    eigs = np.hstack([1.0 / _sym_eigs(disp), 1.0 / extra])
    if p == NEG_INF:
        return eigs.min(axis=1)
    return (np.sum(eigs ** p, axis=1) / s) ** (1 / p)


def treatment_objective(lam, Q1, p, cov_eigs=()):
    """Phi_p of diag(N_Q1(w), L(w) * diag(cov_eigs)) for a batch of w (rows)."""
    lam = np.asarray(lam, float)
    Q1 = np.asarray(Q1, float)
    s1 = Q1.shape[1]
    cov_eigs = np.asarray(cov_eigs, float)
    # column (a, b) holds Q1[:, a] * Q1[:, b] / lam
    pairs = np.einsum("ia,ib->iab", Q1, Q1).reshape(len(lam), -1) / lam[:, None]

    def f(W):
        ok = np.all(W > 0, axis=1)
        inv = 1.0 / np.where(ok[:, None], W, 1.0)
        disp = _stack(inv @ pairs, s1)
        L = W @ lam
        extra = 1.0 / (L[:, None] * cov_eigs[None, :])
        return np.where(ok, _phi_from_dispersion(disp, extra, p), -np.inf)
    return f


def _phi_2x2(a, b, c, p):
    """Phi_p of the inverse of the symmetric dispersion [[a, b], [b, c]], elementwise."""
    if p == -1:
        return 2.0 / (a + c)
    det = a * c - b * b
    if p == 0:
        return 1.0 / np.sqrt(det)
    half_tr = (a + c) / 2
    rad = np.sqrt(((a - c) / 2) ** 2 + b ** 2)
    eig_small, eig_big = 1.0 / (half_tr + rad), 1.0 / (half_tr - rad)
    if p == NEG_INF:
        return eig_small
    return ((eig_small ** p + eig_big ** p) / 2) ** (1 / p)


def covariate_objective(g, K, p):
    """Phi_p of (K' S(alpha)^{-1} K)^{-1} for nonsingular S; batch over alpha rows."""
    g = np.asarray(g, float)
    K = np.asarray(K, float)
    v2 = g.shape[1]
    if v2 <= 2 and K.shape[1] <= 2 and K.shape[1] == v2:
        return _covariate_objective_small(g, K, p)
    pairs = np.einsum("ka,kb->kab", g, g).reshape(len(g), -1)

    def f(Al):
        mean = Al @ g
        S = _stack(Al @ pairs, v2) - mean[:, :, None] * mean[:, None, :]
        smallest = _sym_eigs(S).min(axis=1)
        ok = smallest > 1e-10 * max(np.abs(S).max(), 1e-300)
        S = np.where(ok[:, None, None], S, np.eye(v2))
        disp = K.T @ _inverse(S) @ K
        extra = np.zeros((len(Al), 0))
        return np.where(ok, _phi_from_dispersion(disp, extra, p), -np.inf)
    return f


def _covariate_objective_small(g, K, p):
    """Closed-form path for one or two covariates and a square K."""
    if g.shape[1] == 1:
        k2 = K[0, 0] ** 2

        def f(Al):
            mean = Al @ g[:, 0]
            var = Al @ g[:, 0] ** 2 - mean ** 2
            ok = var > 1e-10 * max(np.abs(g).max() ** 2, 1e-300)
            return np.where(ok, var / k2, -np.inf)
        return f
    x, y = g[:, 0], g[:, 1]

    def f(Al):
        mx, my = Al @ x, Al @ y
        sxx = Al @ (x * x) - mx * mx
        sxy = Al @ (x * y) - mx * my
        syy = Al @ (y * y) - my * my
        det = sxx * syy - sxy * sxy
        ok = det > 1e-10 * max(np.abs(g).max() ** 4, 1e-300)
        det = np.where(ok, det, 1.0)
        ia, ib, ic = syy / det, -sxy / det, sxx / det
        # dispersion K' S^{-1} K entrywise
        d00 = K[0, 0] ** 2 * ia + 2 * K[0, 0] * K[1, 0] * ib + K[1, 0] ** 2 * ic
        d11 = K[0, 1] ** 2 * ia + 2 * K[0, 1] * K[1, 1] * ib + K[1, 1] ** 2 * ic
        d01 = (K[0, 0] * K[0, 1] * ia + (K[0, 0] * K[1, 1] + K[1, 0] * K[0, 1]) * ib
               + K[1, 0] * K[1, 1] * ic)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = _phi_2x2(d00, d01, d11, p)
        return np.where(ok, val, -np.inf)
    return f


def covariate_spectrum(g, K, alpha):
    """Eigenvalues of (K' S(alpha)^{-1} K)^{-1} for one covariate design."""
    g = np.asarray(g, float)
    mean = alpha @ g
    S = (g * alpha[:, None]).T @ g - np.outer(mean, mean)
    disp = K.T @ np.linalg.solve(S, K)
    return 1.0 / np.linalg.eigvalsh(disp)


def product_oracle(lam, Q1, g, K, p, resolution):
    """Grid optimum of the product-design criterion, covariate stage first.

    Returns (w, alpha, value). With K None only the treatment block counts.
    """
    g = np.asarray(g, float)
    d = g.shape[0]
    if K is None:
        alpha, eigs = np.full(d, 1.0 / d), ()
    else:
        alpha, _ = _grid(covariate_objective(g, K, p), d, resolution)
        eigs = covariate_spectrum(g, K, alpha)
    w, value = _grid(treatment_objective(lam, Q1, p, eigs), len(lam), resolution)
    return w, alpha, value


def _grid(objective, dim, resolution):
    from hetdesign.marginal_opt import simplex_grid_oracle
    return simplex_grid_oracle(objective, dim, resolution, batched=True)
