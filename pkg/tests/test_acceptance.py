"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ortho_group

sys.path.insert(0, str(Path(__file__).resolve().parent))

from hetdesign.cli import figure1, figure2, round_design, verify_design  # noqa: E402
from hetdesign.criteria import NEG_INF, CriterionSpec, criterion_value, phi_p  # noqa: E402
from hetdesign.io import builtin_design_path, load_config, read_design  # noqa: E402
from hetdesign.linalg import block_ginverse  # noqa: E402
from hetdesign.marginal_opt import optimal_product  # noqa: E402
from hetdesign.model import (ModelSpec, assemble_A, control_contrasts, marginals,  # noqa: E402
                             product_design, weighted_covariate_marginal)
from hetdesign.sparsify import sparsify, verify_transfer  # noqa: E402
from oracles import product_oracle  # noqa: E402

RESULTS = {}

EX1_N48 = np.array([[2, 0, 1, 3, 1, 3, 2, 0],
                    [0, 9, 0, 0, 0, 0, 9, 0],
                    [9, 0, 0, 0, 0, 0, 0, 9]])
EX3_ARGMAX = np.array([[1, 1, 0, 0, 0, 1],
                       [0, 0, 0, 0, 1, 0],
                       [0, 0, 0, 1, 0, 0],
                       [0, 0, 1, 0, 0, 0]])
P_CYCLE = (0.0, -1.0, -2.0, NEG_INF)

_cache = {}


def _job(name):
    if name not in _cache:
        job = load_config(name)
        _cache[name] = (job, optimal_product(job.spec, job.interest, job.crit))
    return _cache[name]


def _table(name, spec):
    values, _ = read_design(builtin_design_path(name), spec)
    return values / values.sum()


def _rel(a, b):
    return abs(a - b) / abs(b)


def _sparse(job, sol, seed=None):
    return sparsify(job.spec, job.interest, sol.xi, job.constraints,
                    seed=job.seed if seed is None else seed, crit=job.crit)


def _value(job, xi):
    return criterion_value(job.spec, xi, job.interest, job.crit)


def _report(key, checks):
    """checks: list of (label, ok). Prints and stores one line."""
    ok = all(passed for _, passed in checks)
    detail = "; ".join(label if passed else f"NOT MET {label}" for label, passed in checks)
    line = f"ACCEPTANCE {key:<3} {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[key] = line
    print(line)
    return ok, line


# ---------- criteria ----------

def criterion_1():
    job, sol = _job("example1")
    dw = np.abs(sol.w - [0.236, 0.382, 0.382]).max()
    da = np.abs(sol.alpha - 1 / 8).max()
    return _report("1", [(f"max|w*-ref|={dw:.2e}<=1e-3", dw <= 1e-3),
                         (f"max|alpha*-1/8|={da:.2e}<=1e-4", da <= 1e-4)])


def criterion_2():
    job, sol = _job("example1")
    table = sol.xi.reshape(3, 8)
    d1 = np.abs(table[0] - 0.0295).max()
    d23 = np.abs(table[1:] - 0.0477).max()
    return _report("2", [(f"max|xi(1,k)-0.0295|={d1:.2e}<=5e-4", d1 <= 5e-4),
                         (f"max|xi(2:3,k)-0.0477|={d23:.2e}<=5e-4", d23 <= 5e-4)])


def criterion_3():
    job, sol = _job("example1")
    res = _sparse(job, sol)
    support = int(np.count_nonzero(res.xi))
    rel = _rel(_value(job, res.xi), sol.value)
    ok_t, resid = verify_transfer(job.spec, res.xi, sol.w, sol.alpha, job.interest)
    return _report("3", [(f"support={support}<=10", support <= 10),
                         (f"criterion rel diff={rel:.1e}<=1e-8", rel <= 1e-8),
                         (f"verify_transfer residual={resid:.1e}", ok_t)])


def criterion_4():
    job, sol = _job("example1")
    exact, eff_s = round_design(job, _table("table2", job.spec), 48, sol.value)
    same = exact is not None and np.array_equal(exact.counts.reshape(3, 8), EX1_N48)
    exact_p, eff_p = round_design(job, sol.xi, 48, sol.value)
    twos = exact_p is not None and bool(np.all(exact_p.counts == 2))
    return _report("4", [("table2 @ n=48 gives reference counts", same),
                         (f"eff={eff_s:.6f} vs 0.9991 (1e-3)", abs(eff_s - 0.9991) <= 1e-3),
                         ("product @ n=48 all counts 2", twos),
                         (f"eff={eff_p:.6f} vs 0.9641 (1e-3)", abs(eff_p - 0.9641) <= 1e-3)])


def criterion_5():
    job, sol = _job("example2")
    cov = sol.covariate.criterion_value
    dw = np.abs(sol.w - [0.273, 0.364, 0.364]).max()
    table = sol.xi.reshape(3, 15)
    d1 = np.abs(table[0] - 0.0182).max()
    d23 = np.abs(table[1:] - 0.0242).max()
    res = _sparse(job, sol)
    support = int(np.count_nonzero(res.xi))
    rel = _rel(_value(job, res.xi), sol.value)
    _, eff = round_design(job, _table("table5", job.spec), 40, sol.value)
    return _report("5", [(f"covariate E={cov:.6f} vs 0.2 (1e-3)", abs(cov - 0.2) <= 1e-3),
                         (f"max|w*-ref|={dw:.2e}<=1e-3", dw <= 1e-3),
                         (f"max|xi(1)-0.0182|={d1:.2e}<=5e-4", d1 <= 5e-4),
                         (f"max|xi(2:3)-0.0242|={d23:.2e}<=5e-4", d23 <= 5e-4),
                         (f"support={support}<=28", support <= 28),
                         (f"E rel diff={rel:.1e}<=1e-6", rel <= 1e-6),
                         (f"table5 eff={eff:.6f} vs 0.8493 (1e-3)", abs(eff - 0.8493) <= 1e-3)])


def criterion_6():
    job, sol = _job("example3")
    dw = np.abs(sol.w - [0.431, 0.249, 0.176, 0.144]).max()
    res = _sparse(job, sol)
    support = int(np.count_nonzero(res.xi))
    totals = np.abs(res.xi.reshape(4, 6).sum(axis=0) - 1 / 6).max()
    rel = _rel(_value(job, res.xi), sol.value)
    exact, eff = round_design(job, _table("table7", job.spec), 6, sol.value)
    same = np.array_equal(exact.counts.reshape(4, 6), EX3_ARGMAX)
    return _report("6", [(f"max|w*-ref|={dw:.2e}<=1e-3", dw <= 1e-3),
                         (f"support={support}<=12", support <= 12),
                         (f"covariate totals off by {totals:.1e}", totals <= 1e-10),
                         (f"A rel diff={rel:.1e}<=1e-8", rel <= 1e-8),
                         ("table7 argmax gives reference counts", same),
                         (f"eff={eff:.6f} vs 0.8871 (1e-3)", abs(eff - 0.8871) <= 1e-3)])


def criterion_7():
    job, sol = _job("example1")
    levels = tuple(job.figures["fig1"]["levels"])
    (_, w1), = figure1(job, [3], levels)
    rows = figure2(job, job.figures["fig2"]["n"], seed=job.seed)
    zero_product = all(eff_p == 0 for n, eff_p, _ in rows if n <= 23)
    positive_sparse = all(eff_s > 0 for n, _, eff_s in rows if n >= 10)
    return _report("7", [(f"fig1 w1*(v2=3)={w1:.6f} vs 0.236 (1e-3)", abs(w1 - 0.236) <= 1e-3),
                         ("fig2 product eff 0 for n<=23", zero_product),
                         ("fig2 non-product eff>0 for n>=10", positive_sparse)])


def _random_model(rng):
    v1, v2 = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    d = int(rng.integers(v2 + 1, 6))
    spec = ModelSpec(rng.uniform(0.5, 10, v1), rng.normal(size=(d, v2)))
    return spec, assemble_A(control_contrasts(v1), np.eye(v2), v1, v2)


def criterion_8a():
    """Dominance of the product of the plain marginals, as stated."""
    rng = np.random.default_rng(8)
    worst, violations, weighted_violations, count = 0.0, 0, 0, 0
    for model in range(10):
        spec, interest = _random_model(rng)
        crit = CriterionSpec(P_CYCLE[model % 4])
        made = 0
        while made < 20:
            xi = rng.dirichlet(np.full(spec.n_points, 0.5))
            value = criterion_value(spec, xi, interest, crit)
            if value <= 0:
                continue
            made += 1
            w, alpha = marginals(xi, spec.v1)
            bound = criterion_value(spec, product_design(w, alpha), interest, crit)
            count += 1
            if value > bound + 1e-9 * max(1.0, abs(bound)):
                violations += 1
                worst = max(worst, value / bound - 1)
            # context only: the lambda-weighted covariate marginal
            weighted = criterion_value(
                spec, product_design(w, weighted_covariate_marginal(spec, xi)), interest, crit)
            weighted_violations += value > weighted + 1e-9 * max(1.0, abs(weighted))
    return _report("8a", [(f"{violations}/{count} designs beat their marginal product"
                           f" (worst by {worst:.1%}; with the lambda-weighted covariate marginal:"
                           f" {weighted_violations}/{count})", violations == 0)])


def criterion_8b():
    rng = np.random.default_rng(9)
    worst_h = worst_o = 0.0
    for trial in range(500):
        n = int(rng.integers(1, 7))
        X = rng.normal(size=(n, n))
        N = X @ X.T + 1e-3 * np.eye(n)
        crit = CriterionSpec((0.0, -0.5, -1.0, -3.0, NEG_INF)[trial % 5])
        base = phi_p(N, crit)
        c = float(rng.uniform(0.1, 10))
        worst_h = max(worst_h, _rel(phi_p(c * N, crit), c * base))
        U = ortho_group.rvs(n, random_state=rng) if n > 1 else np.array([[-1.0]])
        worst_o = max(worst_o, _rel(phi_p(U @ N @ U.T, crit), base))
    return _report("8b", [(f"homogeneity rel err={worst_h:.1e}<=1e-10", worst_h <= 1e-10),
                          (f"orthogonal invariance rel err={worst_o:.1e}<=1e-10",
                           worst_o <= 1e-10)])


def criterion_8c():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        p = int(rng.integers(1, n))
        X = rng.normal(size=(n, int(rng.integers(p, n + 1))))
        B = X @ X.T
        G = block_ginverse(B, p)
        worst = max(worst, np.abs(B @ G @ B - B).max() / max(1.0, np.abs(B).max()))
    return _report("8c", [(f"max|BGB-B|/max(1,|B|)={worst:.1e}<=1e-8", worst <= 1e-8)])


def criterion_8d():
    runs = []
    for name in ("example1", "example2", "example3"):
        job, sol = _job(name)
        for seed in range(3):
            runs.append(_sparse(job, sol, seed).report)
    rng = np.random.default_rng(11)
    for _ in range(10):
        spec, interest = _random_model(rng)
        sol = optimal_product(spec, interest, CriterionSpec(-1))
        runs.append(sparsify(spec, interest, sol.xi, seed=0, restarts=5).report)
    bad = [r for r in runs if r["support_sparse"] > r["constraint_rank"]]
    return _report("8d", [(f"{len(runs) - len(bad)}/{len(runs)} runs with support<=rank(C)",
                           not bad)])


def oracle_instances():
    """20 random instances with v1<=4, d<=5; three of them use d=5."""
    rng = np.random.default_rng(2024)
    out = []
    for idx in range(20):
        v1, v2 = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        d = 5 if idx % 7 == 4 else int(rng.integers(v2 + 1, 5))
        lam, g = rng.uniform(0.5, 10, v1), rng.normal(size=(d, v2))
        K = np.eye(v2) if idx % 3 else rng.normal(size=(v2, v2))
        out.append((lam, g, K, P_CYCLE[idx % 4]))
    return out


def criterion_8e():
    worst, worst_below, lines = 0.0, 0.0, []
    for lam, g, K, p in oracle_instances():
        v1, v2 = len(lam), g.shape[1]
        Q1 = control_contrasts(v1)
        sol = optimal_product(ModelSpec(lam, g), assemble_A(Q1, K, v1, v2), CriterionSpec(p))
        _, _, grid = product_oracle(lam, Q1, g, K, p, 200)
        worst = max(worst, abs(sol.value - grid))
        worst_below = max(worst_below, grid - sol.value)
        if abs(sol.value - grid) > 1e-3:
            lines.append(f"v1={v1} d={len(g)} p={p}: solver {sol.value:.6f}, grid {grid:.6f}")
    outside = f" (outside: {'; '.join(lines)})" if lines else ""
    return _report("8e", [(f"max|solver-grid|={worst:.1e}<=1e-3{outside}", worst <= 1e-3),
                          (f"solver below grid by at most {max(worst_below, 0):.1e}",
                           worst_below <= 1e-3)])


def criterion_9():
    checks = []
    for name, table in (("example1", "table2"), ("example2", "table5"), ("example3", "table7")):
        job, _ = _job(name)
        rep = verify_design(job, _table(table, job.spec))
        checks.append((f"{table}: transfer {rep['transfer_residual']:.1e}, criterion rel "
                       f"{rep['criterion_relative_difference']:.1e}, snap {rep['snap_change']:.1e}",
                       rep["transfer_ok"] and rep["criterion_ok"] and rep["snap_ok"]))
    return _report("9", checks)


CRITERIA = {"1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4,
            "5": criterion_5, "6": criterion_6, "7": criterion_7, "8a": criterion_8a,
            "8b": criterion_8b, "8c": criterion_8c, "8d": criterion_8d, "8e": criterion_8e,
            "9": criterion_9}


@pytest.mark.parametrize("key", list(CRITERIA))
def test_acceptance(key):
    ok, line = CRITERIA[key]()
    assert ok, line


if __name__ == "__main__":
    outcomes = [CRITERIA[key]()[0] for key in CRITERIA]
    sys.exit(0 if all(outcomes) else 1)
