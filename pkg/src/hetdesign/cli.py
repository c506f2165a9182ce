"""Command-line pipeline: solve, sparsify, round, figures, verify.

Exit status: 0 success, 2 infeasible problem, 3 verification failure,
4 bad configuration or input file.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .criteria import criterion_value
from .errors import (ConfigError, DesignError, InfeasibleDesign, InfeasibleInterest,
                     InfeasibleMarginal, LPInfeasible, TooFewTrials, VerificationFailed)
from .io import builtin_design_path, load_config, read_design, write_design, write_json, write_rows
from .marginal_opt import optimal_product
from .model import ModelSpec, assemble_A, build_factorial_covariates, marginals
from .rounding import covariate_strata, efficient_round, stratum_argmax_round
from .sparsify import (VERIFY_TOL, snap_to_constraints, sparsify, information_constraints,
                       verify_transfer)

EXIT_OK, EXIT_INFEASIBLE, EXIT_VERIFY, EXIT_CONFIG = 0, 2, 3, 4
# reference tables carry 4 decimals; a larger correction means a different design
SNAP_TOL = 2e-4

log = logging.getLogger("hetdesign")


def _fmt(x):
    return f"{x:.6g}"


def _vec(xs):
    return "(" + ", ".join(_fmt(x) for x in xs) + ")"


def _solve(job):
    return optimal_product(job.spec, job.interest, job.crit)


def _load_weights(path, spec):
    """Design weights from a file or a built-in table name, rescaled to sum 1."""
    if not Path(path).exists():
        path = builtin_design_path(path)
    values, meta = read_design(path, spec)
    if meta.get("kind", "weight") == "count":
        return values / values.sum()
    total = values.sum()
    if np.any(values < 0) or abs(total - 1.0) > 1e-3:
        raise DesignError(f"{path}: weights must be nonnegative and sum to 1 (got {total:.6g})")
    return values / total


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(job, args):
    sol = _solve(job)
    out = _out_dir(args)
    write_design(out / "design_product.csv", job.spec, sol.xi)
    write_json(out / "solve_report.json", sol.report)
    print(f"criterion {sol.report['criterion']}")
    print(f"w* = {_vec(sol.w)}")
    print(f"alpha* = {_vec(sol.alpha)}")
    if sol.covariate is not None:
        print(f"covariate-stage value = {_fmt(sol.covariate.criterion_value)}")
        print(f"phi* = {_fmt(sol.covariate.phi_star)}")
    print(f"criterion value = {_fmt(sol.value)}")
    return EXIT_OK


def _sparse_design(job, seed):
    sol = _solve(job)
    res = sparsify(job.spec, job.interest, sol.xi, job.constraints, seed=seed, crit=job.crit)
    return sol, res


def cmd_sparsify(job, args):
    seed = job.seed if args.seed is None else args.seed
    if args.design:
        xi_star = _load_weights(args.design, job.spec)
        res = sparsify(job.spec, job.interest, xi_star, job.constraints, seed=seed, crit=job.crit)
    else:
        _, res = _sparse_design(job, seed)
    out = _out_dir(args)
    write_design(out / "design_sparse.csv", job.spec, res.xi)
    write_json(out / "sparsify_report.json", res.report)
    print(f"support {res.report['support_product']} -> {res.report['support_sparse']}"
          f" (constraint rank {res.report['constraint_rank']})")
    print(f"criterion value = {_fmt(res.report['criterion_value'])}")
    print(f"transfer residual = {_fmt(res.report['transfer_residual'])}")
    return EXIT_OK


def _tie_score(job):
    if job.rounding.get("tie_break") != "criterion":
        return None
    return lambda counts: criterion_value(job.spec, counts / counts.sum(), job.interest, job.crit)


def round_design(job, xi, n, reference_value):
    """Round xi with the configured method; (counts or None, efficiency)."""
    if job.rounding["method"] == "stratum_argmax":
        exact = stratum_argmax_round(xi, covariate_strata(job.spec))
    else:
        try:
            exact = efficient_round(xi, n, tie_score=_tie_score(job))
        except TooFewTrials:
            return None, 0.0
    value = criterion_value(job.spec, exact.as_design(), job.interest, job.crit)
    return exact, value / reference_value


def _rounding_n(job, args):
    if args.n is not None:
        return args.n
    if job.rounding["n"]:
        return int(job.rounding["n"][0])
    if job.rounding["method"] == "stratum_argmax":
        return job.spec.d
    raise ConfigError("number of trials needed: pass --n or set rounding.n")


def cmd_round(job, args):
    if not args.design:
        raise ConfigError("round needs --design")
    xi = _load_weights(args.design, job.spec)
    n = _rounding_n(job, args)
    reference = _solve(job).value
    exact, eff = round_design(job, xi, n, reference)
    out = _out_dir(args)
    report = {"method": job.rounding["method"], "n": n, "efficiency": eff,
              "support_used": int(np.count_nonzero(exact.counts)) if exact else 0}
    if exact is None:
        print(f"n = {n} is below the support size; efficiency 0")
    else:
        report["n"] = exact.n
        write_design(out / "design_exact.csv", job.spec, exact.counts, kind="count")
        table = exact.counts.reshape(job.spec.v1, job.spec.d)
        for i, row in enumerate(table, start=1):
            print(f"{i}: " + " ".join(str(c) for c in row))
        print(f"efficiency = {_fmt(eff)}")
    write_json(out / "round_report.json", report)
    return EXIT_OK


def figure1(job, v2_values, levels=(-1.0, 1.0)):
    """Rows (v2, w1*) over factorial covariates with ``levels`` in each dimension."""
    rows = []
    for v2 in v2_values:
        spec = ModelSpec(job.spec.lam, build_factorial_covariates([levels] * int(v2)))
        interest = assemble_A(job.interest.Q1, np.eye(int(v2)), spec.v1, spec.v2)
        rows.append((int(v2), optimal_product(spec, interest, job.crit).w[0]))
    return rows


def figure2(job, n_values, nonproduct=None, seed=0):
    """Rows (n, eff of rounded product design, eff of rounded non-product design)."""
    sol = _solve(job)
    if nonproduct is None:
        nonproduct = sparsify(job.spec, job.interest, sol.xi, job.constraints, seed=seed,
                              crit=job.crit).xi
    efficient = replace(job, rounding={**job.rounding, "method": "efficient"})
    rows = []
    for n in n_values:
        _, eff_p = round_design(efficient, sol.xi, int(n), sol.value)
        _, eff_s = round_design(efficient, nonproduct, int(n), sol.value)
        rows.append((int(n), eff_p, eff_s))
    return rows


def cmd_figures(job, args):
    out = _out_dir(args)
    figs = job.figures
    seed = job.seed if args.seed is None else args.seed
    if not figs:
        raise ConfigError("config has no figures block")
    if "fig1" in figs:
        levels = tuple(float(x) for x in figs["fig1"].get("levels", (-1, 1)))
        rows = figure1(job, figs["fig1"]["v2"], levels)
        write_rows(out / "fig1.csv", ["v2", "w1"], rows)
        for v2, w1 in rows:
            print(f"fig1 v2={v2} w1*={_fmt(w1)}")
    if "fig2" in figs:
        nonproduct = _load_weights(args.design, job.spec) if args.design else None
        rows = figure2(job, figs["fig2"]["n"], nonproduct, seed)
        write_rows(out / "fig2.csv", ["n", "eff_product", "eff_nonproduct"], rows)
        print(f"fig2: {len(rows)} rows written")
    return EXIT_OK


def verify_design(job, xi):
    """Information-transfer and criterion-equality checks of xi against the product optimum.

    Designs printed at limited precision are first corrected on their own
    support; the correction size is reported and must stay below SNAP_TOL.
    """
    sol = _solve(job)
    cs = information_constraints(job.spec, job.interest, sol.w, sol.alpha)
    if job.constraints is not None:
        cs = cs.extend(job.constraints)
    raw_ok, raw_residual = verify_transfer(job.spec, xi, sol.w, sol.alpha, job.interest)
    snapped, change = snap_to_constraints(cs, xi)
    ok, residual = verify_transfer(job.spec, snapped, sol.w, sol.alpha, job.interest)
    value = criterion_value(job.spec, snapped, job.interest, job.crit)
    rel = abs(value - sol.value) / sol.value
    w_design, _ = marginals(xi, job.spec.v1)
    return {
        "raw_transfer_residual": raw_residual,
        "raw_transfer_ok": raw_ok,
        "snap_change": change,
        "snap_ok": change <= SNAP_TOL and bool(np.all(snapped >= 0)),
        "transfer_residual": residual,
        "transfer_ok": ok,
        "criterion_value": value,
        "criterion_reference": sol.value,
        "criterion_relative_difference": rel,
        "criterion_ok": rel <= VERIFY_TOL,
        "raw_criterion_value": criterion_value(job.spec, xi, job.interest, job.crit),
        "treatment_marginal": w_design.tolist(),
    }


def cmd_verify(job, args):
    if not args.design:
        raise ConfigError("verify needs --design")
    xi = _load_weights(args.design, job.spec)
    report = verify_design(job, xi)
    out = _out_dir(args)
    write_json(out / "verify_report.json", report)
    print(f"correction on support = {_fmt(report['snap_change'])}")
    print(f"transfer residual = {_fmt(report['transfer_residual'])}")
    print(f"criterion value = {_fmt(report['criterion_value'])}"
          f" (optimum {_fmt(report['criterion_reference'])})")
    passed = report["snap_ok"] and report["transfer_ok"] and report["criterion_ok"]
    print("verification " + ("passed" if passed else "FAILED"))
    if not passed:
        raise VerificationFailed("design does not carry the optimal information", diagnostics=report)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sparsify": cmd_sparsify, "round": cmd_round,
            "figures": cmd_figures, "verify": cmd_verify}


def build_parser():
    parser = argparse.ArgumentParser(prog="hetdesign",
                                     description="Optimal designs for treatment comparisons "
                                                 "with covariates and heteroscedastic errors.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="JSON config path or built-in name (example1, example2, example3)")
        p.add_argument("--design", help="design CSV path or built-in table (table2, table5, table7)")
        p.add_argument("--n", type=int, help="number of trials for rounding")
        p.add_argument("--seed", type=int, help="seed for the LP objective draws")
        p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        job = load_config(args.config)
        return COMMANDS[args.command](job, args)
    except (InfeasibleInterest, InfeasibleDesign, InfeasibleMarginal, LPInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigError, DesignError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
