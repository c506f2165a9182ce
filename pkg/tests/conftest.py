import sys

import numpy as np
import pytest

from hetdesign.criteria import CriterionSpec, NEG_INF
from hetdesign.io import builtin_design_path, load_config, read_design
from hetdesign.marginal_opt import optimal_product


class Example:
    def __init__(self, name):
        self.job = load_config(name)
        self.spec = self.job.spec
        self.interest = self.job.interest
        self.crit = self.job.crit
        self._solution = None

    @property
    def solution(self):
        if self._solution is None:
            self._solution = optimal_product(self.spec, self.interest, self.crit)
        return self._solution

    def table(self, name):
        values, _ = read_design(builtin_design_path(name), self.spec)
        return values / values.sum()


@pytest.fixture(scope="session")
def ex1():
    return Example("example1")


@pytest.fixture(scope="session")
def ex2():
    return Example("example2")


@pytest.fixture(scope="session")
def ex3():
    return Example("example3")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k[0]), k)):
        terminalreporter.write_line(results[key])


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    X = rng.normal(size=(n, rank))
    return X @ X.T


__all__ = ["CriterionSpec", "NEG_INF", "random_psd", "np"]
