"""Approximate-to-exact conversion: efficient apportionment and per-stratum argmax."""
from dataclasses import dataclass

import numpy as np

from .errors import BadStrata, TooFewTrials
from .model import ExactDesign

SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class RoundingReport:
    method: str
    n: int
    support_used: int
    efficiency: float


def _pick(candidates, tie_score, tie_rtol):
    """First candidate, or the one with the best tie_score among equals."""
    if tie_score is None or len(candidates) == 1:
        return int(candidates[0])
    scores = np.array([tie_score(int(j)) for j in candidates])
    best = scores.max()
    winners = candidates[scores >= best - tie_rtol * max(abs(best), 1e-300)]
    return int(winners[0])


def _ties(values, target, rtol):
    return np.flatnonzero(np.abs(values - target) <= rtol * max(abs(target), 1e-300))


def efficient_round(xi, n, tie_score=None, tie_rtol=1e-9):
    """Efficient apportionment of n trials over the support of xi.

    Starts from ceil((n - l/2) xi_j) on the l support points, then removes a
    trial where (n_j - 1)/xi_j is largest or adds one where n_j/xi_j is
    smallest until the total is n. Ties go to the lowest index; when
    ``tie_score`` is given, it is called with the full count vector each tied
    change would produce, and the highest-scoring change wins instead.
    """
    xi = np.asarray(xi, dtype=float)
    n = int(n)
    support = np.flatnonzero(xi > SUPPORT_TOL)
    ell = support.size
    if ell == 0:
        raise ValueError("design has empty support")
    if n < ell:
        raise TooFewTrials(f"{n} trials cannot cover a support of {ell} points")
    counts = np.zeros(xi.size, dtype=int)
    weights = xi[support]
    local = np.ceil((n - ell / 2) * weights).astype(int)

    def score(sign):
        if tie_score is None:
            return None

        def f(pos):
            trial = local.copy()
            trial[pos] += sign
            full = counts.copy()
            full[support] = trial
            return tie_score(full)
        return f

    while local.sum() > n:
        ratio = (local - 1) / weights
        cands = _ties(ratio, ratio.max(), tie_rtol)
        local[_pick(cands, score(-1), tie_rtol)] -= 1
    while local.sum() < n:
        ratio = local / weights
        cands = _ties(ratio, ratio.min(), tie_rtol)
        local[_pick(cands, score(+1), tie_rtol)] += 1
    counts[support] = local
    return ExactDesign(counts, n)


def covariate_strata(spec):
    """One stratum per covariate point k: the flat indices (i, k) for all treatments."""
    return [np.arange(spec.v1) * spec.d + k for k in range(spec.d)]


def stratum_argmax_round(xi, strata):
    """One trial per stratum at its largest weight, ties to the lowest index."""
    xi = np.asarray(xi, dtype=float)
    counts = np.zeros(xi.size, dtype=int)
    seen = np.zeros(xi.size, dtype=bool)
    for stratum in strata:
        stratum = np.asarray(stratum, dtype=int)
        if stratum.size == 0:
            raise BadStrata("empty stratum")
        if np.any(stratum < 0) or np.any(stratum >= xi.size):
            raise BadStrata("stratum index outside the design")
        if np.any(seen[stratum]):
            raise BadStrata("strata overlap")
        seen[stratum] = True
        counts[stratum[np.argmax(xi[stratum])]] += 1
    if not seen.all():
        raise BadStrata("strata do not cover the design")
    return ExactDesign(counts)
