"""Independent gamma-rates relaxed clock.

Each branch carries a rate multiplier drawn a priori from a gamma
distribution with mean 1 and variance sigma2 / b, where b is the branch
length in expected substitutions (duration in years times the base clock
rate).  Zero-duration branches (sampled ancestors) carry multiplier 1 by
convention and contribute nothing to the prior.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.special import gammaln

from .model import TimeTree

_NEG_INF = float("-inf")


def effective_branch_length(tree: TimeTree, node: int, clock_rate: float,
                            rates: np.ndarray) -> float:
    """Expected substitutions per site on the branch above ``node``."""
    if node == tree.root:
        raise ValueError("root has no branch")
    duration = float(tree.age[tree.parent[node]] - tree.age[node])
    return duration * clock_rate * float(rates[node])


def effective_branch_lengths(tree: TimeTree, clock_rate: float,
                             rates: np.ndarray) -> np.ndarray:
    """Vector of effective lengths keyed by child node (0 at the root)."""
    nu = tree.durations() * clock_rate * rates
    nu[tree.root] = 0.0
    return nu


def branch_rate_log_prior(rate: float, duration: float, sigma2: float,
                          clock_rate: float) -> float:
    """Gamma log-density of one branch multiplier (0 for zero-duration branches)."""
    if duration == 0.0:
        return 0.0
    if rate <= 0.0:
        return _NEG_INF
    b = duration * clock_rate
    shape = b / sigma2
    # scale = sigma2 / b = 1 / shape
    return (shape - 1.0) * math.log(rate) - shape * rate \
        + shape * math.log(shape) - float(gammaln(shape))


@njit(cache=True)
def _igr_core(age, parent, root, rates, sigma2, clock_rate):
    total = 0.0
    for v in range(age.shape[0]):
        if v == root:
            continue
        duration = age[parent[v]] - age[v]
        if duration <= 0.0:
            continue
        r = rates[v]
        if r <= 0.0:
            return -np.inf
        shape = duration * clock_rate / sigma2
        total += (shape - 1.0) * math.log(r) - shape * r \
            + shape * math.log(shape) - math.lgamma(shape)
    return total


def igr_log_prior(rates: np.ndarray, sigma2: float, tree: TimeTree,
                  clock_rate: float) -> float:
    """Joint log-prior of all branch multipliers."""
    if sigma2 <= 0 or clock_rate <= 0:
        raise ValueError(f"sigma2 and clock_rate must be > 0, "
                         f"got {sigma2}, {clock_rate}")
    return float(_igr_core(tree.age, tree.parent, tree.root,
                           np.asarray(rates, dtype=np.float64),
                           sigma2, clock_rate))
