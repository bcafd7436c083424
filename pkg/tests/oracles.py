"""Independent slow implementations used as oracles by the test suite.

Everything here is deliberately written from scratch (enumeration, mpmath
transcriptions, quadrature) and must stay independent of the package's fast
paths.
"""
from __future__ import annotations

import math

import mpmath as mp
import numpy as np

from glottochron import discretize_gamma, transition_matrix
from glottochron.dataio import MISSING

mp.mp.dps = 50


def enumeration_site_loglik(tree, state, column) -> float:
    """Sum over all internal-node (and missing-tip) state assignments."""
    rates = discretize_gamma(state.alpha)
    nu = tree.durations() * state.branch_rates * state.clock_rate
    unknown = [v for v in range(tree.n_nodes) if not tree.is_tip(v)]
    unknown += [v for v in range(tree.n_nodes)
                if tree.is_tip(v) and column[tree.taxon[v]] == MISSING]
    # transition matrices depend only on (branch, category)
    mats = {}
    for cat in range(len(rates)):
        for v in range(tree.n_nodes):
            if v != tree.root:
                mats[(cat, v)] = transition_matrix(state.pi, nu[v] * rates[cat])
    total = 0.0
    for cat in range(len(rates)):
        for mask in range(2 ** len(unknown)):
            assign = {v: (mask >> i) & 1 for i, v in enumerate(unknown)}

            def state_of(v):
                return assign[v] if v in assign else int(column[tree.taxon[v]])

            p = state.pi[state_of(tree.root)]
            for v in range(tree.n_nodes):
                if v != tree.root:
                    p *= mats[(cat, v)][state_of(int(tree.parent[v])), state_of(v)]
            total += p / len(rates)
    return math.log(total)


def all_labeled_topologies(names: list[str]):
    """Every rooted binary labeled topology as nested tuples of names."""
    if len(names) == 1:
        return [names[0]]
    first, rest = names[0], names[1:]
    out = []
    for shape in all_labeled_topologies(rest):
        for grown in _insert_on_every_edge(shape, first):
            out.append(grown)
    return out


def _insert_on_every_edge(shape, leaf):
    # attach above the whole shape, then recursively inside either child
    results = [(leaf, shape)]
    if isinstance(shape, tuple):
        left, right = shape
        results += [(grown, right) for grown in _insert_on_every_edge(left, leaf)]
        results += [(left, grown) for grown in _insert_on_every_edge(right, leaf)]
    return results


def mp_fbd_helpers(lam, mu, psi, rho, t):
    """High-precision transcription of the p0/p1/c1/c2 closed forms."""
    lam, mu, psi, rho, t = map(mp.mpf, (lam, mu, psi, rho, t))
    c1 = abs(mp.sqrt((lam - mu - psi) ** 2 + 4 * lam * psi))
    c2 = -(lam - mu - 2 * lam * rho - psi) / c1
    e = mp.e ** (-c1 * t)
    p0 = (lam + mu + psi
          + c1 * ((e * (1 - c2)) - (1 + c2)) / ((e * (1 - c2)) + (1 + c2))) \
        / (2 * lam)
    p1 = 4 * rho / (2 * (1 - c2 ** 2)
                    + mp.e ** (-c1 * t) * (1 - c2) ** 2
                    + mp.e ** (c1 * t) * (1 + c2) ** 2)
    return c1, c2, p0, p1


def mp_fbd_log_density(tree, lam, mu, psi, rho) -> float:
    """Independent transcription of the printed fossilized birth-death density."""
    n = m = k = 0
    x_ages, y_ages = [], []
    sa_parents = {int(p) for p in tree.parent[tree.sampled_ancestor]}
    for v in range(tree.n_nodes):
        if tree.is_tip(v):
            if tree.sampled_ancestor[v]:
                k += 1
            elif tree.age[v] == 0:
                n += 1
            else:
                m += 1
                y_ages.append(float(tree.age[v]))
        elif v not in sa_parents:
            x_ages.append(float(tree.age[v]))
    x1 = float(tree.age[tree.root])
    p1_root = mp_fbd_helpers(lam, mu, psi, rho, x1)[3]
    p0_hat = mp_fbd_helpers(lam, mu, mp.mpf("1e-300"), rho, x1)[2]
    value = mp.mpf(lam) ** (n + m - 2) * mp.mpf(psi) ** (k + m) \
        / (1 - p0_hat) ** 2 * p1_root
    for x in x_ages:
        value *= mp_fbd_helpers(lam, mu, psi, rho, x)[3]
    for y in y_ages:
        h = mp_fbd_helpers(lam, mu, psi, rho, y)
        value *= h[2] / h[3]
    return float(mp.log(value))


def interval_coalescent_loglik(tip_ages, node_ages, theta) -> float:
    """Straight-line heterochronous coalescent: explicit interval walk."""
    events = sorted([(a, +1) for a in tip_ages] + [(a, -1) for a in node_ages],
                    key=lambda e: (e[0], -e[1]))
    active = 0
    prev = events[0][0]
    total = 0.0
    for age, delta in events:
        total -= active * (active - 1) * (age - prev) / theta
        prev = age
        if delta > 0:
            active += 1
        else:
            active -= 1
            total += math.log(2.0 / theta)
    return total


def batch_means_se(values: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated chain via batch means."""
    values = np.asarray(values, dtype=float)
    size = values.shape[0] // n_batches
    means = values[:n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
