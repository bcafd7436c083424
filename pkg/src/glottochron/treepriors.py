"""Log-densities of a time tree under the three supported priors, plus the
scalar hyperpriors.

Conventions
-----------
* Out-of-domain parameter or age configurations return ``-inf`` so the MCMC
  treats them as rejection regions; structural misuse (a sampled ancestor
  under a prior that places fossils strictly as tips) raises instead.
* The fossilized birth-death density follows Stadler (2010)-style
  conditioning on the root age; the root-age window itself is a separate
  uniform hyperprior term.
* The uniform prior already contains its root-age window, so the hyperprior
  adds the window term only for the fossilized birth-death prior.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .model import (CoalescentParams, FbdParams, ModelState, TimeTree,
                    UniformParams)

_NEG_INF = float("-inf")


def coalescent_log_density(tree: TimeTree, theta: float) -> float:
    """Constant-size coalescent log-density with dated tips.

    For contemporaneous tips this is the classic product of per-coalescence
    factors (2/theta) * exp(-j(j-1) t_j / theta); dated tips generalize it by
    accumulating -j(j-1) dt / theta over every inter-event interval with j
    active lineages.
    """
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    if tree.sampled_ancestor.any():
        raise ValueError("coalescent prior places fossils as tips; "
                         "sampled ancestors are not supported")
    is_tip = tree.left < 0
    ages = tree.age
    # events walking back in time: a tip activates a lineage, an internal
    # node merges two into one
    order = np.argsort(ages, kind="stable")
    log_density = 0.0
    active = 0
    prev_age = float(ages[order[0]])
    log_rate = math.log(2.0 / theta)
    for idx in order:
        a = float(ages[idx])
        if a > prev_age:
            log_density -= active * (active - 1) * (a - prev_age) / theta
            prev_age = a
        if is_tip[idx]:
            active += 1
        else:
            active -= 1
            log_density += log_rate
    return log_density


def fbd_rate_constants(lam: float, mu: float, psi: float, rho: float
                       ) -> tuple[float, float]:
    """The (c1, c2) constants used by the fossilized birth-death densities."""
    c1 = abs(math.sqrt((lam - mu - psi) ** 2 + 4.0 * lam * psi))
    if c1 == 0.0:
        raise ValueError(
            f"degenerate fossilized birth-death parameters "
            f"(lambda={lam}, mu={mu}, psi={psi})")
    c2 = -(lam - mu - 2.0 * lam * rho - psi) / c1
    return c1, c2


def _p0(lam, mu, psi, c1, c2, t):
    e = math.exp(-c1 * t)
    ratio = (e * (1.0 - c2) - (1.0 + c2)) / (e * (1.0 - c2) + (1.0 + c2))
    return (lam + mu + psi + c1 * ratio) / (2.0 * lam)


def _log_p1(rho, c1, c2, t):
    # p1 = 4 rho / (2 (1 - c2^2) + e^{-c1 t}(1-c2)^2 + e^{c1 t}(1+c2)^2);
    # the growing exponential overflows for old nodes, so factor it out
    a = 2.0 * (1.0 - c2 * c2)
    b = (1.0 - c2) ** 2
    c = (1.0 + c2) ** 2
    x = c1 * t
    if x < 350.0:
        den = a + math.exp(-x) * b + math.exp(x) * c
        if den <= 0.0:
            return _NEG_INF
        return math.log(4.0 * rho) - math.log(den)
    if c > 0.0:
        rest = c + (a + math.exp(-x) * b) * math.exp(-x)
        return math.log(4.0 * rho) - x - math.log(rest)
    den = a + math.exp(-x) * b
    if den <= 0.0:
        return _NEG_INF
    return math.log(4.0 * rho) - math.log(den)


def fbd_helpers(lam: float, mu: float, psi: float, rho: float, t: float
                ) -> tuple[float, float, float, float, float]:
    """Return (c1, c2, p0(t), p1(t), p0_hat(t)).

    p0 is the probability that a lineage alive at age ``t`` leaves no sampled
    descendant, p1 that it leaves exactly one sampled extant descendant, and
    p0_hat is p0 evaluated with the fossil-recovery rate set to zero.
    """
    if lam <= 0 or mu < 0 or psi < 0:
        raise ValueError(f"invalid rates lambda={lam}, mu={mu}, psi={psi}")
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if t < 0:
        raise ValueError(f"age must be >= 0, got {t}")
    c1, c2 = fbd_rate_constants(lam, mu, psi, rho)
    p0 = _p0(lam, mu, psi, c1, c2, t)
    p1 = math.exp(_log_p1(rho, c1, c2, t))
    c1h, c2h = fbd_rate_constants(lam, mu, 0.0, rho)
    p0_hat = _p0(lam, mu, 0.0, c1h, c2h, t)
    return c1, c2, p0, p1, p0_hat


def fbd_counts(tree: TimeTree) -> tuple[int, int, int]:
    """(n extant sampled tips, m extinct sampled tips, k sampled ancestors)."""
    is_tip = tree.left < 0
    sa = tree.sampled_ancestor
    extant = is_tip & ~sa & (tree.age == 0.0)
    fossil = is_tip & ~sa & (tree.age > 0.0)
    return int(extant.sum()), int(fossil.sum()), int(sa[is_tip].sum())


@njit(cache=True)
def _log_p1_fast(rho, c1, c2, t):
    a = 2.0 * (1.0 - c2 * c2)
    b = (1.0 - c2) ** 2
    c = (1.0 + c2) ** 2
    x = c1 * t
    if x < 350.0:
        den = a + math.exp(-x) * b + math.exp(x) * c
        if den <= 0.0:
            return -np.inf
        return math.log(4.0 * rho) - math.log(den)
    if c > 0.0:
        rest = c + (a + math.exp(-x) * b) * math.exp(-x)
        return math.log(4.0 * rho) - x - math.log(rest)
    den = a + math.exp(-x) * b
    if den <= 0.0:
        return -np.inf
    return math.log(4.0 * rho) - math.log(den)


@njit(cache=True)
def _fbd_core(age, parent, left, right, sa, root, lam, mu, psi, rho):
    """Log-density loop; NaN encodes a structural error the wrapper raises."""
    n_nodes = age.shape[0]
    n = 0
    m = 0
    k = 0
    for v in range(n_nodes):
        if left[v] < 0:
            if sa[v]:
                k += 1
            elif age[v] == 0.0:
                n += 1
            else:
                m += 1
    if n < 2:
        return np.nan
    if k + m > 0 and psi == 0.0:
        return -np.inf

    c1 = abs(math.sqrt((lam - mu - psi) ** 2 + 4.0 * lam * psi))
    if c1 == 0.0:
        return np.nan
    c2 = -(lam - mu - 2.0 * lam * rho - psi) / c1
    c1h = abs(lam - mu)
    if c1h == 0.0:
        return np.nan
    c2h = -(lam - mu - 2.0 * lam * rho) / c1h

    x1 = age[root]
    e = math.exp(-c1h * x1)
    ratio = (e * (1.0 - c2h) - (1.0 + c2h)) / (e * (1.0 - c2h) + (1.0 + c2h))
    p0_hat = (lam + mu + c1h * ratio) / (2.0 * lam)
    if p0_hat >= 1.0:
        return -np.inf

    total = (n + m - 2) * math.log(lam)
    if k + m > 0:
        total += (k + m) * math.log(psi)
    total -= 2.0 * math.log1p(-p0_hat)
    total += _log_p1_fast(rho, c1, c2, x1)

    # birth events: every internal node except sampled-ancestor attachments
    births = 0
    for v in range(n_nodes):
        if left[v] < 0:
            if sa[v] and parent[v] == root:
                return -np.inf
            if sa[v]:
                continue
            if age[v] > 0.0:  # extinct sampled tip
                ey = math.exp(-c1 * age[v])
                r = (ey * (1.0 - c2) - (1.0 + c2)) / (ey * (1.0 - c2) + (1.0 + c2))
                p0 = (lam + mu + psi + c1 * r) / (2.0 * lam)
                if p0 <= 0.0:
                    return -np.inf
                total += math.log(p0) - _log_p1_fast(rho, c1, c2, age[v])
            continue
        if sa[left[v]] or sa[right[v]]:
            continue  # sampled-ancestor attachment, not a birth event
        births += 1
        total += _log_p1_fast(rho, c1, c2, age[v])
    if births != n + m - 1:
        return np.nan
    if math.isinf(total) or math.isnan(total):
        return -np.inf if total < 0 else np.nan
    return total


def fbd_log_density(tree: TimeTree, params: FbdParams) -> float:
    """Fossilized birth-death log-density conditioned on the root age.

    The root-age factor appears squared (once standalone, once inside the
    product over the n+m-1 birth events): conditioning on the root split
    leaves two independent root lineages, and the n=2 special case reduces
    to (p1(x1)/(1 - p0_hat(x1)))^2 as it must.
    """
    lam, mu, psi = params.birth_death_rates()
    rho = params.sampling_fraction
    value = _fbd_core(tree.age, tree.parent, tree.left, tree.right,
                      tree.sampled_ancestor, tree.root, lam, mu, psi, rho)
    if math.isnan(value):
        n, m, k = fbd_counts(tree)
        if n < 2:
            raise ValueError(
                f"fossilized birth-death needs > 1 extant tip, got {n}")
        raise ValueError(
            f"degenerate parameters or sampled-ancestor bookkeeping broken "
            f"(n={n}, m={m}, k={k}, lam={lam}, mu={mu}, psi={psi})")
    return value


def _oldest_tip_below(tree: TimeTree) -> np.ndarray:
    """Oldest tip age inside each node's subtree."""
    out = np.zeros(tree.n_nodes)
    for v in tree.postorder():
        v = int(v)
        if tree.is_tip(v):
            out[v] = tree.age[v]
        else:
            out[v] = max(out[tree.left[v]], out[tree.right[v]])
    return out


def uniform_tree_log_density(tree: TimeTree, params: UniformParams) -> float:
    """Uniform (diversification-free) tree prior conditioned on the root age.

    Density: h(root) * prod over non-root interior nodes of
    1 / (root - oldest tip age in the node's subtree), with h uniform on the
    configured root window.  Given the root, interior ages are flat over the
    order-constrained region, so the root marginal stays exactly h.
    """
    if tree.sampled_ancestor.any():
        raise ValueError("uniform tree prior places fossils as tips; "
                         "sampled ancestors are not supported")
    lo, hi = params.root_bounds
    r = float(tree.age[tree.root])
    if not lo <= r <= hi:
        return _NEG_INF
    log_density = -math.log(hi - lo)
    floors = _oldest_tip_below(tree)
    for v in np.nonzero(tree.left >= 0)[0]:
        if int(v) == tree.root:
            continue
        gap = r - float(floors[v])
        if gap <= 0.0:
            return _NEG_INF
        log_density -= math.log(gap)
    return log_density


def tree_log_density(state: ModelState) -> float:
    """Dispatch to the active tree prior."""
    p = state.prior_params
    if isinstance(p, CoalescentParams):
        return coalescent_log_density(state.tree, 2.0 * p.pop_size * state.clock_rate)
    if isinstance(p, FbdParams):
        return fbd_log_density(state.tree, p)
    if isinstance(p, UniformParams):
        return uniform_tree_log_density(state.tree, p)
    raise TypeError(f"unknown prior parameters {type(p)!r}")


def _exponential_logpdf(x: float, mean: float) -> float:
    if x < 0:
        return _NEG_INF
    return -math.log(mean) - x / mean


CLOCK_RATE_PRIOR_MEAN = 1e-4
IGR_VARIANCE_PRIOR_MEAN = 0.005
ALPHA_PRIOR_MEAN = 1.0
DIVERSIFICATION_PRIOR_MEAN = 1.0
POP_SIZE_PRIOR_SHAPE = 1.0
POP_SIZE_PRIOR_RATE = 0.01


def scalar_hyperprior_log_density(state: ModelState) -> float:
    """Priors on the sampled scalars (everything except tree and branch rates).

    Base clock rate ~ Exp(mean 1e-4); gamma shape ~ Exp(mean 1); relaxed
    clock variance ~ Exp(mean 0.005); frequencies ~ flat Dirichlet(1,1);
    coalescent population ~ Gamma(shape 1, rate 0.01); diversification ~
    Exp(mean 1); turnover, fossil sampling ~ Beta(1,1).
    """
    if (state.pi <= 0).any() or (state.pi >= 1).any():
        return _NEG_INF
    if state.alpha <= 0 or state.clock_rate <= 0 or state.igr_variance <= 0:
        return _NEG_INF
    lp = _exponential_logpdf(state.clock_rate, CLOCK_RATE_PRIOR_MEAN)
    lp += _exponential_logpdf(state.alpha, ALPHA_PRIOR_MEAN)
    lp += _exponential_logpdf(state.igr_variance, IGR_VARIANCE_PRIOR_MEAN)
    # flat Dirichlet(1,1) on pi contributes 0
    p = state.prior_params
    if isinstance(p, CoalescentParams):
        if p.pop_size <= 0:
            return _NEG_INF
        lp += math.log(POP_SIZE_PRIOR_RATE) - POP_SIZE_PRIOR_RATE * p.pop_size
    elif isinstance(p, FbdParams):
        if p.diversification <= 0:
            return _NEG_INF
        if not (0 <= p.turnover < 1 and 0 <= p.fossil_sampling < 1):
            return _NEG_INF
        lp += _exponential_logpdf(p.diversification, DIVERSIFICATION_PRIOR_MEAN)
        # Beta(1,1) on turnover and fossil sampling contributes 0
    return lp


@njit(cache=True)
def _calibration_core(age, taxon, root, cal_min, cal_max,
                      root_lo, root_hi, use_root_window):
    total = 0.0
    for v in range(age.shape[0]):
        t = taxon[v]
        if t < 0:
            continue
        lo = cal_min[t]
        hi = cal_max[t]
        if hi > lo:
            if age[v] < lo or age[v] > hi:
                return -np.inf
            total -= math.log(hi - lo)
        elif age[v] != lo:
            return -np.inf
    if use_root_window:
        r = age[root]
        if r < root_lo or r > root_hi:
            return -np.inf
        total -= math.log(root_hi - root_lo)
    return total


# per-taxa-tuple bound arrays; values keep the key alive so ids are stable
_CAL_ARRAYS: dict[int, tuple] = {}


def _calibration_arrays(taxa) -> tuple[np.ndarray, np.ndarray]:
    entry = _CAL_ARRAYS.get(id(taxa))
    if entry is not None and entry[0] is taxa:
        return entry[1], entry[2]
    cal_min = np.asarray([t.calibration.min_age for t in taxa])
    cal_max = np.asarray([t.calibration.max_age for t in taxa])
    if len(_CAL_ARRAYS) > 256:
        _CAL_ARRAYS.clear()
    _CAL_ARRAYS[id(taxa)] = (taxa, cal_min, cal_max)
    return cal_min, cal_max


def calibration_log_density(state: ModelState) -> float:
    """Tip-age uniform priors, plus the root-age window for the FBD prior.

    The uniform tree prior carries its own root window inside
    ``uniform_tree_log_density`` and the coalescent root is unbounded, so
    only the FBD prior adds a window term here.
    """
    tree = state.tree
    cal_min, cal_max = _calibration_arrays(tree.taxa)
    p = state.prior_params
    use_window = isinstance(p, FbdParams)
    lo, hi = p.root_bounds if use_window else (0.0, 0.0)
    return float(_calibration_core(tree.age, tree.taxon, tree.root,
                                   cal_min, cal_max, lo, hi, use_window))


def hyperprior_log_density(state: ModelState) -> float:
    """All scalar, tip-age and root-window prior terms for the active model."""
    lp = scalar_hyperprior_log_density(state)
    if lp == _NEG_INF:
        return _NEG_INF
    cal = calibration_log_density(state)
    return lp + cal if cal != _NEG_INF else _NEG_INF
