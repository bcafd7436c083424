"""Binary-state substitution likelihood.

Two-state time-reversible model (the binary specialization of GTR, equal to
F81) with discrete-gamma rate variation across sites, missing data as
uninformative tips, and correction for the unobservable all-zero columns.
Site likelihoods are computed by postorder pruning; the inner loop is
numba-compiled because the MCMC evaluates it millions of times.
"""
from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import gammainc, gammaincinv

from .dataio import MISSING, CognateMatrix
from .model import ModelState, TimeTree


class NumericError(ArithmeticError):
    """Non-finite value met during likelihood evaluation."""


def transition_matrix(pi, nu: float) -> np.ndarray:
    """2x2 transition probabilities for effective branch length ``nu``.

    ``nu`` is in expected substitutions per site: the exchange rate is scaled
    by 1/(2*pi0*pi1) so that one unit of ``nu`` is one expected substitution
    at stationarity.
    """
    if nu < 0:
        raise ValueError(f"effective branch length must be >= 0, got {nu}")
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (2,) or (pi <= 0).any() or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid stationary frequencies {pi}")
    e = np.exp(-nu / (2.0 * pi[0] * pi[1]))
    return np.array([
        [pi[0] + pi[1] * e, pi[1] * (1.0 - e)],
        [pi[0] * (1.0 - e), pi[1] + pi[0] * e],
    ])


_GAMMA_CACHE: dict[tuple[float, int], np.ndarray] = {}


def discretize_gamma(alpha: float, n_categories: int = 4) -> np.ndarray:
    """Equal-weight mean-of-bin discretization of Gamma(alpha, mean 1).

    Returns ``n_categories`` nondecreasing rates renormalized to mean exactly
    one (Yang 1994 style, category rate = conditional mean in its quantile
    bin).  Results are memoized: the MCMC re-evaluates the same shape for
    every proposal that leaves it untouched.
    """
    if alpha <= 0:
        raise ValueError(f"gamma shape must be > 0, got {alpha}")
    k = n_categories
    if k < 1:
        raise ValueError("need at least one category")
    key = (float(alpha), k)
    cached = _GAMMA_CACHE.get(key)
    if cached is not None:
        return cached
    edges = gammaincinv(alpha, np.arange(1, k) / k) / alpha
    # E[X; X <= q] of Gamma(shape a, rate a) is the regularized gammainc(a+1, a q)
    cum = np.concatenate(([0.0], gammainc(alpha + 1.0, alpha * edges), [1.0]))
    rates = np.diff(cum) * k
    rates /= rates.mean()
    rates.setflags(write=False)
    if len(_GAMMA_CACHE) > 4096:
        _GAMMA_CACHE.clear()
    _GAMMA_CACHE[key] = rates
    return rates


@njit(cache=True, fastmath=True)
def _pruning_site_loglik(postorder, left, right, taxon, codes, nu, pi0, pi1, rates):
    """Gamma-mixed per-site log-likelihoods for every column of ``codes``.

    Partials are laid out (node, site, state) so the per-node site loop is
    branch-free and vectorizable; per-node rescaling happens only on trees
    deep enough to underflow (> 63 nodes).
    """
    n_nodes = postorder.shape[0]
    n_sites = codes.shape[1]
    n_cat = rates.shape[0]
    beta = 1.0 / (2.0 * pi0 * pi1)
    do_scale = n_nodes > 63

    per_cat = np.empty((n_cat, n_sites))
    partial = np.empty((n_nodes, n_sites, 2))
    logscale = np.empty(n_sites)
    root = postorder[n_nodes - 1]

    for k in range(n_cat):
        r = rates[k]
        for s in range(n_sites):
            logscale[s] = 0.0
        for i in range(n_nodes):
            v = postorder[i]
            l = left[v]
            if l < 0:
                t = taxon[v]
                for s in range(n_sites):
                    c = codes[t, s]
                    partial[v, s, 0] = 1.0 - (c == 1)
                    partial[v, s, 1] = 1.0 - (c == 0)
            else:
                rg = right[v]
                el = np.exp(-beta * nu[l] * r)
                er = np.exp(-beta * nu[rg] * r)
                l00 = pi0 + pi1 * el
                l01 = pi1 * (1.0 - el)
                l10 = pi0 * (1.0 - el)
                l11 = pi1 + pi0 * el
                r00 = pi0 + pi1 * er
                r01 = pi1 * (1.0 - er)
                r10 = pi0 * (1.0 - er)
                r11 = pi1 + pi0 * er
                for s in range(n_sites):
                    a0 = l00 * partial[l, s, 0] + l01 * partial[l, s, 1]
                    a1 = l10 * partial[l, s, 0] + l11 * partial[l, s, 1]
                    b0 = r00 * partial[rg, s, 0] + r01 * partial[rg, s, 1]
                    b1 = r10 * partial[rg, s, 0] + r11 * partial[rg, s, 1]
                    partial[v, s, 0] = a0 * b0
                    partial[v, s, 1] = a1 * b1
                if do_scale:
                    for s in range(n_sites):
                        m = max(partial[v, s, 0], partial[v, s, 1])
                        if 0.0 < m < 1e-240:
                            partial[v, s, 0] /= m
                            partial[v, s, 1] /= m
                            logscale[s] += np.log(m)
        for s in range(n_sites):
            lik = pi0 * partial[root, s, 0] + pi1 * partial[root, s, 1]
            if lik > 0.0:
                per_cat[k, s] = np.log(lik) + logscale[s]
            else:
                per_cat[k, s] = -np.inf

    out = np.empty(n_sites)
    for s in range(n_sites):
        mx = per_cat[0, s]
        for k in range(1, n_cat):
            if per_cat[k, s] > mx:
                mx = per_cat[k, s]
        if mx == -np.inf:
            out[s] = -np.inf
        else:
            acc = 0.0
            for k in range(n_cat):
                acc += np.exp(per_cat[k, s] - mx)
            out[s] = mx + np.log(acc / n_cat)
    return out


def _effective_lengths(state: ModelState) -> np.ndarray:
    tree = state.tree
    nu = (tree.durations() * state.branch_rates) * state.clock_rate
    nu[tree.root] = 0.0
    return nu


def _raw_site_logliks(tree: TimeTree, state: ModelState, codes: np.ndarray) -> np.ndarray:
    nu = _effective_lengths(state)
    rates = discretize_gamma(state.alpha)
    out = _pruning_site_loglik(
        tree.postorder(), tree.left, tree.right, tree.taxon,
        codes, nu, float(state.pi[0]), float(state.pi[1]), rates)
    if not np.isfinite(out).all():
        bad = int(np.nonzero(~np.isfinite(out))[0][0])
        node = _find_nonfinite_node(tree, state, codes[:, bad], rates)
        raise NumericError(
            f"non-finite site likelihood at column {bad} (node {node})")
    return out


def _find_nonfinite_node(tree, state, column, rates):
    """Slow diagnostic pruning used only to name the offending node."""
    nu = _effective_lengths(state)
    for v in tree.postorder():
        v = int(v)
        if tree.is_tip(v):
            continue
        for cat in rates:
            part = {}
            for w in tree.postorder():
                w = int(w)
                if tree.is_tip(w):
                    c = column[tree.taxon[w]]
                    part[w] = np.array([1.0, 1.0]) if c == MISSING else \
                        np.eye(2)[int(c)]
                else:
                    acc = np.ones(2)
                    for ch in tree.children(w):
                        acc = acc * (transition_matrix(state.pi, nu[ch] * cat) @ part[ch])
                    part[w] = acc
                if w == v and not np.isfinite(part[w]).all():
                    return v
    return tree.root


def _column_codes(column, n_taxa: int) -> np.ndarray:
    codes = np.empty((n_taxa, 1), dtype=np.int8)
    for i, c in enumerate(column):
        codes[i, 0] = MISSING if c is None else int(c)
    return codes


def site_log_likelihood(tree: TimeTree, state: ModelState, column) -> float:
    """Uncorrected log-likelihood of one site column.

    ``column`` holds one cell per taxon (in taxon-id order): 0, 1, or
    missing (``None`` or the MISSING code).
    """
    codes = _column_codes(column, len(tree.taxa))
    return float(_raw_site_logliks(tree, state, codes)[0])


class AlignmentLikelihood:
    """Reusable corrected-likelihood evaluator over a fixed alignment.

    The all-zero-column likelihood is computed once per evaluation (it is
    appended as a virtual column) and reused for every site.  With
    ``ascertainment='per-block'`` the correction is applied once per meaning
    block instead of once per site.
    """

    def __init__(self, matrix: CognateMatrix, ascertainment: str = "global"):
        if ascertainment not in ("global", "per-block"):
            raise ValueError(f"unknown ascertainment mode '{ascertainment}'")
        if ascertainment == "per-block" and matrix.site_meaning is None:
            raise ValueError("per-block ascertainment needs meaning blocks")
        self.matrix = matrix
        self.taxa_names = tuple(t.name for t in matrix.taxa)
        self.n_corrections = (
            matrix.n_sites if ascertainment == "global"
            else int(np.unique(matrix.site_meaning).shape[0]))
        codes = np.ascontiguousarray(matrix.sites, dtype=np.int8)
        # duplicate columns share one pruning pass; the all-zero column rides
        # along as the last pattern
        patterns, inverse, counts = np.unique(
            codes, axis=1, return_inverse=True, return_counts=True)
        self._patterns = np.ascontiguousarray(np.hstack(
            [patterns, np.zeros((codes.shape[0], 1), dtype=np.int8)]))
        self._inverse = inverse.ravel()
        self._counts = counts.astype(np.float64)

    def _check_tree(self, tree: TimeTree) -> None:
        if tuple(t.name for t in tree.taxa) != self.taxa_names:
            raise ValueError("matrix taxa do not match tree tips")

    def _pattern_logliks(self, state: ModelState) -> np.ndarray:
        self._check_tree(state.tree)
        return _raw_site_logliks(state.tree, state, self._patterns)

    def raw_site_logliks(self, state: ModelState) -> tuple[np.ndarray, float]:
        """Per-site uncorrected log-likelihoods and the all-zero-column value."""
        out = self._pattern_logliks(state)
        return out[self._inverse], float(out[-1])

    def corrected_site_logliks(self, state: ModelState) -> np.ndarray:
        sites, log_zero = self.raw_site_logliks(state)
        return sites - _log1m_exp(log_zero)

    def __call__(self, state: ModelState) -> float:
        out = self._pattern_logliks(state)
        total = float(out[:-1] @ self._counts)
        return total - self.n_corrections * _log1m_exp(float(out[-1]))


def _log1m_exp(log_p: float) -> float:
    """log(1 - exp(log_p)) with the degenerate-tree guard."""
    p = np.exp(log_p)
    if p >= 1.0 - 1e-15:
        raise NumericError(
            f"all-zero-column probability {p} leaves nothing observable "
            f"(degenerate tree)")
    return float(np.log1p(-p))


def alignment_log_likelihood(tree: TimeTree, state: ModelState,
                             matrix: CognateMatrix,
                             ascertainment: str = "global") -> float:
    """Corrected log-likelihood of the whole alignment."""
    if state.tree is not tree:
        state = ModelState(tree, state.pi, state.alpha, state.clock_rate,
                           state.branch_rates, state.igr_variance,
                           state.prior_params)
    return AlignmentLikelihood(matrix, ascertainment)(state)


def clock_rate_gradient(state: ModelState, matrix: CognateMatrix,
                        rel_step: float = 1e-5,
                        ascertainment: str = "global") -> float:
    """Central-difference d(logL)/d(clock_rate), used by tuning diagnostics."""
    evaluator = AlignmentLikelihood(matrix, ascertainment)

    def at(c: float) -> float:
        s = state.copy()
        s.clock_rate = c
        return evaluator(s)

    c = state.clock_rate
    h = c * rel_step
    return (at(c + h) - at(c - h)) / (2.0 * h)
