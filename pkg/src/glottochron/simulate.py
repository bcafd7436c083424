"""Forward simulation for recovery experiments.

Draws a tree (with fossil tip ages) from the configured tree prior by
running a short prior-only chain, draws the remaining parameters from their
priors (or pins them to configured values), then emits binary characters
from the substitution process conditioned on non-all-zero columns - the same
conditioning the ascertainment correction assumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .dataio import CognateMatrix, RunConfig
from .model import CoalescentParams, ModelState, Taxon
from .substitution import discretize_gamma
from .treepriors import (ALPHA_PRIOR_MEAN, IGR_VARIANCE_PRIOR_MEAN,
                         CLOCK_RATE_PRIOR_MEAN)


@dataclass
class SimulationResult:
    matrix: CognateMatrix
    true_state: ModelState

    @property
    def true_root_age(self) -> float:
        tree = self.true_state.tree
        return float(tree.age[tree.root])


def _prior_tree_draw(config: RunConfig, taxa: tuple[Taxon, ...],
                     rng: np.random.Generator,
                     fixed: dict[str, float]) -> ModelState:
    """Final state of a short prior-only chain over tree, tip ages and the
    prior's own parameters."""
    state = engine.initial_state(config, taxa, rng)
    for name, value in fixed.items():
        setattr(state, name, value)
    evaluator = engine.PosteriorEvaluator(None)
    kernels, probs = engine.build_kernels(state, config)
    drop = {f"{name}_scale" for name in fixed}
    keep = [i for i, k in enumerate(kernels) if k.name not in drop]
    kernels = [kernels[i] for i in keep]
    probs = probs[keep]
    probs = probs / probs.sum()
    chain = engine.Chain(state, evaluator, kernels, probs, 1.0, rng)
    chain.tuning = True
    for _ in range(config.sim_tree_iterations):
        chain.step()
    return chain.model


def simulate(config: RunConfig, taxa: tuple[Taxon, ...],
             rng: np.random.Generator | None = None) -> SimulationResult:
    """Simulate a cognate matrix and its generating state.

    Scalars that do not enter the tree prior (gamma shape, frequencies,
    relaxed-clock variance, and the clock rate except under the coalescent)
    are drawn fresh from their priors unless pinned by the ``sim_*`` config
    keys; branch-rate multipliers are exact draws from the relaxed-clock
    prior given the tree.
    """
    if rng is None:
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(9000,)))
    clock_in_tree_prior = config.tree_prior == "coalescent"
    fixed: dict[str, float] = {}
    if config.sim_clock_rate is not None:
        fixed["clock_rate"] = config.sim_clock_rate
    state = _prior_tree_draw(config, taxa, rng, fixed)

    if config.sim_alpha is not None:
        state.alpha = config.sim_alpha
    else:
        state.alpha = float(rng.exponential(ALPHA_PRIOR_MEAN))
    if config.sim_pi1 is not None:
        pi1 = config.sim_pi1
    else:
        pi1 = float(rng.uniform(0.0, 1.0))
    state.pi = np.array([1.0 - pi1, pi1])
    if config.sim_igr_variance is not None:
        state.igr_variance = config.sim_igr_variance
    else:
        state.igr_variance = float(rng.exponential(IGR_VARIANCE_PRIOR_MEAN))
    if config.sim_clock_rate is None and not clock_in_tree_prior:
        state.clock_rate = float(rng.exponential(CLOCK_RATE_PRIOR_MEAN))

    tree = state.tree
    durations = tree.durations()
    rates = np.ones(tree.n_nodes)
    for v in range(tree.n_nodes):
        if v == tree.root or durations[v] <= 0:
            continue
        shape = durations[v] * state.clock_rate / state.igr_variance
        rates[v] = rng.gamma(shape, 1.0 / shape)
    state.branch_rates = rates

    sites = _simulate_sites(state, config.sim_sites, rng)
    matrix = CognateMatrix(taxa, sites)
    return SimulationResult(matrix, state)


def _simulate_sites(state: ModelState, n_sites: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw site columns, rejecting all-zero ones."""
    tree = state.tree
    gamma_rates = discretize_gamma(state.alpha)
    nu = tree.durations() * state.branch_rates * state.clock_rate
    nu[tree.root] = 0.0
    beta = 1.0 / (2.0 * state.pi[0] * state.pi[1])
    pi1 = float(state.pi[1])
    order = tree.postorder()[::-1]  # parents before children
    tips = tree.tip_indices()

    columns = []
    guard = 0
    while len(columns) < n_sites:
        guard += 1
        if guard > 1000 * n_sites:
            raise RuntimeError("all-zero rejection loop is not terminating")
        cat = float(gamma_rates[rng.integers(gamma_rates.shape[0])])
        states = np.zeros(tree.n_nodes, dtype=np.int8)
        states[tree.root] = rng.random() < pi1
        stay = np.exp(-beta * nu * cat)
        for v in order:
            v = int(v)
            if v == tree.root:
                continue
            # binary F81 step: keep parent's state or redraw from pi
            if rng.random() < stay[v]:
                states[v] = states[tree.parent[v]]
            else:
                states[v] = rng.random() < pi1
        column = states[tips][np.argsort(tree.taxon[tips])]
        if column.any():
            columns.append(column)
    return np.stack(columns, axis=1).astype(np.int8)
