"""Metropolis-coupled MCMC over (tree, parameters).

One iteration advances every chain by one Metropolis-Hastings step and then
attempts one swap between a random chain pair.  Only the cold chain is
recorded.  All randomness derives from the config seed through fixed
``SeedSequence`` spawn keys, so results are reproducible and independent of
how many chains or runs exist.

The log-prior is cached as four components (tree density, scalar
hyperpriors, calibration terms, branch-rate prior); each proposal kernel
declares which components and whether the likelihood it can change, and only
those are recomputed.  A periodic audit recomputes everything from scratch
and aborts on disagreement.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import clock, treepriors
from .dataio import CognateMatrix, RunConfig, TraceSample, write_trace, write_trees
from .model import (CoalescentParams, FbdParams, ModelState, Taxon, TimeTree,
                    UniformParams)
from .substitution import AlignmentLikelihood, NumericError

_NEG_INF = float("-inf")

COMPONENT_NAMES = ("tree", "scalars", "calibration", "clock")
_COMP_INDEX = {name: i for i, name in enumerate(COMPONENT_NAMES)}


class PosteriorEvaluator:
    """Likelihood plus component-wise prior for one dataset (or prior-only)."""

    def __init__(self, matrix: CognateMatrix | None = None,
                 ascertainment: str = "global"):
        self._likelihood = (AlignmentLikelihood(matrix, ascertainment)
                            if matrix is not None else None)

    @property
    def prior_only(self) -> bool:
        return self._likelihood is None

    def log_likelihood(self, state: ModelState) -> float:
        if self._likelihood is None:
            return 0.0
        return self._likelihood(state)

    def _component(self, name: str, state: ModelState) -> float:
        if name == "tree":
            return treepriors.tree_log_density(state)
        if name == "scalars":
            return treepriors.scalar_hyperprior_log_density(state)
        if name == "calibration":
            return treepriors.calibration_log_density(state)
        return clock.igr_log_prior(state.branch_rates, state.igr_variance,
                                   state.tree, state.clock_rate)

    def prior_components(self, state: ModelState,
                         base: tuple[float, ...] | None = None,
                         update: tuple[str, ...] | None = None
                         ) -> tuple[float, ...] | None:
        """Recompute the named components on top of ``base``; None if any is -inf."""
        if base is None or update is None:
            update = COMPONENT_NAMES
            vals = [0.0, 0.0, 0.0, 0.0]
        else:
            vals = list(base)
        # scalars first: they guard the domains the other terms assume
        for name in sorted(update, key=lambda n: n != "scalars"):
            v = self._component(name, state)
            if v == _NEG_INF or math.isnan(v):
                return None
            vals[_COMP_INDEX[name]] = v
        return tuple(vals)


class Kernel:
    """Base proposal kernel.

    ``propose`` returns ``(proposal, log_hastings, reverse_args)``; a None
    proposal is an automatic rejection (structurally invalid move).
    ``apply(state, *reverse_args)`` on the proposal reproduces the original
    state exactly, which the reversibility tests rely on.
    """

    name: str = "kernel"
    affects_likelihood: bool = True
    components: tuple[str, ...] = COMPONENT_NAMES
    tunable: bool = False

    def __init__(self, window: float = 0.5):
        self.window = window

    def propose(self, model: ModelState, rng: np.random.Generator):
        raise NotImplementedError

    def apply(self, model: ModelState, *args) -> ModelState:
        raise NotImplementedError


def _sa_attachment_mask(tree: TimeTree) -> np.ndarray:
    mask = np.zeros(tree.n_nodes, dtype=bool)
    mask[tree.parent[tree.sampled_ancestor]] = True
    return mask


class NodeAgeSlide(Kernel):
    """Uniform draw of one internal-node age inside (oldest child, parent)."""

    name = "node_age_slide"
    affects_likelihood = True
    components = ("tree", "clock")

    def propose(self, model, rng):
        tree = model.tree
        internal = (tree.left >= 0)
        internal[tree.root] = False
        internal &= ~_sa_attachment_mask(tree)
        nodes = np.nonzero(internal)[0]
        if nodes.shape[0] == 0:
            return None, 0.0, ()
        v = int(nodes[rng.integers(nodes.shape[0])])
        lo = max(float(tree.age[tree.left[v]]), float(tree.age[tree.right[v]]))
        hi = float(tree.age[tree.parent[v]])
        old = float(tree.age[v])
        new_age = rng.uniform(lo, hi)
        return self.apply(model, v, new_age), 0.0, (v, old)

    def apply(self, model, v, new_age):
        out = model.copy()
        out.tree.age[v] = new_age
        return out


class RootScale(Kernel):
    """Scale the root height above its oldest child by exp(U(-w, w))."""

    name = "root_scale"
    affects_likelihood = True
    components = ("tree", "calibration", "clock")
    tunable = True

    def propose(self, model, rng):
        tree = model.tree
        root = tree.root
        if _sa_attachment_mask(tree)[root]:
            return None, 0.0, ()
        base = max(float(tree.age[tree.left[root]]), float(tree.age[tree.right[root]]))
        factor = math.exp(rng.uniform(-self.window, self.window))
        old = float(tree.age[root])
        new_age = base + factor * (old - base)
        return self.apply(model, new_age), math.log(factor), (old,)

    def apply(self, model, new_age):
        out = model.copy()
        out.tree.age[out.tree.root] = new_age
        return out


class TipAgeMove(Kernel):
    """Redraw one calibrated fossil age uniformly inside its bounds."""

    name = "tip_age"
    affects_likelihood = True
    components = ("tree", "calibration", "clock")

    def __init__(self, tree: TimeTree):
        super().__init__()
        self._movable = np.asarray(
            [v for v in tree.tip_indices()
             if tree.taxa[tree.taxon[v]].calibration.width > 0],
            dtype=np.int64)

    def propose(self, model, rng):
        if self._movable.shape[0] == 0:
            return None, 0.0, ()
        tree = model.tree
        v = int(self._movable[rng.integers(self._movable.shape[0])])
        cal = tree.taxa[tree.taxon[v]].calibration
        new_age = rng.uniform(cal.min_age, cal.max_age)
        old = float(tree.age[v])
        p = int(tree.parent[v])
        if tree.sampled_ancestor[v]:
            sib = int(tree.left[p]) if int(tree.right[p]) == v else int(tree.right[p])
            if new_age <= tree.age[sib]:
                return None, 0.0, ()
            g = int(tree.parent[p])
            if g >= 0 and new_age >= tree.age[g]:
                return None, 0.0, ()
        elif new_age >= tree.age[p]:
            return None, 0.0, ()
        return self.apply(model, v, new_age), 0.0, (v, old)

    def apply(self, model, v, new_age):
        out = model.copy()
        out.tree.age[v] = new_age
        if out.tree.sampled_ancestor[v]:
            out.tree.age[out.tree.parent[v]] = new_age
        return out


class NarrowExchange(Kernel):
    """Swap a child of an internal node with that node's sibling."""

    name = "narrow_exchange"
    affects_likelihood = True
    components = ("tree", "clock")

    def propose(self, model, rng):
        tree = model.tree
        internal = (tree.left >= 0)
        internal[tree.root] = False
        nodes = np.nonzero(internal)[0]
        if nodes.shape[0] == 0:
            return None, 0.0, ()
        j = int(nodes[rng.integers(nodes.shape[0])])
        p = int(tree.parent[j])
        c = int(tree.left[j]) if rng.integers(2) == 0 else int(tree.right[j])
        u = int(tree.left[p]) if int(tree.right[p]) == j else int(tree.right[p])
        # sampled ancestors move only through the toggle kernel
        if tree.sampled_ancestor[c] or tree.sampled_ancestor[u]:
            return None, 0.0, ()
        if tree.age[u] >= tree.age[j]:
            return None, 0.0, ()
        return self.apply(model, j, c, u), 0.0, (j, u, c)

    def apply(self, model, j, c, u):
        out = model.copy()
        tree = out.tree
        p = int(tree.parent[j])
        if int(tree.left[j]) == c:
            tree.left[j] = u
        else:
            tree.right[j] = u
        tree.parent[u] = j
        if int(tree.left[p]) == u:
            tree.left[p] = c
        else:
            tree.right[p] = c
        tree.parent[c] = p
        tree.invalidate_topology()
        return out


def _subtree_mask(tree: TimeTree, v: int) -> np.ndarray:
    mask = np.zeros(tree.n_nodes, dtype=bool)
    stack = [v]
    while stack:
        w = stack.pop()
        mask[w] = True
        l = int(tree.left[w])
        if l >= 0:
            stack.append(l)
            stack.append(int(tree.right[w]))
    return mask


class PruneRegraft(Kernel):
    """Fixed-node-height subtree prune and regraft.

    The pruned parent keeps its age, so the candidate target edges (those
    spanning that age) are identical before and after the move and the
    Hastings ratio is 1.
    """

    name = "prune_regraft"
    affects_likelihood = True
    components = ("tree", "clock")

    def propose(self, model, rng):
        tree = model.tree
        ok = np.ones(tree.n_nodes, dtype=bool)
        ok[tree.root] = False
        ok &= tree.parent != tree.root
        ok &= ~tree.sampled_ancestor
        sa_parent = _sa_attachment_mask(tree)
        ok &= ~sa_parent[np.maximum(tree.parent, 0)]
        nodes = np.nonzero(ok)[0]
        if nodes.shape[0] == 0:
            return None, 0.0, ()
        v = int(nodes[rng.integers(nodes.shape[0])])
        p = int(tree.parent[v])
        s = int(tree.left[p]) if int(tree.right[p]) == v else int(tree.right[p])
        g = int(tree.parent[p])
        h = float(tree.age[p])
        in_subtree = _subtree_mask(tree, v)
        candidates = []
        for b in range(tree.n_nodes):
            if b == tree.root or in_subtree[b] or b == p:
                continue
            a = g if b == s else int(tree.parent[b])
            if a == p:
                continue
            if tree.age[b] < h < tree.age[a]:
                candidates.append(b)
        if not candidates:
            return None, 0.0, ()
        b = candidates[int(rng.integers(len(candidates)))]
        return self.apply(model, v, b), 0.0, (v, s)

    def apply(self, model, v, target):
        out = model.copy()
        tree = out.tree
        p = int(tree.parent[v])
        s = int(tree.left[p]) if int(tree.right[p]) == v else int(tree.right[p])
        g = int(tree.parent[p])
        # detach p: the sibling takes its place under the grandparent
        if int(tree.left[g]) == p:
            tree.left[g] = s
        else:
            tree.right[g] = s
        tree.parent[s] = g
        # read the target's parent only after the detach so target == s works
        a = int(tree.parent[target])
        if int(tree.left[a]) == target:
            tree.left[a] = p
        else:
            tree.right[a] = p
        tree.parent[p] = a
        if int(tree.left[p]) == s:
            tree.left[p] = target
        else:
            tree.right[p] = target
        tree.parent[target] = p
        tree.invalidate_topology()
        return out


class ScalarScale(Kernel):
    """Multiplicative exp(U(-w, w)) move on one positive scalar."""

    tunable = True

    def __init__(self, name, getter, setter, affects_likelihood, components,
                 window=0.5):
        super().__init__(window)
        self.name = name
        self._get = getter
        self._set = setter
        self.affects_likelihood = affects_likelihood
        self.components = components

    def propose(self, model, rng):
        factor = math.exp(rng.uniform(-self.window, self.window))
        return self.apply(model, factor), math.log(factor), (1.0 / factor,)

    def apply(self, model, factor):
        out = model.copy()
        self._set(out, self._get(out) * factor)
        return out


class WindowReflect(Kernel):
    """Additive window move reflected into (lo, hi); symmetric."""

    tunable = True

    def __init__(self, name, getter, setter, lo, hi, affects_likelihood,
                 components, window=0.1):
        super().__init__(window)
        self.name = name
        self._get = getter
        self._set = setter
        self.lo = lo
        self.hi = hi
        self.affects_likelihood = affects_likelihood
        self.components = components

    def propose(self, model, rng):
        old = self._get(model)
        x = old + rng.uniform(-self.window, self.window)
        span = self.hi - self.lo
        for _ in range(64):
            if x < self.lo:
                x = 2 * self.lo - x
            elif x > self.hi:
                x = 2 * self.hi - x
            else:
                break
        if not self.lo < x < self.hi and x != self.lo:
            return None, 0.0, ()
        return self.apply(model, x), 0.0, (old,)

    def apply(self, model, value):
        out = model.copy()
        self._set(out, value)
        return out


class BranchRateScale(Kernel):
    """Scale one branch-rate multiplier."""

    name = "branch_rate_scale"
    affects_likelihood = True
    components = ("clock",)
    tunable = True

    def propose(self, model, rng):
        tree = model.tree
        d = tree.durations()
        d[tree.root] = 0.0
        nodes = np.nonzero(d > 0)[0]
        if nodes.shape[0] == 0:
            return None, 0.0, ()
        v = int(nodes[rng.integers(nodes.shape[0])])
        factor = math.exp(rng.uniform(-self.window, self.window))
        return self.apply(model, v, factor), math.log(factor), (v, 1.0 / factor)

    def apply(self, model, v, factor):
        out = model.copy()
        out.branch_rates = out.branch_rates.copy()
        out.branch_rates[v] *= factor
        return out


class AncestorToggle(Kernel):
    """Collapse a fossil tip onto its attachment (making it a sampled
    ancestor) or restore it to a proper tip; FBD runs only.

    Collapsing removes two continuous parameters (the attachment age and the
    fossil's branch-rate multiplier); restoring draws the age uniformly in
    its valid window and the rate from its prior, and both densities enter
    the Hastings ratio.
    """

    name = "ancestor_toggle"
    affects_likelihood = True
    components = ("tree", "clock")

    def __init__(self, tree: TimeTree):
        super().__init__()
        self._fossils = np.asarray(
            [v for v in tree.tip_indices()
             if tree.taxa[tree.taxon[v]].calibration.max_age > 0],
            dtype=np.int64)

    def propose(self, model, rng):
        if self._fossils.shape[0] == 0:
            return None, 0.0, ()
        tree = model.tree
        v = int(self._fossils[rng.integers(self._fossils.shape[0])])
        p = int(tree.parent[v])
        if p == tree.root:
            return None, 0.0, ()
        sib = int(tree.left[p]) if int(tree.right[p]) == v else int(tree.right[p])
        hi = float(tree.age[tree.parent[p]])
        y = float(tree.age[v])
        if tree.sampled_ancestor[v]:
            lo = max(y, float(tree.age[sib]))
            new_p_age = rng.uniform(lo, hi)
            shape = (new_p_age - y) * model.clock_rate / model.igr_variance
            new_rate = float(rng.gamma(shape, 1.0 / shape))
            if new_rate <= 0.0:
                return None, 0.0, ()
            log_q = math.log(hi - lo) if hi > lo else _NEG_INF
            log_rate_q = clock.branch_rate_log_prior(
                new_rate, new_p_age - y, model.igr_variance, model.clock_rate)
            return (self.apply(model, v, new_p_age, new_rate),
                    -(-log_q + log_rate_q), (v, None, None))
        if tree.sampled_ancestor[sib]:
            return None, 0.0, ()
        if not (tree.age[sib] < y < hi):
            return None, 0.0, ()
        lo = max(y, float(tree.age[sib]))
        old_p_age = float(tree.age[p])
        old_rate = float(model.branch_rates[v])
        log_rate_q = clock.branch_rate_log_prior(
            old_rate, old_p_age - y, model.igr_variance, model.clock_rate)
        log_hastings = log_rate_q - math.log(hi - lo)
        return (self.apply(model, v, None, None), log_hastings,
                (v, old_p_age, old_rate))

    def apply(self, model, v, p_age, rate):
        out = model.copy()
        out.branch_rates = out.branch_rates.copy()
        tree = out.tree
        p = int(tree.parent[v])
        if p_age is None:
            tree.age[p] = tree.age[v]
            tree.sampled_ancestor[v] = True
            out.branch_rates[v] = 1.0
        else:
            tree.age[p] = p_age
            tree.sampled_ancestor[v] = False
            out.branch_rates[v] = rate
        return out


def _replace_prior(model, **changes):
    model.prior_params = dataclasses.replace(model.prior_params, **changes)


def _set_pi(model, value):
    model.pi = np.array([1.0 - value, value])


def build_kernels(model: ModelState, config: RunConfig
                  ) -> tuple[list[Kernel], np.ndarray]:
    """Assemble the kernel mix and per-kernel probabilities for one chain."""
    tree = model.tree
    prior = model.prior_params
    is_fbd = isinstance(prior, FbdParams)
    has_fossils = any(t.calibration.max_age > 0 for t in tree.taxa)

    topology: list[Kernel] = []
    if tree.n_tips >= 3:
        topology = [NarrowExchange(), PruneRegraft()]
    node_ages: list[Kernel] = [RootScale(window=0.2)]
    if tree.n_tips >= 3:
        node_ages.insert(0, NodeAgeSlide())
    tip_ages: list[Kernel] = [TipAgeMove(tree)] if has_fossils else []

    scalars: list[Kernel] = [
        ScalarScale("clock_rate_scale",
                    lambda m: m.clock_rate,
                    lambda m, x: setattr(m, "clock_rate", x),
                    affects_likelihood=True,
                    components=(("tree", "scalars", "clock")
                                if isinstance(prior, CoalescentParams)
                                else ("scalars", "clock"))),
        ScalarScale("igr_variance_scale",
                    lambda m: m.igr_variance,
                    lambda m, x: setattr(m, "igr_variance", x),
                    affects_likelihood=False,
                    components=("scalars", "clock")),
        ScalarScale("alpha_scale",
                    lambda m: m.alpha,
                    lambda m, x: setattr(m, "alpha", x),
                    affects_likelihood=True,
                    components=("scalars",)),
        WindowReflect("pi1_window",
                      lambda m: float(m.pi[1]), _set_pi, 0.0, 1.0,
                      affects_likelihood=True,
                      components=("scalars",)),
    ]
    if isinstance(prior, CoalescentParams):
        scalars.append(ScalarScale(
            "pop_size_scale",
            lambda m: m.prior_params.pop_size,
            lambda m, x: _replace_prior(m, pop_size=x),
            affects_likelihood=False, components=("tree", "scalars")))
    elif is_fbd:
        scalars.append(ScalarScale(
            "diversification_scale",
            lambda m: m.prior_params.diversification,
            lambda m, x: _replace_prior(m, diversification=x),
            affects_likelihood=False, components=("tree", "scalars")))
        scalars.append(WindowReflect(
            "turnover_window",
            lambda m: m.prior_params.turnover,
            lambda m, x: _replace_prior(m, turnover=x),
            0.0, 1.0, affects_likelihood=False,
            components=("tree", "scalars")))
        scalars.append(WindowReflect(
            "fossil_sampling_window",
            lambda m: m.prior_params.fossil_sampling,
            lambda m, x: _replace_prior(m, fossil_sampling=x),
            0.0, 1.0, affects_likelihood=False,
            components=("tree", "scalars")))

    branch_rates: list[Kernel] = [BranchRateScale()]
    toggle: list[Kernel] = []
    if is_fbd and has_fossils:
        toggle = [AncestorToggle(tree)]

    topo_weight = config.weight_topology
    toggle_weight = 0.0
    if toggle:
        toggle_weight = min(config.weight_ancestor_toggle, topo_weight)
        topo_weight -= toggle_weight
    groups = [
        (topology, topo_weight),
        (node_ages, config.weight_node_ages),
        (tip_ages, config.weight_tip_ages),
        (scalars, config.weight_scalars),
        (branch_rates, config.weight_branch_rates),
        (toggle, toggle_weight),
    ]
    kernels: list[Kernel] = []
    probs: list[float] = []
    for members, weight in groups:
        if not members or weight <= 0:
            continue
        for k in members:
            kernels.append(k)
            probs.append(weight / len(members))
    p = np.asarray(probs)
    if p.sum() <= 0:
        raise ValueError("no applicable proposal kernels")
    return kernels, p / p.sum()


@dataclass
class KernelStats:
    proposed: int = 0
    accepted: int = 0
    window: float = 0.0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class ProposalStats:
    """Per-kernel proposal counts plus swap counts for one chain/run."""

    kernels: dict[str, KernelStats] = field(default_factory=dict)
    swap_proposed: int = 0
    swap_accepted: int = 0


class Chain:
    """One heated chain owning its model, caches, rng stream and kernels."""

    TUNE_INTERVAL = 100
    TUNE_TARGET = 0.3

    def __init__(self, model: ModelState, evaluator: PosteriorEvaluator,
                 kernels: list[Kernel], probs: np.ndarray,
                 temperature: float, rng: np.random.Generator):
        self.model = model
        self.evaluator = evaluator
        self.kernels = kernels
        self._cum = np.cumsum(probs)
        self.temperature = temperature
        self.rng = rng
        self.stats = ProposalStats(
            kernels={k.name: KernelStats(window=k.window) for k in kernels})
        self._tune_counts = {k.name: [0, 0] for k in kernels}
        self.tuning = False
        comps = evaluator.prior_components(model)
        if comps is None:
            raise ValueError("initial state has zero prior probability")
        self.components = comps
        self.log_likelihood = evaluator.log_likelihood(model)
        if not math.isfinite(self.log_likelihood):
            raise NumericError("initial state has non-finite likelihood")

    @property
    def log_prior(self) -> float:
        return sum(self.components)

    @property
    def log_posterior(self) -> float:
        return self.log_likelihood + self.log_prior

    def step(self) -> bool:
        u = self.rng.random()
        idx = int(np.searchsorted(self._cum, u, side="right"))
        idx = min(idx, len(self.kernels) - 1)
        kernel = self.kernels[idx]
        accepted = mh_step(self, kernel)
        if self.tuning and kernel.tunable:
            counts = self._tune_counts[kernel.name]
            counts[0] += 1
            counts[1] += int(accepted)
            if counts[0] >= self.TUNE_INTERVAL:
                rate = counts[1] / counts[0]
                kernel.window = float(np.clip(
                    kernel.window * math.exp(rate - self.TUNE_TARGET),
                    1e-8, 1e8))
                self.stats.kernels[kernel.name].window = kernel.window
                counts[0] = counts[1] = 0
        return accepted

    def audit(self, tolerance: float = 1e-6) -> None:
        """Recompute everything from scratch and compare with the caches."""
        comps = self.evaluator.prior_components(self.model)
        fresh_prior = _NEG_INF if comps is None else sum(comps)
        if abs(fresh_prior - self.log_prior) > tolerance:
            raise NumericError(
                f"prior cache drift: cached {self.log_prior}, fresh {fresh_prior}")
        fresh_lik = self.evaluator.log_likelihood(self.model)
        if abs(fresh_lik - self.log_likelihood) > tolerance:
            raise NumericError(
                f"likelihood cache drift: cached {self.log_likelihood}, "
                f"fresh {fresh_lik}")


def mh_step(chain: Chain, kernel: Kernel) -> bool:
    """One Metropolis-Hastings step of ``chain`` with ``kernel``.

    Accepts with min(1, [(L' P') / (L P)]^T * Hastings); a -inf prior or a
    structurally invalid proposal is an automatic rejection.
    """
    stats = chain.stats.kernels[kernel.name]
    stats.proposed += 1
    proposal, log_hastings, _ = kernel.propose(chain.model, chain.rng)
    if proposal is None:
        return False
    comps = chain.evaluator.prior_components(
        proposal, base=chain.components, update=kernel.components)
    if comps is None:
        return False
    new_prior = sum(comps)
    if kernel.affects_likelihood and not chain.evaluator.prior_only:
        new_lik = chain.evaluator.log_likelihood(proposal)
    else:
        new_lik = chain.log_likelihood
    log_ratio = chain.temperature * (
        (new_lik + new_prior) - (chain.log_likelihood + chain.log_prior)
    ) + log_hastings
    if log_ratio >= 0.0 or chain.rng.random() < math.exp(log_ratio):
        chain.model = proposal
        chain.components = comps
        chain.log_likelihood = new_lik
        stats.accepted += 1
        return True
    return False


def attempt_swap(chains: list[Chain], rng: np.random.Generator,
                 stats: ProposalStats) -> bool:
    """Try one state swap between a random chain pair."""
    n = len(chains)
    if n < 2:
        return False
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    stats.swap_proposed += 1
    a, b = chains[i], chains[j]
    log_ratio = (a.temperature - b.temperature) * (b.log_posterior - a.log_posterior)
    if log_ratio >= 0.0 or rng.random() < math.exp(log_ratio):
        a.model, b.model = b.model, a.model
        a.components, b.components = b.components, a.components
        a.log_likelihood, b.log_likelihood = b.log_likelihood, a.log_likelihood
        stats.swap_accepted += 1
        return True
    return False


def chain_temperatures(n_chains: int, heat_delta: float) -> list[float]:
    """T_i = 1 / (1 + heat_delta * i); chain 0 is cold."""
    return [1.0 / (1.0 + heat_delta * i) for i in range(n_chains)]


def random_tree(taxa: tuple[Taxon, ...], tip_ages, root_age: float,
                rng: np.random.Generator) -> TimeTree:
    """Random valid topology: recursive bipartition with uniform child ages."""
    tip_ages = np.asarray(tip_ages, dtype=float)
    if root_age <= tip_ages.max():
        raise ValueError("root age must exceed the oldest tip age")
    n = len(taxa)
    n_nodes = 2 * n - 1
    parent = np.full(n_nodes, -1, dtype=np.int32)
    left = np.full(n_nodes, -1, dtype=np.int32)
    right = np.full(n_nodes, -1, dtype=np.int32)
    age = np.zeros(n_nodes)
    taxon = np.full(n_nodes, -1, dtype=np.int32)
    cursor = [0]

    def build(members: list[int], node_age: float) -> int:
        idx = cursor[0]
        cursor[0] += 1
        age[idx] = node_age
        if len(members) == 1:
            taxon[idx] = members[0]
            return idx
        perm = list(rng.permutation(len(members)))
        cut = int(rng.integers(1, len(members)))
        groups = ([members[i] for i in perm[:cut]],
                  [members[i] for i in perm[cut:]])
        kids = []
        for grp in groups:
            oldest = max(tip_ages[t] for t in grp)
            child_age = tip_ages[grp[0]] if len(grp) == 1 \
                else rng.uniform(oldest, node_age)
            kids.append(build(grp, child_age))
        left[idx], right[idx] = kids
        parent[kids[0]] = parent[kids[1]] = idx
        return idx

    root = build(list(range(n)), float(root_age))
    sa = np.zeros(n_nodes, dtype=bool)
    return TimeTree(taxa, parent, left, right, age, taxon, sa, root)


def initial_state(config: RunConfig, taxa: tuple[Taxon, ...],
                  rng: np.random.Generator) -> ModelState:
    """Valid starting state: random topology, midpoint tip ages, prior-typical scalars."""
    tip_ages = np.asarray([t.calibration.midpoint for t in taxa])
    oldest = float(tip_ages.max())
    lo, hi = config.root_bounds
    if config.tree_prior in ("fbd", "uniform"):
        if oldest >= hi:
            raise ValueError(
                f"oldest calibration {oldest} is not below the root bound {hi}")
        root_age = rng.uniform(max(lo, oldest + 0.01 * (hi - oldest)), hi)
    else:
        root_age = oldest + max(1000.0, oldest)
    tree = random_tree(taxa, tip_ages, root_age, rng)

    n_extant = sum(1 for t in taxa if t.calibration.is_extant)
    if config.tree_prior == "fbd":
        if not 0 < n_extant <= config.n_extant_family:
            raise ValueError(
                f"{n_extant} extant taxa but n_extant_family = {config.n_extant_family}")
        prior = FbdParams(diversification=1e-4, turnover=0.5,
                          fossil_sampling=0.5,
                          sampling_fraction=n_extant / config.n_extant_family,
                          root_bounds=config.root_bounds)
    elif config.tree_prior == "uniform":
        prior = UniformParams(root_bounds=config.root_bounds)
    else:
        prior = CoalescentParams(pop_size=100.0)
    return ModelState(
        tree=tree,
        pi=np.array([0.5, 0.5]),
        alpha=1.0,
        clock_rate=1e-4,
        branch_rates=np.ones(tree.n_nodes),
        igr_variance=0.005,
        prior_params=prior,
    )


def nontrivial_clades(tree: TimeTree) -> set[frozenset[str]]:
    """Tip-name sets of internal nodes, excluding singletons and the full set."""
    n = tree.n_tips
    out = set()
    for v, names in tree.subtree_tip_sets().items():
        if 1 < len(names) < n:
            out.add(names)
    return out


def asdsf(trees_a, trees_b, burn_in: float = 0.25,
          min_freq: float = 0.10) -> float:
    """Average standard deviation of split frequencies across two runs.

    Splits appearing at frequency >= ``min_freq`` in either run enter the
    average; the per-split deviation uses the two-sample (n-1) convention,
    so a split fixed in one run and absent from the other scores
    1/sqrt(2) ~ 0.707.
    """
    def post_burn_in(trees):
        trees = [t[1] if isinstance(t, tuple) else t for t in trees]
        drop = int(burn_in * len(trees))
        return trees[drop:]

    a, b = post_burn_in(trees_a), post_burn_in(trees_b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 post-burn-in trees per run")

    def freqs(trees):
        counts: dict[frozenset[str], int] = {}
        for t in trees:
            for clade in nontrivial_clades(t):
                counts[clade] = counts.get(clade, 0) + 1
        return {c: k / len(trees) for c, k in counts.items()}

    fa, fb = freqs(a), freqs(b)
    total, n_splits = 0.0, 0
    for clade in set(fa) | set(fb):
        x, y = fa.get(clade, 0.0), fb.get(clade, 0.0)
        if max(x, y) < min_freq:
            continue
        total += abs(x - y) / math.sqrt(2.0)
        n_splits += 1
    return total / n_splits if n_splits else 0.0


@dataclass
class RunResult:
    samples: list[TraceSample]
    trees: list[tuple[int, TimeTree]]
    stats: ProposalStats
    trace_path: str | None = None
    trees_path: str | None = None


@dataclass
class Mc3Result:
    runs: list[RunResult]
    final_asdsf: float | None
    stats_path: str | None = None


class _Run:
    """One independent MC3 run: a chain stack plus its swap stream."""

    def __init__(self, config: RunConfig, evaluator: PosteriorEvaluator,
                 taxa, run_index: int):
        seed = config.seed
        init_rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(run_index, 2000)))
        model0 = initial_state(config, taxa, init_rng)
        temperatures = chain_temperatures(config.n_chains, config.heat_delta)
        self.chains = []
        for c, temp in enumerate(temperatures):
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(run_index, c)))
            kernels, probs = build_kernels(model0, config)
            self.chains.append(Chain(model0.copy(), evaluator, kernels, probs,
                                     temp, rng))
        self.swap_rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(run_index, 1000)))
        self.samples: list[TraceSample] = []
        self.trees: list[tuple[int, TimeTree]] = []

    @property
    def cold(self) -> Chain:
        return self.chains[0]

    def record(self, iteration: int) -> None:
        cold = self.cold
        if not math.isfinite(cold.log_posterior):
            raise NumericError(
                f"non-finite cold-chain posterior at iteration {iteration}")
        model = cold.model
        self.samples.append(TraceSample(
            iteration=iteration,
            log_likelihood=cold.log_likelihood,
            log_prior=cold.log_prior,
            tree_height=float(model.tree.age[model.tree.root]),
            scalars=model.scalar_parameters(),
        ))
        self.trees.append((iteration, model.tree.copy()))


def run_mc3(config: RunConfig, matrix: CognateMatrix | None = None,
            taxa=None, threads: int = 1, progress=None) -> Mc3Result:
    """Run ``config.n_runs`` independent MC3 runs and write their outputs.

    ``matrix = None`` (or ``config.prior_only``) samples the joint prior by
    holding the log-likelihood at 0.  Runs advance in lockstep so progress
    lines can report a running ASDSF.  Single-threaded execution is
    bit-reproducible for a given seed.
    """
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if matrix is not None:
        taxa = matrix.taxa
    if taxa is None:
        raise ValueError("need a cognate matrix or an explicit taxa list")
    prior_only = config.prior_only or matrix is None
    evaluator = PosteriorEvaluator(None if prior_only else matrix,
                                   config.ascertainment)

    runs = [_Run(config, evaluator, taxa, r) for r in range(config.n_runs)]
    tune_until = int(config.burn_in * config.chain_length) if config.auto_tune else 0
    progress_every = config.progress_every or max(config.chain_length // 10, 1)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    try:
        for run in runs:
            run.record(0)
        for iteration in range(1, config.chain_length + 1):
            tuning = iteration <= tune_until
            for run in runs:
                for chain in run.chains:
                    chain.tuning = tuning
                if pool is not None:
                    list(pool.map(lambda ch: ch.step(), run.chains))
                else:
                    for chain in run.chains:
                        chain.step()
                attempt_swap(run.chains, run.swap_rng, run.cold.stats)
                if iteration % config.thin == 0:
                    run.record(iteration)
            if iteration % 10_000 == 0:
                for run in runs:
                    for chain in run.chains:
                        chain.audit()
            if progress is not None and iteration % progress_every == 0:
                running = ""
                if len(runs) >= 2 and len(runs[0].trees) >= 4:
                    try:
                        value = asdsf(runs[0].trees, runs[1].trees, config.burn_in)
                        running = f" ASDSF={value:.6f}"
                    except ValueError:
                        pass
                progress(f"iter={iteration} LnL={runs[0].cold.log_likelihood:.4f}"
                         f"{running}")
    finally:
        if pool is not None:
            pool.shutdown()

    final = None
    if len(runs) >= 2:
        pairs = [(i, j) for i in range(len(runs)) for j in range(i + 1, len(runs))]
        final = float(np.mean([
            asdsf(runs[i].trees, runs[j].trees, config.burn_in) for i, j in pairs]))

    results = [RunResult(r.samples, r.trees, r.cold.stats) for r in runs]
    stats_path = None
    if config.output_prefix:
        for i, rr in enumerate(results, start=1):
            rr.trace_path = f"{config.output_prefix}.run{i}.trace.tsv"
            rr.trees_path = f"{config.output_prefix}.run{i}.trees"
            write_trace(rr.samples, rr.trace_path)
            write_trees(rr.trees, rr.trees_path)
        stats_path = f"{config.output_prefix}.stats.txt"
        _write_stats(stats_path, config, results, final)
    return Mc3Result(results, final, stats_path)


def _write_stats(path: str, config: RunConfig, results: list[RunResult],
                 final_asdsf: float | None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# glottochron run statistics\n")
        fh.write(f"seed: {config.seed}\n")
        fh.write(f"chain_length: {config.chain_length}\n")
        fh.write(f"thin: {config.thin}\n")
        fh.write(f"tree_prior: {config.tree_prior}\n")
        if final_asdsf is not None:
            fh.write(f"final_asdsf: {final_asdsf:.6f}\n")
        for i, rr in enumerate(results, start=1):
            fh.write(f"\n[run {i} cold chain]\n")
            st = rr.stats
            fh.write(f"swaps: {st.swap_accepted}/{st.swap_proposed}\n")
            for name in sorted(st.kernels):
                ks = st.kernels[name]
                fh.write(f"{name}: accepted {ks.accepted}/{ks.proposed} "
                         f"(rate {ks.rate:.3f}, window {ks.window:.4g})\n")
