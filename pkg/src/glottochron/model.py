"""Core domain types: taxa, calibrations, time trees, and the sampled model state.

Ages are real numbers in years before present (BP) throughout; tree priors and
the clock consume years directly.  Sampled-ancestor fossils are represented as
zero-duration tips hanging off their attachment node, so every tree in the
package is strictly binary.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class CalibrationPrior:
    """Uniform age bounds for one tip, in years BP. Extant taxa are (0, 0)."""

    min_age: float = 0.0
    max_age: float = 0.0

    def __post_init__(self):
        if self.min_age < 0:
            raise ValueError(f"calibration min_age must be >= 0, got {self.min_age}")
        if self.min_age > self.max_age:
            raise ValueError(
                f"calibration min_age {self.min_age} > max_age {self.max_age}"
            )

    @property
    def is_extant(self) -> bool:
        return self.max_age == 0.0

    @property
    def width(self) -> float:
        return self.max_age - self.min_age

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.min_age + self.max_age)

    def contains(self, age: float) -> bool:
        return self.min_age <= age <= self.max_age


@dataclass(frozen=True)
class Taxon:
    """A language/tip label with a dense integer id and its age calibration."""

    id: int
    name: str
    calibration: CalibrationPrior = field(default_factory=CalibrationPrior)


def make_taxa(names: Sequence[str],
              calibrations: Mapping[str, CalibrationPrior] | None = None) -> tuple[Taxon, ...]:
    """Build a contiguous taxon list; names must be unique."""
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if list(names).count(n) > 1})
        raise ValueError(f"duplicate taxon names: {dupes}")
    calibrations = calibrations or {}
    return tuple(
        Taxon(i, name, calibrations.get(name, CalibrationPrior()))
        for i, name in enumerate(names)
    )


class TimeTree:
    """Rooted binary tree with node ages in years BP and dated tips.

    Nodes are dense indices into flat arrays.  ``left``/``right`` are -1 for
    tips; ``taxon`` is -1 for internal nodes.  A sampled-ancestor fossil is a
    tip whose age equals its parent's age (zero-duration branch) and whose
    ``sampled_ancestor`` flag is set.
    """

    __slots__ = ("taxa", "parent", "left", "right", "age", "taxon",
                 "sampled_ancestor", "root", "_postorder")

    def __init__(self, taxa, parent, left, right, age, taxon,
                 sampled_ancestor, root):
        self.taxa = tuple(taxa)
        self.parent = np.asarray(parent, dtype=np.int32)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.age = np.asarray(age, dtype=np.float64)
        self.taxon = np.asarray(taxon, dtype=np.int32)
        self.sampled_ancestor = np.asarray(sampled_ancestor, dtype=bool)
        self.root = int(root)
        self._postorder = None

    @property
    def n_nodes(self) -> int:
        return self.parent.shape[0]

    @property
    def n_tips(self) -> int:
        return int((self.left < 0).sum())

    def is_tip(self, node: int) -> bool:
        return self.left[node] < 0

    def children(self, node: int) -> tuple[int, ...]:
        if self.left[node] < 0:
            return ()
        return (int(self.left[node]), int(self.right[node]))

    def tip_indices(self) -> np.ndarray:
        return np.nonzero(self.left < 0)[0]

    def node_of_taxon(self, taxon_id: int) -> int:
        hits = np.nonzero(self.taxon == taxon_id)[0]
        if hits.shape[0] != 1:
            raise ValueError(f"taxon {taxon_id} not a unique tip")
        return int(hits[0])

    def postorder(self) -> np.ndarray:
        """Node order with every child before its parent (cached)."""
        if self._postorder is None:
            n = self.n_nodes
            pre = np.empty(n, dtype=np.int32)
            stack = [self.root]
            i = 0
            while stack:
                v = stack.pop()
                pre[i] = v
                i += 1
                l = self.left[v]
                if l >= 0:
                    stack.append(int(l))
                    stack.append(int(self.right[v]))
            if i != n:
                raise ValueError("tree is not a single connected rooted structure")
            self._postorder = pre[::-1].copy()
        return self._postorder

    def invalidate_topology(self) -> None:
        self._postorder = None

    def durations(self) -> np.ndarray:
        """Branch duration above each node (years); 0 at the root."""
        d = self.age[self.parent] - self.age
        d[self.root] = 0.0
        return d

    def subtree_tip_sets(self) -> dict[int, frozenset[str]]:
        """Tip-name set spanned by each node, keyed by node index."""
        out: dict[int, frozenset[str]] = {}
        for v in self.postorder():
            v = int(v)
            if self.is_tip(v):
                out[v] = frozenset((self.taxa[self.taxon[v]].name,))
            else:
                out[v] = out[int(self.left[v])] | out[int(self.right[v])]
        return out

    def copy(self) -> "TimeTree":
        t = TimeTree.__new__(TimeTree)
        t.taxa = self.taxa
        t.parent = self.parent.copy()
        t.left = self.left.copy()
        t.right = self.right.copy()
        t.age = self.age.copy()
        t.taxon = self.taxon.copy()
        t.sampled_ancestor = self.sampled_ancestor.copy()
        t.root = self.root
        t._postorder = self._postorder
        return t

    def same_shape(self, other: "TimeTree") -> bool:
        """Exact structural and age equality (test helper)."""
        return (self.root == other.root
                and np.array_equal(self.parent, other.parent)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right)
                and np.array_equal(self.age, other.age)
                and np.array_equal(self.taxon, other.taxon)
                and np.array_equal(self.sampled_ancestor, other.sampled_ancestor))


TipSpec = Union[str, tuple]


def build_tree(taxa: Sequence[Taxon], spec: TipSpec) -> TimeTree:
    """Construct a TimeTree from a nested tuple spec.

    A tip is a taxon name (age = calibration midpoint) or ``(name, age)``;
    an internal node is ``(left_spec, right_spec, age)``.  A sampled ancestor
    is written as a tip whose age equals its parent's age.
    """
    by_name = {t.name: t for t in taxa}
    n_tips = len(taxa)
    n_nodes = 2 * n_tips - 1
    parent = np.full(n_nodes, -1, dtype=np.int32)
    left = np.full(n_nodes, -1, dtype=np.int32)
    right = np.full(n_nodes, -1, dtype=np.int32)
    age = np.zeros(n_nodes)
    taxon = np.full(n_nodes, -1, dtype=np.int32)
    sa = np.zeros(n_nodes, dtype=bool)
    cursor = {"next": 0}

    def walk(node_spec) -> int:
        idx = cursor["next"]
        cursor["next"] += 1
        if isinstance(node_spec, str) or (
                isinstance(node_spec, tuple) and len(node_spec) == 2
                and isinstance(node_spec[0], str)):
            if isinstance(node_spec, str):
                name, node_age = node_spec, by_name[node_spec].calibration.midpoint
            else:
                name, node_age = node_spec
            taxon[idx] = by_name[name].id
            age[idx] = node_age
        else:
            l_spec, r_spec, node_age = node_spec
            age[idx] = node_age
            l = walk(l_spec)
            r = walk(r_spec)
            left[idx], right[idx] = l, r
            parent[l] = parent[r] = idx
        return idx

    root = walk(spec)
    if cursor["next"] != n_nodes:
        raise ValueError(f"spec has {cursor['next']} nodes, expected {n_nodes}")
    tree = TimeTree(taxa, parent, left, right, age, taxon, sa, root)
    # flag zero-duration fossil tips as sampled ancestors
    for v in tree.tip_indices():
        p = tree.parent[v]
        if p >= 0 and tree.age[v] == tree.age[p]:
            tree.sampled_ancestor[v] = True
    return tree


def branch_duration(tree: TimeTree, node: int) -> float:
    """Duration in years of the branch above ``node``; 0 iff sampled ancestor."""
    if node == tree.root:
        raise ValueError("root has no branch")
    return float(tree.age[tree.parent[node]] - tree.age[node])


def validate_tree(tree: TimeTree,
                  calibrations: Mapping[str, CalibrationPrior] | None = None,
                  root_bounds: tuple[float, float] | None = None) -> list[str]:
    """Return a list of invariant violations (empty iff the tree is well formed).

    ``calibrations`` defaults to the bounds carried by the tree's own taxa;
    ``root_bounds`` is checked only when given (FBD and uniform priors
    condition on the root, the coalescent does not).
    """
    violations: list[str] = []
    n = tree.n_nodes

    # structural checks: one root, binary internals, consistent links
    roots = [v for v in range(n) if tree.parent[v] < 0]
    if roots != [tree.root]:
        violations.append(f"structure: root nodes {roots}, declared root {tree.root}")
    for v in range(n):
        kids = tree.children(v)
        if kids:
            if tree.taxon[v] >= 0:
                violations.append(f"structure: internal node {v} carries a taxon")
            for c in kids:
                if tree.parent[c] != v:
                    violations.append(f"structure: parent link of node {c} broken")
        elif tree.taxon[v] < 0:
            violations.append(f"structure: tip {v} has no taxon")
    try:
        order = tree.postorder()
        if order.shape[0] != n:
            violations.append("structure: tree is not connected")
    except ValueError as err:
        violations.append(f"structure: {err}")
        return violations

    if calibrations is None:
        calibrations = {t.name: t.calibration for t in tree.taxa}

    tip_names = []
    for v in range(n):
        p = tree.parent[v]
        if p >= 0:
            if tree.sampled_ancestor[v]:
                if not tree.is_tip(v):
                    violations.append(f"sampled ancestor {v} is not a tip")
                if tree.age[v] != tree.age[p]:
                    violations.append(
                        f"age ordering: sampled ancestor {v} age {tree.age[v]} "
                        f"!= attachment age {tree.age[p]}")
            elif not tree.age[v] < tree.age[p]:
                violations.append(
                    f"age ordering: node {v} age {tree.age[v]} >= parent age {tree.age[p]}")
        if tree.is_tip(v):
            name = tree.taxa[tree.taxon[v]].name
            tip_names.append(name)
            cal = calibrations.get(name)
            if cal is None:
                violations.append(f"calibration bounds: tip '{name}' not in dataset")
            elif not cal.contains(tree.age[v]):
                violations.append(
                    f"calibration bounds: tip '{name}' age {tree.age[v]} outside "
                    f"[{cal.min_age}, {cal.max_age}]")
    if len(set(tip_names)) != len(tip_names):
        violations.append("structure: duplicate taxa at tips")

    # one sampled ancestor per attachment node, or the FBD bookkeeping breaks
    for v in range(n):
        kids = tree.children(v)
        if len(kids) == 2 and all(tree.sampled_ancestor[c] for c in kids):
            violations.append(f"structure: node {v} has two sampled-ancestor children")

    if root_bounds is not None:
        lo, hi = root_bounds
        if not (lo <= tree.age[tree.root] <= hi):
            violations.append(
                f"root bounds: root age {tree.age[tree.root]} outside [{lo}, {hi}]")
    return violations


@dataclass
class CoalescentParams:
    """Constant-size coalescent; the tree density uses theta = 2 * pop_size * clock_rate."""

    pop_size: float

    def validate(self) -> list[str]:
        return [] if self.pop_size > 0 else [f"pop_size must be > 0, got {self.pop_size}"]


@dataclass
class FbdParams:
    """Fossilized birth-death prior in its (d, r, f, rho) parameterization."""

    diversification: float      # birth minus death rate, > 0
    turnover: float             # death/birth ratio, in [0, 1)
    fossil_sampling: float      # psi / (psi + death rate), in [0, 1)
    sampling_fraction: float    # extant taxa in the data / extant taxa in the family
    root_bounds: tuple[float, float] = (4000.0, 25000.0)

    def birth_death_rates(self) -> tuple[float, float, float]:
        """Map to (birth, death, fossil-recovery) rates."""
        lam = self.diversification / (1.0 - self.turnover)
        mu = lam * self.turnover
        psi = mu * self.fossil_sampling / (1.0 - self.fossil_sampling)
        return lam, mu, psi

    def validate(self) -> list[str]:
        v = []
        if not self.diversification > 0:
            v.append(f"diversification must be > 0, got {self.diversification}")
        if not 0 <= self.turnover < 1:
            v.append(f"turnover must be in [0, 1), got {self.turnover}")
        if not 0 <= self.fossil_sampling < 1:
            v.append(f"fossil_sampling must be in [0, 1), got {self.fossil_sampling}")
        if not 0 < self.sampling_fraction <= 1:
            v.append(f"sampling_fraction must be in (0, 1], got {self.sampling_fraction}")
        if not self.root_bounds[0] < self.root_bounds[1]:
            v.append(f"root_bounds must be increasing, got {self.root_bounds}")
        return v


@dataclass
class UniformParams:
    """Uniform tree prior conditioned on a root age drawn from Uniform(root_bounds)."""

    root_bounds: tuple[float, float] = (4000.0, 25000.0)

    def validate(self) -> list[str]:
        if not self.root_bounds[0] < self.root_bounds[1]:
            return [f"root_bounds must be increasing, got {self.root_bounds}"]
        return []


PriorParams = Union[CoalescentParams, FbdParams, UniformParams]


@dataclass
class ModelState:
    """Full parameter vector sampled by the MCMC."""

    tree: TimeTree
    pi: np.ndarray                 # stationary frequencies (pi0, pi1)
    alpha: float                   # gamma shape for rate variation
    clock_rate: float              # substitutions / site / year
    branch_rates: np.ndarray       # relaxed-clock multiplier, keyed by child node
    igr_variance: float
    prior_params: PriorParams

    def copy(self) -> "ModelState":
        """Copy with a private tree.

        ``pi``, ``branch_rates`` and ``prior_params`` are shared
        copy-on-write: code changing them must replace the container, never
        mutate it in place (the MCMC copies states once per proposal and
        relies on this).
        """
        return ModelState(
            tree=self.tree.copy(),
            pi=self.pi,
            alpha=self.alpha,
            clock_rate=self.clock_rate,
            branch_rates=self.branch_rates,
            igr_variance=self.igr_variance,
            prior_params=self.prior_params,
        )

    def scalar_parameters(self) -> dict[str, float]:
        """Named scalar parameters for trace output."""
        out = {
            "Alpha": self.alpha,
            "ClockRate": self.clock_rate,
            "IgrVariance": self.igr_variance,
            "Pi1": float(self.pi[1]),
        }
        p = self.prior_params
        if isinstance(p, CoalescentParams):
            out["PopSize"] = p.pop_size
        elif isinstance(p, FbdParams):
            out["Diversification"] = p.diversification
            out["Turnover"] = p.turnover
            out["FossilSampling"] = p.fossil_sampling
        return out

    def validate(self) -> list[str]:
        v = []
        if abs(float(self.pi.sum()) - 1.0) > 1e-12 or (self.pi <= 0).any():
            v.append(f"pi must be positive and sum to 1, got {self.pi}")
        if not self.alpha > 0:
            v.append(f"alpha must be > 0, got {self.alpha}")
        if not self.clock_rate > 0:
            v.append(f"clock_rate must be > 0, got {self.clock_rate}")
        if not self.igr_variance > 0:
            v.append(f"igr_variance must be > 0, got {self.igr_variance}")
        if (self.branch_rates <= 0).any():
            v.append("branch_rates must all be > 0")
        v.extend(self.prior_params.validate())
        return v
