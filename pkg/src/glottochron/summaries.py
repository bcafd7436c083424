"""Posterior summaries: consensus trees, HPD intervals, root-age Bayes
factors with Kass-Raftery labels, AICM model scores, and subgroup age tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataio import _quote_label
from .model import TimeTree


def hpd_interval(samples, mass: float = 0.95) -> tuple[float, float]:
    """Smallest-width contiguous interval holding ceil(mass * n) samples.

    Ties are broken toward the lower endpoint.
    """
    arr = np.sort(np.asarray(samples, dtype=float))
    n = arr.shape[0]
    if n < 20:
        raise ValueError(f"need at least 20 samples for an HPD interval, got {n}")
    if not 0 < mass <= 1:
        raise ValueError(f"mass must be in (0, 1], got {mass}")
    need = int(math.ceil(mass * n))
    widths = arr[need - 1:] - arr[:n - need + 1]
    i = int(np.argmin(widths))
    return float(arr[i]), float(arr[i + need - 1])


def _hpd_or_range(samples, mass: float = 0.95) -> tuple[float, float]:
    """HPD when enough samples exist, otherwise the plain min/max range."""
    arr = np.asarray(samples, dtype=float)
    if arr.shape[0] >= 20:
        return hpd_interval(arr, mass)
    return float(arr.min()), float(arr.max())


@dataclass
class CladeSummary:
    """Posterior summary of one clade (tip set)."""

    clade: frozenset[str]
    support: float
    age_median: float
    age_hpd: tuple[float, float]


@dataclass
class ConsensusNode:
    tips: frozenset[str]
    support: float
    age_median: float
    age_hpd: tuple[float, float]
    children: list["ConsensusNode"] = field(default_factory=list)

    @property
    def is_tip(self) -> bool:
        return len(self.tips) == 1


@dataclass
class ConsensusTree:
    root: ConsensusNode
    n_trees: int

    def clades(self) -> dict[frozenset[str], ConsensusNode]:
        out = {}
        stack = [self.root]
        while stack:
            node = stack.pop()
            out[node.tips] = node
            stack.extend(node.children)
        return out

    def newick(self) -> str:
        """Annotated Newick; durations are clamped differences of median ages."""
        def annotation(node: ConsensusNode) -> str:
            return ("[&support=%.6g,age_median=%.6g,age_hpd={%.6g,%.6g}]"
                    % (node.support, node.age_median, *node.age_hpd))

        def walk(node: ConsensusNode, parent_age: float | None) -> str:
            if node.is_tip:
                label = _quote_label(next(iter(node.tips)))
            else:
                kids = ",".join(walk(c, node.age_median) for c in node.children)
                label = f"({kids})"
            text = label + annotation(node)
            if parent_age is not None:
                text += ":%.12g" % max(parent_age - node.age_median, 0.0)
            return text

        return walk(self.root, None) + ";"


def _clade_age_samples(trees: Sequence[TimeTree]
                       ) -> tuple[dict[frozenset[str], list[float]], int]:
    """Ages per clade (tips, internals and root included) across a tree sample."""
    ages: dict[frozenset[str], list[float]] = {}
    for tree in trees:
        for v, names in tree.subtree_tip_sets().items():
            ages.setdefault(names, []).append(float(tree.age[v]))
    return ages, len(trees)


def majority_consensus(trees: Sequence[TimeTree],
                       threshold: float = 0.5) -> ConsensusTree:
    """Majority-rule consensus containing the clades of frequency > threshold.

    Every node is annotated with its support, median age, and 95% HPD of the
    clade age across the trees containing that clade (plain min/max range
    when fewer than 20 containing trees exist).
    """
    trees = [t[1] if isinstance(t, tuple) else t for t in trees]
    if not trees:
        raise ValueError("need at least one tree")
    if threshold < 0.5:
        raise ValueError("threshold below 0.5 can select incompatible clades")
    taxa_sets = {frozenset(t.name for t in tree.taxa) for tree in trees}
    if len(taxa_sets) != 1:
        raise ValueError("trees do not share one taxa set")
    all_tips = next(iter(taxa_sets))

    ages, n = _clade_age_samples(trees)
    selected = [c for c, a in ages.items()
                if len(c) == 1 or c == all_tips or len(a) / n > threshold]
    # nest by size: each clade's parent is the smallest selected superset
    selected.sort(key=lambda c: (len(c), sorted(c)))
    nodes: dict[frozenset[str], ConsensusNode] = {}
    for c in selected:
        nodes[c] = ConsensusNode(
            tips=c,
            support=len(ages[c]) / n,
            age_median=float(np.median(ages[c])),
            age_hpd=_hpd_or_range(ages[c]),
        )
    for c in selected:
        if c == all_tips:
            continue
        candidates = [s for s in selected if len(s) > len(c) and c < s]
        parent = min(candidates, key=lambda s: (len(s), sorted(s)))
        nodes[parent].children.append(nodes[c])
    for node in nodes.values():
        node.children.sort(key=lambda k: sorted(k.tips))
    return ConsensusTree(nodes[all_tips], n)


def clade_frequencies(trees: Sequence[TimeTree]) -> dict[frozenset[str], float]:
    """Frequency of every internal clade (root included) across the sample."""
    trees = [t[1] if isinstance(t, tuple) else t for t in trees]
    counts: dict[frozenset[str], int] = {}
    for tree in trees:
        for v, names in tree.subtree_tip_sets().items():
            if len(names) > 1:
                counts[names] = counts.get(names, 0) + 1
    return {c: k / len(trees) for c, k in counts.items()}


@dataclass(frozen=True)
class HypothesisWindows:
    """Root-age windows for the steppe and Anatolian origin hypotheses (years BP)."""

    steppe: tuple[float, float] = (5500.0, 6500.0)
    anatolian: tuple[float, float] = (8000.0, 9500.0)

    def __post_init__(self):
        if not (self.steppe[0] < self.steppe[1] <= self.anatolian[0]
                < self.anatolian[1]):
            raise ValueError(f"windows must be disjoint and ordered, got {self}")


@dataclass
class BayesFactorResult:
    value: float | None
    label: str                      # Kass-Raftery label or the * / ** sentinel
    counts: dict[str, int]

    def format(self) -> str:
        if self.value is None or not math.isfinite(self.value):
            if self.value == math.inf:
                return f"K = inf ({self.label})"
            return self.label
        return f"K = {self.value:.3f} ({self.label})"


def kass_raftery_label(k: float) -> str:
    if k > 150:
        return "Very Strong"
    if k > 20:
        return "Strong"
    if k > 3:
        return "Positive"
    if k > 1:
        return "Neutral"
    return "Negative"


def bayes_factor_root(posterior_roots, prior_roots,
                      windows: HypothesisWindows = HypothesisWindows()
                      ) -> BayesFactorResult:
    """Bayes factor for the steppe window against the Anatolian window.

    K = [Pr(root in steppe | data) / Pr(root in steppe)]
        / [Pr(root in Anatolian | data) / Pr(root in Anatolian)],
    each probability estimated as a fraction of the posterior or prior tree
    sample.  An empty prior window yields the "*" sentinel; an empty prior
    and posterior window yields "**".
    """
    post = np.asarray(posterior_roots, dtype=float)
    prior = np.asarray(prior_roots, dtype=float)
    if post.size == 0 or prior.size == 0:
        raise ValueError("need non-empty posterior and prior root samples")

    def count(arr, window):
        lo, hi = window
        return int(((arr >= lo) & (arr <= hi)).sum())

    counts = {
        "posterior_steppe": count(post, windows.steppe),
        "posterior_anatolian": count(post, windows.anatolian),
        "prior_steppe": count(prior, windows.steppe),
        "prior_anatolian": count(prior, windows.anatolian),
    }
    ps, pa = counts["posterior_steppe"], counts["posterior_anatolian"]
    qs, qa = counts["prior_steppe"], counts["prior_anatolian"]
    if (qs == 0 and ps == 0) or (qa == 0 and pa == 0):
        return BayesFactorResult(None, "**", counts)
    if qs == 0 or qa == 0:
        return BayesFactorResult(None, "*", counts)
    if pa == 0:
        return BayesFactorResult(math.inf, kass_raftery_label(math.inf), counts)
    k = (ps * qa) / (pa * qs)
    return BayesFactorResult(float(k), kass_raftery_label(k), counts)


def aicm(log_likelihoods) -> float:
    """Akaike information criterion estimated from the MCMC likelihood trace.

    AICM = 2 * s^2 - 2 * mean, with the unbiased sample variance of the
    posterior log-likelihood trace (Raftery-style estimator; lower is
    better).
    """
    arr = np.asarray(log_likelihoods, dtype=float)
    if arr.size < 2:
        raise ValueError(f"need at least 2 log-likelihood samples, got {arr.size}")
    return float(2.0 * arr.var(ddof=1) - 2.0 * arr.mean())


NEVER_PRESENT = "–"  # dash sentinel for subgroups absent from every tree


@dataclass
class SubgroupRow:
    name: str
    clade: frozenset[str]
    in_consensus: bool
    support: float
    age_median: float | None
    age_hpd: tuple[float, float] | None
    reference_age: float | None = None

    @property
    def difference(self) -> float | None:
        """Reference minus inferred median (positive = inferred too young)."""
        if self.reference_age is None or self.age_median is None:
            return None
        return self.reference_age - self.age_median


@dataclass
class NodeAgeReport:
    root: SubgroupRow
    rows: list[SubgroupRow]
    average_difference: float | None


def node_age_report(trees: Sequence[TimeTree],
                    subgroups: Mapping[str, Iterable[str]],
                    reference_ages: Mapping[str, float] | None = None,
                    threshold: float = 0.5) -> NodeAgeReport:
    """Median ages and HPDs for named subgroups over a posterior tree sample.

    Ages are summarized over the trees where the subgroup is monophyletic;
    a subgroup absent from every tree gets the dash sentinel downstream.
    The average difference uses reference - median over subgroups with a
    reference age.
    """
    trees = [t[1] if isinstance(t, tuple) else t for t in trees]
    if not trees:
        raise ValueError("need at least one tree")
    reference_ages = reference_ages or {}
    all_tips = frozenset(t.name for t in trees[0].taxa)
    ages, n = _clade_age_samples(trees)

    def build(name: str, clade: frozenset[str], ref) -> SubgroupRow:
        missing = clade - all_tips
        if missing:
            raise ValueError(f"subgroup '{name}' has unknown taxa {sorted(missing)}")
        samples = ages.get(clade, [])
        support = len(samples) / n
        if not samples:
            return SubgroupRow(name, clade, False, 0.0, None, None, ref)
        return SubgroupRow(
            name, clade, support > threshold, support,
            float(np.median(samples)), _hpd_or_range(samples), ref)

    root = build("root", all_tips, reference_ages.get("root"))
    rows = [build(name, frozenset(tips), reference_ages.get(name))
            for name, tips in subgroups.items()]
    diffs = [r.difference for r in rows if r.difference is not None]
    avg = float(np.mean(diffs)) if diffs else None
    return NodeAgeReport(root, rows, avg)


def format_node_age_report(report: NodeAgeReport) -> str:
    """Plain-text subgroup table."""
    lines = ["subgroup\tmonophyletic\tsupport\tmedian_age\thpd_lo\thpd_hi"
             "\treference_age\tdifference"]

    def fmt(row: SubgroupRow) -> str:
        if row.age_median is None:
            cells = [row.name, NEVER_PRESENT, NEVER_PRESENT, NEVER_PRESENT,
                     NEVER_PRESENT, NEVER_PRESENT]
        else:
            cells = [row.name, "yes" if row.in_consensus else "no",
                     "%.4f" % row.support, "%.6g" % row.age_median,
                     "%.6g" % row.age_hpd[0], "%.6g" % row.age_hpd[1]]
        cells.append("%.6g" % row.reference_age
                     if row.reference_age is not None else NEVER_PRESENT)
        cells.append("%.6g" % row.difference
                     if row.difference is not None else NEVER_PRESENT)
        return "\t".join(cells)

    lines.append(fmt(report.root))
    for row in report.rows:
        lines.append(fmt(row))
    if report.average_difference is not None:
        lines.append("average_difference\t%.6g" % report.average_difference)
    return "\n".join(lines) + "\n"
