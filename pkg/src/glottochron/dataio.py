"""Parsing and writing of every on-disk format.

Formats
-------
* cognate matrix: line 1 ``ntax nchar``, then ``name<TAB>chars`` rows with
  chars in ``{0, 1, ?}``
* calibrations: CSV lines ``name,min_age,max_age`` in years BP
* run config: ``key = value`` lines; unknown keys are errors
* trace: first line ``# glottochron trace``, then a tab-separated table whose
  header starts with ``Sample``
* trees: ``# glottochron trees`` header, then ``iteration<TAB>newick`` rows;
  Newick branch lengths are durations in years (sampled ancestors appear as
  zero-length tips)
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .model import CalibrationPrior, Taxon, TimeTree, make_taxa

MISSING = 2  # cell code for '?'

_CHAR_CODES = {"0": 0, "1": 1, "?": MISSING}
_CODE_CHARS = {v: k for k, v in _CHAR_CODES.items()}


class ParseError(ValueError):
    """Malformed input file; the message carries a line or position."""


class ConfigError(ValueError):
    """Bad or missing run-configuration key."""


@dataclass
class CognateClassTable:
    """Raw cognate-class assignments: one class id (or None) per taxon and meaning.

    A polymorphic entry (two words for one meaning) may be given as a
    set/tuple of class ids; ``binarize`` rejects those unless explicitly
    allowed.
    """

    taxa: Sequence[str]
    meanings: Sequence[str]
    entries: Mapping[tuple[str, str], object]  # (taxon, meaning) -> id | ids | None


@dataclass
class CognateMatrix:
    """Binary trait matrix with missing cells.

    ``sites`` is (n_taxa, n_sites) int8 with codes 0, 1 and ``MISSING``.
    ``site_meaning`` maps each column to a meaning index when the matrix came
    from a cognate-class table; matrices read from disk have no block
    structure and carry ``None``.
    """

    taxa: tuple[Taxon, ...]
    sites: np.ndarray
    site_meaning: np.ndarray | None = None
    meanings: tuple[str, ...] | None = None

    @property
    def n_taxa(self) -> int:
        return self.sites.shape[0]

    @property
    def n_sites(self) -> int:
        return self.sites.shape[1]

    def with_calibrations(self, calibrations: Mapping[str, CalibrationPrior]) -> "CognateMatrix":
        taxa = tuple(
            Taxon(t.id, t.name, calibrations.get(t.name, CalibrationPrior()))
            for t in self.taxa
        )
        return CognateMatrix(taxa, self.sites, self.site_meaning, self.meanings)

    def validate(self, allow_polymorphism: bool = False) -> list[str]:
        v = []
        if not np.isin(self.sites, (0, 1, MISSING)).all():
            v.append("matrix: cell codes must be 0, 1 or missing")
        if self.site_meaning is not None:
            for m in np.unique(self.site_meaning):
                block = self.sites[:, self.site_meaning == m]
                for row, taxon in zip(block, self.taxa):
                    n_missing = int((row == MISSING).sum())
                    if n_missing not in (0, row.shape[0]):
                        v.append(f"matrix: taxon '{taxon.name}' partially missing "
                                 f"in meaning block {m}")
                    elif n_missing == 0:
                        ones = int((row == 1).sum())
                        if ones == 0 or (ones > 1 and not allow_polymorphism):
                            v.append(f"matrix: taxon '{taxon.name}' has {ones} ones "
                                     f"in meaning block {m}")
        return v


def binarize(table: CognateClassTable, allow_polymorphism: bool = False) -> CognateMatrix:
    """Expand a cognate-class table into a binary matrix.

    One column per (meaning, class) pair, ordered by meaning then class id;
    a taxon missing for a meaning gets '?' across the whole block.
    """
    if not table.meanings or not table.taxa:
        raise ParseError("cognate table is empty")
    taxa = make_taxa(list(table.taxa))
    columns: list[np.ndarray] = []
    col_meaning: list[int] = []
    for m_idx, meaning in enumerate(table.meanings):
        per_taxon: dict[str, frozenset] = {}
        class_ids: set = set()
        for name in table.taxa:
            entry = table.entries.get((name, meaning))
            if entry is None:
                continue
            ids = frozenset(entry) if isinstance(entry, (set, frozenset, tuple, list)) \
                else frozenset((entry,))
            if len(ids) == 0:
                continue
            if len(ids) > 1 and not allow_polymorphism:
                raise ParseError(
                    f"polymorphic entry for taxon '{name}', meaning '{meaning}' "
                    f"(enable allow_polymorphism to accept)")
            per_taxon[name] = ids
            class_ids |= ids
        if not class_ids:
            raise ParseError(f"meaning '{meaning}' has no attested cognate class")
        for cid in sorted(class_ids):
            col = np.full(len(table.taxa), MISSING, dtype=np.int8)
            for row, name in enumerate(table.taxa):
                ids = per_taxon.get(name)
                if ids is not None:
                    col[row] = 1 if cid in ids else 0
            columns.append(col)
            col_meaning.append(m_idx)
    sites = np.stack(columns, axis=1)
    return CognateMatrix(taxa, sites, np.asarray(col_meaning, dtype=np.int32),
                         tuple(table.meanings))


def _read_text(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read()
    return str(source)


def _open_sink(sink):
    if hasattr(sink, "write"):
        return sink, False
    return open(sink, "w", encoding="utf-8"), True


def parse_matrix(text) -> CognateMatrix:
    """Parse the cognate matrix format; raises ParseError with the line number."""
    raw = _read_text(text)
    lines = raw.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("line 1: missing 'ntax nchar' header")
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("line 1: header must be 'ntax nchar'")
    try:
        ntax, nchar = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError("line 1: header must be two integers") from None
    if ntax <= 0 or nchar <= 0:
        raise ParseError("line 1: ntax and nchar must be positive")

    names: list[str] = []
    rows: list[list[int]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ParseError(f"line {lineno}: expected 'name<TAB>characters'")
        name, chars = line.split("\t", 1)
        name = name.strip()
        chars = chars.strip()
        if name in names:
            raise ParseError(f"line {lineno}: duplicate taxon '{name}'")
        if len(chars) != nchar:
            raise ParseError(
                f"line {lineno}: taxon '{name}' has {len(chars)} characters, "
                f"header says {nchar}")
        row = []
        for pos, ch in enumerate(chars, start=1):
            if ch not in _CHAR_CODES:
                raise ParseError(
                    f"line {lineno}: bad character '{ch}' at site {pos} "
                    f"(expected 0, 1 or ?)")
            row.append(_CHAR_CODES[ch])
        names.append(name)
        rows.append(row)
    if len(names) != ntax:
        raise ParseError(f"line {len(lines)}: found {len(names)} taxa, header says {ntax}")
    return CognateMatrix(make_taxa(names), np.asarray(rows, dtype=np.int8))


def write_matrix(matrix: CognateMatrix, sink) -> None:
    fh, close = _open_sink(sink)
    try:
        fh.write(f"{matrix.n_taxa} {matrix.n_sites}\n")
        for t, row in zip(matrix.taxa, matrix.sites):
            chars = "".join(_CODE_CHARS[int(c)] for c in row)
            fh.write(f"{t.name}\t{chars}\n")
    finally:
        if close:
            fh.close()


def parse_calibrations(text, dataset_taxa: Iterable[str] | None = None
                       ) -> dict[str, CalibrationPrior]:
    """Parse 'name,min_age,max_age' CSV lines.

    With ``dataset_taxa`` given, every dataset taxon is resolved (unlisted
    taxa default to extant (0, 0)) and unknown names are an error.
    """
    out: dict[str, CalibrationPrior] = {}
    for lineno, line in enumerate(_read_text(text).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 'name,min_age,max_age'")
        name = parts[0]
        try:
            lo, hi = float(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"line {lineno}: ages must be numbers") from None
        if lo > hi:
            raise ParseError(f"line {lineno}: taxon '{name}' has min_age {lo} > max_age {hi}")
        if name in out:
            raise ParseError(f"line {lineno}: duplicate calibration for '{name}'")
        out[name] = CalibrationPrior(lo, hi)
    if dataset_taxa is not None:
        dataset = list(dataset_taxa)
        for name in out:
            if name not in dataset:
                raise ParseError(f"calibrated taxon '{name}' is not in the dataset")
        for name in dataset:
            out.setdefault(name, CalibrationPrior())
    return out


@dataclass
class RunConfig:
    """Everything a reproducible run needs; mirrors the config-file keys."""

    tree_prior: str = "fbd"                  # coalescent | fbd | uniform
    dataset: str | None = None
    calibrations: str | None = None
    chain_length: int = 0
    thin: int = 1000
    n_runs: int = 2
    n_chains: int = 3
    heat_delta: float = 0.1
    seed: int = 1
    n_extant_family: int = 400
    root_bounds: tuple[float, float] = (4000.0, 25000.0)
    prior_only: bool = False
    output_prefix: str | None = None
    burn_in: float = 0.25
    progress_every: int = 0                  # 0 = auto (chain_length // 10)
    auto_tune: bool = True
    allow_polymorphism: bool = False
    ascertainment: str = "global"            # global | per-block
    subgroups: str | None = None
    prior_prefix: str | None = None
    steppe_window: tuple[float, float] = (5500.0, 6500.0)
    anatolian_window: tuple[float, float] = (8000.0, 9500.0)
    weight_topology: float = 0.30
    weight_node_ages: float = 0.30
    weight_tip_ages: float = 0.10
    weight_scalars: float = 0.20
    weight_branch_rates: float = 0.10
    weight_ancestor_toggle: float = 0.05
    sim_sites: int = 200
    sim_tree_iterations: int = 20000
    sim_clock_rate: float | None = None
    sim_alpha: float | None = None
    sim_pi1: float | None = None
    sim_igr_variance: float | None = None

    def validate(self) -> list[str]:
        v = []
        if self.tree_prior not in ("coalescent", "fbd", "uniform"):
            v.append(f"tree_prior must be coalescent, fbd or uniform, got '{self.tree_prior}'")
        if self.chain_length <= 0:
            v.append("chain_length must be > 0")
        if self.thin <= 0:
            v.append("thin must be > 0")
        if self.n_runs < 1 or self.n_chains < 1:
            v.append("n_runs and n_chains must be >= 1")
        if self.heat_delta <= 0:
            v.append("heat_delta must be > 0")
        if not self.root_bounds[0] < self.root_bounds[1]:
            v.append(f"root_bounds must be 'min max' with min < max, got {self.root_bounds}")
        if not 0 <= self.burn_in < 1:
            v.append("burn_in must be in [0, 1)")
        if self.ascertainment not in ("global", "per-block"):
            v.append(f"ascertainment must be global or per-block, got '{self.ascertainment}'")
        for name in ("weight_topology", "weight_node_ages", "weight_tip_ages",
                     "weight_scalars", "weight_branch_rates", "weight_ancestor_toggle"):
            if getattr(self, name) < 0:
                v.append(f"{name} must be >= 0")
        for name in ("steppe_window", "anatolian_window"):
            lo, hi = getattr(self, name)
            if lo >= hi:
                v.append(f"{name} must be 'min max' with min < max")
        return v


_BOOL_VALUES = {"true": True, "false": False, "yes": True, "no": False,
                "1": True, "0": False}


def _parse_config_value(name: str, kind, value: str):
    if kind == "bool":
        if value.lower() not in _BOOL_VALUES:
            raise ConfigError(f"key '{name}': expected true/false, got '{value}'")
        return _BOOL_VALUES[value.lower()]
    if kind == "int":
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"key '{name}': expected an integer, got '{value}'") from None
    if kind == "float":
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"key '{name}': expected a number, got '{value}'") from None
    if kind == "pair":
        parts = value.split()
        if len(parts) != 2:
            raise ConfigError(f"key '{name}': expected two numbers, got '{value}'")
        return (float(parts[0]), float(parts[1]))
    return value


_CONFIG_KINDS = {
    "tree_prior": "str", "dataset": "str", "calibrations": "str",
    "chain_length": "int", "thin": "int", "n_runs": "int", "n_chains": "int",
    "heat_delta": "float", "seed": "int", "n_extant_family": "int",
    "root_bounds": "pair", "prior_only": "bool", "output_prefix": "str",
    "burn_in": "float", "progress_every": "int", "auto_tune": "bool",
    "allow_polymorphism": "bool", "ascertainment": "str", "subgroups": "str",
    "prior_prefix": "str", "steppe_window": "pair", "anatolian_window": "pair",
    "weight_topology": "float", "weight_node_ages": "float",
    "weight_tip_ages": "float", "weight_scalars": "float",
    "weight_branch_rates": "float", "weight_ancestor_toggle": "float",
    "sim_sites": "int", "sim_tree_iterations": "int",
    "sim_clock_rate": "float", "sim_alpha": "float", "sim_pi1": "float",
    "sim_igr_variance": "float",
}

_PATH_KEYS = ("dataset", "calibrations", "output_prefix", "subgroups", "prior_prefix")


def parse_config(text, base_dir: str | None = None) -> RunConfig:
    """Parse 'key = value' lines into a RunConfig; unknown keys are errors.

    Relative paths are resolved against ``base_dir`` when given.  An fbd run
    must state ``n_extant_family`` explicitly (the extant sampling fraction
    depends on it).
    """
    cfg = RunConfig()
    seen: set[str] = set()
    for lineno, line in enumerate(_read_text(text).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KINDS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"line {lineno}: key '{key}' given twice")
        seen.add(key)
        setattr(cfg, key, _parse_config_value(key, _CONFIG_KINDS[key], value))
    if cfg.tree_prior == "fbd" and "n_extant_family" not in seen:
        raise ConfigError("tree_prior = fbd requires the key 'n_extant_family'")
    if base_dir:
        for key in _PATH_KEYS:
            val = getattr(cfg, key)
            if val is not None and not os.path.isabs(val):
                setattr(cfg, key, os.path.join(base_dir, val))
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


@dataclass
class TraceSample:
    """One thinned MCMC record."""

    iteration: int
    log_likelihood: float
    log_prior: float
    tree_height: float
    scalars: dict[str, float] = field(default_factory=dict)


TRACE_MAGIC = "# glottochron trace"
TREES_MAGIC = "# glottochron trees"


def write_trace(samples: Sequence[TraceSample], sink) -> None:
    """Write a Tracer-compatible tab-separated trace.

    Column order is fixed: Sample, LnL, LnPrior, TreeHeight, then scalar
    parameters alphabetically.
    """
    samples = list(samples)
    names: list[str] = sorted(samples[0].scalars) if samples else []
    for s in samples:
        if sorted(s.scalars) != names:
            raise ValueError("trace samples do not share one schema")
    fh, close = _open_sink(sink)
    try:
        fh.write(TRACE_MAGIC + "\n")
        fh.write("\t".join(["Sample", "LnL", "LnPrior", "TreeHeight"] + names) + "\n")
        for s in samples:
            row = [str(s.iteration), repr(float(s.log_likelihood)),
                   repr(float(s.log_prior)), repr(float(s.tree_height))]
            row += [repr(float(s.scalars[k])) for k in names]
            fh.write("\t".join(row) + "\n")
    finally:
        if close:
            fh.close()


def read_trace(source) -> dict[str, np.ndarray]:
    """Read a trace written by ``write_trace`` into column arrays."""
    lines = _read_text(source).splitlines()
    if not lines or lines[0].strip() != TRACE_MAGIC:
        raise ParseError(f"line 1: expected '{TRACE_MAGIC}'")
    if len(lines) < 2 or not lines[1].startswith("Sample"):
        raise ParseError("line 2: expected a header starting with 'Sample'")
    header = lines[1].split("\t")
    columns: list[list[float]] = [[] for _ in header]
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ParseError(f"line {lineno}: {len(parts)} fields, header has {len(header)}")
        for col, part in zip(columns, parts):
            col.append(float(part))
    return {name: np.asarray(col) for name, col in zip(header, columns)}


_NEWICK_SPECIALS = set("(),:;[]'\" \t\n")


def _quote_label(name: str) -> str:
    if name and not (set(name) & _NEWICK_SPECIALS):
        return name
    return "'" + name.replace("'", "''") + "'"


def _format_duration(d: float) -> str:
    return "%.12g" % d


def tree_to_newick(tree: TimeTree) -> str:
    """Newick string with branch lengths as durations in years."""
    parts: list[str] = []

    def walk(v: int, is_root: bool) -> None:
        if tree.is_tip(v):
            parts.append(_quote_label(tree.taxa[tree.taxon[v]].name))
        else:
            parts.append("(")
            walk(int(tree.left[v]), False)
            parts.append(",")
            walk(int(tree.right[v]), False)
            parts.append(")")
        if not is_root:
            parts.append(":" + _format_duration(
                float(tree.age[tree.parent[v]] - tree.age[v])))

    walk(tree.root, True)
    parts.append(";")
    return "".join(parts)


class _NewickCursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\n\r":
            self.pos += 1
        if self.pos >= len(self.text):
            raise ParseError(f"position {self.pos}: unexpected end of Newick string")
        return self.text[self.pos]

    def skip_comments(self) -> None:
        while self.pos < len(self.text) and self.peek() == "[":
            depth = 0
            while self.pos < len(self.text):
                ch = self.text[self.pos]
                self.pos += 1
                if ch == "[":
                    depth += 1
                elif ch == "]":
                    depth -= 1
                    if depth == 0:
                        break
            else:
                raise ParseError(f"position {self.pos}: unterminated comment")

    def read_label(self) -> str:
        ch = self.peek()
        if ch == "'":
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(self.text):
                    raise ParseError(f"position {self.pos}: unterminated quoted label")
                ch = self.text[self.pos]
                self.pos += 1
                if ch == "'":
                    if self.pos < len(self.text) and self.text[self.pos] == "'":
                        out.append("'")
                        self.pos += 1
                    else:
                        return "".join(out)
                else:
                    out.append(ch)
        start = self.pos
        while (self.pos < len(self.text)
               and self.text[self.pos] not in "(),:;[]" and not self.text[self.pos].isspace()):
            self.pos += 1
        if self.pos == start:
            raise ParseError(f"position {start}: expected a label")
        return self.text[start:self.pos]

    def read_number(self) -> float:
        start = self.pos
        while (self.pos < len(self.text)
               and (self.text[self.pos] in "+-.eE" or self.text[self.pos].isdigit())):
            self.pos += 1
        try:
            return float(self.text[start:self.pos])
        except ValueError:
            raise ParseError(f"position {start}: expected a branch length") from None


def parse_newick(text: str,
                 calibrations: Mapping[str, CalibrationPrior] | None = None) -> TimeTree:
    """Parse a Newick string into a TimeTree.

    Branch lengths are durations in years.  Node ages are reconstructed by
    anchoring one tip of exactly known age: with ``calibrations`` given, the
    tip with the narrowest bounds (midpoint if not exact); otherwise the
    deepest tip is assumed extant (age 0).  Zero-duration tips become sampled
    ancestors.  Bracketed comments are skipped.
    """
    cur = _NewickCursor(text)
    # nodes collected as (label | None, children indices, duration)
    labels: list[str | None] = []
    kids: list[list[int]] = []
    durs: list[float] = []

    def new_node() -> int:
        labels.append(None)
        kids.append([])
        durs.append(0.0)
        return len(labels) - 1

    def parse_clade() -> int:
        cur.skip_comments()
        idx = new_node()
        if cur.peek() == "(":
            cur.pos += 1
            while True:
                kids[idx].append(parse_clade())
                cur.skip_comments()
                ch = cur.peek()
                if ch == ",":
                    cur.pos += 1
                    continue
                if ch == ")":
                    cur.pos += 1
                    break
                raise ParseError(f"position {cur.pos}: expected ',' or ')'")
            if len(kids[idx]) != 2:
                raise ParseError(
                    f"position {cur.pos}: internal node with {len(kids[idx])} children "
                    f"(only binary trees are supported)")
            cur.skip_comments()
            if cur.pos < len(cur.text) and cur.peek() not in "(),:;[":
                labels[idx] = cur.read_label()
        else:
            labels[idx] = cur.read_label()
        cur.skip_comments()
        if cur.pos < len(cur.text) and cur.peek() == ":":
            cur.pos += 1
            cur.skip_comments()
            durs[idx] = cur.read_number()
        return idx

    root_idx = parse_clade()
    cur.skip_comments()
    if cur.peek() != ";":
        raise ParseError(f"position {cur.pos}: expected ';'")

    tip_ids = [i for i in range(len(labels)) if not kids[i]]
    names = []
    for i in tip_ids:
        if labels[i] is None:
            raise ParseError("tip without a label")
        names.append(labels[i])
    if len(set(names)) != len(names):
        raise ParseError("duplicate tip labels")
    taxa = make_taxa(sorted(names), calibrations or {})
    by_name = {t.name: t for t in taxa}

    n = len(labels)
    parent = np.full(n, -1, dtype=np.int32)
    left = np.full(n, -1, dtype=np.int32)
    right = np.full(n, -1, dtype=np.int32)
    taxon = np.full(n, -1, dtype=np.int32)
    depth = np.zeros(n)
    for i in range(n):
        if kids[i]:
            left[i], right[i] = kids[i]
            for c in kids[i]:
                parent[c] = i
        else:
            taxon[i] = by_name[labels[i]].id
    # depths from the root, then ages via an anchored tip
    order = [root_idx]
    for v in order:
        for c in kids[v]:
            depth[c] = depth[v] + durs[c]
            order.append(c)
    if calibrations:
        anchor = min(tip_ids, key=lambda i: (by_name[labels[i]].calibration.width,
                                             labels[i]))
        root_age = by_name[labels[anchor]].calibration.midpoint + depth[anchor]
    else:
        root_age = float(depth[tip_ids].max())
    age = root_age - depth
    sa = np.zeros(n, dtype=bool)
    for i in tip_ids:
        if parent[i] >= 0 and durs[i] == 0.0:
            sa[i] = True
    return TimeTree(taxa, parent, left, right, age, taxon, sa, root_idx)


def write_trees(trees: Iterable[tuple[int, TimeTree]], sink) -> None:
    fh, close = _open_sink(sink)
    try:
        fh.write(TREES_MAGIC + "\n")
        for iteration, tree in trees:
            fh.write(f"{iteration}\t{tree_to_newick(tree)}\n")
    finally:
        if close:
            fh.close()


def read_trees(source,
               calibrations: Mapping[str, CalibrationPrior] | None = None
               ) -> list[tuple[int, TimeTree]]:
    lines = _read_text(source).splitlines()
    if not lines or lines[0].strip() != TREES_MAGIC:
        raise ParseError(f"line 1: expected '{TREES_MAGIC}'")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ParseError(f"line {lineno}: expected 'iteration<TAB>newick'")
        it, nwk = line.split("\t", 1)
        try:
            iteration = int(it)
        except ValueError:
            raise ParseError(f"line {lineno}: bad iteration '{it}'") from None
        out.append((iteration, parse_newick(nwk, calibrations)))
    return out
