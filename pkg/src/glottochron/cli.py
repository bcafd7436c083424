"""Command-line entry point.

Commands: run | summarize | bf | aicm | validate | simulate.  Every command
takes ``--config``; ``--burn-in`` overrides the config fraction, ``--force``
allows overwriting outputs, ``--threads`` parallelizes chains inside a run
(and voids bit-reproducibility).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import engine, simulate as sim, summaries
from .dataio import (CognateMatrix, ConfigError, ParseError, RunConfig,
                     parse_calibrations, parse_config, parse_matrix,
                     read_trace, read_trees, tree_to_newick, write_matrix)
from .model import make_taxa
from .substitution import NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataError(ValueError):
    """Missing or inconsistent data files."""


def _load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def _load_calibration_map(config: RunConfig, dataset_taxa=None):
    if config.calibrations is None:
        return {}
    if not os.path.exists(config.calibrations):
        raise DataError(f"calibration file not found: {config.calibrations}")
    with open(config.calibrations, "r", encoding="utf-8") as fh:
        return parse_calibrations(fh.read(), dataset_taxa)


def _load_data(config: RunConfig):
    """Return (matrix or None, taxa) with calibrations applied."""
    if config.dataset is not None:
        if not os.path.exists(config.dataset):
            raise DataError(f"dataset not found: {config.dataset}")
        with open(config.dataset, "r", encoding="utf-8") as fh:
            matrix = parse_matrix(fh.read())
        names = [t.name for t in matrix.taxa]
        calibrations = _load_calibration_map(config, names)
        if calibrations:
            matrix = matrix.with_calibrations(calibrations)
        return matrix, matrix.taxa
    calibrations = _load_calibration_map(config)
    if not calibrations:
        raise ConfigError("need a dataset, or a calibration file listing the "
                          "taxa for a prior-only run")
    if not config.prior_only:
        raise ConfigError("running without a dataset requires prior_only = true")
    return None, make_taxa(sorted(calibrations), calibrations)


def _require_prefix(config: RunConfig) -> str:
    if not config.output_prefix:
        raise ConfigError("the key 'output_prefix' is required")
    return config.output_prefix


def _refuse_overwrite(paths, force: bool) -> None:
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite {existing[0]} (pass --force to allow)")


def _burn_slice(values, burn_in: float):
    n = len(values)
    return values[int(burn_in * n):]


def _cmd_run(config: RunConfig, args) -> int:
    prefix = _require_prefix(config)
    matrix, taxa = _load_data(config)
    paths = [f"{prefix}.stats.txt"]
    for i in range(1, config.n_runs + 1):
        paths += [f"{prefix}.run{i}.trace.tsv", f"{prefix}.run{i}.trees"]
    _refuse_overwrite(paths, args.force)
    if args.threads > 1:
        print("warning: --threads > 1 voids bit-reproducibility", file=sys.stderr)
    try:
        result = engine.run_mc3(config, matrix, taxa=taxa,
                                threads=args.threads, progress=print)
    except NumericError as err:
        _dump_abort(prefix, err)
        raise
    if result.final_asdsf is not None:
        print(f"final ASDSF = {result.final_asdsf:.6f}")
        if result.final_asdsf >= 0.01:
            print("warning: runs have not converged (ASDSF >= 0.01)",
                  file=sys.stderr)
    for rr in result.runs:
        print(f"wrote {rr.trace_path} and {rr.trees_path}")
    print(f"wrote {result.stats_path}")
    return EXIT_OK


def _dump_abort(prefix: str, err: Exception) -> None:
    try:
        with open(f"{prefix}.abort.txt", "w", encoding="utf-8") as fh:
            fh.write(f"numeric abort: {err}\n")
    except OSError:
        pass


def _read_run_files(config: RunConfig, prefix: str):
    calibrations = _load_calibration_map(config) if config.calibrations else {}
    traces, tree_lists = [], []
    for i in range(1, config.n_runs + 1):
        trace_path = f"{prefix}.run{i}.trace.tsv"
        trees_path = f"{prefix}.run{i}.trees"
        for p in (trace_path, trees_path):
            if not os.path.exists(p):
                raise DataError(f"missing run output: {p}")
        traces.append(read_trace(trace_path))
        tree_lists.append(read_trees(trees_path, calibrations))
    return traces, tree_lists


def _load_subgroups(config: RunConfig):
    """Subgroup file: 'name<TAB>reference_age_or_-<TAB>taxon1,taxon2,...'."""
    if config.subgroups is None:
        return {}, {}
    if not os.path.exists(config.subgroups):
        raise DataError(f"subgroup file not found: {config.subgroups}")
    groups, refs = {}, {}
    with open(config.subgroups, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"line {lineno}: expected 'name<TAB>age<TAB>taxa'")
            name, age, taxa = parts
            groups[name] = frozenset(x.strip() for x in taxa.split(","))
            if age.strip() not in ("-", ""):
                refs[name] = float(age)
    return groups, refs


def _cmd_summarize(config: RunConfig, args) -> int:
    prefix = _require_prefix(config)
    burn_in = args.burn_in if args.burn_in is not None else config.burn_in
    if not 0 <= burn_in < 1:
        raise ConfigError(f"burn-in must be in [0, 1), got {burn_in}")
    traces, tree_lists = _read_run_files(config, prefix)
    trees = [t for run in tree_lists for t in _burn_slice(run, burn_in)]
    roots = np.concatenate([
        _burn_slice(tr["TreeHeight"], burn_in) for tr in traces])
    consensus = summaries.majority_consensus(trees)
    groups, refs = _load_subgroups(config)
    report = summaries.node_age_report(trees, groups, refs)

    consensus_path = f"{prefix}.consensus.nwk"
    report_path = f"{prefix}.report.txt"
    _refuse_overwrite([consensus_path, report_path], args.force)
    with open(consensus_path, "w", encoding="utf-8") as fh:
        fh.write(consensus.newick() + "\n")
    lo, hi = summaries._hpd_or_range(roots)
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("# glottochron summary\n")
        fh.write(f"runs: {len(traces)}\n")
        fh.write(f"burn_in: {burn_in}\n")
        fh.write(f"post_burnin_trees: {len(trees)}\n")
        fh.write("root_median: %.6g\n" % float(np.median(roots)))
        fh.write("root_hpd_95: %.6g %.6g\n" % (lo, hi))
        fh.write(summaries.format_node_age_report(report))
    print(f"wrote {consensus_path} and {report_path}")
    return EXIT_OK


def _cmd_bf(config: RunConfig, args) -> int:
    prefix = _require_prefix(config)
    if not config.prior_prefix:
        raise ConfigError("bf needs the key 'prior_prefix' (a prior-only run)")
    burn_in = args.burn_in if args.burn_in is not None else config.burn_in
    post_traces, _ = _read_run_files(config, prefix)
    prior_traces = []
    for i in range(1, config.n_runs + 1):
        path = f"{config.prior_prefix}.run{i}.trace.tsv"
        if not os.path.exists(path):
            raise DataError(f"missing prior run output: {path}")
        prior_traces.append(read_trace(path))
    posterior = np.concatenate(
        [_burn_slice(tr["TreeHeight"], burn_in) for tr in post_traces])
    prior = np.concatenate(
        [_burn_slice(tr["TreeHeight"], burn_in) for tr in prior_traces])
    windows = summaries.HypothesisWindows(config.steppe_window,
                                          config.anatolian_window)
    result = summaries.bayes_factor_root(posterior, prior, windows)
    print(result.format())
    with open(f"{prefix}.bf.txt", "w", encoding="utf-8") as fh:
        fh.write(result.format() + "\n")
        for key in sorted(result.counts):
            fh.write(f"{key}: {result.counts[key]}\n")
    return EXIT_OK


def _cmd_aicm(config: RunConfig, args) -> int:
    prefix = _require_prefix(config)
    burn_in = args.burn_in if args.burn_in is not None else config.burn_in
    traces, _ = _read_run_files(config, prefix)
    pooled = []
    for i, tr in enumerate(traces, start=1):
        lnl = _burn_slice(tr["LnL"], burn_in)
        pooled.append(lnl)
        print(f"run {i} AICM = %.6g" % summaries.aicm(lnl))
    value = summaries.aicm(np.concatenate(pooled))
    print("pooled AICM = %.6g" % value)
    return EXIT_OK


def _cmd_validate(config: RunConfig, args) -> int:
    matrix, taxa = _load_data(config)
    problems = list(config.validate())
    if matrix is not None:
        problems += matrix.validate(config.allow_polymorphism)
    groups, _ = _load_subgroups(config)
    names = {t.name for t in taxa}
    for name, tips in groups.items():
        unknown = tips - names
        if unknown:
            problems.append(f"subgroup '{name}' has unknown taxa {sorted(unknown)}")
    if problems:
        for p in problems:
            print(p)
        return EXIT_DATA
    print(f"ok: {len(taxa)} taxa"
          + (f", {matrix.n_sites} sites" if matrix is not None else ""))
    return EXIT_OK


def _cmd_simulate(config: RunConfig, args) -> int:
    prefix = _require_prefix(config)
    calibrations = _load_calibration_map(config)
    if not calibrations:
        raise ConfigError("simulate needs a calibration file naming the taxa")
    taxa = make_taxa(sorted(calibrations), calibrations)
    paths = [f"{prefix}.sim.matrix.txt", f"{prefix}.sim.tree.nwk",
             f"{prefix}.sim.params.tsv"]
    _refuse_overwrite(paths, args.force)
    result = sim.simulate(config, taxa)
    write_matrix(result.matrix, paths[0])
    with open(paths[1], "w", encoding="utf-8") as fh:
        fh.write(tree_to_newick(result.true_state.tree) + "\n")
    with open(paths[2], "w", encoding="utf-8") as fh:
        fh.write("parameter\tvalue\n")
        fh.write(f"TrueRootAge\t{result.true_root_age!r}\n")
        for key, val in sorted(result.true_state.scalar_parameters().items()):
            fh.write(f"True{key}\t{float(val)!r}\n")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "summarize": _cmd_summarize,
    "bf": _cmd_bf,
    "aicm": _cmd_aicm,
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="glottochron",
        description="Bayesian time-tree inference for binary cognate data")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--burn-in", type=float, default=None, dest="burn_in",
                        help="burn-in fraction override (default from config)")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing output files")
    parser.add_argument("--threads", type=int, default=1,
                        help="chains per run in parallel (>1 voids "
                             "bit-reproducibility)")
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
