import io

import numpy as np
import pytest

from glottochron import (CalibrationPrior, binarize, build_tree, make_taxa,
                         parse_calibrations, parse_config, parse_matrix,
                         parse_newick, read_trace, read_trees, tree_to_newick,
                         write_matrix, write_trace, write_trees)
from glottochron.dataio import (MISSING, CognateClassTable, ConfigError,
                                ParseError, TraceSample)


def swadesh_excerpt():
    """ALL/AND cognate classes for the five-language worked example."""
    taxa = ["English", "German", "French", "Spanish", "Swedish"]
    entries = {
        ("English", "ALL"): 1, ("German", "ALL"): 1, ("French", "ALL"): 2,
        ("Spanish", "ALL"): 2, ("Swedish", "ALL"): 1,
        ("English", "AND"): 1, ("German", "AND"): 1, ("French", "AND"): 2,
        ("Spanish", "AND"): 2, ("Swedish", "AND"): 3,
    }
    return CognateClassTable(taxa, ["ALL", "AND"], entries)


class TestBinarize:
    def test_worked_example_matches_expected_matrix(self):
        m = binarize(swadesh_excerpt())
        assert m.n_sites == 5
        rows = {t.name: "".join(str(c) for c in m.sites[i])
                for i, t in enumerate(m.taxa)}
        assert rows["English"] == "10100"
        assert rows["German"] == "10100"
        assert rows["French"] == "01010"
        assert rows["Spanish"] == "01010"
        assert rows["Swedish"] == "10001"
        assert list(m.site_meaning) == [0, 0, 1, 1, 1]
        assert m.validate() == []

    def test_single_class_gives_all_one_column(self):
        table = CognateClassTable(["A", "B"], ["GO"],
                                  {("A", "GO"): 7, ("B", "GO"): 7})
        m = binarize(table)
        assert m.n_sites == 1
        assert (m.sites == 1).all()

    def test_missing_taxon_gets_question_block(self):
        table = swadesh_excerpt()
        entries = dict(table.entries)
        del entries[("Swedish", "AND")]
        m = binarize(CognateClassTable(table.taxa, table.meanings, entries))
        swedish = m.sites[4]
        assert list(swedish[2:]) == [MISSING, MISSING]
        assert list(swedish[:2]) == [1, 0]

    def test_empty_meaning_rejected(self):
        table = CognateClassTable(["A", "B"], ["GO"], {})
        with pytest.raises(ParseError, match="GO"):
            binarize(table)

    def test_polymorphism_rejected_unless_allowed(self):
        table = CognateClassTable(["A", "B"], ["GO"],
                                  {("A", "GO"): {1, 2}, ("B", "GO"): 1})
        with pytest.raises(ParseError, match="polymorphic"):
            binarize(table)
        m = binarize(table, allow_polymorphism=True)
        assert list(m.sites[0]) == [1, 1]
        assert m.validate(allow_polymorphism=True) == []
        assert m.validate() != []

    def test_class_reconstruction_roundtrip(self):
        m = binarize(swadesh_excerpt())
        # each block's argmax recovers the class partition up to relabeling
        for meaning in np.unique(m.site_meaning):
            block = m.sites[:, m.site_meaning == meaning]
            labels = block.argmax(axis=1)
            ref = {("English", 0), ("German", 0), ("Swedish", 0)} \
                if meaning == 0 else {("English", 0), ("German", 0)}
            got = {(t.name, int(l)) for t, l in zip(m.taxa, labels)}
            assert {x for x in got if x[1] == 0} >= ref


class TestMatrixFormat:
    def test_parse_simple(self):
        m = parse_matrix("2 3\nA\t011\nB\t0?1\n")
        assert m.n_taxa == 2 and m.n_sites == 3
        assert m.sites[1, 1] == MISSING

    def test_char_count_mismatch_names_line(self):
        with pytest.raises(ParseError, match="line 3"):
            parse_matrix("2 4\nA\t0110\nB\t011\n")

    def test_bad_character(self):
        with pytest.raises(ParseError, match="bad character"):
            parse_matrix("1 3\nA\t0x1\n")

    def test_duplicate_taxon(self):
        with pytest.raises(ParseError, match="duplicate taxon"):
            parse_matrix("2 1\nA\t0\nA\t1\n")

    def test_taxon_count_mismatch(self):
        with pytest.raises(ParseError, match="header says 3"):
            parse_matrix("3 1\nA\t0\nB\t1\n")

    def test_roundtrip_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n, s = rng.integers(2, 9), rng.integers(1, 30)
            sites = rng.choice([0, 1, MISSING], size=(n, s)).astype(np.int8)
            taxa = make_taxa([f"t{i}" for i in range(n)])
            from glottochron.dataio import CognateMatrix
            m = CognateMatrix(taxa, sites)
            buf = io.StringIO()
            write_matrix(m, buf)
            back = parse_matrix(buf.getvalue())
            assert np.array_equal(back.sites, m.sites)
            assert [t.name for t in back.taxa] == [t.name for t in m.taxa]


class TestCalibrations:
    def test_table_values(self):
        text = "Hittite,3500,3600\nGothic,1625,1675\n"
        cals = parse_calibrations(text)
        assert cals["Hittite"] == CalibrationPrior(3500, 3600)
        assert cals["Gothic"] == CalibrationPrior(1625, 1675)

    def test_extant_default_with_dataset(self):
        cals = parse_calibrations("Hittite,3500,3600\n",
                                  dataset_taxa=["Hittite", "English"])
        assert cals["English"] == CalibrationPrior(0, 0)

    def test_min_over_max_is_error(self):
        with pytest.raises(ParseError, match="Hittite"):
            parse_calibrations("Hittite,3700,3600\n")

    def test_unknown_taxon_named(self):
        with pytest.raises(ParseError, match="Gothic"):
            parse_calibrations("Gothic,1625,1675\n", dataset_taxa=["English"])


class TestConfig:
    def test_defaults_and_parse(self):
        cfg = parse_config("tree_prior = uniform\nchain_length = 1000\n"
                           "output_prefix = out\n")
        assert cfg.n_runs == 2 and cfg.n_chains == 3 and cfg.thin == 1000
        assert cfg.root_bounds == (4000.0, 25000.0)
        assert cfg.burn_in == 0.25 and cfg.n_extant_family == 400

    def test_unknown_key_is_error(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("tree_prior = uniform\nchain_length = 10\nbogus = 1\n")

    def test_fbd_requires_explicit_family_size(self):
        with pytest.raises(ConfigError, match="n_extant_family"):
            parse_config("tree_prior = fbd\nchain_length = 10\n")
        cfg = parse_config("tree_prior = fbd\nchain_length = 10\n"
                           "n_extant_family = 400\n")
        assert cfg.n_extant_family == 400

    def test_pair_and_bool_values(self):
        cfg = parse_config("tree_prior = uniform\nchain_length = 5\n"
                           "root_bounds = 1000 2000\nprior_only = true\n")
        assert cfg.root_bounds == (1000.0, 2000.0) and cfg.prior_only

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="twice"):
            parse_config("thin = 10\nthin = 20\ntree_prior = uniform\n"
                         "chain_length = 5\n")

    def test_invariants_checked(self):
        with pytest.raises(ConfigError, match="chain_length"):
            parse_config("tree_prior = uniform\n")
        with pytest.raises(ConfigError, match="root_bounds"):
            parse_config("tree_prior = uniform\nchain_length = 5\n"
                         "root_bounds = 9 2\n")


class TestTrace:
    def test_header_and_empty(self):
        buf = io.StringIO()
        write_trace([], buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# glottochron trace"
        assert lines[1].startswith("Sample")
        assert len(lines) == 2

    def test_single_sample_row(self):
        buf = io.StringIO()
        write_trace([TraceSample(1000, -12.5, -3.25, 8000.0,
                                 {"Alpha": 1.0, "ClockRate": 2e-4})], buf)
        lines = buf.getvalue().splitlines()
        assert lines[1] == "Sample\tLnL\tLnPrior\tTreeHeight\tAlpha\tClockRate"
        assert lines[2].startswith("1000\t-12.5\t")

    def test_roundtrip(self):
        samples = [TraceSample(i * 10, -1.5 * i, -0.25, 100.0 + i,
                               {"B": i * 0.5, "A": -i}) for i in range(3)]
        buf = io.StringIO()
        write_trace(samples, buf)
        cols = read_trace(buf.getvalue())
        assert list(cols["Sample"]) == [0, 10, 20]
        assert list(cols["A"]) == [0, -1, -2]
        assert cols["LnL"][2] == -3.0

    def test_schema_mismatch_rejected(self):
        samples = [TraceSample(0, 0, 0, 1, {"A": 1}),
                   TraceSample(1, 0, 0, 1, {"B": 1})]
        with pytest.raises(ValueError, match="schema"):
            write_trace(samples, io.StringIO())

    def test_bad_magic(self):
        with pytest.raises(ParseError, match="glottochron trace"):
            read_trace("Sample\tLnL\n")


class TestNewick:
    def test_two_tip_output(self):
        taxa = make_taxa(["A", "B"])
        tree = build_tree(taxa, (("A", 0.0), ("B", 0.0), 100.0))
        assert tree_to_newick(tree) == "(A:100,B:100);"

    def test_parse_reconstructs_ages(self):
        tree = parse_newick("(A:100,B:100);")
        assert tree.age[tree.root] == pytest.approx(100.0)
        assert validate_ages_zero_tips(tree)

    def test_quoted_labels(self):
        cals = {"Old English": CalibrationPrior(950, 1050)}
        taxa = make_taxa(["English", "Old English"], cals)
        tree = build_tree(taxa, (("English", 0.0), ("Old English", 1000.0), 1500.0))
        text = tree_to_newick(tree)
        assert "'Old English'" in text
        back = parse_newick(text, {"Old English": CalibrationPrior(950, 1050),
                                   "English": CalibrationPrior()})
        assert back.age[back.root] == pytest.approx(1500.0)

    def test_comments_are_skipped(self):
        tree = parse_newick("(A[&support=1]:100,B[&x={1,2}]:100)[&root]:0;")
        assert tree.n_tips == 2

    def test_malformed_reports_position(self):
        with pytest.raises(ParseError, match="position"):
            parse_newick("(A:100,B:100")

    def test_random_tree_roundtrip(self):
        from glottochron.engine import random_tree
        rng = np.random.default_rng(3)
        for trial in range(10):
            n = 20
            ages = np.where(rng.random(n) < 0.3,
                            rng.uniform(100, 3000, n), 0.0)
            names = [f"t{i}" for i in range(n)]
            cals = {nm: CalibrationPrior(a, a) for nm, a in zip(names, ages)}
            taxa = make_taxa(names, cals)
            tree = random_tree(taxa, [t.calibration.midpoint for t in taxa],
                               rng.uniform(4000, 9000), rng)
            text = tree_to_newick(tree)
            back = parse_newick(text, cals)
            assert clade_ages(back) == pytest.approx(clade_ages(tree),
                                                     rel=1e-6, abs=1e-6)

    def test_sampled_ancestor_roundtrip(self):
        cals = {"F": CalibrationPrior(500, 500)}
        taxa = make_taxa(["A", "B", "F"], cals)
        tree = build_tree(taxa, ((("A", 0.0), ("F", 500.0), 500.0),
                                 ("B", 0.0), 900.0))
        text = tree_to_newick(tree)
        back = parse_newick(text, cals)
        assert back.sampled_ancestor.sum() == 1
        fossil = back.node_of_taxon([t.id for t in back.taxa
                                     if t.name == "F"][0])
        assert back.age[fossil] == back.age[back.parent[fossil]] == 500.0

    def test_trees_file_roundtrip(self):
        taxa = make_taxa(["A", "B", "C"])
        t = build_tree(taxa, ((("A", 0.0), ("B", 0.0), 40.0), ("C", 0.0), 90.0))
        buf = io.StringIO()
        write_trees([(0, t), (1000, t)], buf)
        back = read_trees(buf.getvalue())
        assert [it for it, _ in back] == [0, 1000]
        assert back[0][1].age[back[0][1].root] == pytest.approx(90.0)


def validate_ages_zero_tips(tree):
    tips = tree.tip_indices()
    return np.allclose(tree.age[tips], 0.0)


def clade_ages(tree):
    """Age per clade, sorted by clade, for topology+age comparison."""
    sets = tree.subtree_tip_sets()
    return [age for _, age in sorted(
        (tuple(sorted(sets[v])), float(tree.age[v])) for v in range(tree.n_nodes))]
