import numpy as np
import pytest

from glottochron import (CalibrationPrior, CoalescentParams, FbdParams,
                         ModelState, UniformParams, branch_duration,
                         build_tree, make_taxa, validate_tree)


def three_tip_tree(root_age=100.0):
    taxa = make_taxa(["A", "B", "C"])
    return build_tree(taxa, ((("A", 0.0), ("B", 0.0), 40.0), ("C", 0.0), root_age))


def test_calibration_prior_invariants():
    cal = CalibrationPrior(3500, 3600)
    assert cal.width == 100 and cal.midpoint == 3550
    assert cal.contains(3500) and not cal.contains(3499)
    assert CalibrationPrior().is_extant
    with pytest.raises(ValueError):
        CalibrationPrior(200, 100)
    with pytest.raises(ValueError):
        CalibrationPrior(-5, 10)


def test_make_taxa_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        make_taxa(["A", "B", "A"])
    taxa = make_taxa(["X", "Y"])
    assert [t.id for t in taxa] == [0, 1]


def test_validate_well_formed_tree_is_clean():
    assert validate_tree(three_tip_tree()) == []


def test_validate_flags_age_ordering():
    tree = three_tip_tree()
    tree.age[np.nonzero(tree.left >= 0)[0][-1]] = 150.0  # inner node above root
    bad = [v for v in validate_tree(tree) if "age ordering" in v]
    assert bad


def test_validate_flags_calibration_bounds():
    cals = {"Hittite": CalibrationPrior(3500, 3600)}
    taxa = make_taxa(["Hittite", "English", "German"], cals)
    tree = build_tree(taxa, ((("English", 0.0), ("German", 0.0), 2000.0),
                             ("Hittite", 3000.0), 8000.0))
    bad = [v for v in validate_tree(tree) if "calibration bounds" in v]
    assert len(bad) == 1 and "Hittite" in bad[0]


def test_validate_root_bounds_only_when_given():
    tree = three_tip_tree(root_age=100.0)
    assert validate_tree(tree) == []
    bad = validate_tree(tree, root_bounds=(4000.0, 25000.0))
    assert any("root bounds" in v for v in bad)


def test_validate_flags_double_sampled_ancestor():
    cals = {"F1": CalibrationPrior(50, 50), "F2": CalibrationPrior(50, 50)}
    taxa = make_taxa(["A", "B", "F1", "F2"], cals)
    # hand-build a node with two zero-length fossil children
    tree = build_tree(taxa, (((("F1", 50.0), ("F2", 50.0), 50.0), ("A", 0.0), 120.0),
                             ("B", 0.0), 200.0))
    assert any("two sampled-ancestor children" in v for v in validate_tree(tree))


def test_tip_names_match_dataset():
    tree = three_tip_tree()
    cals = {"A": CalibrationPrior(), "B": CalibrationPrior()}
    bad = validate_tree(tree, calibrations=cals)
    assert any("'C' not in dataset" in v for v in bad)


def test_branch_duration_cases():
    cals = {"F": CalibrationPrior(2615, 2615)}
    taxa = make_taxa(["A", "F"], cals)
    tree = build_tree(taxa, (("A", 0.0), ("F", 2615.0), 6551.0))
    fossil = tree.node_of_taxon(1)
    assert branch_duration(tree, fossil) == 6551 - 2615
    with pytest.raises(ValueError):
        branch_duration(tree, tree.root)


def test_sampled_ancestor_branch_is_zero():
    cals = {"F": CalibrationPrior(500, 500)}
    taxa = make_taxa(["A", "B", "F"], cals)
    tree = build_tree(taxa, ((("A", 0.0), ("F", 500.0), 500.0), ("B", 0.0), 900.0))
    fossil = tree.node_of_taxon(2)
    assert tree.sampled_ancestor[fossil]
    assert branch_duration(tree, fossil) == 0.0
    assert validate_tree(tree) == []


def test_duration_sum_invariant_under_reindexing():
    taxa = make_taxa(["A", "B", "C"])
    t1 = build_tree(taxa, ((("A", 0.0), ("B", 0.0), 40.0), ("C", 0.0), 100.0))
    t2 = build_tree(taxa, (("C", 0.0), (("B", 0.0), ("A", 0.0), 40.0), 100.0))
    assert t1.durations().sum() == t2.durations().sum()


def test_postorder_children_before_parents():
    tree = three_tip_tree()
    seen = set()
    for v in tree.postorder():
        for c in tree.children(int(v)):
            assert c in seen
        seen.add(int(v))
    assert len(seen) == tree.n_nodes


def test_copy_isolates_tree_but_shares_taxa():
    tree = three_tip_tree()
    other = tree.copy()
    other.age[other.root] = 500.0
    assert tree.age[tree.root] == 100.0
    assert other.taxa is tree.taxa


def test_subtree_tip_sets():
    tree = three_tip_tree()
    sets = tree.subtree_tip_sets()
    assert sets[tree.root] == frozenset(("A", "B", "C"))
    assert frozenset(("A", "B")) in sets.values()


def test_model_state_validate_and_scalars():
    tree = three_tip_tree()
    state = ModelState(tree, np.array([0.5, 0.5]), 1.0, 1e-4,
                       np.ones(tree.n_nodes), 0.005, UniformParams())
    assert state.validate() == []
    assert sorted(state.scalar_parameters()) == \
        ["Alpha", "ClockRate", "IgrVariance", "Pi1"]
    state.prior_params = FbdParams(1.0, 0.5, 0.5, 0.1)
    assert "Diversification" in state.scalar_parameters()
    state.prior_params = CoalescentParams(10.0)
    assert "PopSize" in state.scalar_parameters()
    state.alpha = -1.0
    assert any("alpha" in v for v in state.validate())


def test_fbd_params_reparameterization():
    p = FbdParams(diversification=1.0, turnover=0.5, fossil_sampling=0.2,
                  sampling_fraction=0.3)
    lam, mu, psi = p.birth_death_rates()
    assert lam == pytest.approx(2.0)
    assert mu == pytest.approx(1.0)
    assert psi == pytest.approx(0.25)
    assert FbdParams(-1.0, 0.5, 0.5, 0.5).validate()
    assert FbdParams(1.0, 1.0, 0.5, 0.5).validate()
    assert FbdParams(1.0, 0.5, 0.5, 1.5).validate()
