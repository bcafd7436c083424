"""Bayesian time-tree inference for binary cognate data with dated tips.

Three time-tree priors (constant-size coalescent, fossilized birth-death,
uniform), a binary substitution model with rate variation and ascertainment
correction, an independent gamma-rates relaxed clock, Metropolis-coupled
MCMC, and the posterior analyses (consensus trees, HPD ages, root-age Bayes
factors, AICM).
"""

from .clock import effective_branch_length, igr_log_prior
from .dataio import (CognateClassTable, CognateMatrix, ConfigError, ParseError,
                     RunConfig, TraceSample, binarize, parse_calibrations,
                     parse_config, parse_matrix, parse_newick, read_trace,
                     read_trees, tree_to_newick, write_matrix, write_trace,
                     write_trees)
from .engine import (Chain, Mc3Result, PosteriorEvaluator, ProposalStats,
                     asdsf, build_kernels, chain_temperatures, initial_state,
                     mh_step, random_tree, run_mc3)
from .model import (CalibrationPrior, CoalescentParams, FbdParams, ModelState,
                    Taxon, TimeTree, UniformParams, branch_duration,
                    build_tree, make_taxa, validate_tree)
from .simulate import SimulationResult, simulate
from .substitution import (AlignmentLikelihood, NumericError,
                           alignment_log_likelihood, clock_rate_gradient,
                           discretize_gamma, site_log_likelihood,
                           transition_matrix)
from .summaries import (BayesFactorResult, CladeSummary, ConsensusTree,
                        HypothesisWindows, aicm, bayes_factor_root,
                        clade_frequencies, hpd_interval, kass_raftery_label,
                        majority_consensus, node_age_report)
from .treepriors import (coalescent_log_density, fbd_helpers, fbd_log_density,
                         hyperprior_log_density, tree_log_density,
                         uniform_tree_log_density)

__version__ = "0.1.0"
