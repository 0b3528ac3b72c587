"""Estimate Galton-Watson offspring distributions from sampled root paths."""

__version__ = "0.1.0"

from .tree import (OffspringDistribution, OffspringCensus, Tree, SampleTree,
                   gw_generate, log_prob_tree, offspring_census, canonical_form)
from .sampling import (sample_nodes, build_sample, draw_sample, mapping_count,
                       log_prob_sample_given_tree)
from .enumeration import count_all, count_noniso, enumerate_noniso, get_catalog
from .exact import OptimizerConfig, build_term_table, maximize, estimate_exact
from .mcmc import McmcConfig, run_chain, raftery_lewis, estimate_approximate, theta0_from_sample
from .evaluation import (kl_divergence_discounted, mse_per_parameter, empirical_estimator,
                         truncated_poisson, zipf, ExperimentSpec, run_experiment)
