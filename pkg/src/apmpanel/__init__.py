"""Counterfactual cohort means in short panels with general outcome missingness."""

from .apm import Apm, FactorBasis, build_apm, null_basis, projector
from .errors import *  # noqa: F401,F403
from .estimate import (
    CohortMeans,
    Estimate,
    EstimatorConfig,
    bridge_extrapolate,
    cohort_observed_mean,
    estimate_all,
    r_matrix,
)
from .factors import hetero_split_factors, pc_factors, second_moment
from .graph import (
    build_overlap_graph,
    connected_components,
    equivalence_graphs,
    reach_profile,
)
from .inference import BootstrapResult, bootstrap, critical_value, draw_weights, iqr_se
from .panel import Panel, cohortize, load_long_csv, mask_cell, write_long_csv
from .perturb import EigenWindow, check_bound, first_order_term, window_gap
from .sim import DgpTruth, generate, mask_eval, oracle_influence, twfe_estimate
from .targets import (
    AttributionShares,
    CellTarget,
    DynamicEffects,
    LinearFunctional,
    attribution_shares,
    dynamic_effects,
    plug_in,
)

__version__ = "0.1.0"
