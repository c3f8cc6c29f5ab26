import logging

from bdr.bayes_boot import (
    ATEDistribution,
    BootstrapWeights,
    PosteriorDraws,
    PriorKind,
    PriorSpec,
    draw_dirichlet_weights,
    muliere_secchi_resample,
    posterior_predictive_ate,
    posterior_sample,
)
from bdr.core import (
    Dataset,
    EstimatorConfig,
    EstimatorKind,
    ObservationRecord,
    difference,
    load_csv,
    save_csv,
    validate,
)
from bdr.estimators import (
    EstimateReport,
    ReportKind,
    estimate_dr,
    estimate_ipw,
    estimate_naive,
    estimate_or,
    frequentist_bootstrap,
    point_estimate,
)
from bdr.glm import (
    DesignMatrix,
    Family,
    GlmFit,
    OutcomeModel,
    expand_basis,
    fit_weighted_linear,
    fit_weighted_logistic,
    predict,
)
from bdr.matching import MatchingConfig, MatchResult, nearest_neighbor_match
from bdr.propensity import (
    PropensityFit,
    estimate_propensity,
    kappa_weight,
    overlap_report,
)
from bdr.sim import DgpParams, SimulationReport, generate_dgp, run_simulation_study
from bdr.util.exceptions import BdrError
from bdr.util.rng import RandomStreams


def enable_verbose_logging():
    logging.basicConfig(format="%(levelname)s %(message)s")
    logging.getLogger().setLevel(logging.DEBUG)
