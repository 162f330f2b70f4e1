"""Order selection for Gaussian hidden Markov models via the marginal likelihood.

The marginal likelihood p_K(y) of a K-state model (parameters and hidden
paths integrated out) is estimated per candidate K by posterior MCMC plus a
locally restricted importance-sampling estimator of the normalizing constant;
K_hat maximizes it.  A Baum-Welch/BIC baseline and a replication harness for
the simulation grids are included.
"""

from .em import BicScore, EmResult, baum_welch, bic_select, multistart_fit
from .gibbs import PosteriorDraws, log_joint, run_gibbs
from .hmm import (
    HmmParams,
    Trajectory,
    ffbs_sample_path,
    joint_log_density,
    load_trajectory,
    log_likelihood,
    save_trajectory,
    simulate,
    stationary,
)
from .impfn import ImportanceFn, choose_region, fit_importance, g_log_density, g_sample
from .mixture import estimate_marginal_mixture, mixture_log_likelihood, run_gibbs_mixture
from .ncest import (
    EstimatorConfig,
    MarginalEstimate,
    estimate_is,
    estimate_marginal,
    estimate_ris,
)
from .priors import PriorSpec, default_prior, log_prior
from .reparam import UnconstrainedPoint, from_constrained, log_jacobian, to_constrained
from .select import RateReport, SelectionResult, consistency_probe, select_k, select_k_mixture
from .simharness import ExperimentSpec, build_params, build_transition, run_experiment

__version__ = "0.1.0"

__all__ = [
    "HmmParams", "Trajectory", "stationary", "log_likelihood", "joint_log_density",
    "simulate", "ffbs_sample_path", "load_trajectory", "save_trajectory",
    "EmResult", "BicScore", "baum_welch", "multistart_fit", "bic_select",
    "PriorSpec", "default_prior", "log_prior", "PosteriorDraws", "log_joint", "run_gibbs",
    "UnconstrainedPoint", "from_constrained", "to_constrained", "log_jacobian",
    "ImportanceFn", "fit_importance", "choose_region", "g_log_density", "g_sample",
    "MarginalEstimate", "EstimatorConfig", "estimate_ris", "estimate_is", "estimate_marginal",
    "mixture_log_likelihood", "run_gibbs_mixture", "estimate_marginal_mixture",
    "SelectionResult", "RateReport", "select_k", "select_k_mixture", "consistency_probe",
    "ExperimentSpec", "build_transition", "build_params", "run_experiment",
]
