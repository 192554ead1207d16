"""Bayesian compound Poisson downscaling of daily precipitation.

Daily rainfall at each location follows a compound Poisson law whose
parameters are driven by a latent ARMA process with an exponential link to
standardised model-field inputs. Parameters are inferred per location with a
random-scan Gibbs sampler; forecasts are posterior-predictive ensembles.
"""

from .arma import LocationData, ModelParams, ParamSeries, log_likelihood, unroll
from .compound_poisson import CpParams, cp_log_density, cp_sample
from .forecast import ForecastEnsemble, ensemble_summaries, posterior_predictive, simulate_forward
from .gibbs import Chain, ChainConfig, SampleArchive, gibbs_step, run_chain
from .priors import Precisions, PriorConfig

__version__ = "0.1.0"

__all__ = [
    "LocationData",
    "ModelParams",
    "ParamSeries",
    "log_likelihood",
    "unroll",
    "CpParams",
    "cp_log_density",
    "cp_sample",
    "ForecastEnsemble",
    "ensemble_summaries",
    "posterior_predictive",
    "simulate_forward",
    "Chain",
    "ChainConfig",
    "SampleArchive",
    "gibbs_step",
    "run_chain",
    "Precisions",
    "PriorConfig",
]
