"""Bayesian estimation and forecasting for the ETAS earthquake model.

The main entry points are :func:`run_latent_mcmc` (Gibbs sampling with
latent branching variables), :func:`run_direct_mcmc` (componentwise
random-walk Metropolis on the marginal posterior), :func:`simulate_catalog`
and :func:`forecast_counts`.
"""

__version__ = "0.1.0"

from .catalog import Catalog, Region, fit_background_kde, fit_gutenberg_richter, load_catalog, write_catalog
from .diagnostics import benchmark, effective_sample_size, summarize
from .direct import run_direct_mcmc
from .forecast import ForecastConfig, forecast_counts, mle_plugin_forecast
from .latent import run_latent_mcmc
from .model import EtasParams, GaussianKernel, PowerLawKernel, fit_mle, log_likelihood
from .posterior import McmcConfig, PosteriorSamples, PriorSpec, read_samples, write_samples
from .simulate import SimConfig, simulate_catalog
from .tuning import pilot_tune
