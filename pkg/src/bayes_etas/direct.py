"""Baseline sampler: componentwise random-walk Metropolis on the marginal
posterior. Every in-support proposal costs one full O(n^2) likelihood
evaluation; the current log-likelihood is cached so rejections are free."""

from __future__ import annotations

import time

import numpy as np

from .catalog import BackgroundField, Catalog
from .latent import SamplerError
from .model import EtasParams, LikelihoodError, _check_kernel_data, loglik_from_data, prepare
from .posterior import McmcConfig, PosteriorSamples, PriorSpec, initial_params, rng_streams


def run_direct_mcmc(
    catalog: Catalog,
    priors: PriorSpec | None = None,
    config: McmcConfig | None = None,
    f: BackgroundField | None = None,
    kernel: str = "none",
    progress=None,
) -> PosteriorSamples:
    """Update mu, K, alpha, c, p, then the kernel parameters, one at a time."""
    priors = priors or PriorSpec()
    config = config or McmcConfig()
    data = prepare(catalog, f)
    params = initial_params(catalog, priors, config, kernel)
    _check_kernel_data(data, params)
    names = params.names
    rng = rng_streams(config.seed, config.chain, ("direct",))["direct"]
    sd = config.proposal_sd

    current = params.as_dict()
    log_prior = {k: priors.log_density(k, v) for k, v in current.items()}
    n_evals = 1
    ll = loglik_from_data(data, params)

    n_keep = config.n_stored
    draws = {k: np.empty(n_keep) for k in names}
    flags = {k: np.zeros(n_keep, dtype=bool) for k in names}
    totals = dict.fromkeys(names, 0)
    iterations = np.empty(n_keep, dtype=np.int64)
    start = time.perf_counter()
    k = 0
    for it in range(1, config.n_samples + 1):
        steps = rng.standard_normal(len(names))
        log_us = np.log(rng.random(len(names)))
        accepted = {}
        for name, z, log_u in zip(names, steps, log_us):
            value = current[name] + sd[name] * z
            accepted[name] = False
            if not priors.in_support(name, value):
                continue
            proposal = dict(current)
            proposal[name] = value
            try:
                ll_new = loglik_from_data(data, EtasParams.from_dict(proposal, kernel))
            except LikelihoodError as exc:
                raise SamplerError(f"sweep {it}: {exc}") from exc
            n_evals += 1
            lp_new = priors.log_density(name, value)
            if log_u < (ll_new + lp_new) - (ll + log_prior[name]):
                current, ll = proposal, ll_new
                log_prior[name] = lp_new
                accepted[name] = True
                totals[name] += 1
        if config.stored(it):
            for name in names:
                draws[name][k] = current[name]
                flags[name][k] = accepted[name]
            iterations[k] = it
            k += 1
        if progress is not None:
            progress(it)
    elapsed = time.perf_counter() - start
    return PosteriorSamples(
        sampler="direct", kernel=params.spatial.name, draws=draws, iterations=iterations,
        accept_flags=flags, acceptance={k: totals[k] / config.n_samples for k in names},
        config=config, priors=priors, M0=catalog.M0, T=catalog.T, n_events=catalog.n,
        background=(f.describe() if f is not None else {"kind": "temporal"}),
        timing={"likelihood_sweeps": elapsed, "total": elapsed}, n_likelihood_evals=n_evals,
    )
