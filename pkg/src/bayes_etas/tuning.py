"""Pilot runs that pick random-walk proposal scales before the real chain.

Tuning happens strictly before sampling: the returned config carries fixed
standard deviations, so the production chain is an ordinary Metropolis
chain. Scales follow the usual ``2.38 / sqrt(d)`` rule applied to pilot
posterior standard deviations (``d`` is the block dimension).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import BackgroundField, Catalog
from .posterior import McmcConfig, PriorSpec

# parameters updated by random walk, grouped by block, per sampler
LATENT_BLOCKS = {"K": "K_alpha", "alpha": "K_alpha", "c": "c_p", "p": "c_p", "d": "spatial", "q": "spatial"}


@dataclass
class PilotReport:
    proposal_sd: dict[str, float]
    acceptance: list[dict[str, float]]
    init: object


def _pilot_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence((int(seed), 0x7069, r)).generate_state(2, np.uint64)[0] >> 1)


def _runner(sampler: str):
    from .direct import run_direct_mcmc
    from .latent import run_latent_mcmc

    try:
        return {"latent": run_latent_mcmc, "direct": run_direct_mcmc}[sampler]
    except KeyError:
        raise ValueError(f"unknown sampler {sampler!r}") from None


def pilot_tune(
    catalog: Catalog,
    sampler: str = "latent",
    priors: PriorSpec | None = None,
    config: McmcConfig | None = None,
    f: BackgroundField | None = None,
    kernel: str = "none",
    rounds: int = 5,
    sweeps: int = 400,
) -> tuple[McmcConfig, PilotReport]:
    """Return ``config`` with tuned ``proposal_sd`` and a warm ``init``.

    Each round continues from the previous round's last state. Pilot seeds
    are derived from ``config.seed`` so the result is reproducible.
    """
    priors = priors or PriorSpec()
    config = config or McmcConfig()
    run = _runner(sampler)
    sd = dict(config.proposal_sd)
    init = config.init
    history = []
    for r in range(rounds):
        pilot = config.replace(n_samples=sweeps, burn_in=sweeps // 4, thin=1, proposal_sd=sd, init=init,
                               store_branching=False, seed=_pilot_seed(config.seed, r))
        samples = run(catalog, priors, pilot, f, kernel)
        history.append(dict(samples.acceptance))
        init = samples.params_at(len(samples) - 1)
        for name in samples.names:
            if sampler == "latent":
                block = LATENT_BLOCKS.get(name)
                if block is None or block not in samples.acceptance:
                    continue
                dim, acc = 2, samples.acceptance[block]
            else:
                dim, acc = 1, samples.acceptance[name]
            spread = float(np.std(samples.draws[name]))
            if acc < 0.05 or spread == 0.0:
                # a nearly frozen chain says nothing about the posterior spread
                new = sd[name] / 5.0
            else:
                new = 2.38 / math.sqrt(dim) * spread
                if acc < 0.15:
                    new *= 0.6
                elif acc > 0.45:
                    # small steps that are almost always accepted understate the spread
                    new = max(new, 1.5 * sd[name])
            sd[name] = new
    tuned = config.replace(proposal_sd=sd, init=init)
    return tuned, PilotReport(proposal_sd=sd, acceptance=history, init=init)
