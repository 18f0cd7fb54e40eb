import pytest

from bayes_etas.model import EtasParams
from bayes_etas.posterior import McmcConfig
from bayes_etas.simulate import SimConfig, simulate_catalog
from bayes_etas.tuning import pilot_tune


@pytest.fixture(scope="module")
def catalog():
    th = EtasParams(0.3, 0.4, 1.0, 0.05, 1.3)
    return simulate_catalog(SimConfig(th, 2.3, 400.0, M0=3.0, seed=5)).catalog


@pytest.mark.parametrize("sampler", ["latent", "direct"])
def test_pilot_is_reproducible_and_fixed(catalog, sampler):
    cfg = McmcConfig(n_samples=200, burn_in=50, seed=3)
    a, rep = pilot_tune(catalog, sampler, config=cfg, rounds=2, sweeps=120)
    b, _ = pilot_tune(catalog, sampler, config=cfg, rounds=2, sweeps=120)
    assert a.proposal_sd == b.proposal_sd and a.init == b.init
    assert len(rep.acceptance) == 2
    # the budget of the production chain is untouched
    assert (a.n_samples, a.burn_in, a.seed) == (200, 50, 3)
    assert all(v > 0 for v in a.proposal_sd.values())


def test_pilot_moves_acceptance_toward_band(catalog):
    # deliberately tiny steps: nearly everything is accepted before tuning
    sd = {"mu": 0.1, "K": 1e-4, "alpha": 1e-4, "c": 1e-5, "p": 1e-4}
    cfg = McmcConfig(n_samples=300, burn_in=50, seed=1, proposal_sd=sd)
    tuned, rep = pilot_tune(catalog, "latent", config=cfg, rounds=5, sweeps=200)
    assert rep.acceptance[0]["K_alpha"] > 0.8
    assert 0.05 < rep.acceptance[-1]["K_alpha"] < 0.7
    assert tuned.proposal_sd["K"] > 10 * sd["K"]


def test_unknown_sampler(catalog):
    with pytest.raises(ValueError):
        pilot_tune(catalog, "gibbs")
