import numpy as np
import pytest

from bayes_etas import direct
from bayes_etas.catalog import Catalog, Region, uniform_background
from bayes_etas.direct import run_direct_mcmc
from bayes_etas.latent import run_latent_mcmc
from bayes_etas.model import EtasParams
from bayes_etas.posterior import McmcConfig, PriorSpec
from bayes_etas.simulate import SimConfig, find_window_for_count, simulate_catalog


@pytest.fixture(scope="module")
def catalog():
    th = EtasParams(0.4, 0.4, 1.0, 0.1, 1.4)
    return simulate_catalog(SimConfig(th, 2.3, 150.0, M0=3.0, seed=3)).catalog


def test_determinism_and_schema(catalog):
    cfg = McmcConfig(n_samples=80, burn_in=20, seed=4)
    a = run_direct_mcmc(catalog, config=cfg)
    b = run_direct_mcmc(catalog, config=cfg)
    assert a.digest() == b.digest()
    lat = run_latent_mcmc(catalog, config=cfg)
    assert a.names == lat.names and len(a) == len(lat) == 60
    np.testing.assert_array_equal(a.iterations, lat.iterations)
    assert set(a.acceptance) == set(a.names)


def test_one_likelihood_evaluation_per_proposal(catalog, monkeypatch):
    calls = []
    real = direct.loglik_from_data

    def counting(data, params):
        calls.append(params)
        return real(data, params)

    monkeypatch.setattr(direct, "loglik_from_data", counting)
    # tight upper bounds put many proposals outside the support
    priors = PriorSpec(K_upper=0.6, c_upper=0.15)
    s = run_direct_mcmc(catalog, priors, McmcConfig(n_samples=100, burn_in=0, seed=1,
                                                    init=EtasParams(0.4, 0.55, 1.0, 0.12, 1.4)))
    assert s.n_likelihood_evals == len(calls)
    proposals = 100 * 5
    # everything beyond the initial evaluation is one per in-support proposal
    assert s.n_likelihood_evals - 1 < proposals
    accepted = sum(round(v * 100) for v in s.acceptance.values())
    assert s.n_likelihood_evals - 1 >= accepted


def test_out_of_support_proposal_skips_likelihood(catalog, monkeypatch):
    calls = []
    real = direct.loglik_from_data
    monkeypatch.setattr(direct, "loglik_from_data", lambda d, p: calls.append(p) or real(d, p))
    sd = {"mu": 1e3, "K": 1e3, "alpha": 1e3, "c": 1e3, "p": 1e3}
    s = run_direct_mcmc(catalog, config=McmcConfig(n_samples=30, burn_in=0, seed=2, proposal_sd=sd))
    # with huge steps nearly every proposal leaves the prior box
    assert len(calls) == s.n_likelihood_evals < 30
    assert all(s.acceptance[k] <= len(calls) / 30 for k in s.names)


def test_spatial_direct_chain_runs():
    from bayes_etas.model import GaussianKernel

    region = Region(0, 10, 0, 10)
    th = EtasParams(0.3, 0.4, 1.0, 0.05, 1.3, GaussianKernel(0.1, 0.1))
    res = simulate_catalog(SimConfig(th, 2.3, 200.0, M0=3.0, seed=2, region=region, clip_to_region=True))
    cat = Catalog(res.catalog.t, res.catalog.m, res.catalog.T, 3.0, res.catalog.x, res.catalog.y, region)
    s = run_direct_mcmc(cat, config=McmcConfig(n_samples=60, burn_in=10), f=uniform_background(region),
                        kernel="gaussian")
    assert s.names[-2:] == ("sigma_x2", "sigma_y2")


def test_default_sd_acceptance_in_band():
    # n = 1000 with a moderate Omori offset: posterior widths comparable to the default steps
    th = EtasParams(0.25, 0.3, 1.0, 0.5, 2.0)
    cat = simulate_catalog(SimConfig(th, 2.3, 4 * find_window_for_count(th, 2.3, 1000), M0=3.0, seed=0)).catalog
    s = run_direct_mcmc(cat.head(1000), config=McmcConfig(n_samples=700, burn_in=200, seed=0))
    for name, acc in s.acceptance.items():
        assert 0.1 <= acc <= 0.5, (name, acc)
