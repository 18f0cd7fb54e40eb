import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import logsumexp

from bayes_etas.catalog import Catalog, Region, uniform_background
from bayes_etas.model import (
    BranchingError,
    EtasParams,
    GaussianKernel,
    NoSpatial,
    ParameterError,
    PowerLawKernel,
    complete_log_likelihood,
    fit_mle,
    intensity,
    kappa,
    log_likelihood,
    log_likelihood_grad,
    omori_h,
    omori_H,
    spatial_density,
)
from bayes_etas.simulate import SimConfig, simulate_catalog

from oracles import all_branchings, complete_loglik_table, naive_intensity, naive_loglik


def random_catalog(rng, n, T=10.0, M0=3.0, spatial=False):
    t = np.sort(rng.uniform(0, T, n))
    m = M0 + rng.exponential(1 / 2.3, n)
    if spatial:
        return Catalog.build(t, m, T, M0, x=rng.uniform(0, 5, n), y=rng.uniform(0, 5, n), region=Region(0, 5, 0, 5))
    return Catalog.build(t, m, T, M0)


def random_theta(rng):
    return EtasParams(mu=rng.uniform(0.05, 2), K=rng.uniform(0.05, 1.5), alpha=rng.uniform(0, 2),
                      c=rng.uniform(0.005, 1), p=rng.uniform(1.05, 3))


# kernels ----------------------------------------------------------------------


def test_omori_examples():
    assert omori_h(0.0, 1.0, 2.0) == pytest.approx(1.0)
    assert omori_h(1.0, 1.0, 2.0) == pytest.approx(0.25)
    assert omori_H(0.0, 1.0, 2.0) == 0.0
    assert omori_H(1.0, 1.0, 2.0) == pytest.approx(0.5)


def test_omori_density_integrates_to_one():
    c, p = 0.01, 1.2
    # split at c so the quadrature sees the peak, then map the tail to a finite interval
    head, _ = integrate.quad(omori_h, 0, 1, args=(c, p), points=[c], limit=200)
    tail, _ = integrate.quad(lambda u: omori_h(1 / u, c, p) / u**2, 0, 1, limit=200)
    assert head + tail == pytest.approx(1.0, abs=1e-6)


def test_omori_cdf_matches_quadrature():
    rng = np.random.default_rng(5)
    for _ in range(100):
        z, c, p = rng.uniform(0, 50), rng.uniform(0.001, 2), rng.uniform(1.01, 4)
        val, _ = integrate.quad(omori_h, 0, z, args=(c, p), points=[min(c, z)], limit=400, epsabs=1e-13, epsrel=1e-12)
        assert abs(omori_H(z, c, p) - val) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 10), st.floats(1.001, 8), st.floats(0, 100), st.floats(0, 100))
def test_omori_monotone(c, p, a, b):
    lo, hi = min(a, b), max(a, b)
    assert omori_h(lo, c, p) >= omori_h(hi, c, p)
    assert omori_H(lo, c, p) <= omori_H(hi, c, p) <= 1.0


def test_omori_domain_errors():
    with pytest.raises(ParameterError):
        omori_h(1.0, 0.0, 2.0)
    with pytest.raises(ParameterError):
        omori_H(1.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        omori_h(-1.0, 1.0, 2.0)


def test_kappa_examples():
    assert kappa(3.0, 0.7, 1.2, 3.0) == pytest.approx(0.7)
    assert kappa(4.0, 0.5, math.log(2), 3.0) == pytest.approx(1.0)
    assert kappa(5.0, 0.1, 1.5, 3.0) == pytest.approx(2.00855, rel=1e-5)
    with pytest.raises(ParameterError):
        kappa(2.9, 0.5, 1.0, 3.0)


def test_spatial_density_examples():
    assert spatial_density(0.0, 0.0, GaussianKernel(1.0, 1.0)) == pytest.approx(1 / (2 * math.pi))
    assert spatial_density(3.0, -2.0, NoSpatial()) == 1.0
    with pytest.raises(ParameterError):
        GaussianKernel(0.0, 1.0)
    with pytest.raises(ParameterError):
        PowerLawKernel(1.0, 1.0)


def test_powerlaw_kernel_integrates_to_one():
    k = PowerLawKernel(1.0, 1.5)
    # polar form: 2 pi r s(r), with r = u / (1 - u) to cover [0, inf)
    f = lambda u: 2 * math.pi * (u / (1 - u)) * k.density(u / (1 - u), 0.0) / (1 - u) ** 2
    val, _ = integrate.quad(f, 0, 1, limit=400)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_gaussian_kernel_integrates_to_one():
    k = GaussianKernel(0.7, 2.5)
    val, _ = integrate.dblquad(lambda y, x: k.density(x, y), -20, 20, -30, 30)
    assert val == pytest.approx(1.0, abs=1e-8)


# intensity and likelihood -------------------------------------------------------


def test_intensity_empty_history_is_background():
    cat = Catalog.build([], [], 10.0, 3.0)
    th = EtasParams(0.3, 0.5, 1.0, 0.1, 1.3)
    assert intensity(2.0, None, None, cat, th) == pytest.approx(0.3)


def test_intensity_single_event():
    cat = Catalog.build([1.0], [3.0], 10.0, 3.0)
    th = EtasParams(0.3, 0.5, 1.0, 0.1, 1.3)
    assert intensity(2.5, None, None, cat, th) == pytest.approx(0.3 + 0.5 * omori_h(1.5, 0.1, 1.3), rel=1e-14)


@pytest.mark.parametrize("kernel,sp", [("none", None), ("gaussian", GaussianKernel(0.4, 0.9)),
                                       ("powerlaw", PowerLawKernel(0.3, 1.8))])
def test_intensity_matches_naive(kernel, sp):
    rng = np.random.default_rng(11)
    cat = random_catalog(rng, 40, spatial=kernel != "none")
    th = random_theta(rng)
    if sp is not None:
        th = th.replace(spatial=sp)
    f = uniform_background(cat.region) if kernel != "none" else None
    bg = 1.0 / cat.region.area if f is not None else 1.0
    for _ in range(50):
        t0 = rng.uniform(0, cat.T)
        x0, y0 = (rng.uniform(0, 5), rng.uniform(0, 5)) if sp is not None else (None, None)
        got = intensity(t0, x0, y0, cat, th, f)
        want = naive_intensity(t0, x0, y0, cat.t, cat.m, cat.x, cat.y, cat.M0, th.as_array()[:5], kernel,
                               sp.args if sp is not None else (1, 1), bg)
        assert got == pytest.approx(want, rel=1e-12)


def test_loglik_empty_catalog():
    cat = Catalog.build([], [], 7.0, 3.0)
    th = EtasParams(0.3, 0.5, 1.0, 0.1, 1.3)
    assert log_likelihood(cat, th) == pytest.approx(-0.3 * 7.0)


def test_loglik_single_event():
    cat = Catalog.build([2.0], [3.0], 10.0, 3.0)
    th = EtasParams(0.3, 0.5, 1.0, 0.1, 1.3)
    want = math.log(0.3) - 3.0 - 0.5 * omori_H(8.0, 0.1, 1.3)
    assert log_likelihood(cat, th) == pytest.approx(want, rel=1e-14)
    assert complete_log_likelihood(cat, [0], th) == pytest.approx(want, rel=1e-14)


@pytest.mark.parametrize("kernel", ["none", "gaussian", "powerlaw"])
def test_loglik_matches_naive_on_simulated_catalog(kernel):
    th = EtasParams(0.5, 0.4, 0.9, 0.05, 1.25)
    region = Region(0, 10, 0, 10) if kernel != "none" else None
    if kernel == "gaussian":
        th = th.replace(spatial=GaussianKernel(0.2, 0.3))
    elif kernel == "powerlaw":
        th = th.replace(spatial=PowerLawKernel(0.1, 1.7))
    cat = simulate_catalog(SimConfig(th, 2.3, 600.0, M0=3.0, seed=4, region=region)).catalog.head(200)
    f = uniform_background(region) if region is not None else None
    if region is not None:
        cat = cat.subset(region.contains(cat.x, cat.y))
        cat = Catalog(cat.t, cat.m, cat.T, cat.M0, cat.x, cat.y, region)
    bg = None if f is None else np.asarray(f(cat.x, cat.y))
    want = naive_loglik(cat.t, cat.m, cat.T, cat.M0, th.as_array()[:5], cat.x, cat.y, kernel,
                        th.spatial.args, bg)
    assert log_likelihood(cat, th, f) == pytest.approx(want, rel=1e-9)


def test_loglik_invariant_to_input_order():
    # jitter follows input order within a tie, so any shuffle that keeps tied
    # rows in their relative order must give the same catalog
    t = np.array([1.0, 2.0, 2.0, 2.0, 5.0, 7.5, 7.5])
    m = np.array([3.2, 3.5, 4.1, 3.0, 3.3, 3.9, 3.1])
    th = EtasParams(0.3, 0.5, 1.0, 0.1, 1.3)
    ref = log_likelihood(Catalog.build(t, m, 10.0, 3.0), th)
    perm = [4, 5, 1, 0, 6, 2, 3]
    with pytest.warns(UserWarning):
        shuffled = Catalog.build(t[perm], m[perm], 10.0, 3.0)
    assert abs(log_likelihood(shuffled, th) - ref) <= 1e-12 * abs(ref)


def test_loglik_invariant_to_swapping_identical_tied_events():
    t = np.array([1.0, 2.0, 2.0, 2.0, 5.0])
    m = np.array([3.2, 3.5, 3.5, 4.0, 3.3])
    th = EtasParams(0.3, 0.5, 1.0, 0.1, 1.3)
    a = log_likelihood(Catalog.build(t, m, 10.0, 3.0), th)
    b = log_likelihood(Catalog.build(t, m[[0, 2, 1, 3, 4]], 10.0, 3.0), th)
    assert abs(a - b) <= 1e-12 * abs(a)


def test_gradient_second_order_convergence():
    th = EtasParams(0.4, 0.5, 1.1, 0.05, 1.3)
    cat = simulate_catalog(SimConfig(th, 2.3, 300.0, M0=3.0, seed=2)).catalog
    g = log_likelihood_grad(cat, th)
    x = th.as_array()
    names = th.names
    for k in range(5):
        errs = []
        for step in (1e-3, 5e-4):
            hk = step * x[k]
            up = EtasParams.from_dict(dict(zip(names, x + hk * np.eye(5)[k])))
            dn = EtasParams.from_dict(dict(zip(names, x - hk * np.eye(5)[k])))
            fd = (log_likelihood(cat, up) - log_likelihood(cat, dn)) / (2 * hk)
            errs.append(abs(fd - g[k]))
        assert errs[1] < 1e-4 * max(1.0, abs(g[k])) or 2.5 < errs[0] / errs[1] < 6.0, (k, errs)


# complete-data likelihood ----------------------------------------------------------


def test_complete_all_background():
    rng = np.random.default_rng(0)
    cat = random_catalog(rng, 6)
    th = random_theta(rng)
    kap = th.K * np.exp(th.alpha * cat.excess)
    want = 6 * math.log(th.mu) - th.mu * cat.T - float(np.sum(kap * omori_H(cat.T - cat.t, th.c, th.p)))
    assert complete_log_likelihood(cat, np.zeros(6, dtype=int), th) == pytest.approx(want, rel=1e-13)


def test_complete_rejects_bad_parents():
    rng = np.random.default_rng(0)
    cat = random_catalog(rng, 4)
    th = random_theta(rng)
    with pytest.raises(BranchingError):
        complete_log_likelihood(cat, [0, 2, 0, 0], th)
    with pytest.raises(BranchingError):
        complete_log_likelihood(cat, [0, 1, 3, 0], th)
    with pytest.raises(BranchingError):
        complete_log_likelihood(cat, [0, 1], th)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1), st.sampled_from(["none", "gaussian", "powerlaw"]))
def test_marginalization_identity(n, seed, kernel):
    rng = np.random.default_rng(seed)
    spatial = kernel != "none"
    cat = random_catalog(rng, n, spatial=spatial)
    th = random_theta(rng)
    f = None
    if kernel == "gaussian":
        th = th.replace(spatial=GaussianKernel(rng.uniform(0.2, 3), rng.uniform(0.2, 3)))
    elif kernel == "powerlaw":
        th = th.replace(spatial=PowerLawKernel(rng.uniform(0.1, 2), rng.uniform(1.1, 3)))
    if spatial:
        f = uniform_background(cat.region)
    configs = all_branchings(n)
    bg = None if f is None else np.asarray(f(cat.x, cat.y))
    table = complete_loglik_table(cat.t, cat.m, cat.T, cat.M0, th.as_array()[:5], configs, cat.x, cat.y,
                                  kernel, th.spatial.args, bg)
    assert math.exp(logsumexp(table) - log_likelihood(cat, th, f)) == pytest.approx(1.0, abs=1e-8)
    picks = range(len(configs)) if len(configs) <= 720 else rng.choice(len(configs), 200, replace=False)
    for r in picks:
        assert complete_log_likelihood(cat, configs[r], th, f) == pytest.approx(table[r], rel=1e-10, abs=1e-10)


# maximum likelihood -----------------------------------------------------------


def test_fit_mle_improves_on_truth_and_start():
    th = EtasParams(0.2, 0.4, 1.0, 0.05, 1.3)
    cat = simulate_catalog(SimConfig(th, 2.3, 2000.0, M0=3.0, seed=8)).catalog
    fit = fit_mle(cat, seed=1)
    assert fit.converged
    assert fit.loglik >= log_likelihood(cat, th) - 1e-6
    assert fit.loglik == pytest.approx(log_likelihood(cat, fit.params), rel=1e-12)
    assert 0.5 * th.mu < fit.params.mu < 2 * th.mu
