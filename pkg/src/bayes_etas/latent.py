"""Gibbs-within-Metropolis sampling of ETAS parameters with latent branching.

Each sweep draws, in order:

1. the parent of every event from its exact conditional (categorical in the
   shares of the intensity at that event);
2. ``mu`` from its conjugate Gamma conditional;
3. ``(K, alpha)`` by random-walk Metropolis on their conditional;
4. ``(c, p)`` likewise;
5. the spatial kernel parameters (conjugate inverse-gamma for the Gaussian
   kernel, random-walk Metropolis for the power law).

Given the branching, the blocks only interact through the compensator term
``exp(-kappa(m_j) H(T - t_j))``, which is why this mixes far better than a
random walk on the marginal posterior.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .catalog import BackgroundField, Catalog
from .model import (
    EtasParams,
    EventData,
    GaussianKernel,
    LikelihoodError,
    PowerLawKernel,
    _check_kernel_data,
    _use_parallel,
    prepare,
)
from .posterior import McmcConfig, PosteriorSamples, PriorSpec, initial_params, rng_streams

PHASES = ("branching", "mu", "K_alpha", "c_p", "spatial")


class SamplerError(RuntimeError):
    """Numerical failure inside a sweep; carries the sweep index."""


@dataclass
class ChainState:
    params: EtasParams
    parents: np.ndarray


# step 1: branching ---------------------------------------------------------


PAIR_CACHE_BYTES = 512 * 2**20


class PairCache:
    """Packed per-pair weights reused across sweeps.

    The Omori factor depends only on ``(c, p)`` and the power-law spatial
    factor only on ``(d, q)``; both are recomputed only when those values
    change, which after a rejected Metropolis move they do not. Gaussian
    spatial weights change every sweep but reuse cached squared offsets.
    """

    def __init__(self, data: EventData, kind: int):
        m = data.n * (data.n - 1) // 2
        self.kind = kind
        self.lag = np.empty(m)
        _kernels.fill_lags(data.t, self.lag)
        self.wt = np.empty(m)
        self.ws = np.empty(m if kind else 0)
        self._cp = self._space = None
        self.sq = ()
        if kind == 1:
            self.sq = (np.empty(m), np.empty(m))
            _kernels.fill_pair_sq(data.x, self.sq[0])
            _kernels.fill_pair_sq(data.y, self.sq[1])
        elif kind == 2:
            r2 = np.empty(m)
            tmp = np.empty(m)
            _kernels.fill_pair_sq(data.x, r2)
            _kernels.fill_pair_sq(data.y, tmp)
            r2 += tmp
            self.sq = (r2,)

    @staticmethod
    def fits(n: int, kind: int, budget: int = PAIR_CACHE_BYTES) -> bool:
        arrays = 2 + (3 if kind == 1 else 2 if kind == 2 else 0)
        return arrays * 8 * n * (n - 1) // 2 <= budget

    def refresh(self, data: EventData, params: EtasParams) -> None:
        if (params.c, params.p) != self._cp:
            log_norm = math.log(params.p - 1.0) + (params.p - 1.0) * math.log(params.c)
            # elementwise numpy passes vectorize exp/log, which the compiled loop does not
            np.add(self.lag, params.c, out=self.wt)
            np.log(self.wt, out=self.wt)
            self.wt *= -params.p
            self.wt += log_norm
            np.exp(self.wt, out=self.wt)
            self._cp = (params.c, params.p)
        s1, s2 = params.spatial.args
        if self.kind == 1:
            _kernels.fill_gauss_weights(self.sq[0], self.sq[1], s1, s2, self.ws)
        elif self.kind == 2 and (s1, s2) != self._space:
            _kernels.fill_powerlaw_weights(self.sq[0], s1, s2, self.ws)
            self._space = (s1, s2)


def _sample_branching(data: EventData, params: EtasParams, rng: np.random.Generator,
                      cache: PairCache | None = None) -> np.ndarray:
    u = rng.random(data.n)
    with np.errstate(divide="ignore"):
        log_bg = math.log(params.mu) + data.log_bg
        log_kappa = (math.log(params.K) if params.K > 0 else -math.inf) + params.alpha * data.m_exc
    s1, s2 = params.spatial.args
    kind = params.spatial.code
    parallel = _use_parallel(data.n)
    if cache is not None:
        cache.refresh(data, params)
        fn = _kernels.sample_parents_cached_parallel if parallel else _kernels.sample_parents_cached
        b = fn(data.t, data.x, data.y, params.mu * data.bg, params.K * np.exp(params.alpha * data.m_exc),
               cache.wt, cache.ws, kind != 0, log_bg, log_kappa, params.c, params.p, kind, s1, s2, u)
    else:
        fn = _kernels.sample_parents_parallel if parallel else _kernels.sample_parents
        b = fn(data.t, data.x, data.y, log_bg, log_kappa, params.c, params.p, kind, s1, s2, u)
    bad = np.flatnonzero(b < 0)
    if bad.size:
        raise LikelihoodError(f"event {int(bad[0]) + 1}: every parent weight is zero or non-finite")
    return b


def sample_branching(catalog: Catalog, params: EtasParams, f: BackgroundField | None,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw all parents given the parameters (1-based, 0 = background)."""
    data = prepare(catalog, f)
    _check_kernel_data(data, params)
    return _sample_branching(data, params, rng)


def branching_probabilities(catalog: Catalog, params: EtasParams, f: BackgroundField | None, i: int) -> np.ndarray:
    """Exact conditional distribution of the parent of 1-based event ``i``."""
    data = prepare(catalog, f)
    k = i - 1
    w = np.empty(i)
    w[0] = params.mu * data.bg[k]
    if k:
        j = np.arange(k)
        w[1:] = (params.K * np.exp(params.alpha * data.m_exc[j])
                 * (params.p - 1) * params.c ** (params.p - 1) / (data.t[k] - data.t[j] + params.c) ** params.p)
        if params.spatial.code:
            w[1:] *= params.spatial.density(data.x[k] - data.x[j], data.y[k] - data.y[j])
    return w / w.sum()


# step 2: mu ------------------------------------------------------------------


def update_mu(parents, T: float, priors: PriorSpec, rng: np.random.Generator) -> float:
    """Exact draw from Gamma(shape + #background, rate + T)."""
    n0 = int(np.count_nonzero(np.asarray(parents) == 0))
    return float(rng.gamma(priors.mu_shape + n0, 1.0 / (priors.mu_rate + T)))


# steps 3 and 4: Metropolis blocks ---------------------------------------------


def _proposal_noise(rng: np.random.Generator, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Standard normals for a 2-D random walk and the matching log-uniforms."""
    z = rng.standard_normal((steps, 2))
    return z, np.log(rng.random(steps))


class KAlphaTarget:
    """Conditional log density of ``(K, alpha)`` given branching and ``(c, p)``
    (uniform prior, so up to a constant inside the support)::

        -K sum_j exp(alpha x_j) H_j + N_trig log K + alpha sum_j |S_j| x_j
    """

    def __init__(self, data: EventData, parents: np.ndarray, c: float, p: float):
        self.x = data.m_exc
        z = data.T - data.t
        self.H = -np.expm1((p - 1.0) * (math.log(c) - np.log(z + c)))
        counts = np.bincount(parents, minlength=data.n + 1)[1:]
        self.n_trig = int(counts.sum())
        self.sx = float(np.dot(counts, self.x))

    def __call__(self, K: float, alpha: float) -> float:
        return -K * float(np.dot(np.exp(alpha * self.x), self.H)) + self.n_trig * math.log(K) + alpha * self.sx


class CPTarget:
    """Conditional log density of ``(c, p)`` given branching and ``(K, alpha)``::

        sum_j kappa_j S_j(c, p) + sum_{i triggered} log h(t_i - t_{B_i} | c, p)

    where ``S_j = (c / (T - t_j + c))^(p - 1)`` (the constant ``-sum kappa_j``
    is dropped).
    """

    def __init__(self, data: EventData, parents: np.ndarray, K: float, alpha: float):
        self.kap = K * np.exp(alpha * data.m_exc)
        self.z = data.T - data.t
        trig = np.flatnonzero(parents)
        self.lags = data.t[trig] - data.t[parents[trig] - 1]
        self.n_trig = trig.size

    def __call__(self, c: float, p: float) -> float:
        surv = np.exp((p - 1.0) * (math.log(c) - np.log(self.z + c)))
        lh = self.n_trig * (math.log(p - 1.0) + (p - 1.0) * math.log(c)) - p * float(np.sum(np.log(self.lags + c)))
        return float(np.dot(self.kap, surv)) + lh


def update_k_alpha(catalog_or_data, parents, c, p, priors: PriorSpec, proposal_sd: dict, rng,
                   K: float, alpha: float, steps: int = 1, f=None):
    """Metropolis steps on ``(K, alpha)``; returns ``(K, alpha, n_accepted)``."""
    data = catalog_or_data if isinstance(catalog_or_data, EventData) else prepare(catalog_or_data, f)
    t = KAlphaTarget(data, np.asarray(parents), c, p)
    z, log_u = _proposal_noise(rng, steps)
    return _kernels.mh_k_alpha(float(K), float(alpha), t.x, t.H, float(t.n_trig), t.sx,
                               proposal_sd["K"], proposal_sd["alpha"], priors.K_upper, priors.alpha_upper, z, log_u)


def update_c_p(catalog_or_data, parents, K, alpha, priors: PriorSpec, proposal_sd: dict, rng,
               c: float, p: float, steps: int = 1, f=None):
    """Metropolis steps on ``(c, p)``; returns ``(c, p, n_accepted)``."""
    data = catalog_or_data if isinstance(catalog_or_data, EventData) else prepare(catalog_or_data, f)
    t = CPTarget(data, np.asarray(parents), K, alpha)
    z, log_u = _proposal_noise(rng, steps)
    return _kernels.mh_c_p(float(c), float(p), t.kap, t.z, t.lags, proposal_sd["c"], proposal_sd["p"],
                           priors.c_upper, priors.p_upper, z, log_u)


# step 5: spatial kernel ----------------------------------------------------


def triggered_offsets(data: EventData, parents) -> tuple[np.ndarray, np.ndarray]:
    """Offsets of every triggered event from its parent."""
    parents = np.asarray(parents)
    trig = np.flatnonzero(parents)
    par = parents[trig] - 1
    return data.x[trig] - data.x[par], data.y[trig] - data.y[par]


class PowerLawTarget:
    def __init__(self, dx, dy):
        self.r2 = dx * dx + dy * dy
        self.n = self.r2.size

    def __call__(self, d: float, q: float) -> float:
        return (self.n * (math.log(q - 1.0) + (q - 1.0) * math.log(d) - math.log(math.pi))
                - q * float(np.sum(np.log(self.r2 + d))))


def update_spatial(catalog_or_data, parents, priors: PriorSpec, proposal_sd: dict, rng, current,
                   steps: int = 1, f=None):
    """Refresh the spatial kernel; returns ``(kernel, n_accepted)``.

    Gaussian: exact draws ``sigma^2 ~ InvGamma(a + n'/2, b + sum(offset^2) / 2)``
    per axis. Power law: Metropolis on ``(d, q)``.
    """
    data = catalog_or_data if isinstance(catalog_or_data, EventData) else prepare(catalog_or_data, f)
    dx, dy = triggered_offsets(data, parents)
    if isinstance(current, GaussianKernel):
        shape = priors.sigma_shape + 0.5 * dx.size
        sx = (priors.sigma_scale + 0.5 * float(np.dot(dx, dx))) / rng.standard_gamma(shape)
        sy = (priors.sigma_scale + 0.5 * float(np.dot(dy, dy))) / rng.standard_gamma(shape)
        return GaussianKernel(sx, sy), steps
    if isinstance(current, PowerLawKernel):
        z, log_u = _proposal_noise(rng, steps)
        d, q, acc = _kernels.mh_powerlaw(current.d, current.q, dx * dx + dy * dy, proposal_sd["d"], proposal_sd["q"],
                                         priors.d_upper, priors.q_upper, z, log_u)
        return PowerLawKernel(d, q), acc
    return current, steps


# full sweep -------------------------------------------------------------------


def latent_sweep(data: EventData, state: ChainState, priors: PriorSpec, config: McmcConfig,
                 streams: dict, timing: dict | None = None, cache: PairCache | None = None) -> dict[str, int]:
    """One Gibbs sweep in place; returns accepted Metropolis steps per block."""
    clock = time.perf_counter
    sd, steps = config.proposal_sd, config.inner_mh_steps
    th = state.params

    t0 = clock()
    parents = _sample_branching(data, th, streams["branching"], cache)
    t1 = clock()
    mu = update_mu(parents, data.T, priors, streams["mu"])
    t2 = clock()
    K, alpha, acc_ka = update_k_alpha(data, parents, th.c, th.p, priors, sd, streams["K_alpha"], th.K, th.alpha, steps)
    t3 = clock()
    c, p, acc_cp = update_c_p(data, parents, K, alpha, priors, sd, streams["c_p"], th.c, th.p, steps)
    t4 = clock()
    spatial, acc_sp = update_spatial(data, parents, priors, sd, streams["spatial"], th.spatial, steps)
    t5 = clock()

    state.parents = parents
    state.params = EtasParams(mu, K, alpha, c, p, spatial)
    if timing is not None:
        for name, dt in zip(PHASES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4)):
            timing[name] = timing.get(name, 0.0) + dt
    flags = {"K_alpha": acc_ka, "c_p": acc_cp}
    if th.spatial.code == 2:
        flags["spatial"] = acc_sp
    return flags


def initial_state(catalog: Catalog, priors: PriorSpec, config: McmcConfig, kernel: str) -> ChainState:
    return ChainState(params=initial_params(catalog, priors, config, kernel),
                      parents=np.zeros(catalog.n, dtype=np.int64))


def run_latent_mcmc(
    catalog: Catalog,
    priors: PriorSpec | None = None,
    config: McmcConfig | None = None,
    f: BackgroundField | None = None,
    kernel: str = "none",
    progress=None,
) -> PosteriorSamples:
    """Run one latent-variable chain; deterministic given ``config.seed``."""
    priors = priors or PriorSpec()
    config = config or McmcConfig()
    data = prepare(catalog, f)
    state = initial_state(catalog, priors, config, kernel)
    _check_kernel_data(data, state.params)
    streams = rng_streams(config.seed, config.chain, PHASES)
    kind = state.params.spatial.code
    cache = PairCache(data, kind) if PairCache.fits(data.n, kind) else None
    names = state.params.names
    n_keep = config.n_stored
    draws = {k: np.empty(n_keep) for k in names}
    iterations = np.empty(n_keep, dtype=np.int64)
    blocks = ["K_alpha", "c_p"] + (["spatial"] if state.params.spatial.code == 2 else [])
    flags = {b: np.zeros(n_keep, dtype=bool) for b in blocks}
    totals = {b: 0 for b in blocks}
    branching = np.empty((n_keep, catalog.n), dtype=np.int64) if config.store_branching else None
    timing: dict[str, float] = {}
    start = time.perf_counter()
    k = 0
    for it in range(1, config.n_samples + 1):
        try:
            acc = latent_sweep(data, state, priors, config, streams, timing, cache)
        except (LikelihoodError, FloatingPointError, ValueError) as exc:
            raise SamplerError(f"sweep {it}: {exc}") from exc
        for b in blocks:
            totals[b] += acc[b]
        if config.stored(it):
            for name, v in state.params.as_dict().items():
                draws[name][k] = v
            for b in blocks:
                flags[b][k] = acc[b] > 0
            iterations[k] = it
            if branching is not None:
                branching[k] = state.parents
            k += 1
        if progress is not None:
            progress(it)
    timing["total"] = time.perf_counter() - start
    return PosteriorSamples(
        sampler="latent", kernel=state.params.spatial.name, draws=draws, iterations=iterations,
        accept_flags=flags, acceptance={b: totals[b] / (config.n_samples * config.inner_mh_steps) for b in blocks},
        config=config, priors=priors, M0=catalog.M0, T=catalog.T, n_events=catalog.n,
        background=(f.describe() if f is not None else {"kind": "temporal"}),
        branching=branching, timing=timing,
    )

