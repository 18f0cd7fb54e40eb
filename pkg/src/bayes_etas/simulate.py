"""Branching-process simulation of ETAS catalogs.

Generation 0 is a homogeneous Poisson(mu) process on the window with
locations from the background field. Every event (and every event of an
optional history) spawns ``Poisson(kappa(m) * mass)`` direct aftershocks,
where ``mass`` is the Omori probability of the part of the window still
ahead of it; lags are drawn by exact inversion of the truncated Omori CDF.
This matches the finite-window complete-data likelihood term for term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import BackgroundField, Catalog, Region, temporal_background, uniform_background
from .model import EtasParams


class SimulationError(RuntimeError):
    """The simulation exploded past ``max_events`` or is supercritical."""


def branching_ratio(params: EtasParams, beta: float) -> float:
    """Mean number of direct aftershocks per event under GR(beta) magnitudes."""
    if not beta > params.alpha:
        raise SimulationError(
            f"beta={beta} <= alpha={params.alpha}: expected productivity diverges (supercritical)"
        )
    return params.K * beta / (beta - params.alpha)


def inverse_omori_sample(u, c: float, p: float, window: float = math.inf, start: float = 0.0):
    """Lag with the Omori density truncated to ``[start, window]``.

    ``u`` is uniform on [0, 1); ``u = 0`` maps to ``start``.
    """
    u = np.asarray(u, dtype=np.float64)
    log_ac = math.log(start + c)
    if math.isinf(window):
        frac = 1.0
    else:
        frac = -math.expm1((p - 1.0) * (log_ac - math.log(window + c)))
    out = c * np.expm1(log_ac - math.log(c) - np.log1p(-u * frac) / (p - 1.0))
    return float(out) if out.ndim == 0 else out


def _truncated_lags(u, c, p, a, b):
    """Vectorized version of :func:`inverse_omori_sample` over per-parent windows."""
    log_ac = np.log(a + c)
    frac = -np.expm1((p - 1.0) * (log_ac - np.log(b + c)))
    lag = c * np.expm1(log_ac - math.log(c) - np.log1p(-u * frac) / (p - 1.0))
    return np.clip(lag, a, b)


def _offspring_locations(px, py, spatial, rng):
    n = px.size
    if spatial.code == 1:
        return (px + math.sqrt(spatial.sigma_x2) * rng.standard_normal(n),
                py + math.sqrt(spatial.sigma_y2) * rng.standard_normal(n))
    d, q = spatial.d, spatial.q
    v = rng.random(n)
    ang = 2.0 * math.pi * rng.random(n)
    r = np.sqrt(d * np.expm1(-np.log1p(-v) / (q - 1.0)))
    return px + r * np.cos(ang), py + r * np.sin(ang)


@dataclass
class WindowSim:
    """Raw arrays of one simulated window, in creation order."""

    t: np.ndarray
    m: np.ndarray
    x: np.ndarray | None
    y: np.ndarray | None
    parent: np.ndarray
    generation: np.ndarray
    generation_sizes: list[int] = field(default_factory=list)


def simulate_window(
    params: EtasParams,
    beta: float,
    M0: float,
    t0: float,
    t1: float,
    rng: np.random.Generator,
    background: BackgroundField | None = None,
    history: Catalog | None = None,
    max_events: int = 1_000_000,
) -> WindowSim:
    """Simulate events on ``[t0, t1]``; parents index ``[history; new]`` 1-based."""
    spatial = params.spatial.code != 0
    if spatial and (background is None or background.kind == "temporal"):
        raise SimulationError("a spatial kernel needs a spatial background field")
    mu, K, alpha, c, p = params.mu, params.K, params.alpha, params.c, params.p
    nh = 0 if history is None else history.n
    span = t1 - t0
    ts, ms, xs, ys, ps, gs = [], [], [], [], [], []
    sizes = []

    nb = int(rng.poisson(mu * span))
    cur_t = t0 + span * rng.random(nb)
    cur_m = M0 + rng.exponential(1.0 / beta, nb)
    if spatial:
        cur_x, cur_y = background.sample(nb, rng)
    cur_p = np.zeros(nb, dtype=np.int64)
    cur_g = np.zeros(nb, dtype=np.int64)

    if nh:
        ht = history.t
        a = np.maximum(t0 - ht, 0.0)
        b = t1 - ht
        mass = np.exp((p - 1.0) * (math.log(c) - np.log(a + c))) - np.exp((p - 1.0) * (math.log(c) - np.log(b + c)))
        counts = rng.poisson(K * np.exp(alpha * (history.m - history.M0)) * mass)
        par = np.repeat(np.arange(nh), counts)
        lag = _truncated_lags(rng.random(par.size), c, p, a[par], b[par])
        cur_t = np.concatenate([cur_t, ht[par] + lag])
        cur_m = np.concatenate([cur_m, M0 + rng.exponential(1.0 / beta, par.size)])
        if spatial:
            hx, hy = _offspring_locations(history.x[par], history.y[par], params.spatial, rng)
            cur_x, cur_y = np.concatenate([cur_x, hx]), np.concatenate([cur_y, hy])
        cur_p = np.concatenate([cur_p, par + 1])
        cur_g = np.concatenate([cur_g, np.ones(par.size, dtype=np.int64)])

    total = 0
    gen = 0
    while cur_t.size:
        first = total
        total += cur_t.size
        sizes.append(int(cur_t.size))
        if total > max_events:
            raise SimulationError(
                f"simulation exceeded max_events={max_events} (generation sizes so far: {sizes}); "
                "the parameters are probably supercritical"
            )
        ts.append(cur_t)
        ms.append(cur_m)
        ps.append(cur_p)
        gs.append(cur_g)
        if spatial:
            xs.append(cur_x)
            ys.append(cur_y)
        gen = int(cur_g.max()) + 1 if cur_g.size else gen + 1
        rem = t1 - cur_t
        mass = -np.expm1((p - 1.0) * (math.log(c) - np.log(rem + c)))
        counts = rng.poisson(K * np.exp(alpha * (cur_m - M0)) * mass)
        par = np.repeat(np.arange(cur_t.size), counts)
        lag = _truncated_lags(rng.random(par.size), c, p, np.zeros(par.size), rem[par])
        new_t = cur_t[par] + lag
        new_m = M0 + rng.exponential(1.0 / beta, par.size)
        if spatial:
            cur_x, cur_y = _offspring_locations(cur_x[par], cur_y[par], params.spatial, rng)
        cur_t, cur_m = new_t, new_m
        cur_p = nh + first + par + 1
        cur_g = np.full(par.size, gen, dtype=np.int64)

    def cat(parts, dtype=np.float64):
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    return WindowSim(
        t=cat(ts), m=cat(ms), x=cat(xs) if spatial else None, y=cat(ys) if spatial else None,
        parent=cat(ps, np.int64), generation=cat(gs, np.int64), generation_sizes=sizes,
    )


@dataclass(frozen=True)
class SimConfig:
    params: EtasParams
    beta: float
    T: float
    M0: float = 0.0
    region: Region | None = None
    seed: int = 0
    history: Catalog | None = None
    t_start: float | None = None
    max_events: int = 1_000_000
    background: BackgroundField | None = None
    allow_supercritical: bool = False
    clip_to_region: bool = False

    @property
    def start(self) -> float:
        if self.t_start is not None:
            return self.t_start
        return self.history.T if self.history is not None else 0.0


@dataclass(frozen=True, eq=False)
class SimResult:
    """Simulated catalog with ground truth.

    ``parents`` are 1-based indices into the history followed by the new
    events (just the new events when there is no history); 0 = background.
    ``outside`` flags spatial events that landed outside the region; they are
    kept unless clipping was requested.
    """

    catalog: Catalog
    parents: np.ndarray
    generation: np.ndarray
    outside: np.ndarray
    region: Region | None
    generation_sizes: tuple[int, ...]


def simulate_catalog(config: SimConfig) -> SimResult:
    params = config.params
    if not config.allow_supercritical:
        r = branching_ratio(params, config.beta)
        if r >= 1:
            raise SimulationError(f"branching ratio {r:.3f} >= 1: the process is supercritical")
    spatial = params.spatial.code != 0
    background = config.background
    if spatial and background is None:
        if config.region is None:
            raise SimulationError("spatial simulation needs a region or a background field")
        background = uniform_background(config.region)
    region = config.region or (background.region if background is not None else None)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(config.seed))))
    sim = simulate_window(params, config.beta, config.M0, config.start, config.T, rng,
                          background=background if spatial else temporal_background(),
                          history=config.history, max_events=config.max_events)

    nh = 0 if config.history is None else config.history.n
    order = np.argsort(sim.t, kind="stable")
    position = np.empty(order.size, dtype=np.int64)
    position[order] = np.arange(order.size)
    parents = sim.parent[order].copy()
    own = parents > nh
    parents[own] = nh + position[parents[own] - nh - 1] + 1
    t = np.clip(sim.t[order], config.start, config.T)
    m = sim.m[order]
    x = sim.x[order] if spatial else None
    y = sim.y[order] if spatial else None
    outside = (~region.contains(x, y)) if (spatial and region is not None) else np.zeros(t.size, dtype=bool)
    generation = sim.generation[order]
    if config.clip_to_region and outside.any():
        keep = ~outside
        new_pos = np.cumsum(keep) - 1
        own = parents > nh
        remapped = parents.copy()
        dropped_parent = own & ~keep[np.maximum(parents - nh - 1, 0)]
        remapped[own] = nh + new_pos[parents[own] - nh - 1] + 1
        remapped[dropped_parent] = -1
        parents, t, m, x, y, generation = remapped[keep], t[keep], m[keep], x[keep], y[keep], generation[keep]
        outside = outside[keep]
    keep_region = region if (spatial and not outside.any()) else None
    catalog = Catalog.build(t, m, config.T, config.M0, x=x, y=y, region=keep_region)
    return SimResult(catalog=catalog, parents=parents, generation=generation, outside=outside,
                     region=region, generation_sizes=tuple(sim.generation_sizes))


# expected counts -------------------------------------------------------------------


def _omori_integrated_cdf(z, c, p):
    """``A(z) = int_0^z H(u) du``."""
    z = np.asarray(z, dtype=np.float64)
    if abs(2.0 - p) < 1e-9:
        tail = c * np.log1p(z / c)
    else:
        tail = c * np.expm1((2.0 - p) * np.log1p(z / c)) / (2.0 - p)
    return z - tail


def expected_event_count(params: EtasParams, beta: float, T: float, cells: int = 2000) -> float:
    """Expected number of events on ``[0, T]`` including the finite-window edge.

    Solves the discretized renewal equation for the expected counts per cell,
    with parents spread uniformly within their cell.
    """
    r = branching_ratio(params, beta)
    dt = T / cells
    A = _omori_integrated_cdf(dt * np.arange(cells + 1), params.c, params.p)
    W = np.empty(cells)
    W[0] = A[1] / dt
    W[1:] = (A[2:] - 2.0 * A[1:-1] + A[:-2]) / dt
    N = np.empty(cells)
    base = params.mu * dt
    denom = 1.0 - r * W[0]
    for k in range(cells):
        inflow = r * np.dot(N[:k], W[k:0:-1]) if k else 0.0
        N[k] = (base + inflow) / denom
    return float(N.sum())


def stationary_event_count(params: EtasParams, beta: float, T: float) -> float:
    """``mu T / (1 - branching ratio)``: the long-window mean count."""
    r = branching_ratio(params, beta)
    if r >= 1:
        raise SimulationError("no finite stationary mean for a supercritical process")
    return params.mu * T / (1.0 - r)


def find_window_for_count(params: EtasParams, beta: float, n_target: float, rtol: float = 1e-3) -> float:
    """Window length whose expected event count is ``n_target`` (bisection)."""
    if n_target <= 0:
        raise ValueError("target count must be positive")
    lo, hi = 0.0, n_target / params.mu
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_event_count(params, beta, mid) < n_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < rtol * hi:
            break
    return 0.5 * (lo + hi)
