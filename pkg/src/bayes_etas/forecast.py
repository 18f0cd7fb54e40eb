"""Posterior-predictive forecasts of future seismicity.

For every stored posterior draw the ETAS process is continued on
``[T, T + horizon]``: the observed events keep triggering into the window and
fresh background events arrive at rate ``mu``. Averaging over draws gives
the Bayesian predictive distribution; feeding a single parameter vector
through the same path gives the plug-in forecast.

Each realization has its own Philox stream derived from ``(seed, k)``. A
realization is always simulated to the longest horizon requested and then
truncated, so results for nested horizons and thresholds share random
numbers and are exactly monotone.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .catalog import BackgroundField, Catalog, Region, background_from_description
from .model import fit_mle
from .posterior import PosteriorSamples
from .simulate import simulate_window


class ForecastError(ValueError):
    pass


@dataclass(frozen=True)
class ForecastConfig:
    """``min_mag`` defaults to the catalog's completeness magnitude."""

    horizon: float
    min_mag: float | None = None
    n_sims: int = 1
    grid: tuple[int, int] | None = None
    seed: int = 0
    max_events: int = 1_000_000

    def __post_init__(self):
        if not self.horizon > 0:
            raise ForecastError(f"horizon must be positive, got {self.horizon}")
        if self.n_sims < 1:
            raise ForecastError("n_sims must be at least 1")
        if self.grid is not None and min(self.grid) < 8:
            raise ForecastError(f"grid dimensions must be at least 8, got {self.grid}")

    def threshold(self, catalog: Catalog) -> float:
        R = catalog.M0 if self.min_mag is None else self.min_mag
        if R < catalog.M0:
            raise ForecastError(f"threshold {R} is below the completeness magnitude {catalog.M0}")
        return float(R)


@dataclass
class ForecastGrid:
    """Expected number of qualifying events per cell.

    ``counts[iy, ix]`` covers ``x`` in ``[x_min + ix*dx, x_min + (ix+1)*dx)``
    and ``y`` likewise with ``iy`` counted from ``y_min``; flattening is
    row-major (``iy * nx + ix``).
    """

    region: Region
    counts: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        ny, nx = self.counts.shape
        return nx, ny

    @property
    def cell_area(self) -> float:
        nx, ny = self.shape
        return self.region.area / (nx * ny)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        r = self.region
        xs = r.x_min + (np.arange(nx) + 0.5) * (r.x_max - r.x_min) / nx
        ys = r.y_min + (np.arange(ny) + 0.5) * (r.y_max - r.y_min) / ny
        return xs, ys

    def to_csv(self) -> str:
        xs, ys = self.centers()
        area = self.cell_area
        lines = ["x,y,expected_count,density"]
        for iy, yc in enumerate(ys):
            for ix, xc in enumerate(xs):
                v = float(self.counts[iy, ix])
                lines.append(f"{xc!r},{yc!r},{v!r},{v / area!r}")
        return "\n".join(lines) + "\n"


@dataclass
class ForecastResult:
    counts: np.ndarray
    horizon: float
    min_mag: float
    exceedance: float
    exceedance_se: float
    grid: ForecastGrid | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def histogram(self) -> np.ndarray:
        """``histogram[k]`` is the predictive probability of exactly ``k`` events."""
        return np.bincount(self.counts) / self.counts.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.counts))

    @property
    def variance(self) -> float:
        return float(np.var(self.counts, ddof=1)) if self.counts.size > 1 else 0.0

    def interval(self, level: float = 0.95) -> tuple[int, int]:
        """Equal-tailed predictive interval for the count."""
        lo, hi = np.quantile(self.counts, [(1 - level) / 2, (1 + level) / 2], method="inverted_cdf")
        return int(lo), int(hi)

    def to_json(self) -> dict:
        lo, hi = self.interval()
        return {
            "horizon": self.horizon,
            "min_mag": self.min_mag,
            "n_realizations": int(self.counts.size),
            "histogram": [float(v) for v in self.histogram],
            "mean": self.mean,
            "variance": self.variance,
            "interval_95": [lo, hi],
            "exceedance_probability": self.exceedance,
            "exceedance_se": self.exceedance_se,
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


@dataclass
class _Realization:
    t: np.ndarray
    m: np.ndarray
    x: np.ndarray | None
    y: np.ndarray | None


def _background(samples: PosteriorSamples, catalog: Catalog, f: BackgroundField | None) -> BackgroundField | None:
    if f is not None:
        return f
    if samples.kernel == "none":
        return None
    return background_from_description(samples.background, catalog)


def simulate_realizations(samples: PosteriorSamples, catalog: Catalog, beta: float, horizon: float,
                          seed: int = 0, n_sims: int = 1, f: BackgroundField | None = None,
                          max_events: int = 1_000_000) -> list[_Realization]:
    """One continuation of the catalog per (draw, repeat), in draw order."""
    if len(samples) == 0:
        raise ForecastError("no posterior draws to forecast from")
    if not beta > 0:
        raise ForecastError(f"beta must be positive, got {beta}")
    f = _background(samples, catalog, f)
    t0 = catalog.T
    out = []
    for k in range(len(samples)):
        params = samples.params_at(k)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(k,))))
        for _ in range(n_sims):
            sim = simulate_window(params, beta, catalog.M0, t0, t0 + horizon, rng, background=f,
                                  history=catalog, max_events=max_events)
            out.append(_Realization(sim.t, sim.m, sim.x, sim.y))
    return out


def _count(reals, t_end: float, R: float) -> np.ndarray:
    return np.array([int(np.count_nonzero((r.t <= t_end) & (r.m >= R))) for r in reals], dtype=np.int64)


def _grid(reals, region: Region, shape, t_end: float, R: float) -> ForecastGrid:
    nx, ny = shape
    total = np.zeros((ny, nx))
    for r in reals:
        keep = (r.t <= t_end) & (r.m >= R) & region.contains(r.x, r.y)
        h, _, _ = np.histogram2d(r.y[keep], r.x[keep], bins=(ny, nx),
                                 range=((region.y_min, region.y_max), (region.x_min, region.x_max)))
        total += h
    return ForecastGrid(region=region, counts=total / len(reals))


def forecast_counts(samples: PosteriorSamples, catalog: Catalog, beta: float, config: ForecastConfig,
                    f: BackgroundField | None = None, reals=None) -> ForecastResult:
    """Predictive distribution of the number of events with ``m >= R`` in the window."""
    R = config.threshold(catalog)
    if reals is None:
        reals = simulate_realizations(samples, catalog, beta, config.horizon, config.seed, config.n_sims, f,
                                      config.max_events)
    t_end = catalog.T + config.horizon
    counts = _count(reals, t_end, R)
    hit = float(np.mean(counts > 0))
    grid = None
    if config.grid is not None:
        if samples.kernel == "none" or catalog.region is None:
            raise ForecastError("a spatial grid needs a spatial model and a catalog region")
        grid = _grid(reals, catalog.region, config.grid, t_end, R)
    return ForecastResult(
        counts=counts, horizon=config.horizon, min_mag=R, exceedance=hit,
        exceedance_se=math.sqrt(hit * (1.0 - hit) / counts.size), grid=grid,
        provenance={"samples_sha256": samples.digest(), "sampler": samples.sampler, "beta": beta,
                    "config": {k: v for k, v in asdict(config).items()}},
    )


def exceedance_probability(samples: PosteriorSamples, catalog: Catalog, beta: float, config: ForecastConfig,
                           f: BackgroundField | None = None) -> tuple[float, float]:
    """Fraction of realizations with at least one event ``m >= R``, and its binomial SE."""
    res = forecast_counts(samples, catalog, beta, config, f)
    return res.exceedance, res.exceedance_se


def spatial_forecast_grid(samples: PosteriorSamples, catalog: Catalog, beta: float, config: ForecastConfig,
                          f: BackgroundField | None = None) -> ForecastGrid:
    if config.grid is None:
        config = ForecastConfig(config.horizon, config.min_mag, config.n_sims, (32, 32), config.seed,
                                config.max_events)
    return forecast_counts(samples, catalog, beta, config, f).grid


def exceedance_curve(samples: PosteriorSamples, catalog: Catalog, beta: float, horizons, thresholds,
                     seed: int = 0, n_sims: int = 1, f: BackgroundField | None = None) -> np.ndarray:
    """Exceedance probabilities on a ``(horizon, threshold)`` grid with common random numbers."""
    horizons = np.asarray(horizons, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(thresholds < catalog.M0):
        raise ForecastError("thresholds must not be below the completeness magnitude")
    reals = simulate_realizations(samples, catalog, beta, float(horizons.max()), seed, n_sims, f)
    out = np.empty((horizons.size, thresholds.size))
    for a, h in enumerate(horizons):
        for b, R in enumerate(thresholds):
            out[a, b] = np.mean(_count(reals, catalog.T + h, R) > 0)
    return out


def mle_plugin_forecast(catalog: Catalog, beta: float, config: ForecastConfig, n_draws: int = 1000,
                        f: BackgroundField | None = None, kernel: str = "none", fit=None,
                        seed: int = 0) -> ForecastResult:
    """Same simulation with every draw replaced by the maximum-likelihood estimate."""
    fit = fit or fit_mle(catalog, f, kernel, seed=seed)
    if not fit.converged:
        raise ForecastError(f"maximum-likelihood fit did not converge: {fit.message}")
    desc = f.describe() if f is not None else {"kind": "temporal"}
    point = PosteriorSamples.degenerate(fit.params, n_draws, catalog.M0, catalog.T, catalog.n, desc)
    res = forecast_counts(point, catalog, beta, config, f)
    res.provenance["mle"] = fit.params.as_dict()
    return res
