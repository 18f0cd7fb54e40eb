"""Effective sample size, posterior summaries and sampler benchmarks."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .posterior import PosteriorSamples

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
ESS_TARGET = 200


class DegenerateChainWarning(RuntimeWarning):
    pass


def autocorrelation(chain) -> np.ndarray:
    """Sample autocorrelation at all lags (biased estimator, via FFT)."""
    x = np.asarray(chain, dtype=np.float64)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(x, size)
    acov = np.fft.irfft(fx * np.conjugate(fx), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(chain) -> float:
    """ESS with Geyer's initial positive sequence.

    Autocorrelations are summed in adjacent pairs until a pair sum is not
    positive. The result is clipped to ``[1, n]``. A constant chain yields 1
    and a :class:`DegenerateChainWarning`.
    """
    x = np.asarray(chain, dtype=np.float64)
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 draws to estimate ESS, got {n}")
    if np.ptp(x) == 0 or not np.isfinite(x).all():
        warnings.warn("chain is constant or non-finite; ESS reported as 1", DegenerateChainWarning, stacklevel=2)
        return 1.0
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    ess = n / tau if tau > 0 else float(n)
    return float(min(max(ess, 1.0), n))


def quantile7(x, q) -> np.ndarray:
    """Type-7 (linear interpolation) sample quantiles."""
    return np.quantile(np.asarray(x, dtype=np.float64), q, method="linear")


@dataclass
class ParamSummary:
    mean: float
    sd: float
    quantiles: dict[str, float]
    ess: float
    ess_per_second: float | None
    degenerate: bool = False


@dataclass
class ChainSummary:
    sampler: str
    n_draws: int
    params: dict[str, ParamSummary]
    acceptance: dict[str, float]
    wall_clock: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self, include_timing: bool = False) -> dict:
        out = {
            "sampler": self.sampler,
            "n_draws": self.n_draws,
            "acceptance": {k: self.acceptance[k] for k in sorted(self.acceptance)},
            "params": {},
        }
        for name, s in self.params.items():
            d = {"mean": s.mean, "sd": s.sd, "quantiles": s.quantiles, "ess": s.ess, "degenerate": s.degenerate}
            if include_timing:
                d["ess_per_second"] = s.ess_per_second
            out["params"][name] = d
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out

    def table(self) -> str:
        lines = [f"{'param':>9} {'mean':>11} {'sd':>11} {'2.5%':>11} {'50%':>11} {'97.5%':>11} {'ESS':>8}"]
        for name, s in self.params.items():
            q = s.quantiles
            lines.append(f"{name:>9} {s.mean:11.5g} {s.sd:11.5g} {q['2.5%']:11.5g} {q['50%']:11.5g} "
                         f"{q['97.5%']:11.5g} {s.ess:8.1f}")
        acc = ", ".join(f"{k}={v:.3f}" for k, v in sorted(self.acceptance.items()))
        lines.append(f"acceptance: {acc}")
        return "\n".join(lines)


def _qlabel(q: float) -> str:
    return f"{100 * q:g}%"


def summarize(samples: PosteriorSamples) -> ChainSummary:
    wall = samples.timing.get("total")
    out = {}
    for name in samples.names:
        x = samples.draws[name]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateChainWarning)
            ess = effective_sample_size(x) if x.size >= 10 else float(x.size)
        degenerate = any(issubclass(w.category, DegenerateChainWarning) for w in caught)
        qs = quantile7(x, QUANTILES)
        out[name] = ParamSummary(
            mean=float(np.mean(x)), sd=float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
            quantiles={_qlabel(q): float(v) for q, v in zip(QUANTILES, qs)},
            ess=ess, ess_per_second=(ess / wall) if wall else None, degenerate=degenerate,
        )
    return ChainSummary(sampler=samples.sampler, n_draws=len(samples), params=out,
                        acceptance=dict(samples.acceptance), wall_clock=wall)


def minutes_to_ess(wall_seconds: float, ess: float, target: float = ESS_TARGET) -> float:
    """Extrapolated minutes needed to reach ``target`` effective samples."""
    return wall_seconds / 60.0 / ess * target


@dataclass
class BenchmarkRow:
    n: int
    sampler: str
    param: str
    ess: float
    wall_seconds: float
    minutes_to_200: float
    n_draws: int


@dataclass
class BenchmarkTable:
    rows: list[BenchmarkRow]

    def get(self, n: int, sampler: str, param: str) -> BenchmarkRow:
        for r in self.rows:
            if (r.n, r.sampler, r.param) == (n, sampler, param):
                return r
        raise KeyError((n, sampler, param))

    @property
    def sizes(self) -> list[int]:
        return sorted({r.n for r in self.rows})

    @property
    def samplers(self) -> list[str]:
        return [s for s in ("direct", "latent") if any(r.sampler == s for r in self.rows)]

    @property
    def params(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.param not in seen:
                seen.append(r.param)
        return seen

    def ratio(self, n: int, param: str) -> float:
        """Direct / latent minutes-to-ESS-200 (equivalently latent / direct ESS per second)."""
        return self.get(n, "direct", param).minutes_to_200 / self.get(n, "latent", param).minutes_to_200

    def to_csv(self) -> str:
        both = len(self.samplers) == 2
        lines = ["n,sampler,param,ess,n_draws,wall_seconds,minutes_to_ess200" + (",efficiency_ratio" if both else "")]
        for r in self.rows:
            line = f"{r.n},{r.sampler},{r.param},{r.ess:.6g},{r.n_draws},{r.wall_seconds:.6g},{r.minutes_to_200:.6g}"
            if both:
                line += f",{self.ratio(r.n, r.param):.6g}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def ess_csv(self) -> str:
        """Timing-free part of the table (reproducible under a fixed seed)."""
        lines = ["n,sampler,param,ess,n_draws"]
        lines += [f"{r.n},{r.sampler},{r.param},{r.ess!r},{r.n_draws}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned table: one row per catalog size, minutes to ESS 200 per sampler and parameter."""
        params = self.params
        head = f"{'n':>6} |"
        for s in self.samplers:
            head += "".join(f" {s[:6]}:{p:<6}"[:14].rjust(14) for p in params) + " |"
        lines = [head, "-" * len(head)]
        for n in self.sizes:
            line = f"{n:>6} |"
            for s in self.samplers:
                line += "".join(f"{self.get(n, s, p).minutes_to_200:14.4g}" for p in params) + " |"
            lines.append(line)
        if len(self.samplers) == 2:
            lines.append("")
            lines.append(f"{'n':>6} | " + "".join(f"{'ratio:' + p:>14}" for p in params))
            for n in self.sizes:
                lines.append(f"{n:>6} | " + "".join(f"{self.ratio(n, p):14.3g}" for p in params))
        return "\n".join(lines) + "\n"


def benchmark(catalogs: dict, priors=None, config=None, samplers=("latent", "direct"), f=None,
              kernel: str = "none", configs: dict | None = None) -> BenchmarkTable:
    """Run each sampler on each catalog and tabulate minutes to ESS 200.

    ``catalogs`` maps a label (normally the size n) to a catalog.
    ``configs`` optionally gives a per-(label, sampler) config, e.g. after
    pilot tuning; otherwise ``config`` is used for every run.
    """
    from .direct import run_direct_mcmc
    from .latent import run_latent_mcmc

    runners = {"latent": run_latent_mcmc, "direct": run_direct_mcmc}
    rows = []
    for label, catalog in catalogs.items():
        for name in samplers:
            cfg = (configs or {}).get((label, name), config)
            if cfg is not None and cfg.n_stored < 10:
                raise ValueError("nothing to measure: fewer than 10 post-burn-in draws")
            start = time.perf_counter()
            samples = runners[name](catalog, priors, cfg, f, kernel)
            wall = time.perf_counter() - start
            for param in samples.names:
                ess = effective_sample_size(samples.draws[param])
                rows.append(BenchmarkRow(n=int(label), sampler=name, param=param, ess=ess, wall_seconds=wall,
                                         minutes_to_200=minutes_to_ess(wall, ess), n_draws=len(samples)))
    return BenchmarkTable(rows)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def geweke_mean_z(chain, first: float = 0.1, last: float = 0.5) -> float:
    """Difference of early and late chain means in spectral standard errors."""
    x = np.asarray(chain, dtype=np.float64)
    a = x[: int(first * x.size)]
    b = x[int((1 - last) * x.size):]
    va = np.var(a, ddof=1) / effective_sample_size(a)
    vb = np.var(b, ddof=1) / effective_sample_size(b)
    return float((a.mean() - b.mean()) / math.sqrt(va + vb))
