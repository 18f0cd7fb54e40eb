"""Priors, sampler configuration and posterior sample containers shared by
both samplers, plus their on-disk format (CSV records + JSON sidecar)."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .model import EtasParams, kernel_class

DEFAULT_PROPOSAL_SD = {
    "mu": 0.05,
    "K": 0.15,
    "alpha": 0.15,
    "c": 0.25,
    "p": 0.30,
    "sigma_x2": 0.1,
    "sigma_y2": 0.1,
    "d": 0.1,
    "q": 0.1,
}


@dataclass(frozen=True)
class PriorSpec:
    """Gamma prior on mu, uniform boxes on K, alpha, c, p (and d, q), and
    inverse-gamma priors on the Gaussian kernel variances."""

    mu_shape: float = 0.1
    mu_rate: float = 0.1
    K_upper: float = 10.0
    alpha_upper: float = 10.0
    c_upper: float = 10.0
    p_upper: float = 10.0
    sigma_shape: float = 0.1
    sigma_scale: float = 0.1
    d_upper: float = 10.0
    q_upper: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"prior hyperparameter {k} must be positive, got {v}")
        if self.p_upper <= 1 or self.q_upper <= 1:
            raise ValueError("upper bounds for p and q must exceed 1")

    def bounds(self, name: str) -> tuple[float, float]:
        return {
            "mu": (0.0, math.inf),
            "K": (0.0, self.K_upper),
            "alpha": (0.0, self.alpha_upper),
            "c": (0.0, self.c_upper),
            "p": (1.0, self.p_upper),
            "sigma_x2": (0.0, math.inf),
            "sigma_y2": (0.0, math.inf),
            "d": (0.0, self.d_upper),
            "q": (1.0, self.q_upper),
        }[name]

    def in_support(self, name: str, value: float) -> bool:
        lo, hi = self.bounds(name)
        return lo < value < hi

    def log_density(self, name: str, value: float) -> float:
        """Log prior density of one coordinate (``-inf`` outside the support)."""
        if not self.in_support(name, value):
            return -math.inf
        if name == "mu":
            a, b = self.mu_shape, self.mu_rate
            return a * math.log(b) - gammaln(a) + (a - 1.0) * math.log(value) - b * value
        if name in ("sigma_x2", "sigma_y2"):
            a, b = self.sigma_shape, self.sigma_scale
            return a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(value) - b / value
        lo, hi = self.bounds(name)
        return -math.log(hi - lo)

    def log_prior(self, params: EtasParams) -> float:
        return sum(self.log_density(k, v) for k, v in params.as_dict().items())

    def sample(self, rng: np.random.Generator, kernel: str = "none") -> EtasParams:
        """One draw from the prior."""
        d = {
            "mu": rng.gamma(self.mu_shape, 1.0 / self.mu_rate),
            "K": rng.uniform(0.0, self.K_upper),
            "alpha": rng.uniform(0.0, self.alpha_upper),
            "c": rng.uniform(0.0, self.c_upper),
            "p": rng.uniform(1.0, self.p_upper),
        }
        if kernel == "gaussian":
            d["sigma_x2"] = self.sigma_scale / rng.standard_gamma(self.sigma_shape)
            d["sigma_y2"] = self.sigma_scale / rng.standard_gamma(self.sigma_shape)
        elif kernel == "powerlaw":
            d["d"] = rng.uniform(0.0, self.d_upper)
            d["q"] = rng.uniform(1.0, self.q_upper)
        return EtasParams.from_dict(d, kernel)


@dataclass(frozen=True)
class McmcConfig:
    """``n_samples`` counts every sweep including the ``burn_in`` ones."""

    n_samples: int = 5500
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    proposal_sd: dict = field(default_factory=lambda: dict(DEFAULT_PROPOSAL_SD))
    inner_mh_steps: int = 1
    store_branching: bool = False
    chain: int = 0
    init: EtasParams | None = None

    def __post_init__(self):
        if not (self.n_samples > self.burn_in >= 0):
            raise ValueError(f"need n_samples > burn_in >= 0, got {self.n_samples}, {self.burn_in}")
        if self.thin < 1 or self.inner_mh_steps < 1:
            raise ValueError("thin and inner_mh_steps must be at least 1")
        merged = dict(DEFAULT_PROPOSAL_SD)
        merged.update(self.proposal_sd)
        if any(not v > 0 for v in merged.values()):
            raise ValueError("proposal standard deviations must be positive")
        object.__setattr__(self, "proposal_sd", merged)

    def stored(self, iteration: int) -> bool:
        """Whether 1-based sweep ``iteration`` is kept."""
        return iteration > self.burn_in and (iteration - self.burn_in - 1) % self.thin == 0

    @property
    def n_stored(self) -> int:
        return len(range(self.burn_in, self.n_samples, self.thin))

    def replace(self, **changes) -> "McmcConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in ("n_samples", "burn_in", "thin", "seed", "inner_mh_steps",
                                            "store_branching", "chain")}
        d["proposal_sd"] = dict(sorted(self.proposal_sd.items()))
        d["init"] = None if self.init is None else self.init.as_dict()
        return d


def rng_streams(seed: int, chain: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    """Independent counter-based (Philox) streams, one per sweep phase."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(chain),))
    return {name: np.random.Generator(np.random.Philox(child)) for name, child in zip(names, ss.spawn(len(names)))}


@dataclass
class PosteriorSamples:
    sampler: str
    kernel: str
    draws: dict[str, np.ndarray]
    iterations: np.ndarray
    accept_flags: dict[str, np.ndarray]
    acceptance: dict[str, float]
    config: McmcConfig
    priors: PriorSpec
    M0: float
    T: float
    n_events: int
    background: dict = field(default_factory=lambda: {"kind": "temporal"})
    branching: np.ndarray | None = None
    timing: dict[str, float] = field(default_factory=dict)
    n_likelihood_evals: int = 0

    def __post_init__(self):
        lengths = {len(v) for v in self.draws.values()} | {len(self.iterations)}
        if len(lengths) > 1:
            raise ValueError("draw vectors have unequal lengths")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.draws)

    def __len__(self) -> int:
        return len(self.iterations)

    def params_at(self, k: int) -> EtasParams:
        return EtasParams.from_dict({name: self.draws[name][k] for name in self.names}, self.kernel)

    def mean_params(self) -> EtasParams:
        return EtasParams.from_dict({name: float(np.mean(v)) for name, v in self.draws.items()}, self.kernel)

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.draws[k] for k in self.names])

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in self.names:
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.draws[k], dtype=np.float64).tobytes())
        return h.hexdigest()

    @classmethod
    def degenerate(cls, params: EtasParams, n: int, M0: float, T: float, n_events: int = 0,
                   background: dict | None = None) -> "PosteriorSamples":
        """A point-mass 'posterior' holding ``n`` copies of ``params``."""
        kernel = params.spatial.name
        return cls(
            sampler="point", kernel=kernel,
            draws={k: np.full(n, v) for k, v in params.as_dict().items()},
            iterations=np.arange(1, n + 1), accept_flags={}, acceptance={},
            config=McmcConfig(n_samples=n, burn_in=0), priors=PriorSpec(),
            M0=M0, T=T, n_events=n_events, background=background or {"kind": "temporal"},
        )


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def branching_path(path: Path) -> Path:
    return path.with_name(path.stem + ".branching.txt")


def write_samples(samples: PosteriorSamples, path: str | Path) -> list[Path]:
    """Write draws (CSV), a JSON sidecar and, if stored, branching vectors.

    Wall-clock timings are not written here so that output files are
    reproducible byte for byte; callers record them separately.
    """
    path = Path(path)
    flags = sorted(samples.accept_flags)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *samples.names, *(f"accept_{b}" for b in flags)])
        for k in range(len(samples)):
            w.writerow([int(samples.iterations[k]),
                        *(repr(float(samples.draws[n][k])) for n in samples.names),
                        *(int(samples.accept_flags[b][k]) for b in flags)])
    meta = {
        "sampler": samples.sampler,
        "kernel": samples.kernel,
        "config": samples.config.to_json(),
        "priors": asdict(samples.priors),
        "acceptance": {k: samples.acceptance[k] for k in sorted(samples.acceptance)},
        "M0": samples.M0,
        "T": samples.T,
        "n_events": samples.n_events,
        "background": samples.background,
        "n_likelihood_evals": samples.n_likelihood_evals,
        "n_draws": len(samples),
    }
    out = [path, sidecar_path(path)]
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if samples.branching is not None:
        bp = branching_path(path)
        with bp.open("w", encoding="utf-8") as fh:
            for row in samples.branching:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")
        out.append(bp)
    return out


def read_samples(path: str | Path) -> PosteriorSamples:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"posterior sample file not found: {path}")
    side = sidecar_path(path)
    meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    kernel = meta.get("kernel")
    if kernel is None:
        kernel = next((k for k in ("gaussian", "powerlaw") if set(kernel_class(k).names) <= set(header)), "none")
    names = EtasParams.BASE + kernel_class(kernel).names
    draws = {n: arr[:, header.index(n)].copy() for n in names}
    flags = {h[len("accept_"):]: arr[:, i].astype(bool) for i, h in enumerate(header) if h.startswith("accept_")}
    cfg = meta.get("config", {})
    init = cfg.get("init")
    config = McmcConfig(
        n_samples=cfg.get("n_samples", len(body)), burn_in=cfg.get("burn_in", 0), thin=cfg.get("thin", 1),
        seed=cfg.get("seed", 0), proposal_sd=cfg.get("proposal_sd", {}),
        inner_mh_steps=cfg.get("inner_mh_steps", 1), store_branching=cfg.get("store_branching", False),
        chain=cfg.get("chain", 0), init=None if init is None else EtasParams.from_dict(init, kernel),
    )
    branching = None
    bp = branching_path(path)
    if bp.exists():
        lines = [ln for ln in bp.read_text(encoding="utf-8").splitlines() if ln.strip()]
        branching = np.array([[int(v) for v in ln.split()] for ln in lines], dtype=np.int64)
    return PosteriorSamples(
        sampler=meta.get("sampler", "unknown"), kernel=kernel, draws=draws,
        iterations=arr[:, header.index("iteration")].astype(np.int64),
        accept_flags=flags, acceptance=meta.get("acceptance", {}), config=config,
        priors=PriorSpec(**meta["priors"]) if "priors" in meta else PriorSpec(),
        M0=meta.get("M0", math.nan), T=meta.get("T", math.nan), n_events=meta.get("n_events", 0),
        background=meta.get("background", {"kind": "temporal"}), branching=branching,
        n_likelihood_evals=meta.get("n_likelihood_evals", 0),
    )


def initial_params(catalog, priors: PriorSpec, config: McmcConfig, kernel: str) -> EtasParams:
    """Default chain start, pulled inside the prior support when needed."""
    from .model import default_start

    start = config.init or default_start(catalog, kernel)
    d = start.as_dict()
    for k, v in d.items():
        lo, hi = priors.bounds(k)
        if not lo < v < hi:
            d[k] = 0.5 * (lo + hi) if math.isfinite(hi) else lo + 1.0
    return EtasParams.from_dict(d, kernel)

