"""ETAS kernels, conditional intensity and likelihoods.

The intensity at time ``t`` and location ``(x, y)`` is::

    lambda = mu * f(x, y) + sum_{t_i < t} kappa(m_i) * h(t - t_i) * s(x - x_i, y - y_i)

with ``kappa(m) = K exp(alpha (m - M0))`` and the normalized Omori density
``h(dt) = (p - 1) c^(p - 1) / (dt + c)^p``. The background density ``f``
integrates to one over the region (or is identically 1 for the temporal
model), so the background exposure is exactly ``mu * T``. Spatial kernels are
normalized over the whole plane; no boundary correction is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np
from numba import get_num_threads
from scipy.optimize import minimize

from . import _kernels
from .catalog import BackgroundField, Catalog, temporal_background

PARALLEL_MIN_EVENTS = 2000


class ParameterError(ValueError):
    """A parameter lies outside its mathematical domain."""


class LikelihoodError(ArithmeticError):
    """A likelihood term became non-finite."""


class BranchingError(ValueError):
    """A branching vector violates the parent-precedes-child structure."""


# spatial kernels ----------------------------------------------------------


@dataclass(frozen=True)
class NoSpatial:
    """Temporal model: ``s`` is identically 1."""

    name: ClassVar[str] = "none"
    code: ClassVar[int] = 0
    names: ClassVar[tuple[str, ...]] = ()

    @property
    def args(self) -> tuple[float, float]:
        return (1.0, 1.0)

    def values(self) -> tuple[float, ...]:
        return ()

    def density(self, dx, dy):
        return np.ones_like(np.asarray(dx, dtype=np.float64))


@dataclass(frozen=True)
class GaussianKernel:
    """Diagonal bivariate Gaussian with variances ``sigma_x2`` and ``sigma_y2``."""

    sigma_x2: float
    sigma_y2: float
    name: ClassVar[str] = "gaussian"
    code: ClassVar[int] = 1
    names: ClassVar[tuple[str, ...]] = ("sigma_x2", "sigma_y2")

    def __post_init__(self):
        if not (self.sigma_x2 > 0 and self.sigma_y2 > 0):
            raise ParameterError(f"Gaussian variances must be positive, got {self}")

    @property
    def args(self) -> tuple[float, float]:
        return (self.sigma_x2, self.sigma_y2)

    def values(self) -> tuple[float, ...]:
        return (self.sigma_x2, self.sigma_y2)

    def density(self, dx, dy):
        dx = np.asarray(dx, dtype=np.float64)
        dy = np.asarray(dy, dtype=np.float64)
        return np.exp(-0.5 * (dx * dx / self.sigma_x2 + dy * dy / self.sigma_y2)) / (
            2.0 * math.pi * math.sqrt(self.sigma_x2 * self.sigma_y2)
        )


@dataclass(frozen=True)
class PowerLawKernel:
    """Isotropic power law ``(q-1) d^(q-1) / pi * (r^2 + d)^(-q)``."""

    d: float
    q: float
    name: ClassVar[str] = "powerlaw"
    code: ClassVar[int] = 2
    names: ClassVar[tuple[str, ...]] = ("d", "q")

    def __post_init__(self):
        if not (self.d > 0 and self.q > 1):
            raise ParameterError(f"power-law kernel needs d > 0 and q > 1, got {self}")

    @property
    def args(self) -> tuple[float, float]:
        return (self.d, self.q)

    def values(self) -> tuple[float, ...]:
        return (self.d, self.q)

    def density(self, dx, dy):
        r2 = np.asarray(dx, dtype=np.float64) ** 2 + np.asarray(dy, dtype=np.float64) ** 2
        return (self.q - 1.0) * self.d ** (self.q - 1.0) / math.pi * (r2 + self.d) ** (-self.q)


SpatialKernelParams = NoSpatial | GaussianKernel | PowerLawKernel
KERNELS = {"none": NoSpatial, "temporal": NoSpatial, "gaussian": GaussianKernel, "powerlaw": PowerLawKernel}


def kernel_class(name: str):
    try:
        return KERNELS[name]
    except KeyError:
        raise ParameterError(f"unknown spatial kernel {name!r}") from None


def make_kernel(name: str, values) -> SpatialKernelParams:
    cls = kernel_class(name)
    return cls(*values) if cls.names else cls()


# parameters -----------------------------------------------------------------


@dataclass(frozen=True)
class EtasParams:
    mu: float
    K: float
    alpha: float
    c: float
    p: float
    spatial: SpatialKernelParams = field(default_factory=NoSpatial)

    BASE: ClassVar[tuple[str, ...]] = ("mu", "K", "alpha", "c", "p")

    def __post_init__(self):
        if not (self.mu > 0 and self.K >= 0 and self.alpha >= 0 and self.c > 0 and self.p > 1):
            raise ParameterError(
                f"need mu > 0, K >= 0, alpha >= 0, c > 0, p > 1; got "
                f"mu={self.mu}, K={self.K}, alpha={self.alpha}, c={self.c}, p={self.p}"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return self.BASE + self.spatial.names

    def as_dict(self) -> dict[str, float]:
        d = {"mu": self.mu, "K": self.K, "alpha": self.alpha, "c": self.c, "p": self.p}
        d.update(zip(self.spatial.names, self.spatial.values()))
        return d

    def as_array(self) -> np.ndarray:
        return np.array(list(self.as_dict().values()))

    @classmethod
    def from_dict(cls, d: dict, kernel: str = "none") -> "EtasParams":
        kc = kernel_class(kernel)
        spatial = kc(*(float(d[k]) for k in kc.names)) if kc.names else kc()
        return cls(*(float(d[k]) for k in cls.BASE), spatial=spatial)

    def replace(self, **changes) -> "EtasParams":
        return replace(self, **changes)


# scalar kernels -------------------------------------------------------------


def _check_omori(c, p):
    if not (np.all(np.asarray(c) > 0) and np.all(np.asarray(p) > 1)):
        raise ParameterError(f"Omori kernel needs c > 0 and p > 1, got c={c}, p={p}")


def omori_h(dt, c, p):
    """Normalized Omori density at lag ``dt`` (per day)."""
    _check_omori(c, p)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ParameterError("Omori lag must be non-negative")
    out = (p - 1.0) * c ** (p - 1.0) / (dt + c) ** p
    return float(out) if out.ndim == 0 else out


def omori_survival(z, c, p):
    """``1 - H(z) = (c / (z + c))^(p - 1)``; accurate for large ``z``."""
    return (c / (np.asarray(z, dtype=np.float64) + c)) ** (p - 1.0)


def omori_H(z, c, p):
    """Omori CDF: probability mass of the lag density on ``[0, z]``."""
    _check_omori(c, p)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise ParameterError("Omori window must be non-negative")
    out = -np.expm1((p - 1.0) * (np.log(c) - np.log(z + c)))
    return float(out) if out.ndim == 0 else out


def kappa(m, K, alpha, M0):
    """Expected number of direct aftershocks of a magnitude ``m`` event."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < M0):
        raise ParameterError(f"magnitude below completeness M0={M0}")
    out = K * np.exp(alpha * (m - M0))
    return float(out) if out.ndim == 0 else out


def spatial_density(dx, dy, params: SpatialKernelParams):
    out = params.density(dx, dy)
    return float(out) if np.ndim(out) == 0 else out


# event data -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EventData:
    """Contiguous arrays consumed by the compiled loops."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    m_exc: np.ndarray
    bg: np.ndarray
    log_bg: np.ndarray
    T: float
    spatial: bool

    @property
    def n(self) -> int:
        return int(self.t.size)


def prepare(catalog: Catalog, f: BackgroundField | None = None) -> EventData:
    f = f or temporal_background()
    n = catalog.n
    t = np.ascontiguousarray(catalog.t)
    if catalog.spatial:
        x = np.ascontiguousarray(catalog.x)
        y = np.ascontiguousarray(catalog.y)
    else:
        x = y = np.zeros(n)
    if f.kind == "temporal":
        bg = np.ones(n)
    else:
        if not catalog.spatial:
            raise ParameterError("a spatial background needs a spatial catalog")
        bg = np.asarray(f(catalog.x, catalog.y), dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_bg = np.log(bg)
    return EventData(t=t, x=x, y=y, m_exc=np.ascontiguousarray(catalog.excess), bg=bg, log_bg=log_bg,
                     T=float(catalog.T), spatial=catalog.spatial)


def _check_kernel_data(data: EventData, params: EtasParams):
    if params.spatial.code != 0 and not data.spatial:
        raise ParameterError("a spatial kernel needs a spatial catalog")


def _use_parallel(n: int) -> bool:
    return n >= PARALLEL_MIN_EVENTS and get_num_threads() > 1


def event_intensities(data: EventData, params: EtasParams) -> np.ndarray:
    """Conditional intensity at every event of the catalog."""
    _check_kernel_data(data, params)
    kap = params.K * np.exp(params.alpha * data.m_exc)
    s1, s2 = params.spatial.args
    fn = _kernels.triggered_intensity_parallel if _use_parallel(data.n) else _kernels.triggered_intensity
    trig = fn(data.t, data.x, data.y, kap, params.c, params.p, params.spatial.code, s1, s2)
    return params.mu * data.bg + trig


def intensity(t: float, x, y, catalog: Catalog, params: EtasParams, f: BackgroundField | None = None) -> float:
    """Conditional intensity at ``(t, x, y)`` given the catalog events before ``t``."""
    f = f or temporal_background()
    if params.spatial.code != 0 and (x is None or not catalog.spatial):
        raise ParameterError("spatial intensity needs coordinates")
    bg = 1.0 if f.kind == "temporal" else float(f(x, y))
    n = catalog.n
    cx = catalog.x if catalog.spatial else np.zeros(n)
    cy = catalog.y if catalog.spatial else np.zeros(n)
    s1, s2 = params.spatial.args
    trig = _kernels.intensity_at(
        float(t), 0.0 if x is None else float(x), 0.0 if y is None else float(y),
        catalog.t, catalog.excess, cx, cy,
        params.K, params.alpha, params.c, params.p, params.spatial.code, s1, s2,
    )
    return params.mu * bg + trig


def _compensator_terms(data: EventData, params: EtasParams) -> np.ndarray:
    kap = params.K * np.exp(params.alpha * data.m_exc)
    return kap * -np.expm1((params.p - 1.0) * (np.log(params.c) - np.log(data.T - data.t + params.c)))


def loglik_from_data(data: EventData, params: EtasParams) -> float:
    lam = event_intensities(data, params)
    bad = ~np.isfinite(lam)
    if np.any(bad):
        raise LikelihoodError(f"non-finite intensity at event index {int(np.argmax(bad))}")
    if np.any(lam <= 0):
        return -math.inf
    ll = float(np.sum(np.log(lam))) - params.mu * data.T - float(np.sum(_compensator_terms(data, params)))
    if math.isnan(ll):
        raise LikelihoodError("log-likelihood evaluated to NaN")
    return ll


def log_likelihood(catalog: Catalog, params: EtasParams, f: BackgroundField | None = None) -> float:
    """Marginal ETAS log-likelihood on ``[0, T]`` (branching integrated out)."""
    return loglik_from_data(prepare(catalog, f), params)


def log_likelihood_grad(catalog: Catalog, params: EtasParams, f: BackgroundField | None = None) -> np.ndarray:
    """Analytic partials of :func:`log_likelihood` in ``(mu, K, alpha, c, p)``."""
    data = prepare(catalog, f)
    _check_kernel_data(data, params)
    mu, K, a, c, p = params.mu, params.K, params.alpha, params.c, params.p
    s1, s2 = params.spatial.args
    g = _kernels.triggered_gradient(data.t, data.x, data.y, data.m_exc, K, a, c, p, params.spatial.code, s1, s2)
    lam = mu * data.bg + g[:, 0]
    w = 1.0 / lam
    z = data.T - data.t
    surv = omori_survival(z, c, p)
    H = 1.0 - surv
    e = np.exp(a * data.m_exc)
    kap = K * e
    dS_dc = (p - 1.0) * surv * (1.0 / c - 1.0 / (z + c))
    dS_dp = surv * (np.log(c) - np.log(z + c))
    return np.array([
        np.sum(w * data.bg) - data.T,
        np.sum(w * g[:, 1]) - np.sum(e * H),
        np.sum(w * g[:, 2]) - np.sum(kap * data.m_exc * H),
        np.sum(w * g[:, 3]) + np.sum(kap * dS_dc),
        np.sum(w * g[:, 4]) + np.sum(kap * dS_dp),
    ])


def check_branching(parents, n: int) -> np.ndarray:
    """Validate a branching vector (1-based parents, 0 = background)."""
    b = np.asarray(parents)
    if b.shape != (n,):
        raise BranchingError(f"branching vector has shape {b.shape}, expected ({n},)")
    if not np.issubdtype(b.dtype, np.integer):
        raise BranchingError("branching vector must hold integers")
    idx = np.arange(n)
    bad = (b < 0) | (b > idx)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise BranchingError(f"event {i + 1} has parent {int(b[i])}; parents must precede their children")
    return b.astype(np.int64)


def complete_from_data(data: EventData, parents: np.ndarray, params: EtasParams) -> float:
    b = parents
    bg_mask = b == 0
    n0 = int(bg_mask.sum())
    comp = float(np.sum(_compensator_terms(data, params)))
    with np.errstate(divide="ignore"):
        ll = n0 * math.log(params.mu) - params.mu * data.T + float(np.sum(data.log_bg[bg_mask])) - comp
        trig = np.flatnonzero(~bg_mask)
        if trig.size:
            par = b[trig] - 1
            lag = data.t[trig] - data.t[par]
            log_k = math.log(params.K) + params.alpha * data.m_exc[par] if params.K > 0 else np.full(trig.size, -np.inf)
            log_h = math.log(params.p - 1.0) + (params.p - 1.0) * math.log(params.c) - params.p * np.log(lag + params.c)
            terms = log_k + log_h
            if params.spatial.code != 0:
                terms = terms + np.log(params.spatial.density(data.x[trig] - data.x[par], data.y[trig] - data.y[par]))
            ll += float(np.sum(terms))
    return ll


def complete_log_likelihood(catalog: Catalog, parents, params: EtasParams, f: BackgroundField | None = None) -> float:
    """Complete-data log-likelihood given a branching vector."""
    data = prepare(catalog, f)
    _check_kernel_data(data, params)
    b = check_branching(parents, catalog.n)
    return complete_from_data(data, b, params)


# maximum likelihood ------------------------------------------------------------


@dataclass(frozen=True)
class MleFit:
    params: EtasParams
    loglik: float
    converged: bool
    n_evals: int
    message: str


DEFAULT_UPPER = {"mu": None, "K": 10.0, "alpha": 10.0, "c": 10.0, "p": 10.0,
                 "sigma_x2": None, "sigma_y2": None, "d": 10.0, "q": 10.0}


def default_start(catalog: Catalog, kernel: str = "none") -> EtasParams:
    n = max(catalog.n, 1)
    spatial = kernel_class(kernel)
    if spatial is GaussianKernel:
        sp = GaussianKernel(*nearest_neighbour_variances(catalog))
    elif spatial is PowerLawKernel:
        sp = PowerLawKernel(1.0, 1.5)
    else:
        sp = NoSpatial()
    return EtasParams(mu=n / (2.0 * catalog.T), K=0.5, alpha=1.0, c=0.1, p=1.3, spatial=sp)


def nearest_neighbour_variances(catalog: Catalog) -> tuple[float, float]:
    """Variances of the offsets from each event to its spatial nearest neighbour."""
    from scipy.spatial import cKDTree

    if not catalog.spatial or catalog.n < 3:
        return (1.0, 1.0)
    pts = np.column_stack([catalog.x, catalog.y])
    _, idx = cKDTree(pts).query(pts, k=2)
    off = pts[idx[:, 1]] - pts
    vx, vy = float(np.var(off[:, 0], ddof=1)), float(np.var(off[:, 1], ddof=1))
    return (vx if vx > 0 else 1.0, vy if vy > 0 else 1.0)


def fit_mle(
    catalog: Catalog,
    f: BackgroundField | None = None,
    kernel: str = "none",
    seed: int = 0,
    restarts: int = 5,
    start: EtasParams | None = None,
) -> MleFit:
    """Maximize the marginal log-likelihood with bounded Nelder-Mead.

    The first start is ``start`` (or the sampler's default initial value);
    the remaining ``restarts - 1`` are seeded log-normal perturbations of it.
    """
    data = prepare(catalog, f)
    start = start or default_start(catalog, kernel)
    names = start.names
    x0 = start.as_array()
    lo = np.array([1e-10, 1e-10, 0.0, 1e-10, 1.0 + 1e-8] + [1e-10] * len(start.spatial.names))
    if kernel == "powerlaw":
        lo[-1] = 1.0 + 1e-8
    hi = np.array([DEFAULT_UPPER[k] if DEFAULT_UPPER[k] is not None else np.inf for k in names])
    hi[0] = max(10.0 * catalog.n / catalog.T, 1.0)
    bounds = list(zip(lo, hi))
    n_evals = 0

    def objective(v):
        nonlocal n_evals
        n_evals += 1
        try:
            params = EtasParams.from_dict(dict(zip(names, v)), kernel)
            ll = loglik_from_data(data, params)
        except (ParameterError, LikelihoodError, FloatingPointError):
            return 1e300
        return -ll if math.isfinite(ll) else 1e300

    rng = np.random.default_rng(seed)
    starts = [x0]
    for _ in range(restarts - 1):
        starts.append(np.clip(x0 * np.exp(0.5 * rng.standard_normal(x0.size)), lo + 1e-6, np.minimum(hi, 1e6)))
    best = None
    for s in starts:
        res = minimize(objective, s, method="Nelder-Mead", bounds=bounds,
                       options={"maxiter": 4000 * s.size, "maxfev": 4000 * s.size,
                                "xatol": 1e-7, "fatol": 1e-8, "adaptive": True})
        if best is None or res.fun < best.fun:
            best = res
    params = EtasParams.from_dict(dict(zip(names, best.x)), kernel)
    return MleFit(params=params, loglik=-float(best.fun), converged=bool(best.success) and best.fun < 1e300,
                  n_evals=n_evals, message=str(best.message))
