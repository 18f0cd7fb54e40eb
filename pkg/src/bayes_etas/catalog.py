"""Earthquake catalogs: loading, magnitude filtering, Gutenberg-Richter fits and
background spatial densities.

Times are in days since the start of the observation window ``[0, T]``.
Coordinates are treated as planar (no projection is applied to lon/lat).
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.special import ndtr

logger = logging.getLogger(__name__)

TIE_JITTER = 1e-9
CSV_COLUMNS = ("time", "magnitude", "longitude", "latitude")


class CatalogError(ValueError):
    """Raised for malformed or inconsistent catalog input."""


class CatalogWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Region:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise CatalogError(f"degenerate region {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    @classmethod
    def parse(cls, text: str) -> "Region":
        """Parse ``"xmin,xmax,ymin,ymax"``."""
        try:
            vals = [float(v) for v in text.split(",")]
        except ValueError as exc:
            raise CatalogError(f"bad region {text!r}") from exc
        if len(vals) != 4:
            raise CatalogError(f"region needs 4 numbers, got {text!r}")
        return cls(*vals)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass(frozen=True)
class Event:
    t: float
    m: float
    x: float | None = None
    y: float | None = None


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Catalog:
    """An immutable, time-ordered catalog on ``[0, T]`` complete above ``M0``.

    Use :meth:`Catalog.build` for unsorted input; the constructor only
    validates.
    """

    t: np.ndarray
    m: np.ndarray
    T: float
    M0: float
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    region: Region | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "m", _frozen(self.m))
        if (self.x is None) != (self.y is None):
            raise CatalogError("longitude and latitude must be given together")
        if self.x is not None:
            object.__setattr__(self, "x", _frozen(self.x))
            object.__setattr__(self, "y", _frozen(self.y))
            if not (self.x.shape == self.y.shape == self.t.shape):
                raise CatalogError("coordinate arrays do not match times")
        if self.t.shape != self.m.shape or self.t.ndim != 1:
            raise CatalogError("times and magnitudes must be 1-d arrays of equal length")
        if not self.T > 0:
            raise CatalogError(f"window length must be positive, got T={self.T}")
        n = self.t.size
        if n:
            if not np.all(np.isfinite(self.t)) or not np.all(np.isfinite(self.m)):
                raise CatalogError("non-finite time or magnitude")
            if self.t[0] < 0 or self.t[-1] > self.T:
                raise CatalogError(f"event times must lie in [0, {self.T}]")
            if np.any(np.diff(self.t) <= 0):
                raise CatalogError("event times must be strictly increasing")
            if np.any(self.m < self.M0):
                raise CatalogError(f"magnitudes below M0={self.M0}")
        if self.region is not None and self.x is not None and n:
            if not np.all(self.region.contains(self.x, self.y)):
                raise CatalogError("spatial events outside the catalog region")

    @classmethod
    def build(cls, t, m, T, M0, x=None, y=None, region=None) -> "Catalog":
        """Sort by time (stable), jitter exact ties and construct."""
        t = np.asarray(t, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        order = np.argsort(t, kind="stable")
        if np.any(order != np.arange(t.size)):
            warnings.warn("event times were not sorted; re-sorted ascending", CatalogWarning, stacklevel=2)
        t = t[order].copy()
        m = m[order]
        if x is not None:
            x = np.asarray(x, dtype=np.float64)[order]
            y = np.asarray(y, dtype=np.float64)[order]
        t = jitter_ties(t)
        if t.size and np.any(np.diff(t) <= 0):
            raise CatalogError("tied event times could not be separated by jitter")
        return cls(t=t, m=m, T=float(T), M0=float(M0), x=x, y=y, region=region)

    @property
    def n(self) -> int:
        return int(self.t.size)

    def __len__(self) -> int:
        return self.n

    @property
    def spatial(self) -> bool:
        return self.x is not None

    @property
    def events(self) -> list[Event]:
        if self.spatial:
            return [Event(*row) for row in zip(self.t.tolist(), self.m.tolist(), self.x.tolist(), self.y.tolist())]
        return [Event(t, m) for t, m in zip(self.t.tolist(), self.m.tolist())]

    @property
    def excess(self) -> np.ndarray:
        """Magnitude excess above completeness, ``m - M0``."""
        return self.m - self.M0

    def subset(self, mask) -> "Catalog":
        mask = np.asarray(mask, dtype=bool)
        return Catalog(
            t=self.t[mask], m=self.m[mask], T=self.T, M0=self.M0,
            x=None if self.x is None else self.x[mask],
            y=None if self.y is None else self.y[mask],
            region=self.region,
        )

    def head(self, n: int) -> "Catalog":
        """The first ``n`` events, observed up to midway before event ``n + 1``."""
        if not 1 <= n <= self.n:
            raise CatalogError(f"cannot take {n} events from a catalog of {self.n}")
        T = self.T if n == self.n else 0.5 * (self.t[n - 1] + self.t[n])
        keep = slice(0, n)
        return Catalog(
            t=self.t[keep], m=self.m[keep], T=float(T), M0=self.M0,
            x=None if self.x is None else self.x[keep],
            y=None if self.y is None else self.y[keep],
            region=self.region,
        )


def jitter_ties(t: np.ndarray) -> np.ndarray:
    """Add ``k * 1e-9`` days to the k-th repeat of each tied time (sorted input)."""
    t = np.array(t, dtype=np.float64)
    if t.size < 2:
        return t
    k = 0
    base = t[0]
    for i in range(1, t.size):
        if t[i] == base:
            k += 1
            t[i] = base + k * TIE_JITTER
        else:
            base = t[i]
            k = 0
    return t


def _parse_time(text: str, origin: datetime | None) -> float:
    if origin is None:
        return float(text)
    ts = datetime.fromisoformat(text.strip())
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return (ts - origin).total_seconds() / 86400.0


def load_catalog(
    path: str | Path,
    M0: float,
    T: float | None = None,
    time_origin: str | None = None,
    region: Region | None = None,
) -> Catalog:
    """Read a catalog CSV (``time,magnitude[,longitude,latitude]``).

    Events below ``M0`` are dropped. ``T=None`` means ``ceil(max t)``. With
    ``time_origin`` (ISO 8601) the time column holds absolute timestamps that
    are rebased to days since the origin. Extra trailing columns such as
    ``parent`` are ignored. Spatial events outside ``region`` are dropped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"catalog file not found: {path}")
    origin = None
    if time_origin is not None:
        origin = datetime.fromisoformat(time_origin)
        if origin.tzinfo is None:
            origin = origin.replace(tzinfo=timezone.utc)

    rows: list[tuple[float, float, float | None, float | None]] = []
    header = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = next(csv.reader([stripped]))
            if header is None:
                header = [h.strip() for h in fields]
                if header[:2] != ["time", "magnitude"]:
                    raise CatalogError(f"line {lineno}: header must start with 'time,magnitude', got {stripped!r}")
                if len(header) >= 3 and header[2] == "longitude":
                    if len(header) < 4 or header[3] != "latitude":
                        raise CatalogError(f"line {lineno}: longitude column without latitude")
                spatial = len(header) >= 4 and header[2:4] == ["longitude", "latitude"]
                continue
            if len(fields) != len(header):
                raise CatalogError(f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
            try:
                t = _parse_time(fields[0], origin)
                m = float(fields[1])
                if spatial:
                    x, y = float(fields[2]), float(fields[3])
                else:
                    x = y = None
            except ValueError as exc:
                raise CatalogError(f"line {lineno}: {exc}") from exc
            if not (math.isfinite(t) and math.isfinite(m)):
                raise CatalogError(f"line {lineno}: non-finite value")
            rows.append((t, m, x, y))
    if header is None:
        raise CatalogError(f"{path}: missing header")

    rows = [r for r in rows if r[1] >= M0]
    if spatial and region is not None:
        before = len(rows)
        rows = [r for r in rows if region.contains(r[2], r[3])]
        if len(rows) < before:
            logger.info("dropped %d events outside region", before - len(rows))
    if not rows:
        raise CatalogError(f"{path}: catalog is empty after filtering at M0={M0}")
    arr = np.array([(r[0], r[1]) for r in rows], dtype=np.float64)
    t, m = arr[:, 0], arr[:, 1]
    if np.any(t < 0):
        raise CatalogError(f"{path}: negative event times (before the window start)")
    if T is None:
        T = max(float(math.ceil(t.max())), 1.0)
    xy = np.array([(r[2], r[3]) for r in rows], dtype=np.float64) if spatial else None
    return Catalog.build(
        t, m, T, M0,
        x=None if xy is None else xy[:, 0],
        y=None if xy is None else xy[:, 1],
        region=region if spatial else None,
    )


def write_catalog(path: str | Path, catalog: Catalog, parents=None) -> None:
    """Write the catalog CSV; ``parents`` adds a ground-truth ``parent`` column."""
    cols = ["time", "magnitude"] + (["longitude", "latitude"] if catalog.spatial else [])
    if parents is not None:
        cols.append("parent")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(catalog.n):
            vals = [repr(float(catalog.t[i])), repr(float(catalog.m[i]))]
            if catalog.spatial:
                vals += [repr(float(catalog.x[i])), repr(float(catalog.y[i]))]
            if parents is not None:
                vals.append(str(int(parents[i])))
            fh.write(",".join(vals) + "\n")


def filter_by_magnitude(catalog: Catalog, new_M0: float) -> Catalog:
    if new_M0 < catalog.M0:
        raise CatalogError(
            f"cannot lower completeness from {catalog.M0} to {new_M0}: events below M0 were never recorded"
        )
    sub = catalog.subset(catalog.m >= new_M0)
    return Catalog(t=sub.t, m=sub.m, T=sub.T, M0=float(new_M0), x=sub.x, y=sub.y, region=sub.region)


def threshold_for_count(catalog: Catalog, n: int) -> float:
    """Magnitude threshold leaving exactly the ``n`` largest events."""
    if not 1 <= n <= catalog.n:
        raise CatalogError(f"cannot select {n} events from a catalog of {catalog.n}")
    mags = np.sort(catalog.m)[::-1]
    if n < catalog.n and mags[n] == mags[n - 1]:
        raise CatalogError(f"magnitude tie at rank {n}; no threshold selects exactly {n} events")
    return float(mags[n - 1])


@dataclass(frozen=True)
class GutenbergRichterFit:
    beta: float
    n: int
    shape: float | None = None
    rate: float | None = None

    @property
    def b_value(self) -> float:
        return self.beta / math.log(10.0)


def fit_gutenberg_richter(catalog: Catalog, prior: tuple[float, float] | None = None) -> GutenbergRichterFit:
    """Maximum likelihood rate of the exponential magnitude excess.

    With ``prior=(shape, rate)`` the conjugate Gamma posterior is attached and
    ``beta`` is its mean.
    """
    n = catalog.n
    if n < 2:
        raise CatalogError("need at least two events to fit the Gutenberg-Richter rate")
    total = float(np.sum(catalog.excess))
    if total <= 0:
        raise CatalogError("all magnitudes equal M0; the catalog is probably binned at M0 - lower M0 or add precision")
    if prior is None:
        return GutenbergRichterFit(beta=n / total, n=n)
    shape, rate = prior[0] + n, prior[1] + total
    return GutenbergRichterFit(beta=shape / rate, n=n, shape=shape, rate=rate)


@dataclass(frozen=True, eq=False)
class BackgroundField:
    """Normalized background density ``f(x, y)``.

    ``kind`` is ``"temporal"`` (constant 1, no space), ``"uniform"`` (1/area
    inside the region) or ``"kde"`` (isotropic-per-axis Gaussian KDE truncated
    and renormalized to the region).
    """

    kind: str
    region: Region | None = None
    points: np.ndarray | None = None
    bandwidth: tuple[float, float] | None = None
    norm: float = 1.0
    _chunk: int = field(default=2048, repr=False)

    def __call__(self, x=None, y=None):
        if self.kind == "temporal":
            if x is None:
                return 1.0
            return np.ones_like(np.asarray(x, dtype=np.float64))
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = self.region.contains(x, y)
        if self.kind == "uniform":
            return np.where(inside, 1.0 / self.region.area, 0.0)
        hx, hy = self.bandwidth
        xf, yf = np.ravel(x), np.ravel(y)
        out = np.empty(xf.size)
        px, py = self.points[:, 0], self.points[:, 1]
        c = 1.0 / (2.0 * math.pi * hx * hy * px.size)
        for s in range(0, xf.size, self._chunk):
            dx = (xf[s:s + self._chunk, None] - px[None, :]) / hx
            dy = (yf[s:s + self._chunk, None] - py[None, :]) / hy
            out[s:s + self._chunk] = c * np.exp(-0.5 * (dx * dx + dy * dy)).sum(axis=1)
        return np.where(inside, out.reshape(x.shape) / self.norm, 0.0)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.region is not None:
            d["region"] = list(self.region.as_tuple())
        if self.bandwidth is not None:
            d["bandwidth"] = list(self.bandwidth)
        return d

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` locations from the field."""
        if self.kind == "temporal":
            raise CatalogError("a temporal background has no spatial distribution")
        r = self.region
        if self.kind == "uniform":
            return rng.uniform(r.x_min, r.x_max, n), rng.uniform(r.y_min, r.y_max, n)
        hx, hy = self.bandwidth
        xs, ys = [np.empty(0)], [np.empty(0)]
        need = n
        while need > 0:
            k = max(2 * need, 16)
            src = self.points[rng.integers(0, self.points.shape[0], k)]
            cx = src[:, 0] + hx * rng.standard_normal(k)
            cy = src[:, 1] + hy * rng.standard_normal(k)
            ok = r.contains(cx, cy)
            xs.append(cx[ok][:need])
            ys.append(cy[ok][:need])
            need -= int(min(ok.sum(), need))
        return np.concatenate(xs), np.concatenate(ys)


def temporal_background() -> BackgroundField:
    return BackgroundField(kind="temporal")


def uniform_background(region: Region) -> BackgroundField:
    return BackgroundField(kind="uniform", region=region)


def silverman_bandwidth(values: np.ndarray) -> float:
    """Silverman's rule for one axis of a 2-d product kernel."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.std(values, ddof=1) * values.size ** (-1.0 / 6.0))


def fit_background_kde(
    catalog: Catalog,
    bandwidth: float | tuple[float, float] | None = None,
    region: Region | None = None,
) -> BackgroundField:
    """Gaussian KDE over event locations, renormalized over the region.

    ``bandwidth=None`` applies Silverman's rule per axis. The normalizer is
    the exact Gaussian mass inside the region rectangle.
    """
    if not catalog.spatial:
        raise CatalogError("kernel density background needs a spatial catalog")
    if catalog.n < 2:
        raise CatalogError("kernel density background needs at least two events")
    region = region or catalog.region
    if region is None:
        region = Region(float(catalog.x.min()), float(catalog.x.max()), float(catalog.y.min()), float(catalog.y.max()))
    if bandwidth is None:
        hx, hy = silverman_bandwidth(catalog.x), silverman_bandwidth(catalog.y)
        if hx <= 0 or hy <= 0:
            raise CatalogError("event locations have zero spread; pass an explicit bandwidth")
    elif np.isscalar(bandwidth):
        hx = hy = float(bandwidth)
    else:
        hx, hy = (float(b) for b in bandwidth)
    if hx <= 0 or hy <= 0:
        raise CatalogError("bandwidth must be positive")
    pts = np.column_stack([catalog.x, catalog.y])
    mass_x = ndtr((region.x_max - pts[:, 0]) / hx) - ndtr((region.x_min - pts[:, 0]) / hx)
    mass_y = ndtr((region.y_max - pts[:, 1]) / hy) - ndtr((region.y_min - pts[:, 1]) / hy)
    norm = float(np.mean(mass_x * mass_y))
    if norm <= 0:
        raise CatalogError("kernel density has no mass inside the region")
    pts.setflags(write=False)
    return BackgroundField(kind="kde", region=region, points=pts, bandwidth=(hx, hy), norm=norm)


def background_from_description(desc: dict, catalog: Catalog) -> BackgroundField:
    kind = desc.get("kind", "temporal")
    if kind == "temporal":
        return temporal_background()
    region = Region(*desc["region"]) if desc.get("region") else catalog.region
    if kind == "uniform":
        return uniform_background(region)
    if kind == "kde":
        return fit_background_kde(catalog, bandwidth=tuple(desc["bandwidth"]) if desc.get("bandwidth") else None,
                                  region=region)
    raise CatalogError(f"unknown background kind {kind!r}")
