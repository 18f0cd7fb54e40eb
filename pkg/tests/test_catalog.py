import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayes_etas.catalog import (
    Catalog,
    CatalogError,
    CatalogWarning,
    Region,
    filter_by_magnitude,
    fit_background_kde,
    fit_gutenberg_richter,
    jitter_ties,
    load_catalog,
    threshold_for_count,
    uniform_background,
    write_catalog,
)


def write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def midpoint_integral(field, region, k=256):
    xs = region.x_min + (np.arange(k) + 0.5) * (region.x_max - region.x_min) / k
    ys = region.y_min + (np.arange(k) + 0.5) * (region.y_max - region.y_min) / k
    X, Y = np.meshgrid(xs, ys)
    return float(np.sum(field(X, Y))) * region.area / k**2


# loading --------------------------------------------------------------------------


def test_load_filters_below_threshold(tmp_path):
    p = write(tmp_path, "time,magnitude\n0.5,2.0\n1.0,4.0\n2.5,5.0\n")
    cat = load_catalog(p, M0=3.5)
    assert cat.n == 2
    assert cat.T == 3.0
    np.testing.assert_array_equal(cat.m, [4.0, 5.0])


def test_load_resorts_descending_times(tmp_path):
    p = write(tmp_path, "time,magnitude\n3.0,4.0\n2.0,4.5\n1.0,5.0\n")
    with pytest.warns(CatalogWarning):
        cat = load_catalog(p, M0=3.0)
    np.testing.assert_array_equal(cat.t, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(cat.m, [5.0, 4.5, 4.0])


def test_load_header_only_is_empty(tmp_path):
    p = write(tmp_path, "time,magnitude\n")
    with pytest.raises(CatalogError, match="empty"):
        load_catalog(p, M0=3.0)


def test_load_reports_line_number(tmp_path):
    p = write(tmp_path, "# comment\ntime,magnitude\n1.0,4.0\n2.0,abc\n")
    with pytest.raises(CatalogError, match="line 4"):
        load_catalog(p, M0=3.0)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_catalog(tmp_path / "nope.csv", M0=3.0)


def test_load_spatial_and_region(tmp_path):
    p = write(tmp_path, "time,magnitude,longitude,latitude\n1,4,0.5,0.5\n2,4,3.0,0.5\n3,4.2,0.1,0.9\n")
    cat = load_catalog(p, M0=3.0, region=Region(0, 1, 0, 1))
    assert cat.spatial and cat.n == 2
    np.testing.assert_array_equal(cat.x, [0.5, 0.1])


def test_load_longitude_without_latitude(tmp_path):
    p = write(tmp_path, "time,magnitude,longitude\n1,4,0.5\n")
    with pytest.raises(CatalogError):
        load_catalog(p, M0=3.0)


def test_load_time_origin(tmp_path):
    p = write(tmp_path, "time,magnitude\n2020-01-02T00:00:00,4.0\n2020-01-01T12:00:00,4.5\n")
    with pytest.warns(CatalogWarning):
        cat = load_catalog(p, M0=3.0, time_origin="2020-01-01T00:00:00")
    np.testing.assert_allclose(cat.t, [0.5, 1.0])


def test_ties_are_jittered_in_input_order():
    t = jitter_ties(np.array([1.0, 1.0, 1.0, 2.0, 2.0]))
    np.testing.assert_allclose(t, [1.0, 1.0 + 1e-9, 1.0 + 2e-9, 2.0, 2.0 + 1e-9], rtol=0, atol=1e-15)
    cat = Catalog.build([1.0, 1.0], [4.0, 3.0], 5.0, 3.0)
    assert cat.t[1] > cat.t[0]
    np.testing.assert_array_equal(cat.m, [4.0, 3.0])


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cat = Catalog.build(np.sort(rng.uniform(0, 50, 30)), 3 + rng.exponential(0.4, 30), 50.0, 3.0,
                        x=rng.uniform(0, 1, 30), y=rng.uniform(0, 1, 30))
    p = tmp_path / "rt.csv"
    write_catalog(p, cat, parents=np.zeros(30, dtype=int))
    back = load_catalog(p, M0=3.0, T=50.0)
    np.testing.assert_array_equal(back.t, cat.t)
    np.testing.assert_array_equal(back.m, cat.m)
    np.testing.assert_array_equal(back.x, cat.x)


def test_catalog_invariants():
    with pytest.raises(CatalogError):
        Catalog(t=np.array([2.0, 1.0]), m=np.array([3.0, 3.0]), T=5.0, M0=3.0)
    with pytest.raises(CatalogError):
        Catalog(t=np.array([1.0, 6.0]), m=np.array([3.0, 3.0]), T=5.0, M0=3.0)
    with pytest.raises(CatalogError):
        Catalog(t=np.array([1.0]), m=np.array([2.0]), T=5.0, M0=3.0)
    with pytest.raises(CatalogError):
        Catalog(t=np.array([1.0]), m=np.array([3.0]), T=5.0, M0=3.0, x=np.array([1.0]))
    with pytest.raises(CatalogError):
        Region(1, 0, 0, 1)


def test_head_truncates_window():
    cat = Catalog.build([1.0, 2.0, 4.0], [3.0, 3.0, 3.0], 10.0, 3.0)
    h = cat.head(2)
    assert h.n == 2 and h.T == 3.0
    assert cat.head(3).T == 10.0
    with pytest.raises(CatalogError):
        cat.head(0)


# magnitude filtering -------------------------------------------------------------


def test_filter_examples():
    cat = Catalog.build([1.0, 2.0, 3.0], [3.0, 3.5, 4.0], 5.0, 3.0)
    assert filter_by_magnitude(cat, 3.5).n == 2
    same = filter_by_magnitude(cat, 3.0)
    np.testing.assert_array_equal(same.t, cat.t)
    assert same.T == cat.T
    with pytest.raises(CatalogError):
        filter_by_magnitude(cat, 2.5)


def test_threshold_for_exact_count():
    rng = np.random.default_rng(3)
    cat = Catalog.build(np.sort(rng.uniform(0, 1000, 5000)), 3 + rng.exponential(1 / 2.3, 5000), 1000.0, 3.0)
    sub = filter_by_magnitude(cat, threshold_for_count(cat, 1000))
    assert sub.n == 1000


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(3.0, 8.0), min_size=1, max_size=40), st.floats(3.0, 8.0), st.floats(3.0, 8.0))
def test_filter_idempotent_and_monotone(mags, a, b):
    t = np.arange(1, len(mags) + 1, dtype=float)
    cat = Catalog.build(t, mags, len(mags) + 1.0, 3.0)
    fa = filter_by_magnitude(cat, a)
    np.testing.assert_array_equal(filter_by_magnitude(fa, a).t, fa.t)
    lo, hi = min(a, b), max(a, b)
    assert filter_by_magnitude(cat, lo).n >= filter_by_magnitude(cat, hi).n


# Gutenberg-Richter ------------------------------------------------------------


def test_gr_formula():
    cat = Catalog.build([1.0, 2.0], [3.5, 4.5], 5.0, 3.0)
    assert fit_gutenberg_richter(cat).beta == pytest.approx(1.0)
    bayes = fit_gutenberg_richter(cat, prior=(1.0, 1.0))
    assert (bayes.shape, bayes.rate) == (3.0, 3.0)


def test_gr_errors():
    with pytest.raises(CatalogError):
        fit_gutenberg_richter(Catalog.build([1.0], [4.0], 5.0, 3.0))
    with pytest.raises(CatalogError, match="binned"):
        fit_gutenberg_richter(Catalog.build([1.0, 2.0], [3.0, 3.0], 5.0, 3.0))


def test_gr_recovers_beta():
    rng = np.random.default_rng(12)
    n = 100_000
    cat = Catalog.build(np.arange(1, n + 1, dtype=float), 3 + rng.exponential(1 / 2.3, n), n + 1.0, 3.0)
    assert fit_gutenberg_richter(cat).beta == pytest.approx(2.3, rel=0.02)


def test_gr_coverage_over_trials():
    rng = np.random.default_rng(13)
    n, beta, hits = 200, 2.3, 0
    for _ in range(500):
        cat = Catalog.build(np.arange(1, n + 1, dtype=float), 3 + rng.exponential(1 / beta, n), n + 1.0, 3.0)
        est = fit_gutenberg_richter(cat).beta
        hits += abs(est - beta) <= 3 * beta / math.sqrt(n)
    assert hits >= 0.99 * 500


# background fields ---------------------------------------------------------------


def test_uniform_background():
    r = Region(0, 4, 0, 2)
    f = uniform_background(r)
    np.testing.assert_allclose(f(np.array([0.5, 3.9]), np.array([1.0, 0.1])), 1 / 8)
    assert midpoint_integral(f, r) == pytest.approx(1.0, abs=1e-3)


def test_kde_normalizes_over_region():
    rng = np.random.default_rng(2)
    r = Region(-118, -115, 32, 36)
    cat = Catalog.build(np.arange(1, 201, dtype=float), np.full(200, 3.0), 300.0, 3.0,
                        x=rng.normal(-116, 0.8, 200).clip(-118, -115), y=rng.normal(34, 1.0, 200).clip(32, 36), region=r)
    for bw in (None, 0.3, (0.1, 0.5)):
        f = fit_background_kde(cat, bandwidth=bw)
        assert midpoint_integral(f, r) == pytest.approx(1.0, abs=1e-3)


def test_kde_single_location_is_one_bump():
    r = Region(0, 10, 0, 10)
    cat = Catalog.build([1.0, 2.0, 3.0], [3.0] * 3, 5.0, 3.0, x=[4.0] * 3, y=[6.0] * 3, region=r)
    f = fit_background_kde(cat, bandwidth=0.5)
    xs = np.linspace(0.05, 9.95, 100)
    X, Y = np.meshgrid(xs, xs)
    v = f(X, Y)
    iy, ix = np.unravel_index(np.argmax(v), v.shape)
    assert abs(xs[ix] - 4.0) < 0.1 and abs(xs[iy] - 6.0) < 0.1
    # the bump lies well inside the region, so no renormalization is visible
    assert f(4.0, 6.0) == pytest.approx(1 / (2 * math.pi * 0.25), rel=1e-6)


def test_kde_needs_spatial_catalog():
    with pytest.raises(CatalogError):
        fit_background_kde(Catalog.build([1.0, 2.0], [3.0, 3.0], 5.0, 3.0))


def test_background_sampling_stays_in_region():
    rng = np.random.default_rng(0)
    r = Region(0, 1, 0, 1)
    cat = Catalog.build([1.0, 2.0, 3.0], [3.0] * 3, 5.0, 3.0, x=[0.05, 0.5, 0.9], y=[0.1, 0.5, 0.95], region=r)
    x, y = fit_background_kde(cat, bandwidth=0.2).sample(500, rng)
    assert x.size == 500 and np.all(r.contains(x, y))


def test_kde_sample_sizes_including_zero():
    r = Region(0, 10, 0, 10)
    cat = Catalog.build([1.0, 2.0, 3.0], [3.0] * 3, 5.0, 3.0, x=[1.0, 4.0, 9.9], y=[6.0, 0.1, 5.0], region=r)
    f = fit_background_kde(cat, bandwidth=0.5)
    rng = np.random.default_rng(0)
    for n in (0, 1, 50):
        x, y = f.sample(n, rng)
        assert x.shape == y.shape == (n,)
        assert r.contains(x, y).all()
