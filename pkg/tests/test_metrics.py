import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abmsim.metrics import (
    QUANTILES,
    ContactLog,
    EventLog,
    MetricsError,
    TimeSeries,
    age_binned_incidence,
    contact_matrix,
    fmt,
    gap_mass,
    mean_by_gap,
    incidence_rows,
    paired_difference,
    person_years,
    summarize,
    write_csv,
    year_grid,
    yearly_autocorrelation,
    yearly_counts,
)

EDGES = [0.0, 1.0, 5.0, 20.0, 65.0]


def test_zero_events_give_zero_series():
    inc = age_binned_incidence(np.zeros(0), np.zeros(0), np.array([-30.0]), np.array([10.0]), 2.0, 10.0, EDGES)
    assert inc.counts.sum() == 0
    assert np.all(inc.total_rate_per_100k == 0)


def test_single_event_lands_in_one_year():
    ts = yearly_counts(np.array([3.2]), burn_in=0.0, horizon=10.0)
    assert ts.values.sum() == 1
    assert np.count_nonzero(ts.values) == 1
    assert ts.values[3] == 1


def test_year_grid_is_relative_to_burn_in():
    assert np.array_equal(year_grid(20.0, 25.0), np.arange(-20.0, 5.0))


def test_incidence_conservation_and_rates():
    rng = np.random.default_rng(0)
    births = rng.uniform(-80, 10, size=500)
    ends = np.full(500, 30.0)
    t = rng.uniform(0, 30, size=2000)
    owner = rng.integers(0, 500, size=2000)
    keep = t > births[owner]
    t, owner = t[keep], owner[keep]
    ages = t - births[owner]
    inc = age_binned_incidence(t, ages, births, ends, 5.0, 30.0, EDGES)
    assert np.array_equal(inc.counts.sum(axis=1), inc.total_counts)
    assert inc.counts.sum() == len(t)
    ok = inc.person_years > 0
    assert np.allclose(inc.rates_per_100k[ok], inc.counts[ok] / inc.person_years[ok] * 1e5)


def test_person_years_exact_for_simple_case():
    # one person born at t=-0.5, alive through [0, 2): ages 0.5..2.5
    py = person_years(np.array([-0.5]), np.array([2.0]), np.array([0.0, 1.0]), 1.0, [0.0, 1.0, 2.0])
    assert np.allclose(py, [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])


def test_autocorrelation_examples():
    alt = [1.0, -1.0] * 20
    assert yearly_autocorrelation(alt, 2) == pytest.approx(1.0)
    assert yearly_autocorrelation(alt, 1) == pytest.approx(-1.0)
    assert yearly_autocorrelation([3.0] * 10, 1) is None
    with pytest.raises(MetricsError):
        yearly_autocorrelation([1.0, 2.0], 2)


def test_autocorrelation_white_noise_bound():
    rng = np.random.default_rng(5)
    x = rng.permutation(rng.normal(size=4000))
    assert abs(yearly_autocorrelation(x, 1)) < 3 / math.sqrt(len(x))


def test_paired_difference():
    t = np.arange(5.0)
    a = TimeSeries(t, np.array([1.0, 2, 3, 4, 5]))
    assert np.all(paired_difference(a, a).values == 0)
    b = TimeSeries(t, np.array([1.0, 2, 4, 6, 5]))
    assert list(paired_difference(a, b).values) == [0, 0, 1, 2, 0]
    with pytest.raises(MetricsError):
        paired_difference(a, TimeSeries(t + 1, a.values))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=6, max_size=6), min_size=1, max_size=12),
       st.randoms())
def test_summary_properties(rows, rnd):
    mat = np.array(rows)
    s = summarize(mat)
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    s2 = summarize(mat[perm])
    for q in QUANTILES:
        assert np.array_equal(s.quantiles[q], s2.quantiles[q])
    assert np.all(s.median >= mat.min(axis=0) - 1e-9)
    assert np.all(s.median <= mat.max(axis=0) + 1e-9)
    qs = [s.quantiles[q] for q in QUANTILES]
    for lo, hi in zip(qs, qs[1:]):
        assert np.all(lo <= hi + 1e-9)
    assert s.n == len(rows)


def test_summary_rejects_mismatched_grids():
    a = TimeSeries(np.arange(3.0), np.zeros(3))
    b = TimeSeries(np.arange(1.0, 4.0), np.zeros(3))
    with pytest.raises(MetricsError):
        summarize([a, b])


def test_contact_matrix_single_household():
    log = ContactLog()
    log.add_person_days(30.0, 1.0)
    log.add_person_days(2.0, 1.0)
    log.add_contact(30.0, 2.0)
    m, empty = contact_matrix(log)
    nz = set(zip(*np.nonzero(m)))
    assert nz == {(0, 6), (6, 0)}
    assert empty.sum() == m.shape[0] - 2
    assert np.array_equal(log.counts, log.counts.T)


def test_contact_counts_symmetric_and_mergeable():
    rng = np.random.default_rng(2)
    a, b = ContactLog(), ContactLog()
    for log in (a, b):
        for _ in range(500):
            log.add_contact(*rng.uniform(0, 90, size=2))
    a.merge(b)
    assert np.array_equal(a.counts, a.counts.T)
    assert a.counts.sum() == 2000


def test_gap_mass():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert list(gap_mass(m)) == [5.0, 5.0]
    assert list(mean_by_gap(m)) == [2.5, 2.5]
    assert list(mean_by_gap(np.ones((4, 4)))) == [1.0] * 4


def test_fmt_is_stable():
    assert fmt(3) == "3"
    assert fmt(3.0) == "3"
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(float("nan")) == "nan"
    assert fmt(np.int64(7)) == "7"


def test_event_log_select_and_count():
    log = EventLog()
    log.record("cp", 1, 4.0, 10.0)
    log.record("hz", 2, 60.0, 11.0)
    log.record("cp", 3, 5.0, 12.0)
    t, a = log.select("cp")
    assert list(t) == [10.0, 12.0] and list(a) == [4.0, 5.0]
    assert log.count("hz") == 1 and len(log) == 3


def test_incidence_rows_and_csv(tmp_path):
    inc = age_binned_incidence(np.array([0.5]), np.array([3.0]), np.array([-2.5]), np.array([2.0]), 0.0, 2.0, EDGES)
    rows = incidence_rows("baseline", 0, "cp", inc)
    assert rows[0][:5] == ["baseline", 0, 0.0, "all", 1.0]
    p = tmp_path / "x.csv"
    write_csv(p, ("arm", "realization", "year", "age_bin", "count", "rate_per_100k", "outcome"), rows)
    got = list(csv.reader(p.open()))
    assert got[0][0] == "arm"
    assert got[1][:5] == ["baseline", "0", "0", "all", "1"]
