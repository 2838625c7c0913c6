"""Event log, incidence series, ensemble summaries and contact matrices.

Reporting years are anchored at the end of burn-in: year ``y`` covers
simulation time ``[burn_in + y, burn_in + y + 1)``, so burn-in years are
negative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


class MetricsError(ValueError):
    pass


class EventLog:
    """Append-only record of ``(t, kind, agent id, age)``."""

    __slots__ = ("t", "kind", "agent", "age")

    def __init__(self):
        self.t: list[float] = []
        self.kind: list[str] = []
        self.agent: list[int] = []
        self.age: list[float] = []

    def record(self, kind: str, agent_id: int, age: float, t: float) -> None:
        self.t.append(t)
        self.kind.append(kind)
        self.agent.append(agent_id)
        self.age.append(age)

    def __len__(self) -> int:
        return len(self.t)

    def select(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        idx = [i for i, k in enumerate(self.kind) if k == kind]
        t = np.asarray(self.t, dtype=float)[idx] if idx else np.zeros(0)
        a = np.asarray(self.age, dtype=float)[idx] if idx else np.zeros(0)
        return t, a

    def count(self, kind: str) -> int:
        return sum(1 for k in self.kind if k == kind)


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise MetricsError("times and values must be 1-D arrays of equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise MetricsError("sample times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)


def year_grid(burn_in: float, horizon: float, step: float = 1.0) -> np.ndarray:
    """Reporting-time lower edges from ``-burn_in`` up to ``horizon - burn_in``."""
    n = int(round(horizon / step))
    return -burn_in + step * np.arange(n)


def yearly_counts(
    times: np.ndarray, burn_in: float, horizon: float, step: float = 1.0, label: str = ""
) -> TimeSeries:
    grid = year_grid(burn_in, horizon, step)
    rel = np.asarray(times, dtype=float) - burn_in
    idx = np.floor((rel + burn_in) / step).astype(int)
    ok = (idx >= 0) & (idx < len(grid))
    counts = np.bincount(idx[ok], minlength=len(grid)).astype(float)
    return TimeSeries(grid, counts, label)


def person_years(
    births: np.ndarray,
    ends: np.ndarray,
    year_lo: np.ndarray,
    step: float,
    age_edges: Sequence[float],
) -> np.ndarray:
    """Exact person-time by (year, age bin).

    ``births`` and ``ends`` are per-agent simulation times (``ends`` = death
    time or the horizon).  ``year_lo`` are simulation-time year starts.
    """
    births = np.asarray(births, dtype=float)
    ends = np.asarray(ends, dtype=float)
    edges = list(age_edges) + [math.inf]
    out = np.zeros((len(year_lo), len(edges) - 1))
    for y, y0 in enumerate(year_lo):
        y1 = y0 + step
        lo_t = np.maximum(births, y0)
        hi_t = np.minimum(ends, y1)
        live = hi_t > lo_t
        if not np.any(live):
            continue
        b = births[live]
        lo_t = lo_t[live]
        hi_t = hi_t[live]
        for k in range(len(edges) - 1):
            a0 = b + edges[k]
            a1 = b + edges[k + 1]
            ov = np.minimum(hi_t, a1) - np.maximum(lo_t, a0)
            out[y, k] = ov[ov > 0].sum()
    return out


@dataclass
class AgeBinnedIncidence:
    age_edges: list[float]
    years: np.ndarray
    counts: np.ndarray
    person_years: np.ndarray

    @property
    def rates_per_100k(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.counts / self.person_years * 1e5
        return np.where(self.person_years > 0, r, 0.0)

    @property
    def total_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total_rate_per_100k(self) -> np.ndarray:
        py = self.person_years.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.total_counts / py * 1e5
        return np.where(py > 0, r, 0.0)

    def bin_labels(self) -> list[str]:
        e = self.age_edges
        out = []
        for i, lo in enumerate(e):
            if i + 1 < len(e):
                out.append(f"{lo:g}-{e[i + 1]:g}")
            else:
                out.append(f"{lo:g}+")
        return out


def age_binned_incidence(
    event_times: np.ndarray,
    event_ages: np.ndarray,
    births: np.ndarray,
    ends: np.ndarray,
    burn_in: float,
    horizon: float,
    age_edges: Sequence[float],
    step: float = 1.0,
) -> AgeBinnedIncidence:
    years = year_grid(burn_in, horizon, step)
    year_lo = years + burn_in
    edges = list(age_edges)
    counts = np.zeros((len(years), len(edges)))
    if len(event_times):
        yi = np.floor(np.asarray(event_times) / step).astype(int)
        ai = np.searchsorted(edges, np.asarray(event_ages), side="right") - 1
        ok = (yi >= 0) & (yi < len(years)) & (ai >= 0)
        np.add.at(counts, (yi[ok], ai[ok]), 1.0)
    py = person_years(births, ends, year_lo, step, edges)
    return AgeBinnedIncidence(edges, years, counts, py)


@dataclass
class EnsembleSummary:
    times: np.ndarray
    quantiles: dict[float, np.ndarray]
    mean: np.ndarray
    n: int
    label: str = ""

    @property
    def median(self) -> np.ndarray:
        return self.quantiles[50.0]


def summarize(runs: Sequence[TimeSeries] | np.ndarray, times: np.ndarray | None = None, label: str = "") -> EnsembleSummary:
    """Pointwise quantiles across realizations (linear interpolation)."""
    if isinstance(runs, np.ndarray):
        mat = np.asarray(runs, dtype=float)
        if times is None:
            times = np.arange(mat.shape[1], dtype=float)
    else:
        if not runs:
            raise MetricsError("no realizations to summarize")
        times = runs[0].times
        for r in runs:
            if len(r.times) != len(times) or not np.array_equal(r.times, times):
                raise MetricsError("realizations are on different time grids")
        mat = np.vstack([r.values for r in runs])
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise MetricsError("need a realizations x times matrix")
    # sort first so the result is independent of realization order
    srt = np.sort(mat, axis=0)
    qs = {q: np.percentile(srt, q, axis=0) for q in QUANTILES}
    return EnsembleSummary(np.asarray(times, dtype=float), qs, srt.mean(axis=0), mat.shape[0], label)


def yearly_autocorrelation(series: TimeSeries | Sequence[float], lag: int) -> float | None:
    """Pearson correlation of the series with itself shifted by ``lag``.

    Returns ``None`` when either lagged segment is constant.
    """
    x = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    if lag < 1 or len(x) <= lag:
        raise MetricsError("need len(series) > lag >= 1")
    a, b = x[:-lag], x[lag:]
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return None
    r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return max(-1.0, min(1.0, r))


def paired_difference(baseline: TimeSeries, intervention: TimeSeries) -> TimeSeries:
    if len(baseline.times) != len(intervention.times) or not np.array_equal(
        baseline.times, intervention.times
    ):
        raise MetricsError("paired arms must share the sample grid")
    return TimeSeries(baseline.times.copy(), intervention.values - baseline.values,
                      f"{intervention.label}-{baseline.label}")


class ContactLog:
    """Symmetric raw contact counts between age bins plus observed person-days.

    Every contact ``(a, b)`` increments both ``(bin(a), bin(b))`` and
    ``(bin(b), bin(a))``.
    """

    def __init__(self, bin_width: float = 5.0, max_age: float = 80.0):
        self.bin_width = bin_width
        self.max_age = max_age
        self.n_bins = int(round(max_age / bin_width)) + 1  # last bin open-ended
        self.counts = np.zeros((self.n_bins, self.n_bins))
        self.person_days = np.zeros(self.n_bins)

    def bin_of(self, age: float) -> int:
        return min(int(age // self.bin_width), self.n_bins - 1)

    def add_contact(self, age_a: float, age_b: float) -> None:
        i, j = self.bin_of(age_a), self.bin_of(age_b)
        self.counts[i, j] += 1.0
        self.counts[j, i] += 1.0

    def add_person_days(self, age: float, days: float) -> None:
        self.person_days[self.bin_of(age)] += days

    def merge(self, other: "ContactLog") -> None:
        self.counts += other.counts
        self.person_days += other.person_days

    def labels(self) -> list[str]:
        w = self.bin_width
        out = [f"{int(i * w)}-{int(i * w + w - 1)}" for i in range(self.n_bins - 1)]
        out.append(f"{int((self.n_bins - 1) * w)}+")
        return out


def contact_matrix(log: ContactLog) -> tuple[np.ndarray, np.ndarray]:
    """Mean daily contacts of a person in bin ``i`` with people in bin ``j``.

    Returns ``(matrix, empty_rows)``; rows without observed person-time are
    zero and flagged.
    """
    empty = log.person_days <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        m = log.counts / log.person_days[:, None]
    m[empty, :] = 0.0
    return m, empty


def gap_mass(matrix: np.ndarray) -> np.ndarray:
    """Total matrix mass at each absolute bin gap ``|i - j|``."""
    n = matrix.shape[0]
    out = np.zeros(n)
    for i in range(n):
        for j in range(n):
            out[abs(i - j)] += matrix[i, j]
    return out


def mean_by_gap(matrix: np.ndarray) -> np.ndarray:
    """Mean cell value at each absolute bin gap (gap 0 has n cells, gap g has 2(n - g))."""
    n = matrix.shape[0]
    cells = np.array([n] + [2 * (n - g) for g in range(1, n)], dtype=float)
    return gap_mass(matrix) / cells


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def fmt(x: float) -> str:
    """Stable text form for floats in output files."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.10g}"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool) else v for v in row])


INCIDENCE_HEADER = ("arm", "realization", "year", "age_bin", "count", "rate_per_100k", "outcome")
SUMMARY_HEADER = ("arm", "year", "q025", "q25", "q50", "q75", "q975", "mean", "outcome")
CONTACT_HEADER = ("row_bin", "col_bin", "contacts_per_day")
ECON_HEADER = ("arm", "realization", "cost_category", "total", "qalys")


def incidence_rows(arm: str, realization: int, outcome: str, inc: AgeBinnedIncidence) -> list[list]:
    rows = []
    labels = inc.bin_labels()
    rates = inc.rates_per_100k
    tot_rate = inc.total_rate_per_100k
    for y, year in enumerate(inc.years):
        rows.append([arm, realization, year, "all", inc.counts[y].sum(), tot_rate[y], outcome])
        for k, lab in enumerate(labels):
            rows.append([arm, realization, year, lab, inc.counts[y, k], rates[y, k], outcome])
    return rows


def summary_rows(arm: str, outcome: str, s: EnsembleSummary) -> list[list]:
    rows = []
    for i, year in enumerate(s.times):
        rows.append([arm, year] + [s.quantiles[q][i] for q in QUANTILES] + [s.mean[i], outcome])
    return rows


def contact_rows(log: ContactLog) -> list[list]:
    m, _ = contact_matrix(log)
    labels = log.labels()
    return [[labels[i], labels[j], m[i, j]] for i in range(len(labels)) for j in range(len(labels))]
