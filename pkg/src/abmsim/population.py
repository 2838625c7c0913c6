"""Synthetic open population: demography, households, schools and space.

Agents live in a bounded (non-toroidal) square split into an urban strip and a
rural strip, each filled at its own density.  Household members share one
point.  Demographic hazards are piecewise-constant tables over age bands and
are sampled exactly by inverting the cumulative hazard.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .engine import Engine, RngRegistry, Substream
from .statechart import ChartDefinition, ChartInstance, ChartRuntime, State, Timeout, Transition


# ---------------------------------------------------------------------------
# hazard tables
# ---------------------------------------------------------------------------

def sample_piecewise_hazard(
    edges: Sequence[float], rates: Sequence[float], age: float, u: float
) -> float:
    """Waiting time from ``age`` until an event under a piecewise-constant hazard.

    ``edges[i]`` is the lower age of band ``i``; the last band is open-ended.
    Returns ``inf`` when the remaining cumulative hazard is finite and not
    reached (e.g. zero rates after some age).
    """
    target = -math.log(1.0 - u)
    i = max(bisect.bisect_right(edges, age) - 1, 0)
    a = age
    n = len(edges)
    while True:
        rate = rates[i]
        hi = edges[i + 1] if i + 1 < n else math.inf
        if rate > 0.0:
            span = hi - a
            need = target / rate
            if need <= span:
                return a + need - age
            target -= rate * span
        if hi == math.inf:
            return math.inf
        a = hi
        i += 1


def cumulative_survival(edges: Sequence[float], rates: Sequence[float], ages: np.ndarray) -> np.ndarray:
    """Survival probability from birth to each age in ``ages``."""
    out = np.empty_like(ages, dtype=float)
    for k, x in enumerate(ages):
        h = 0.0
        for i, lo in enumerate(edges):
            hi = edges[i + 1] if i + 1 < len(edges) else math.inf
            if x <= lo:
                break
            h += rates[i] * (min(x, hi) - lo)
        out[k] = math.exp(-h)
    return out


def life_expectancy(edges: Sequence[float], rates: Sequence[float], max_age: float = 130.0) -> float:
    ages = np.linspace(0.0, max_age, 13001)
    surv = cumulative_survival(edges, rates, ages)
    return float(np.trapezoid(surv, ages))


def _gompertz_makeham_table() -> tuple[list[float], list[float]]:
    edges = [0.0, 1.0] + [float(a) for a in range(5, 101, 5)]
    rates = []
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else lo + 5.0
        mid = 0.5 * (lo + hi)
        r = 3e-4 + 2e-5 * math.exp(0.095 * mid)
        if lo == 0.0:
            r += 0.004
        rates.append(round(r, 7))
    return edges, rates


_MORT_EDGES, _MORT_RATES = _gompertz_makeham_table()

# 5-year bands, share of population; shape of a young Canadian province
_PYRAMID = [
    (0, 5, 6.6), (5, 10, 6.6), (10, 15, 6.0), (15, 20, 5.8), (20, 25, 6.5),
    (25, 30, 7.7), (30, 35, 8.2), (35, 40, 7.6), (40, 45, 6.9), (45, 50, 6.6),
    (50, 55, 7.0), (55, 60, 6.8), (60, 65, 5.6), (65, 70, 4.2), (70, 75, 3.0),
    (75, 80, 2.1), (80, 85, 1.5), (85, 90, 0.9), (90, 100, 0.4),
]


class HouseholdType(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    adults: int = Field(ge=1, le=2)
    children: int = Field(ge=0, le=6)
    weight: float = Field(ge=0)


_HOUSEHOLD_TYPES = [
    HouseholdType(adults=1, children=0, weight=28.0),
    HouseholdType(adults=2, children=0, weight=30.0),
    HouseholdType(adults=2, children=1, weight=15.0),
    HouseholdType(adults=2, children=2, weight=15.0),
    HouseholdType(adults=2, children=3, weight=5.0),
    HouseholdType(adults=2, children=4, weight=1.0),
    HouseholdType(adults=1, children=1, weight=4.0),
    HouseholdType(adults=1, children=2, weight=2.0),
]


class DemographyParams(BaseModel):
    """Demographic inputs; all defaults are illustrative, not calibrated data."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    age_pyramid: list[tuple[float, float, float]] = Field(default_factory=lambda: list(_PYRAMID))
    household_types: list[HouseholdType] = Field(default_factory=lambda: list(_HOUSEHOLD_TYPES))
    mortality_edges: list[float] = Field(default_factory=lambda: list(_MORT_EDGES))
    mortality_rates: list[float] = Field(default_factory=lambda: list(_MORT_RATES))
    fertility_edges: list[float] = Field(default_factory=lambda: [0.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 46.0])
    fertility_rates: list[float] = Field(
        default_factory=lambda: [0.0, 0.022, 0.075, 0.135, 0.14, 0.07, 0.016, 0.0]
    )
    parity_multipliers: list[float] = Field(default_factory=lambda: [1.0, 1.0, 0.55, 0.4, 0.3, 0.25])
    gestation_years: float = Field(0.75, gt=0)
    postpartum_years: float = Field(0.25, ge=0)
    female_share: float = Field(0.5, ge=0, le=1)
    urban_fraction: float = Field(0.8, ge=0, le=1)
    density_urban: float = Field(0.3, gt=0)
    density_rural: float = Field(0.2, gt=0)
    schools_enabled: bool = False
    school_size: int = Field(400, ge=1)
    school_entry_age: float = 6.0
    school_exit_age: float = 18.0
    household_formation: bool = False
    leave_home_min_age: float = 18.0
    leave_home_max_age: float = 28.0
    partner_age_gap: float = Field(6.0, ge=0)
    partner_seek_probability: float = Field(0.7, ge=0, le=1)
    min_parent_age: float = 18.0
    max_parent_age: float = 46.0

    @field_validator("age_pyramid")
    @classmethod
    def _pyramid_ok(cls, v):
        if not v or sum(w for _, _, w in v) <= 0:
            raise ValueError("age pyramid weights must sum to a positive value")
        for lo, hi, w in v:
            if hi <= lo or lo < 0 or w < 0:
                raise ValueError(f"bad age pyramid band ({lo}, {hi}, {w})")
        return v

    @field_validator("household_types")
    @classmethod
    def _households_ok(cls, v):
        if not v or sum(h.weight for h in v) <= 0:
            raise ValueError("household type weights must sum to a positive value")
        return v

    @model_validator(mode="after")
    def _tables_ok(self):
        for name in ("mortality", "fertility"):
            edges = getattr(self, f"{name}_edges")
            rates = getattr(self, f"{name}_rates")
            if len(edges) != len(rates) or not edges or edges[0] != 0.0:
                raise ValueError(f"{name} table needs matching edges/rates starting at age 0")
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"{name} edges must increase")
            if any(r < 0 for r in rates):
                raise ValueError(f"{name} rates must be non-negative")
        if self.mortality_rates[-1] <= 0:
            raise ValueError("the open-ended mortality band needs a positive rate")
        if len(self.parity_multipliers) == 0:
            raise ValueError("parity_multipliers must not be empty")
        if self.leave_home_max_age < self.leave_home_min_age:
            raise ValueError("leave_home_max_age < leave_home_min_age")
        return self


# ---------------------------------------------------------------------------
# agents and groups
# ---------------------------------------------------------------------------

class PersonAgent:
    __slots__ = (
        "id", "sex", "birth_time", "x", "y", "household_id", "school_id", "mother_id",
        "attitude", "acceptance", "alive", "death_time", "parity", "charts",
        "vzv", "imm", "leave_age", "partner_id",
        "doses", "missed", "episode", "cache",
    )

    def __init__(self, id: int, sex: str, birth_time: float, x: float, y: float, household_id: int):
        self.id = id
        self.sex = sex
        self.birth_time = birth_time
        self.x = x
        self.y = y
        self.household_id = household_id
        self.school_id: int | None = None
        self.mother_id: int | None = None
        self.attitude: str | None = None
        self.acceptance: float | None = None
        self.alive = True
        self.death_time: float | None = None
        self.parity = 0
        self.charts: list[ChartInstance] = []
        self.vzv: Any = None
        self.imm: Any = None
        self.leave_age: float | None = None
        self.partner_id: int | None = None
        self.doses = 0
        self.missed: list[int] = []
        self.episode = 0
        self.cache: dict = {}

    def age(self, t: float) -> float:
        return t - self.birth_time

    def __repr__(self) -> str:
        return f"<Person {self.id} {self.sex} born={self.birth_time:.2f} alive={self.alive}>"


@dataclass
class Household:
    id: int
    x: float
    y: float
    urban: bool
    members: list[int] = field(default_factory=list)
    parents: list[int] = field(default_factory=list)


@dataclass
class School:
    id: int
    enrolled: list[int] = field(default_factory=list)


class SpatialIndex:
    """Uniform grid over ``[0, side]^2`` with square cells.

    ``neighbors_within`` is an exact Euclidean ball query; cells only prune.
    Each cell keeps a version counter that changes whenever its membership
    does, so callers can cache query results.
    """

    def __init__(self, side: float, cell_size: float, capacity: int = 1024):
        self.side = float(side)
        self.cell = max(float(cell_size), 1e-9)
        self.n = max(1, int(math.ceil(self.side / self.cell)))
        self.cells: list[list[int]] = [[] for _ in range(self.n * self.n)]
        self.versions = [0] * (self.n * self.n)
        self._arrays: list[tuple[int, np.ndarray] | None] = [None] * (self.n * self.n)
        self.xs = np.zeros(capacity)
        self.ys = np.zeros(capacity)

    def _cell_of(self, x: float, y: float) -> int:
        n = self.n
        i = min(max(int(x / self.cell), 0), n - 1)
        j = min(max(int(y / self.cell), 0), n - 1)
        return i * n + j

    def _ensure(self, idx: int) -> None:
        if idx >= len(self.xs):
            cap = max(len(self.xs) * 2, idx + 1)
            self.xs = np.resize(self.xs, cap)
            self.ys = np.resize(self.ys, cap)

    def insert(self, idx: int, x: float, y: float) -> None:
        self._ensure(idx)
        self.xs[idx] = x
        self.ys[idx] = y
        c = self._cell_of(x, y)
        self.cells[c].append(idx)
        self.versions[c] += 1

    def remove(self, idx: int) -> None:
        c = self._cell_of(float(self.xs[idx]), float(self.ys[idx]))
        self.cells[c].remove(idx)
        self.versions[c] += 1

    def move(self, idx: int, x: float, y: float) -> None:
        self.remove(idx)
        self.insert(idx, x, y)

    def cell_span(self, x: float, y: float, r: float) -> list[int]:
        n, c = self.n, self.cell
        i0 = max(int((x - r) / c), 0)
        i1 = min(int((x + r) / c), n - 1)
        j0 = max(int((y - r) / c), 0)
        j1 = min(int((y + r) / c), n - 1)
        return [i * n + j for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]

    def signature(self, cells: list[int]) -> tuple[int, ...]:
        v = self.versions
        return tuple(v[k] for k in cells)

    def query(self, x: float, y: float, r: float, exclude: int | None = None) -> list[int]:
        if r <= 0:
            return []
        ids = self.query_array(x, y, r)
        out = ids.tolist()
        if exclude is not None and exclude in out:
            out.remove(exclude)
        return out

    def _cell_array(self, k: int) -> np.ndarray:
        cached = self._arrays[k]
        v = self.versions[k]
        if cached is None or cached[0] != v:
            cached = (v, np.array(self.cells[k], dtype=np.int64))
            self._arrays[k] = cached
        return cached[1]

    def query_array(self, x: float, y: float, r: float) -> np.ndarray:
        """Ids within distance ``r`` of ``(x, y)`` as an array (self not excluded)."""
        parts = [self._cell_array(k) for k in self.cell_span(x, y, r)]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        ids = np.concatenate(parts) if len(parts) > 1 else parts[0]
        if len(ids) == 0:
            return ids
        dx = self.xs[ids] - x
        dy = self.ys[ids] - y
        return ids[dx * dx + dy * dy <= r * r]


# ---------------------------------------------------------------------------
# population
# ---------------------------------------------------------------------------

BirthListener = Callable[["PersonAgent", "PersonAgent | None", float], None]
DeathListener = Callable[["PersonAgent", float, str], None]


class Population:
    """Owns agents, households, schools and the spatial index for one realization."""

    def __init__(
        self,
        params: DemographyParams,
        engine: Engine,
        rng: RngRegistry,
        side: float,
        urban_width: float,
        cell_size: float,
    ):
        self.params = params
        self.engine = engine
        self.rng = rng
        self.demo: Substream = rng.stream("demographics")
        self.side = side
        self.urban_width = urban_width
        self.space = SpatialIndex(side, cell_size)
        self.agents: list[PersonAgent] = []
        self.households: dict[int, Household] = {}
        self.schools: list[School] = []
        self.alive_ids: list[int] = []
        self._alive_pos: dict[int, int] = {}
        self._next_household = 0
        self.initial_count = 0
        self.births = 0
        self.deaths = 0
        self.birth_listeners: list[BirthListener] = []
        self.death_listeners: list[DeathListener] = []
        self.join_listeners: list[Callable[[PersonAgent, float], None]] = []
        self.mortality_managed = True
        self.birth_times = np.zeros(1024)
        self._singles: dict[str, list[int]] = {"F": [], "M": []}

    # -- bookkeeping -------------------------------------------------------
    @property
    def alive_count(self) -> int:
        return len(self.alive_ids)

    def living(self) -> Iterable[PersonAgent]:
        agents = self.agents
        return (agents[i] for i in self.alive_ids)

    def new_household(self, x: float, y: float, urban: bool) -> Household:
        hh = Household(self._next_household, x, y, urban)
        self.households[hh.id] = hh
        self._next_household += 1
        return hh

    def random_point(self, urban: bool) -> tuple[float, float]:
        s = self.demo
        if urban or self.urban_width >= self.side:
            x = s.uniform() * self.urban_width
        else:
            x = self.urban_width + s.uniform() * (self.side - self.urban_width)
        return x, s.uniform() * self.side

    def _add(self, agent: PersonAgent) -> None:
        if agent.id >= len(self.birth_times):
            self.birth_times = np.resize(self.birth_times, max(2 * len(self.birth_times), agent.id + 1))
        self.birth_times[agent.id] = agent.birth_time
        self.agents.append(agent)
        self._alive_pos[agent.id] = len(self.alive_ids)
        self.alive_ids.append(agent.id)
        self.space.insert(agent.id, agent.x, agent.y)
        hh = self.households[agent.household_id]
        hh.members.append(agent.id)

    def create_agent(self, sex: str, birth_time: float, household: Household) -> PersonAgent:
        a = PersonAgent(len(self.agents), sex, birth_time, household.x, household.y, household.id)
        self._add(a)
        return a

    def random_alive(self, stream: Substream) -> PersonAgent | None:
        if not self.alive_ids:
            return None
        return self.agents[self.alive_ids[stream.index(len(self.alive_ids))]]

    # -- queries -----------------------------------------------------------
    def neighbors_within(self, agent: PersonAgent, radius: float) -> list[int]:
        return self.space.query(agent.x, agent.y, radius, exclude=agent.id)

    def pick_neighbor(self, agent: PersonAgent, radius: float, stream: Substream, cache: dict, key: Any = 0) -> int | None:
        """Uniform draw from ``neighbors_within(agent, radius)``.

        ``cache`` holds the neighbour list between calls; it is rebuilt when
        the agent has moved or any grid cell it covers has changed.
        """
        space = self.space
        entry = cache.get(key)
        if entry is None or entry[0] != agent.x or entry[1] != agent.y:
            cells = space.cell_span(agent.x, agent.y, radius)
            sig = None
        else:
            _, _, cells, sig, ids = entry
        cur = space.signature(cells)
        if cur != sig:
            ids = space.query(agent.x, agent.y, radius, exclude=agent.id)
            cache[key] = (agent.x, agent.y, cells, cur, ids)
        if not ids:
            return None
        return ids[stream.index(len(ids))]

    def household_effective_acceptance(self, agent: PersonAgent) -> float:
        hh = self.households.get(agent.household_id)
        vals = []
        if hh is not None:
            vals = [self.agents[p].acceptance for p in hh.parents
                    if self.agents[p].alive and self.agents[p].acceptance is not None]
        if not vals:
            return agent.acceptance if agent.acceptance is not None else 0.0
        return min(vals)

    # -- demography ----------------------------------------------------------
    def sample_remaining_lifetime(self, age: float, stream: Substream | None = None) -> float:
        p = self.params
        s = stream or self.demo
        return sample_piecewise_hazard(p.mortality_edges, p.mortality_rates, age, s.uniform())

    def sample_conception_wait(self, agent: PersonAgent, t: float, stream: Substream) -> float:
        p = self.params
        if agent.sex != "F":
            return math.inf
        mult = p.parity_multipliers[min(agent.parity, len(p.parity_multipliers) - 1)]
        if mult <= 0:
            return math.inf
        rates = [r * mult for r in p.fertility_rates]
        return sample_piecewise_hazard(p.fertility_edges, rates, agent.age(t), stream.uniform())

    def process_birth(self, mother: PersonAgent, t: float) -> PersonAgent | None:
        """Create a newborn in the mother's household at the mother's position."""
        if not mother.alive:
            return None
        hh = self.households[mother.household_id]
        sex = "F" if self.demo.uniform() < self.params.female_share else "M"
        child = PersonAgent(len(self.agents), sex, t, mother.x, mother.y, hh.id)
        child.mother_id = mother.id
        self._add(child)
        mother.parity += 1
        self.births += 1
        self.schedule_life_course(child, t)
        for fn in self.birth_listeners:
            fn(child, mother, t)
        return child

    def kill(self, agent: PersonAgent, t: float, cause: str = "background") -> None:
        if not agent.alive:
            return
        agent.alive = False
        agent.death_time = t
        for inst in agent.charts:
            inst.runtime.halt(inst, t)
        pos = self._alive_pos.pop(agent.id)
        last = self.alive_ids.pop()
        if last != agent.id:
            self.alive_ids[pos] = last
            self._alive_pos[last] = pos
        self.space.remove(agent.id)
        self._leave_household(agent)
        self._unenroll(agent)
        if agent.partner_id is not None:
            partner = self.agents[agent.partner_id]
            if partner.partner_id == agent.id:
                partner.partner_id = None
        for lst in self._singles.values():
            if agent.id in lst:
                lst.remove(agent.id)
        self.deaths += 1
        for fn in self.death_listeners:
            fn(agent, t, cause)

    def _leave_household(self, agent: PersonAgent) -> None:
        hh = self.households.get(agent.household_id)
        if hh is None:
            return
        hh.members.remove(agent.id)
        if agent.id in hh.parents:
            hh.parents.remove(agent.id)
        if not hh.members:
            del self.households[hh.id]

    def _unenroll(self, agent: PersonAgent) -> None:
        if agent.school_id is not None:
            self.schools[agent.school_id].enrolled.remove(agent.id)
            agent.school_id = None

    # -- life course ---------------------------------------------------------
    def schedule_life_course(self, agent: PersonAgent, t: float) -> None:
        """Arm school entry/exit, leaving home and (if unmanaged) background death."""
        p = self.params
        age = agent.age(t)
        eng = self.engine
        if p.schools_enabled:
            if age < p.school_entry_age:
                eng.at(agent.birth_time + p.school_entry_age, self._school_entry, agent)
            elif age < p.school_exit_age:
                self._enroll(agent)
            if age < p.school_exit_age:
                eng.at(agent.birth_time + p.school_exit_age, self._school_exit, agent)
        if p.household_formation and agent.leave_age is None:
            leave = self.demo.uniform_range(p.leave_home_min_age, p.leave_home_max_age)
            agent.leave_age = leave
            if age < leave:
                eng.at(agent.birth_time + leave, self._leave_home, agent)
        if not self.mortality_managed:
            rem = self.sample_remaining_lifetime(age)
            if rem != math.inf:
                eng.at(t + rem, self._background_death, agent)

    def _background_death(self, agent: PersonAgent) -> None:
        self.kill(agent, self.engine.now, "background")

    def _enroll(self, agent: PersonAgent) -> None:
        if not self.schools or agent.school_id is not None:
            return
        school = self.schools[self.demo.index(len(self.schools))]
        school.enrolled.append(agent.id)
        agent.school_id = school.id

    def _school_entry(self, agent: PersonAgent) -> None:
        if agent.alive:
            self._enroll(agent)

    def _school_exit(self, agent: PersonAgent) -> None:
        if agent.alive:
            self._unenroll(agent)

    def _leave_home(self, agent: PersonAgent) -> None:
        """Move out; pair with a waiting single of the other sex or start a new household."""
        if not agent.alive:
            return
        p = self.params
        t = self.engine.now
        s = self.demo
        partner = None
        pool = self._singles["M" if agent.sex == "F" else "F"]
        age = agent.age(t)
        for k, pid in enumerate(pool):
            cand = self.agents[pid]
            if abs(cand.age(t) - age) <= p.partner_age_gap:
                partner = cand
                pool.pop(k)
                break
        self._leave_household(agent)
        if partner is not None:
            hh = self.households[partner.household_id]
            agent.partner_id = partner.id
            partner.partner_id = agent.id
        else:
            urban = s.uniform() < p.urban_fraction
            x, y = self.random_point(urban)
            hh = self.new_household(x, y, urban)
            if s.uniform() < p.partner_seek_probability:
                self._singles[agent.sex].append(agent.id)
        agent.household_id = hh.id
        hh.members.append(agent.id)
        hh.parents.append(agent.id)
        agent.x, agent.y = hh.x, hh.y
        self.space.move(agent.id, hh.x, hh.y)
        for fn in self.join_listeners:
            fn(agent, t)

    # -- export --------------------------------------------------------------
    def snapshot_rows(self, t: float, describe: Callable[[PersonAgent], str] | None = None) -> list[dict]:
        rows = []
        for a in self.living():
            att = a.attitude if a.attitude is not None else (
                "" if a.acceptance is None else f"{a.acceptance:.6f}")
            rows.append({
                "id": a.id,
                "age": f"{a.age(t):.6f}",
                "sex": a.sex,
                "household": a.household_id,
                "school": "" if a.school_id is None else a.school_id,
                "attitude": att,
                "state": describe(a) if describe else "|".join(c.state for c in a.charts),
            })
        return rows

    def export_snapshot(self, path, t: float, describe: Callable[[PersonAgent], str] | None = None) -> None:
        rows = self.snapshot_rows(t, describe)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["id", "age", "sex", "household", "school", "attitude", "state"])
            w.writeheader()
            w.writerows(rows)


def region_geometry(n: int, params: DemographyParams) -> tuple[float, float]:
    """Side of the square and width of the urban strip for ``n`` initial agents."""
    n = max(n, 1)
    urban_area = n * params.urban_fraction / params.density_urban
    rural_area = n * (1.0 - params.urban_fraction) / params.density_rural
    side = math.sqrt(urban_area + rural_area)
    return side, urban_area / side


def _sample_age(stream: Substream, bands: Sequence[tuple[float, float, float]], lo: float, hi: float) -> float | None:
    """Age from the pyramid restricted to ``[lo, hi)``; ``None`` if that slice is empty."""
    weights = []
    spans = []
    for blo, bhi, w in bands:
        a, b = max(blo, lo), min(bhi, hi)
        if b > a and w > 0:
            weights.append(w * (b - a) / (bhi - blo))
            spans.append((a, b))
    if not weights:
        return None
    k = stream.categorical(weights)
    a, b = spans[k]
    return stream.uniform_range(a, b)


def init_population(
    n: int,
    params: DemographyParams,
    engine: Engine,
    rng: RngRegistry,
    cell_size: float,
    t: float = 0.0,
) -> Population:
    """Build ``n`` agents grouped into households.

    Households are drawn from the household-type mix.  Adult ages come from
    the pyramid; children are drawn from the pyramid restricted to ages that
    keep the mother between ``min_parent_age`` and ``max_parent_age`` at
    their birth.  The last household is truncated to hit ``n`` exactly.
    """
    if n < 0:
        raise ValueError("population size must be >= 0")
    side, urban_w = region_geometry(n, params)
    pop = Population(params, engine, rng, side, urban_w, cell_size)
    s = rng.stream("initialization")
    bands = params.age_pyramid
    weights = [h.weight for h in params.household_types]
    max_adult = max(hi for _, hi, _ in bands)
    while len(pop.agents) < n:
        ht = params.household_types[s.categorical(weights)]
        urban = s.uniform() < params.urban_fraction
        x, y = pop.random_point(urban)
        hh = pop.new_household(x, y, urban)
        remaining = n - len(pop.agents)
        if ht.children > 0:
            for _ in range(100):
                mother_age = _sample_age(s, bands, params.min_parent_age, params.max_parent_age + 18.0)
                if mother_age is None:
                    break
                kid_lo = max(0.0, mother_age - params.max_parent_age)
                kid_hi = min(18.0, mother_age - params.min_parent_age)
                if kid_hi > kid_lo:
                    break
            else:
                mother_age = None
            if mother_age is None:
                ht = HouseholdType(adults=ht.adults, children=0, weight=1.0)
        if ht.children > 0:
            first_sex = "F"
            first_age = mother_age
        else:
            first_age = _sample_age(s, bands, 18.0, max_adult)
            if first_age is None:
                first_age = 30.0
            first_sex = "F" if s.uniform() < params.female_share else "M"
        head = pop.create_agent(first_sex, t - first_age, hh)
        hh.parents.append(head.id)
        members = 1
        if ht.adults == 2 and members < remaining:
            page = max(18.0, first_age + s.normal(2.0 if first_sex == "F" else -2.0, 3.0))
            partner = pop.create_agent("M" if first_sex == "F" else "F", t - page, hh)
            hh.parents.append(partner.id)
            partner.partner_id, head.partner_id = head.id, partner.id
            members += 1
        for _ in range(ht.children):
            if members >= remaining:
                break
            kid_age = _sample_age(s, bands, kid_lo, kid_hi)
            if kid_age is None:
                kid_age = s.uniform_range(kid_lo, kid_hi)
            sex = "F" if s.uniform() < params.female_share else "M"
            kid = pop.create_agent(sex, t - kid_age, hh)
            kid.mother_id = head.id
            head.parity += 1
            members += 1
    pop.initial_count = len(pop.agents)
    if params.schools_enabled:
        school_age = sum(
            1 for a in pop.agents
            if params.school_entry_age <= a.age(t) < params.school_exit_age
        )
        n_schools = max(1, math.ceil(school_age / params.school_size))
        pop.schools = [School(i) for i in range(n_schools)]
    return pop


# ---------------------------------------------------------------------------
# fertility chart
# ---------------------------------------------------------------------------

FERTILITY_STATES = ("notPregnant", "trimester1", "trimester2", "trimester3", "postPartum")


def fertility_chart(
    population_of: Callable[[ChartInstance], Population],
    stream_of: Callable[[ChartInstance], Substream],
    gestation: float,
    postpartum: float,
    on_trimester3: Callable[[ChartInstance, float], None] | None = None,
) -> ChartDefinition:
    """Pregnancy chart: conception hazard by age and parity, three equal trimesters.

    The birth happens on ``trimester3 -> postPartum``.
    """
    third = gestation / 3.0

    def conception_wait(inst: ChartInstance, t: float) -> float:
        return population_of(inst).sample_conception_wait(inst.agent, t, stream_of(inst))

    def give_birth(inst: ChartInstance, t: float, msg: Any) -> None:
        population_of(inst).process_birth(inst.agent, t)

    states = [
        State("notPregnant"),
        State("trimester1"),
        State("trimester2"),
        State("trimester3", on_entry=on_trimester3),
        State("postPartum"),
    ]
    transitions = [
        Transition("notPregnant", "trimester1", Timeout(conception_wait), name="conceive"),
        Transition("trimester1", "trimester2", Timeout(third)),
        Transition("trimester2", "trimester3", Timeout(third)),
        Transition("trimester3", "postPartum", Timeout(third), action=give_birth, name="birth"),
        Transition("postPartum", "notPregnant", Timeout(postpartum)),
    ]
    return ChartDefinition("fertility", states, transitions, "notPregnant")
