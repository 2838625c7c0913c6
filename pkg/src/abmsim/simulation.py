"""Pieces shared by the model packs: per-run results and the cost/QALY ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import AgeBinnedIncidence, ContactLog, age_binned_incidence

COST_CATEGORIES = (
    "vaccine_dose",
    "gp_visit",
    "ed_visit",
    "hospital_day",
    "personal_expense",
    "productivity_loss",
)

INCIDENCE_AGE_EDGES = [0.0, 1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0]


class LedgerError(ValueError):
    pass


class HealthEconLedger:
    """Discounted costs by category and QALYs, clipped to a reporting window.

    Everything is discounted continuously at ``rate`` to ``t0`` (the end of
    burn-in).  Costs are booked at the time they occur; utility is integrated
    over the part of each episode that falls inside ``[t0, t1]``.
    """

    def __init__(self, rate: float, t0: float, t1: float, unit_costs: dict[str, float]):
        if rate < 0:
            raise LedgerError("discount rate must be >= 0")
        self.rate = rate
        self.t0 = t0
        self.t1 = t1
        self.unit_costs = {c: float(unit_costs.get(c, 0.0)) for c in COST_CATEGORIES}
        self.totals = {c: 0.0 for c in COST_CATEGORIES}
        self.qalys = 0.0
        self.per_agent_cost: dict[int, float] = {}
        self.per_agent_qaly: dict[int, float] = {}

    def discount(self, t: float) -> float:
        return math.exp(-self.rate * (t - self.t0))

    def discounted_time(self, a: float, b: float) -> float:
        """Integral of the discount factor over ``[a, b]`` clipped to the window."""
        a = max(a, self.t0)
        b = min(b, self.t1)
        if b <= a:
            return 0.0
        if self.rate == 0.0:
            return b - a
        r = self.rate
        return (math.exp(-r * (a - self.t0)) - math.exp(-r * (b - self.t0))) / r

    def charge(self, agent_id: int, category: str, count: float, t: float) -> None:
        if count < 0:
            raise LedgerError("event counts must be non-negative")
        if not (self.t0 <= t <= self.t1):
            return
        amount = count * self.unit_costs[category] * self.discount(t)
        if amount == 0.0:
            return
        self.totals[category] += amount
        self.per_agent_cost[agent_id] = self.per_agent_cost.get(agent_id, 0.0) + amount

    def accrue(
        self,
        agent_id: int,
        start: float,
        end: float,
        utility: float,
        events: dict[str, float] | None = None,
    ) -> None:
        """Book one state episode: ``utility`` per discounted year, plus event costs at ``start``."""
        if end < start:
            raise LedgerError(f"negative episode duration ({start} -> {end})")
        if events:
            for cat, n in events.items():
                self.charge(agent_id, cat, n, start)
        if utility != 0.0:
            q = utility * self.discounted_time(start, end)
            if q != 0.0:
                self.qalys += q
                self.per_agent_qaly[agent_id] = self.per_agent_qaly.get(agent_id, 0.0) + q

    @property
    def total_cost(self) -> float:
        return sum(self.totals.values())


@dataclass
class RunResult:
    """What one realization of one arm hands back to the collector."""

    pack: str
    arm: str
    realization: int
    incidence: dict[str, AgeBinnedIncidence]
    costs: dict[str, float] = field(default_factory=dict)
    qalys: float = 0.0
    stats: dict[str, float] = field(default_factory=dict)
    contacts: ContactLog | None = None
    curves: dict[str, list[float]] = field(default_factory=dict)
    draw_counts: dict[str, int] = field(default_factory=dict)

    def yearly_total(self, outcome: str) -> np.ndarray:
        return self.incidence[outcome].total_counts


def incidence_for(log, kinds: dict[str, str], population, burn_in: float, horizon: float,
                  edges=INCIDENCE_AGE_EDGES) -> dict[str, AgeBinnedIncidence]:
    """Age-binned yearly incidence for each ``outcome -> event kind`` pair."""
    agents = population.agents
    births = np.fromiter((a.birth_time for a in agents), dtype=float, count=len(agents))
    ends = np.fromiter(
        (horizon if a.death_time is None else a.death_time for a in agents),
        dtype=float, count=len(agents),
    )
    out = {}
    for outcome, kind in kinds.items():
        t, age = log.select(kind)
        out[outcome] = age_binned_incidence(t, age, births, ends, burn_in, horizon, edges)
    return out

