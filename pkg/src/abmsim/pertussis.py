"""Pertussis model pack: continuous immunity, dosing, maternal immunization.

Protection is ``p = min(p_active + p_passive, 1)`` where both parts decay
exponentially between events (active at a rate set by immune memory type,
passive quickly).  An exposed person whose protection lies below the
threshold ``alpha`` is infected with probability ``pi``.  Recovery resets
active protection to 1 with natural memory.

Contacts come from three layers: the household (everyone in it), the school
(co-enrolled children) and a background ball of fixed radius.  Infants get
passive protection from their mother at birth; maternal immunization in the
third trimester raises the mother's level first.  Children follow a dose
schedule while their household's compliance chart is ``onSchedule``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, replace

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .engine import Engine, Message, RngRegistry, Substream
from .metrics import ContactLog, EventLog
from .population import DemographyParams, Population, fertility_chart, init_population
from .simulation import RunResult, incidence_for
from .statechart import ChartDefinition, ChartRuntime, OnMessage, Rate, State, Timeout, Transition

PERTUSSIS_EXPOSURE = "PERTUSSIS_EXPOSURE"
MEMORY_TYPES = ("naive", "natural", "wholeCell", "acellular")
INFECTION_STATES = ("notInfected", "latent", "infectious")
COMPLIANCE_STATES = ("onSchedule", "nonCompliant")
LAYERS = ("household", "school", "background")

_DAYS = 365.25
INFANT_GRID = tuple(k / 12.0 for k in range(13))
TRAJECTORY_GRID = tuple(k / 12.0 for k in range(12 * 16 + 1))


class ImmunityError(ValueError):
    pass


@dataclass(slots=True)
class ImmunityState:
    p_active: float = 0.0
    p_passive: float = 0.0
    memory: str = "naive"
    w_active: float = 0.0
    w_passive: float = 2.0
    last_update: float = 0.0


def protection_level(s: ImmunityState, t: float) -> float:
    """Current protection: decayed active plus decayed passive, capped at 1."""
    dt = t - s.last_update
    if dt < 0:
        raise ImmunityError(f"protection queried at {t} before last update {s.last_update}")
    p = s.p_active * math.exp(-s.w_active * dt) + s.p_passive * math.exp(-s.w_passive * dt)
    return p if p < 1.0 else 1.0


def refresh(s: ImmunityState, t: float) -> ImmunityState:
    """Fold the decay since the last update into the stored levels."""
    dt = t - s.last_update
    if dt < 0:
        raise ImmunityError(f"refresh at {t} before last update {s.last_update}")
    if dt > 0:
        s.p_active *= math.exp(-s.w_active * dt)
        s.p_passive *= math.exp(-s.w_passive * dt)
        s.last_update = t
    return s


class PertussisParams(BaseModel):
    """Pertussis inputs.  None of these values are published; defaults are illustrative."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    infection_probability: float = 0.15
    alpha_edges: list[float] = Field(default_factory=lambda: [0.0])
    alpha_values: list[float] = Field(default_factory=lambda: [0.5])
    dose_ages: list[float] = Field(default_factory=lambda: [2 / 12, 4 / 12, 6 / 12, 1.5, 4.0, 14.0])
    dose_boosts: list[float] = Field(default_factory=lambda: [0.3, 0.45, 0.7, 0.85, 0.9, 0.9])
    vaccine_memory: str = "acellular"
    waning_natural: float = Field(0.03, ge=0)
    waning_whole_cell: float = Field(0.06, ge=0)
    waning_acellular: float = Field(0.1, ge=0)
    waning_passive: float = Field(2.0, ge=0)
    maternal_transfer: float = 0.9
    maternal_dose_level: float = 0.9
    blunting_factor: float = 0.7
    blunting_max_dose: int = Field(3, ge=0)
    blunting_passive_threshold: float = Field(0.05, ge=0)
    catch_up_age_limit: float = Field(7.0, ge=0)
    acceptance_beta_a: float = Field(4.0, gt=0)
    acceptance_beta_b: float = Field(1.2, gt=0)
    noncompliance_hazard_max: float = Field(0.5, ge=0)
    return_hazard_max: float = Field(0.5, ge=0)
    compliance_age_limit: float = Field(15.0, ge=0)
    household_contact_rate: float = Field(250.0, ge=0)
    school_contact_rate: float = Field(300.0, ge=0)
    background_contact_rate: float = Field(180.0, ge=0)
    background_radius: float = Field(3.0, gt=0)
    latent_days: float = Field(8.0, ge=0)
    infectious_days: float = Field(21.0, gt=0)
    ascertainment_edges: list[float] = Field(default_factory=lambda: [0.0, 1.0, 5.0, 15.0])
    ascertainment_values: list[float] = Field(default_factory=lambda: [0.5, 0.25, 0.1, 0.05])
    importation_rate_per_100k: float = Field(300.0, ge=0)
    initial_infected: int = Field(10, ge=0)
    initial_mean_years_since_immunity: float = Field(15.0, gt=0)
    coverage_lag_years: float = Field(0.5, ge=0)
    survey_participants_per_year: float = Field(500.0, ge=0)

    @field_validator("infection_probability", "maternal_transfer", "maternal_dose_level",
                     "blunting_factor")
    @classmethod
    def _probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{v} outside [0, 1]")
        return v

    @field_validator("alpha_values", "ascertainment_values")
    @classmethod
    def _probabilities(cls, v):
        if not v or any(not 0.0 <= x <= 1.0 for x in v):
            raise ValueError("values must lie in [0, 1]")
        return v

    @field_validator("dose_boosts")
    @classmethod
    def _boosts(cls, v):
        if not v or any(not 0.0 < x <= 1.0 for x in v):
            raise ValueError("dose boosts must lie in (0, 1]")
        return v

    @field_validator("vaccine_memory")
    @classmethod
    def _memory(cls, v):
        if v not in ("wholeCell", "acellular"):
            raise ValueError("vaccine_memory must be wholeCell or acellular")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.dose_ages) != len(self.dose_boosts):
            raise ValueError("dose_ages and dose_boosts need the same length")
        if any(b < a for a, b in zip(self.dose_ages, self.dose_ages[1:])):
            raise ValueError("dose_ages must be non-decreasing")
        for name in ("alpha", "ascertainment"):
            e, v = getattr(self, f"{name}_edges"), getattr(self, f"{name}_values")
            if len(e) != len(v) or e[0] != 0.0 or any(b <= a for a, b in zip(e, e[1:])):
                raise ValueError(f"{name} table needs increasing edges from 0 matching its values")
        if not self.waning_natural <= self.waning_whole_cell <= self.waning_acellular:
            raise ValueError("waning rates must satisfy natural <= wholeCell <= acellular")
        return self

    def waning_for(self, memory: str) -> float:
        return {
            "naive": 0.0,
            "natural": self.waning_natural,
            "wholeCell": self.waning_whole_cell,
            "acellular": self.waning_acellular,
        }[memory]

    def alpha(self, age: float) -> float:
        return self.alpha_values[max(bisect.bisect_right(self.alpha_edges, age) - 1, 0)]

    def ascertainment(self, age: float) -> float:
        return self.ascertainment_values[max(bisect.bisect_right(self.ascertainment_edges, age) - 1, 0)]

    def noncompliance_hazard(self, u: float) -> float:
        """Switching rate out of ``onSchedule``; decreasing in acceptance."""
        return self.noncompliance_hazard_max * (1.0 - u)

    def return_hazard(self, u: float) -> float:
        """Switching rate back to ``onSchedule``; increasing in acceptance."""
        return self.return_hazard_max * u


def apply_dose(
    s: ImmunityState, k: int, t: float, params: PertussisParams, blunting_enabled: bool
) -> ImmunityState:
    """Dose ``k`` (1-based) sets active protection to its target level.

    With blunting on, early doses given while passive protection is still
    present reach only ``blunting_factor`` times the target.
    """
    if not 1 <= k <= len(params.dose_boosts):
        raise ImmunityError(f"dose index {k} outside the schedule")
    refresh(s, t)
    target = params.dose_boosts[k - 1]
    if (
        blunting_enabled
        and k <= params.blunting_max_dose
        and s.p_passive > params.blunting_passive_threshold
    ):
        target *= params.blunting_factor
    s.p_active = target
    s.memory = params.vaccine_memory
    s.w_active = params.waning_for(s.memory)
    s.last_update = t
    return s


def transfer_maternal(
    mother: ImmunityState | None, t: float, params: PertussisParams, passive_enabled: bool = True
) -> ImmunityState:
    """Immunity of a newborn: passive share of the mother's protection, no active part."""
    passive = 0.0
    if passive_enabled and mother is not None:
        passive = params.maternal_transfer * protection_level(mother, t)
    return ImmunityState(0.0, passive, "naive", 0.0, params.waning_passive, t)


def vaccinate_mother(s: ImmunityState, t: float, params: PertussisParams) -> ImmunityState:
    refresh(s, t)
    s.p_active = max(s.p_active, params.maternal_dose_level)
    s.memory = params.vaccine_memory
    s.w_active = params.waning_for(s.memory)
    s.last_update = t
    return s


def expose(s: ImmunityState, age: float, t: float, params: PertussisParams, stream: Substream) -> bool:
    """Infection test for one exposure: below-threshold protection, then a ``pi`` draw."""
    if protection_level(s, t) >= params.alpha(age):
        return False
    return stream.uniform() < params.infection_probability


def recover(s: ImmunityState, t: float, params: PertussisParams) -> ImmunityState:
    refresh(s, t)
    s.p_active = 1.0
    s.memory = "natural"
    s.w_active = params.waning_natural
    s.last_update = t
    return s


# ---------------------------------------------------------------------------
# chart callbacks
# ---------------------------------------------------------------------------

def _ctx(inst) -> "PertussisModel":
    return inst.runtime.context


def _exposure_guard(inst, t, msg):
    m = _ctx(inst)
    agent = inst.agent
    age = t - agent.birth_time
    if not expose(agent.imm, age, t, m.params, m.tx):
        return False
    m.infection_checks.append((protection_level(agent.imm, t), m.params.alpha(age)))
    return True


def _on_latent(inst, t):
    m = _ctx(inst)
    agent = inst.agent
    age = t - agent.birth_time
    m.log.record("infection", agent.id, age, t)
    if m.tx.uniform() < m.params.ascertainment(age):
        m.log.record("reported", agent.id, age, t)


def _on_infectious(inst, t):
    _ctx(inst).begin_contacts(inst.agent, t)


def _end_infectious(inst, t):
    inst.agent.episode += 1


def _recover(inst, t, msg):
    m = _ctx(inst)
    recover(inst.agent.imm, t, m.params)
    m.unvaccinated.pop(inst.agent.id, None)


def infection_chart(params: PertussisParams) -> ChartDefinition:
    """Infection episode: exposure -> latent -> infectious -> back with full protection."""
    T = Transition
    states = [
        State("notInfected"),
        State("latent", on_entry=_on_latent),
        State("infectious", on_entry=_on_infectious, on_exit=_end_infectious),
    ]
    transitions = [
        T("notInfected", "latent", OnMessage(PERTUSSIS_EXPOSURE), guard=_exposure_guard, name="infection"),
        T("latent", "infectious", Timeout(params.latent_days / _DAYS)),
        T("infectious", "notInfected", Timeout(params.infectious_days / _DAYS), action=_recover,
          name="recovery"),
    ]
    return ChartDefinition("pertussis_infection", states, transitions, "notInfected")


def _effective_u(inst) -> float:
    m = _ctx(inst)
    return m.pop.household_effective_acceptance(inst.agent)


def _leave_rate(inst, t):
    m = _ctx(inst)
    if t - inst.agent.birth_time > m.params.compliance_age_limit:
        return 0.0
    return m.params.noncompliance_hazard(_effective_u(inst))


def _return_rate(inst, t):
    m = _ctx(inst)
    if t - inst.agent.birth_time > m.params.compliance_age_limit:
        return 0.0
    return m.params.return_hazard(_effective_u(inst))


def _catch_up(inst, t, msg):
    _ctx(inst).catch_up(inst.agent, t)


def compliance_chart(params: PertussisParams) -> ChartDefinition:
    T = Transition
    transitions = [
        T("onSchedule", "nonCompliant", Rate(_leave_rate), name="lapse"),
        T("nonCompliant", "onSchedule", Rate(_return_rate), action=_catch_up, name="return"),
    ]
    return ChartDefinition("pertussis_compliance", list(COMPLIANCE_STATES), transitions, "onSchedule")


def _model_pop(inst):
    return _ctx(inst).pop


def _model_fert(inst):
    return _ctx(inst).fert


def _trimester3(inst, t):
    _ctx(inst).maybe_vaccinate_mother(inst.agent, t)


def build_pertussis_pack(params: PertussisParams, demography: DemographyParams) -> tuple[ChartDefinition, ...]:
    """Infection, compliance and fertility charts."""
    fert = fertility_chart(_model_pop, _model_fert, demography.gestation_years,
                           demography.postpartum_years, on_trimester3=_trimester3)
    return infection_chart(params), compliance_chart(params), fert


def pertussis_demography(base: DemographyParams | None = None) -> DemographyParams:
    base = base or DemographyParams()
    return base.model_copy(update={"schools_enabled": True, "household_formation": True})


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class PertussisModel:
    """One realization of one arm.

    The intervention is maternal immunization with probability ``coverage``
    per pregnancy reaching the third trimester after the start time.  With
    ``passive_transfer`` off the dose still protects the mother, but her
    newborn receives antibodies as if she had not been vaccinated.
    """

    pack = "pertussis"

    def __init__(
        self,
        params: PertussisParams,
        *,
        population_size: int,
        burn_in: float,
        horizon: float,
        seed: int,
        realization: int = 0,
        maternal_coverage: float = 0.0,
        intervention_start: float = 0.0,
        blunting: bool = False,
        passive_transfer: bool = True,
        demography: DemographyParams | None = None,
        arm: str | None = None,
        survey: bool = True,
        trajectory_samples: int = 5,
    ):
        if not 0.0 <= maternal_coverage <= 1.0:
            raise ValueError("maternal_coverage must lie in [0, 1]")
        self.params = params
        self.burn_in = burn_in
        self.horizon = horizon
        self.realization = realization
        self.coverage = maternal_coverage
        self.intervention_time = burn_in + intervention_start
        self.blunting = blunting
        self.passive_transfer = passive_transfer
        # pre-dose immunity of mothers vaccinated during the current pregnancy,
        # used for the newborn when the dose must not add passive protection
        self.unvaccinated: dict[int, ImmunityState] = {}
        self.arm = arm or ("intervention" if maternal_coverage > 0 else "baseline")
        self.engine = Engine()
        self.rng = RngRegistry(seed, realization)
        self.tx = self.rng["transmission"]
        self.vx = self.rng["vaccination"]
        self.fert = self.rng["fertility"]
        self.comp = self.rng["compliance"]
        self.demo = self.rng["demographics"]
        self.survey_stream = self.rng["survey"]
        self.log = EventLog()
        self.contacts = ContactLog()
        self.infection_checks: list[tuple[float, float]] = []
        self.runtime = ChartRuntime(self.engine, self.comp, context=self)
        demo = pertussis_demography(demography)
        self.demography = demo
        self.defs = build_pertussis_pack(params, demo)
        self.rates = (
            params.household_contact_rate,
            params.school_contact_rate,
            params.background_contact_rate,
        )
        self.latent = params.latent_days / _DAYS
        self.infectious = params.infectious_days / _DAYS
        self.coverage_due = [0] * len(params.dose_ages)
        self.coverage_done = [0] * len(params.dose_ages)
        self.maternal_doses = 0
        self.doses_given = 0
        self.infant_sum = [0.0] * len(INFANT_GRID)
        self.infant_n = [0] * len(INFANT_GRID)
        self.exposures = 0
        self.trajectory_samples = trajectory_samples
        self.trajectories: list[list[float]] = []

        self.pop: Population = init_population(population_size, demo, self.engine, self.rng,
                                               params.background_radius)
        self.pop.mortality_managed = False
        self.pop.birth_listeners.append(self._on_birth)
        self._seed_initial_states()
        imports = params.importation_rate_per_100k * population_size / 1e5
        self.import_rate = imports
        if imports > 0:
            self.engine.at(self.tx.exponential(imports), self._importation)
        if survey and params.survey_participants_per_year > 0:
            self.engine.at(
                burn_in + self.survey_stream.exponential(params.survey_participants_per_year),
                self._survey,
            )

    # -- setup -------------------------------------------------------------
    def _attach(self, agent, t: float, infection_state: str = "notInfected", compliance: str | None = None) -> None:
        inf_def, comp_def, fert_def = self.defs
        rt = self.runtime
        agent.episode = 0
        agent.cache = {}
        charts = [rt.instantiate(inf_def, agent, t, infection_state)]
        if compliance is not None:
            charts.append(rt.instantiate(comp_def, agent, t, compliance))
        if agent.sex == "F":
            charts.append(rt.instantiate(fert_def, agent, t))
        agent.charts = charts

    def _initial_compliance(self, agent, stream: Substream) -> str:
        u = self.pop.household_effective_acceptance(agent)
        h = self.params.noncompliance_hazard(u)
        g = self.params.return_hazard(u)
        p_on = g / (g + h) if g + h > 0 else 1.0
        return "onSchedule" if stream.uniform() < p_on else "nonCompliant"

    def _seed_initial_states(self) -> None:
        p = self.params
        s = self.rng["initialization"]
        t = 0.0
        for a in self.pop.agents:
            a.acceptance = s.beta(p.acceptance_beta_a, p.acceptance_beta_b)
            a.doses = 0
            a.missed = []
        plan = []
        for a in self.pop.agents:
            age = a.age(t)
            imm = ImmunityState(w_passive=p.waning_passive, last_update=t)
            given = [k for k, da in enumerate(p.dose_ages, start=1) if da <= age]
            if given:
                k = given[-1]
                imm.p_active = p.dose_boosts[k - 1] * math.exp(-p.waning_acellular * (age - p.dose_ages[k - 1]))
                imm.memory = p.vaccine_memory
                a.doses = k
            if age > p.dose_ages[-1] or (not given and age > 1.0):
                since = s.exponential(1.0 / p.initial_mean_years_since_immunity)
                if since < age:
                    imm.p_active = max(imm.p_active, math.exp(-p.waning_natural * since))
                    imm.memory = "natural"
            imm.w_active = p.waning_for(imm.memory)
            a.imm = imm
            comp = None
            if age < p.compliance_age_limit:
                comp = self._initial_compliance(a, s)
            plan.append((a, comp))
        n = len(plan)
        seeds = set()
        for _ in range(min(p.initial_infected, n)):
            seeds.add(s.index(n))
        for i, (a, comp) in enumerate(plan):
            self._attach(a, t, "infectious" if i in seeds else "notInfected", comp)
            self.pop.schedule_life_course(a, t)
            self._schedule_doses(a, t)

    def _schedule_doses(self, agent, t: float) -> None:
        p = self.params
        for k, da in enumerate(p.dose_ages, start=1):
            when = agent.birth_time + da
            if when >= t and k > agent.doses:
                self.engine.at(when, self._dose_due, agent, k)
                self.engine.at(when + p.coverage_lag_years, self._coverage_check, agent, k)

    def _on_birth(self, child, mother, t: float) -> None:
        p = self.params
        child.acceptance = self.demo.beta(p.acceptance_beta_a, p.acceptance_beta_b)
        child.doses = 0
        child.missed = []
        source = None
        if mother is not None:
            source = self.unvaccinated.pop(mother.id, None)
            if source is None or self.passive_transfer:
                source = mother.imm
        child.imm = transfer_maternal(source, t, p)
        self._attach(child, t, "notInfected", self._initial_compliance(child, self.demo))
        self._schedule_doses(child, t)
        if t >= self.burn_in:
            for age in INFANT_GRID:
                self.engine.at(t + age, self._infant_sample, child, age)
            if len(self.trajectories) < self.trajectory_samples:
                track: list[float] = []
                self.trajectories.append(track)
                for age in TRAJECTORY_GRID:
                    self.engine.at(t + age, self._trajectory_sample, child, track)

    # -- vaccination -------------------------------------------------------
    def compliance_state(self, agent) -> str | None:
        for c in agent.charts:
            if c.definition.name == "pertussis_compliance":
                return c.state
        return None

    def _dose_due(self, agent, k: int) -> None:
        if not agent.alive or agent.doses >= k:
            return
        t = self.engine.now
        if self.compliance_state(agent) == "onSchedule":
            self.give_dose(agent, k, t)
        else:
            agent.missed.append(k)

    def give_dose(self, agent, k: int, t: float) -> None:
        apply_dose(agent.imm, k, t, self.params, self.blunting)
        agent.doses = max(agent.doses, k)
        self.doses_given += 1

    def catch_up(self, agent, t: float) -> None:
        """On returning to schedule, give the missed doses that are still age-appropriate."""
        if not agent.missed:
            return
        if t - agent.birth_time <= self.params.catch_up_age_limit:
            for k in sorted(agent.missed):
                if k > agent.doses:
                    self.give_dose(agent, k, t)
        agent.missed = []

    def _coverage_check(self, agent, k: int) -> None:
        if not agent.alive or self.engine.now < self.burn_in:
            return
        self.coverage_due[k - 1] += 1
        if agent.doses >= k:
            self.coverage_done[k - 1] += 1

    def program_active(self, t: float) -> bool:
        return self.coverage > 0 and t > self.intervention_time

    def maybe_vaccinate_mother(self, mother, t: float) -> None:
        if not self.program_active(t):
            return
        if self.vx.uniform() < self.coverage:
            if not self.passive_transfer:
                self.unvaccinated[mother.id] = replace(mother.imm)
            vaccinate_mother(mother.imm, t, self.params)
            self.maternal_doses += 1

    def _infant_sample(self, child, age: float) -> None:
        if not child.alive:
            return
        i = INFANT_GRID.index(age)
        self.infant_sum[i] += protection_level(child.imm, self.engine.now)
        self.infant_n[i] += 1

    def _trajectory_sample(self, child, track: list[float]) -> None:
        track.append(protection_level(child.imm, self.engine.now) if child.alive else float("nan"))

    # -- contacts ------------------------------------------------------------
    def layer_partner(self, agent, layer: int, stream: Substream, cache: dict | None) -> int | None:
        """A uniformly chosen living partner in one contact layer, or ``None``."""
        pop = self.pop
        if layer == 0:
            hh = pop.households.get(agent.household_id)
            if hh is None or len(hh.members) < 2:
                return None
            j = hh.members[stream.index(len(hh.members) - 1)]
            if j == agent.id:
                j = hh.members[-1]
            return j
        if layer == 1:
            if agent.school_id is None:
                return None
            enrolled = pop.schools[agent.school_id].enrolled
            if len(enrolled) < 2:
                return None
            j = enrolled[stream.index(len(enrolled) - 1)]
            if j == agent.id:
                j = enrolled[-1]
            return j
        if cache is None:
            ids = pop.neighbors_within(agent, self.params.background_radius)
            return ids[stream.index(len(ids))] if ids else None
        return pop.pick_neighbor(agent, self.params.background_radius, stream, cache)

    def begin_contacts(self, agent, t: float) -> None:
        agent.episode += 1
        agent.cache = {}
        ep = agent.episode
        for layer, rate in enumerate(self.rates):
            if rate > 0:
                self.engine.at(t + self.tx.exponential(rate), self._contact_event, agent, ep, layer)

    def _contact_event(self, agent, ep: int, layer: int) -> None:
        if agent.episode != ep or not agent.alive:
            return
        t = self.engine.now
        j = self.layer_partner(agent, layer, self.tx, agent.cache)
        if j is not None:
            self.send_exposure(agent.id, j, t)
        self.engine.at(t + self.tx.exponential(self.rates[layer]), self._contact_event, agent, ep, layer)

    def send_exposure(self, sender: int | None, recipient: int, t: float) -> None:
        r = self.pop.agents[recipient]
        if not r.alive:
            return
        self.exposures += 1
        self.runtime.deliver(r.charts, Message(sender, recipient, PERTUSSIS_EXPOSURE, t))

    def _importation(self) -> None:
        t = self.engine.now
        target = self.pop.random_alive(self.tx)
        if target is not None:
            self.send_exposure(None, target.id, t)
        self.engine.at(t + self.tx.exponential(self.import_rate), self._importation)

    def _survey(self) -> None:
        """One survey participant-day: draw that day's contacts in every layer."""
        s = self.survey_stream
        t = self.engine.now
        person = self.pop.random_alive(s)
        if person is not None:
            age = person.age(t)
            self.contacts.add_person_days(age, 1.0)
            agents = self.pop.agents
            for layer, rate in enumerate(self.rates):
                mean = rate / _DAYS
                n = _poisson(s, mean)
                for _ in range(n):
                    j = self.layer_partner(person, layer, s, None)
                    if j is not None:
                        self.contacts.add_contact(age, agents[j].age(t))
        self.engine.at(t + s.exponential(self.params.survey_participants_per_year), self._survey)

    # -- run -------------------------------------------------------------------
    def run(self) -> RunResult:
        self.engine.run_until(self.horizon)
        return self.result()

    def infant_curve(self) -> list[float]:
        return [s / n if n else float("nan") for s, n in zip(self.infant_sum, self.infant_n)]

    def result(self) -> RunResult:
        inc = incidence_for(
            self.log, {"pertussis": "infection", "pertussis_reported": "reported"},
            self.pop, self.burn_in, self.horizon,
        )
        stats = {
            "initial_population": self.pop.initial_count,
            "births": self.pop.births,
            "deaths": self.pop.deaths,
            "final_population": self.pop.alive_count,
            "exposures": self.exposures,
            "maternal_doses": self.maternal_doses,
            "doses_given": self.doses_given,
            "events_processed": self.engine.processed,
        }
        for k, (due, done) in enumerate(zip(self.coverage_due, self.coverage_done), start=1):
            stats[f"dose{k}_due"] = due
            stats[f"dose{k}_covered"] = done
        curves = {"infant_protection": self.infant_curve()}
        for k, track in enumerate(self.trajectories):
            curves[f"trajectory_{k}"] = list(track)
        return RunResult(
            pack=self.pack,
            arm=self.arm,
            realization=self.realization,
            incidence=inc,
            stats=stats,
            contacts=self.contacts,
            curves=curves,
            draw_counts=self.rng.draw_counts(),
        )


def _poisson(stream: Substream, mean: float) -> int:
    """Poisson variate by counting unit-rate exponential arrivals before ``mean``."""
    n = 0
    acc = stream.exponential(1.0)
    while acc < mean:
        n += 1
        acc += stream.exponential(1.0)
    return n


def chart_definitions(params: PertussisParams | None = None,
                      demography: DemographyParams | None = None) -> dict[str, ChartDefinition]:
    defs = build_pertussis_pack(params or PertussisParams(), pertussis_demography(demography))
    return {d.name: d for d in defs}
