"""Varicella-zoster model pack: chickenpox, shingles, vaccination and boosting.

Each agent carries three parallel charts: natural history, aging (life and
death, childbirth) and vaccination adherence.  Infectious agents emit
exposure messages as Poisson streams to uniformly chosen neighbours inside a
connection range.  Recovered agents hold a cell-mediated immunity (CMI) level
that wanes exponentially; exposure while recovered refreshes it and opens a
window during which reactivation is impossible.  Outside that window the
shingles hazard is ``scale * F * multiplier * exp(-k * cmi(t))`` with a
personal Gamma-distributed factor ``F``, sampled by thinning.
"""

from __future__ import annotations

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .engine import Engine, Message, RngRegistry
from .metrics import EventLog
from .population import DemographyParams, Population, init_population
from .simulation import COST_CATEGORIES, HealthEconLedger, RunResult, incidence_for
from .statechart import (
    ChartDefinition,
    ChartInstance,
    ChartRuntime,
    OnMessage,
    Rate,
    State,
    Timeout,
    Transition,
)

ATTITUDES = ("Acceptor", "Hesitant", "Rejecter")

VZV_EXPOSURE = "VZV_EXPOSURE"
VZV_VACCINE = "VZV_VACCINE"
DEATH_FROM_INFECTION = "DEATH_FROM_INFECTION"

NH_STATES = (
    "maternalProtection",
    "susceptible",
    "vaccinatedOneDose",
    "vaccinatedTwoDose",
    "breakthroughInfected",
    "infectedWeak",
    "infectedFull",
    "infectiousCP",
    "symptomaticNonInfectious",
    "recoveredCP",
    "shinglesMild",
    "shinglesPHN",
    "recoveredShingles",
)
AGING_STATES = ("alive", "dead")
ADHERENCE_STATES = (
    "tooYoung",
    "dueFirstDose",
    "receivedFirst",
    "missedFirst",
    "dueSecondDose",
    "receivedSecond",
    "missedSecond",
    "catchUp",
)

_DAYS = 365.25


def _prob(v: float) -> float:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"probability {v} outside [0, 1]")
    return v


class VaricellaParams(BaseModel):
    """Model parameters.

    The first block holds reference point values and ranges.  The second
    block holds quantities the model needs but the reference parameter set
    does not give; their defaults are illustrative.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    reference_population: int = Field(500_000, ge=1)
    cmi_initial_mean: float = 0.05
    cmi_initial_sd: float = Field(1.0, gt=0)
    cmi_floor: float = Field(0.001, ge=0)
    reactivation_shape: float = Field(2.0, gt=0)
    reactivation_scale: float = Field(0.1, gt=0)
    reactivation_shift: float = Field(0.0, ge=0)
    # reference range 0.45-0.93
    shingles_waning_coefficient: float = Field(0.69, ge=0)
    shingles_waning_rate: float = Field(0.4, ge=0)
    # reference range 0.42-10 years
    boosting_duration: float = Field(5.0, ge=0)
    exogenous_infection_rate: float = Field(17.83, ge=0)
    p_infection_normal: float = 0.78
    p_infection_breakthrough: float = 0.234
    p_infection_shingles: float = 0.234
    range_normal: float = Field(8.958, gt=0)
    range_preferential: float = Field(21.245, gt=0)
    shingles_range_modifier: float = Field(0.124, gt=0)
    contact_rate_preferential: float = Field(20.0, ge=0)
    contact_rate_normal: float = Field(30.124, ge=0)
    preferential_age_min: float = Field(1.0, ge=0)
    preferential_age_max: float = Field(10.0, gt=0)
    attitude_shares: dict[str, float] = Field(
        default_factory=lambda: {"Acceptor": 65.0, "Hesitant": 30.0, "Rejecter": 5.0}
    )
    catch_up_probability: float = 0.55
    dose1_probability: dict[str, float] = Field(
        default_factory=lambda: {"Acceptor": 0.97, "Hesitant": 0.30, "Rejecter": 0.05}
    )
    dose2_probability: dict[str, float] = Field(
        default_factory=lambda: {"Acceptor": 0.98, "Hesitant": 0.82, "Rejecter": 0.33}
    )
    # reference ranges 0.16-0.24 and 0.05-0.16
    primary_failure_dose1: float = 0.20
    primary_failure_dose2: float = 0.105
    vaccine_waning_one_dose: float = Field(0.02, ge=0)
    vaccine_waning_two_dose: float = Field(0.0, ge=0)

    # -- not in the reference set ---------------------------------------------
    contact_rate_unit_years: float = Field(1.0 / 12.0, gt=0)
    reactivation_multiplier: float = Field(0.1, ge=0)
    cmi_suppression: float = Field(2.0, ge=0)
    maternal_protection_years: float = Field(0.5, ge=0)
    latent_days: float = Field(14.0, ge=0)
    infectious_days: float = Field(7.0, gt=0)
    symptomatic_days: float = Field(5.0, ge=0)
    phn_probability: float = 0.15
    shingles_mild_days: float = Field(30.0, gt=0)
    phn_years: float = Field(0.5, gt=0)
    shingles_infectious_days: float = Field(7.0, ge=0)
    shingles_relapse_rate: float = Field(0.005, ge=0)
    cp_case_fatality: float = 2e-5
    dose1_age: float = Field(1.0, ge=0)
    dose2_age: float = Field(4.0, ge=0)
    catch_up_enabled: bool = True
    catch_up_delay_years: float = Field(1.0, ge=0)
    periodic_update_years: float = Field(5.0, gt=0)
    initial_force_of_infection: float = Field(0.25, ge=0)
    initial_infectious: int = Field(10, ge=0)

    @field_validator(
        "p_infection_normal", "p_infection_breakthrough", "p_infection_shingles",
        "catch_up_probability", "primary_failure_dose1", "primary_failure_dose2",
        "phn_probability", "cp_case_fatality",
    )
    @classmethod
    def _probabilities(cls, v):
        return _prob(v)

    @field_validator("dose1_probability", "dose2_probability")
    @classmethod
    def _per_attitude(cls, v):
        if set(v) != set(ATTITUDES):
            raise ValueError(f"needs exactly the attitudes {ATTITUDES}")
        for p in v.values():
            _prob(p)
        return v

    @field_validator("attitude_shares")
    @classmethod
    def _shares(cls, v):
        if set(v) != set(ATTITUDES):
            raise ValueError(f"needs exactly the attitudes {ATTITUDES}")
        if any(w < 0 for w in v.values()) or sum(v.values()) <= 0:
            raise ValueError("attitude shares must be non-negative and sum to a positive value")
        return v

    @model_validator(mode="after")
    def _ages(self):
        if self.preferential_age_max <= self.preferential_age_min:
            raise ValueError("preferential_age_max must exceed preferential_age_min")
        if self.dose2_age < self.dose1_age:
            raise ValueError("dose2_age must not precede dose1_age")
        return self

    @property
    def shingles_range(self) -> float:
        return self.range_normal * self.shingles_range_modifier

    @property
    def cmi_waning(self) -> float:
        """Per-year decay rate of CMI since the last boost."""
        return self.shingles_waning_rate * self.shingles_waning_coefficient


def _default_events() -> dict[str, dict[str, float]]:
    return {
        "chickenpox": {"gp_visit": 0.4, "ed_visit": 0.03, "hospital_day": 0.02,
                       "personal_expense": 1.0, "productivity_loss": 0.5},
        "shingles_mild": {"gp_visit": 1.5, "ed_visit": 0.05, "hospital_day": 0.05,
                          "personal_expense": 1.0, "productivity_loss": 0.5},
        "phn": {"gp_visit": 4.0, "ed_visit": 0.2, "hospital_day": 0.3,
                "personal_expense": 2.0, "productivity_loss": 1.5},
    }


class HealthEconParams(BaseModel):
    """Unit costs, per-episode resource use and state utilities.

    Unit costs default to zero; the published model names the categories but
    not the values.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    discount_rate: float = Field(0.015, ge=0)
    unit_costs: dict[str, float] = Field(default_factory=dict)
    episode_events: dict[str, dict[str, float]] = Field(default_factory=_default_events)
    utilities: dict[str, float] = Field(
        default_factory=lambda: {"chickenpox": 0.9, "shingles_mild": 0.85, "phn": 0.7}
    )

    @field_validator("unit_costs")
    @classmethod
    def _costs(cls, v):
        for k, c in v.items():
            if k not in COST_CATEGORIES:
                raise ValueError(f"unknown cost category {k!r}")
            if c < 0:
                raise ValueError(f"unit cost for {k} must be non-negative")
        return v

    @field_validator("episode_events")
    @classmethod
    def _events(cls, v):
        for tag, counts in v.items():
            for k, n in counts.items():
                if k not in COST_CATEGORIES:
                    raise ValueError(f"unknown cost category {k!r} for {tag}")
                if n < 0:
                    raise ValueError("event counts must be non-negative")
        return v

    @field_validator("utilities")
    @classmethod
    def _utilities(cls, v):
        for u in v.values():
            _prob(u)
        return v


# ---------------------------------------------------------------------------
# per-agent state
# ---------------------------------------------------------------------------

class VzvState:
    """CMI, vaccination history and contact bookkeeping of one agent."""

    __slots__ = (
        "cmi0", "force", "cmi_ref", "last_boost", "boost_until", "weak", "waned",
        "doses", "missed_first", "episode", "contact_end", "cache",
    )

    def __init__(self, cmi0: float, force: float):
        self.cmi0 = cmi0
        self.force = force
        self.cmi_ref = cmi0
        self.last_boost = -math.inf
        self.boost_until = -math.inf
        self.weak = False
        self.waned = False
        self.doses = 0
        self.missed_first = False
        self.episode = 0
        self.contact_end = math.inf
        self.cache: dict[int, tuple] | None = None

    def cmi_level(self, t: float, waning: float) -> float:
        if self.last_boost == -math.inf:
            return self.cmi_ref
        return self.cmi_ref * math.exp(-waning * (t - self.last_boost))


def shingles_reactivation_hazard(state: VzvState, t: float, params: VaricellaParams) -> float:
    """Reactivation hazard (per year) of a recovered agent at time ``t``."""
    if t < state.boost_until:
        return 0.0
    cmi = state.cmi_level(t, params.cmi_waning)
    return params.reactivation_multiplier * state.force * math.exp(-params.cmi_suppression * cmi)


# ---------------------------------------------------------------------------
# chart callbacks; they reach the running model through inst.runtime.context
# ---------------------------------------------------------------------------

def _ctx(inst: ChartInstance) -> "VaricellaModel":
    return inst.runtime.context


def _maternal_left(inst, t):
    p = _ctx(inst).params
    return max(0.0, inst.agent.birth_time + p.maternal_protection_years - t)


def _infect_guard(inst, t, msg):
    m = _ctx(inst)
    return m.tx.uniform() < m.p_infection[msg.data]


def _breakthrough_guard(inst, t, msg):
    m = _ctx(inst)
    return m.tx.uniform() < m.params.p_infection_breakthrough


def _infection_target(inst, t, msg):
    return "infectedWeak" if inst.agent.vzv.waned else "infectedFull"


def _vaccine_target(inst, t, msg):
    return "vaccinatedOneDose" if msg.data == 1 else "vaccinatedTwoDose"


def _second_dose_guard(inst, t, msg):
    return msg.data >= 2


def _mark_waned(inst, t, msg):
    inst.agent.vzv.waned = True


def _on_infected(inst, t):
    m = _ctx(inst)
    st = inst.agent.vzv
    st.weak = inst.state != "infectedFull"
    m.record("cp", inst.agent, t)
    m.charge_episode(inst.agent, "chickenpox", t)


def _on_breakthrough(inst, t):
    m = _ctx(inst)
    st = inst.agent.vzv
    st.weak = True
    m.record("cp", inst.agent, t)
    m.record("breakthrough", inst.agent, t)
    m.charge_episode(inst.agent, "chickenpox", t)
    m.begin_contacts(inst.agent, t + m.latent, "weak", m.infectious)


def _on_infectious(inst, t):
    _ctx(inst).begin_contacts(inst.agent, t, "weak" if inst.agent.vzv.weak else "full", math.inf)


def _stop_contacts(inst, t):
    st = inst.agent.vzv
    st.episode += 1
    st.cache = None


def _case_fatality(inst, t, msg):
    m = _ctx(inst)
    if m.params.cp_case_fatality > 0 and m.tx.uniform() < m.params.cp_case_fatality:
        agent = inst.agent
        m.runtime.deliver(agent.charts, Message(agent.id, agent.id, DEATH_FROM_INFECTION, t))


def _on_recovered(inst, t):
    m = _ctx(inst)
    st = inst.agent.vzv
    st.cmi_ref = st.cmi0
    st.last_boost = t
    st.boost_until = t + m.params.boosting_duration


def _boost(inst, t, msg):
    m = _ctx(inst)
    st = inst.agent.vzv
    st.cmi_ref = st.cmi0
    st.last_boost = t
    st.boost_until = t + m.params.boosting_duration
    m.boosts += 1


def _mild_rate(inst, t):
    m = _ctx(inst)
    return m.params.reactivation_multiplier * inst.agent.vzv.force * (1.0 - m.params.phn_probability)


def _phn_rate(inst, t):
    m = _ctx(inst)
    return m.params.reactivation_multiplier * inst.agent.vzv.force * m.params.phn_probability


def _reactivation_guard(inst, t, msg):
    """Thinning step: accept with probability hazard(t) / (multiplier * F)."""
    m = _ctx(inst)
    st = inst.agent.vzv
    if t < st.boost_until:
        return False
    return m.tx.uniform() < math.exp(-m.params.cmi_suppression * st.cmi_level(t, m.cmi_waning))


def _on_shingles(inst, t):
    m = _ctx(inst)
    phn = inst.state == "shinglesPHN"
    m.record("hz", inst.agent, t)
    if phn:
        m.record("phn", inst.agent, t)
    m.charge_episode(inst.agent, "phn" if phn else "shingles_mild", t)
    m.begin_contacts(inst.agent, t, "shingles", m.shingles_infectious)


def natural_history_chart(p: VaricellaParams) -> ChartDefinition:
    """Chickenpox and shingles natural history (13 states)."""
    latent = p.latent_days / _DAYS
    infectious = p.infectious_days / _DAYS
    states = [
        State("maternalProtection"),
        State("susceptible"),
        State("vaccinatedOneDose"),
        State("vaccinatedTwoDose"),
        State("breakthroughInfected", on_entry=_on_breakthrough, on_exit=_stop_contacts,
              accrual="chickenpox"),
        State("infectedWeak", on_entry=_on_infected),
        State("infectedFull", on_entry=_on_infected),
        State("infectiousCP", on_entry=_on_infectious, on_exit=_stop_contacts, accrual="chickenpox"),
        State("symptomaticNonInfectious", accrual="chickenpox"),
        State("recoveredCP", on_entry=_on_recovered),
        State("shinglesMild", on_entry=_on_shingles, on_exit=_stop_contacts, accrual="shingles_mild"),
        State("shinglesPHN", on_entry=_on_shingles, on_exit=_stop_contacts, accrual="phn"),
        State("recoveredShingles"),
    ]
    vaccinated = ("vaccinatedOneDose", "vaccinatedTwoDose")
    T = Transition
    transitions = [
        T("maternalProtection", "susceptible", Timeout(_maternal_left), name="antibodiesLost"),
        T("maternalProtection", vaccinated, OnMessage(VZV_VACCINE), select=_vaccine_target),
        T("susceptible", ("infectedFull", "infectedWeak"), OnMessage(VZV_EXPOSURE),
          guard=_infect_guard, select=_infection_target, name="infection"),
        T("susceptible", vaccinated, OnMessage(VZV_VACCINE), select=_vaccine_target),
        T("vaccinatedOneDose", "breakthroughInfected", OnMessage(VZV_EXPOSURE),
          guard=_breakthrough_guard, name="breakthrough"),
        T("vaccinatedOneDose", "vaccinatedTwoDose", OnMessage(VZV_VACCINE), guard=_second_dose_guard),
        T("vaccinatedOneDose", "susceptible", Rate(p.vaccine_waning_one_dose), action=_mark_waned,
          name="vaccineWaning"),
        T("vaccinatedTwoDose", "susceptible", Rate(p.vaccine_waning_two_dose), action=_mark_waned,
          name="vaccineWaning"),
        T("infectedFull", "infectiousCP", Timeout(latent)),
        T("infectedWeak", "infectiousCP", Timeout(latent)),
        T("breakthroughInfected", "recoveredCP", Timeout(latent + infectious)),
        T("infectiousCP", "symptomaticNonInfectious", Timeout(infectious), action=_case_fatality),
        T("symptomaticNonInfectious", "recoveredCP", Timeout(p.symptomatic_days / _DAYS)),
        T("recoveredCP", "recoveredCP", OnMessage(VZV_EXPOSURE), action=_boost, internal=True,
          name="boosting"),
        T("recoveredCP", "shinglesMild", Rate(_mild_rate), guard=_reactivation_guard, name="reactivation"),
        T("recoveredCP", "shinglesPHN", Rate(_phn_rate), guard=_reactivation_guard, name="reactivationPHN"),
        T("shinglesMild", "recoveredShingles", Timeout(p.shingles_mild_days / _DAYS)),
        T("shinglesPHN", "recoveredShingles", Timeout(p.phn_years)),
        T("recoveredShingles", "shinglesMild", Rate(p.shingles_relapse_rate), name="relapse"),
    ]
    return ChartDefinition("vzv_natural_history", states, transitions, "maternalProtection")


def _lifetime_left(inst, t):
    m = _ctx(inst)
    return m.pop.sample_remaining_lifetime(inst.agent.age(t))


def _birth_wait(inst, t):
    m = _ctx(inst)
    return m.pop.sample_conception_wait(inst.agent, t, m.fert)


def _give_birth(inst, t, msg):
    _ctx(inst).pop.process_birth(inst.agent, t)


def _periodic_update(inst, t, msg):
    _ctx(inst).periodic_updates += 1


def _die_background(inst, t, msg):
    _ctx(inst).pop.kill(inst.agent, t, "background")


def _die_infection(inst, t, msg):
    m = _ctx(inst)
    m.record("vzv_death", inst.agent, t)
    m.pop.kill(inst.agent, t, "varicella")


def aging_chart(p: VaricellaParams) -> ChartDefinition:
    """Life and death with childbirth and a periodic self-update (2 states)."""
    T = Transition
    transitions = [
        T("alive", "dead", Timeout(_lifetime_left), action=_die_background, name="death"),
        T("alive", "dead", OnMessage(DEATH_FROM_INFECTION), action=_die_infection, name="infectionDeath"),
        T("alive", "alive", Timeout(_birth_wait), action=_give_birth, internal=True, name="childbirth"),
        T("alive", "alive", Timeout(p.periodic_update_years), action=_periodic_update, internal=True,
          name="periodicUpdate"),
    ]
    return ChartDefinition("vzv_aging", [State("alive", accrual="alive"), State("dead")], transitions, "alive")


def _until_dose1(inst, t):
    return max(0.0, inst.agent.birth_time + _ctx(inst).params.dose1_age - t)


def _until_dose2(inst, t):
    return max(0.0, inst.agent.birth_time + _ctx(inst).params.dose2_age - t)


def _first_dose(inst, t, msg):
    m = _ctx(inst)
    if not m.program_active(t):
        inst.agent.vzv.missed_first = True
        return "missedFirst"
    m.due[1] += 1
    outcome = m.administer_vaccination(inst.agent, 1, t)
    if outcome == "refused":
        inst.agent.vzv.missed_first = True
        return "missedFirst"
    m.given[1] += 1
    return "receivedFirst"


def _second_dose(inst, t, msg):
    m = _ctx(inst)
    if not m.program_active(t):
        return "missedSecond"
    m.due[2] += 1
    if m.administer_vaccination(inst.agent, 2, t) == "refused":
        return "missedSecond"
    m.given[2] += 1
    return "receivedSecond"


def _catch_up_guard(inst, t, msg):
    m = _ctx(inst)
    p = m.params
    if not (p.catch_up_enabled and inst.agent.vzv.missed_first and m.program_active(t)):
        return False
    return m.vx.uniform() < p.catch_up_probability


def _catch_up(inst, t, msg):
    m = _ctx(inst)
    m.given[3] += 1
    m.administer_vaccination(inst.agent, 3, t)


def adherence_chart(p: VaricellaParams) -> ChartDefinition:
    """Two-dose schedule with catch-up for those who missed the first dose (8 states)."""
    T = Transition
    transitions = [
        T("tooYoung", "dueFirstDose", Timeout(_until_dose1)),
        T("dueFirstDose", ("receivedFirst", "missedFirst"), Timeout(0.0), select=_first_dose,
          name="firstDose"),
        T("receivedFirst", "dueSecondDose", Timeout(_until_dose2)),
        T("missedFirst", "dueSecondDose", Timeout(_until_dose2)),
        T("dueSecondDose", ("receivedSecond", "missedSecond"), Timeout(0.0), select=_second_dose,
          name="secondDose"),
        T("receivedSecond", "catchUp", Timeout(p.catch_up_delay_years), guard=_catch_up_guard,
          action=_catch_up, name="catchUp"),
    ]
    return ChartDefinition("vzv_adherence", list(ADHERENCE_STATES), transitions, "tooYoung")


def build_vzv_pack(params: VaricellaParams) -> tuple[ChartDefinition, ChartDefinition, ChartDefinition]:
    """The three parallel charts every agent carries, in attachment order."""
    return natural_history_chart(params), aging_chart(params), adherence_chart(params)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def vzv_demography(base: DemographyParams | None = None) -> DemographyParams:
    """Demography as the varicella pack uses it: no schools, no household moves."""
    base = base or DemographyParams()
    return base.model_copy(update={"schools_enabled": False, "household_formation": False})


class VaricellaModel:
    """One realization of one arm.

    Both arms of a pair are built from the same seed; the vaccination stream
    is only touched once the programme starts, so everything before the
    start time is identical between arms.
    """

    pack = "varicella"

    def __init__(
        self,
        params: VaricellaParams,
        *,
        population_size: int,
        burn_in: float,
        horizon: float,
        seed: int,
        realization: int = 0,
        vaccination: bool = False,
        vaccination_start: float = 0.0,
        demography: DemographyParams | None = None,
        econ: HealthEconParams | None = None,
        arm: str | None = None,
        sample_occupancy: bool = False,
        populate: bool = True,
    ):
        self.params = params
        self.econ_params = econ or HealthEconParams()
        self.burn_in = burn_in
        self.horizon = horizon
        self.realization = realization
        self.vaccination = vaccination
        self.vaccination_time = burn_in + vaccination_start
        self.arm = arm or ("intervention" if vaccination else "baseline")
        self.engine = Engine()
        self.rng = RngRegistry(seed, realization)
        self.tx = self.rng["transmission"]
        self.vx = self.rng["vaccination"]
        self.fert = self.rng["fertility"]
        self.demo = self.rng["demographics"]
        self.log = EventLog()
        self.ledger = HealthEconLedger(
            self.econ_params.discount_rate, burn_in, horizon, self.econ_params.unit_costs
        )
        self.runtime = ChartRuntime(self.engine, self.tx, context=self, on_accrue=self._on_accrue)
        self.defs = build_vzv_pack(params)

        p = params
        unit = p.contact_rate_unit_years
        normal = p.contact_rate_normal / unit
        pref = p.contact_rate_preferential / unit
        cp_streams = ((normal, p.range_normal, False), (pref, p.range_preferential, True))
        self.streams = {
            "full": cp_streams,
            "weak": cp_streams,
            "shingles": ((normal, p.shingles_range, False),),
        }
        self.p_infection = {
            "full": p.p_infection_normal,
            "weak": p.p_infection_breakthrough,
            "shingles": p.p_infection_shingles,
        }
        self.latent = p.latent_days / _DAYS
        self.infectious = p.infectious_days / _DAYS
        self.shingles_infectious = p.shingles_infectious_days / _DAYS
        self.cmi_waning = p.cmi_waning
        self._pref_lo = p.preferential_age_min
        self._pref_hi = p.preferential_age_max
        self._attitude_weights = [p.attitude_shares[a] for a in ATTITUDES]

        self.due = {1: 0, 2: 0}
        self.given = {1: 0, 2: 0, 3: 0}
        self.outcomes = {"protected": 0, "primary_failure": 0, "refused": 0}
        self.exposures = 0
        self.boosts = 0
        self.periodic_updates = 0
        self.occupancy_samples: list[tuple[float, dict[str, int], int]] = []

        demo = vzv_demography(demography)
        cell = max(p.range_normal, p.range_preferential)
        self.pop: Population = init_population(
            population_size if populate else 0, demo, self.engine, self.rng, cell
        )
        self.pop.mortality_managed = True
        self.pop.birth_listeners.append(self._on_birth)
        if populate:
            self._seed_initial_states()
        if p.exogenous_infection_rate > 0:
            self.engine.at(self.tx.exponential(p.exogenous_infection_rate), self._exogenous_event)
        if sample_occupancy:
            for k in range(int(math.floor(horizon)) + 1):
                self.engine.at(float(k), self._sample_occupancy)

    # -- setup -------------------------------------------------------------
    def new_state(self, stream) -> VzvState:
        p = self.params
        cmi0 = max(p.cmi_floor, stream.normal(p.cmi_initial_mean, p.cmi_initial_sd))
        force = stream.gamma(p.reactivation_shape, p.reactivation_scale) + p.reactivation_shift
        return VzvState(cmi0, force)

    def attach(self, agent, t: float, nh: str | None = None, adherence: str | None = None) -> None:
        nh_def, aging_def, adh_def = self.defs
        rt = self.runtime
        agent.charts = [
            rt.instantiate(nh_def, agent, t, nh),
            rt.instantiate(aging_def, agent, t),
            rt.instantiate(adh_def, agent, t, adherence),
        ]

    def _seed_initial_states(self) -> None:
        p = self.params
        s = self.rng["initialization"]
        t = 0.0
        plan = []
        for a in self.pop.agents:
            a.attitude = ATTITUDES[s.categorical(self._attitude_weights)]
            a.vzv = self.new_state(s)
            age = a.age(t)
            if age < p.maternal_protection_years:
                nh = "maternalProtection"
            else:
                ever = 1.0 - math.exp(-p.initial_force_of_infection * (age - p.maternal_protection_years))
                nh = "recoveredCP" if s.uniform() < ever else "susceptible"
            if age < p.dose1_age:
                adh = "tooYoung"
            elif age < p.dose2_age:
                adh = "missedFirst"
                a.vzv.missed_first = True
            else:
                adh = "missedSecond"
                a.vzv.missed_first = True
            plan.append((a, nh, adh))
        susceptible = [i for i, (_, nh, _) in enumerate(plan) if nh == "susceptible"]
        for _ in range(min(p.initial_infectious, len(susceptible))):
            k = susceptible.pop(s.index(len(susceptible)))
            a, _, adh = plan[k]
            plan[k] = (a, "infectiousCP", adh)
        for a, nh, adh in plan:
            self.attach(a, t, nh, adh)
            if nh == "recoveredCP":
                st = a.vzv
                st.last_boost = -s.uniform() * max(p.boosting_duration, 1.0)
                st.boost_until = st.last_boost + p.boosting_duration

    def _on_birth(self, child, mother, t: float) -> None:
        s = self.demo
        child.attitude = ATTITUDES[s.categorical(self._attitude_weights)]
        child.vzv = self.new_state(s)
        self.attach(child, t)

    # -- programme ---------------------------------------------------------
    def program_active(self, t: float) -> bool:
        return self.vaccination and t > self.vaccination_time

    def administer_vaccination(self, agent, dose_index: int, t: float) -> str:
        """Offer dose ``dose_index`` (1, 2, or 3 for catch-up) and apply the result."""
        if not agent.alive:
            return "discarded"
        p = self.params
        st = agent.vzv
        s = self.vx
        if dose_index == 1:
            accept = p.dose1_probability[agent.attitude]
        elif dose_index == 2:
            accept = p.dose2_probability[agent.attitude]
        else:
            accept = 1.0  # the catch-up draw was made by the adherence chart
        if accept < 1.0 and not s.uniform() < accept:
            self.outcomes["refused"] += 1
            return "refused"
        st.doses += 1
        self.ledger.charge(agent.id, "vaccine_dose", 1.0, t)
        self.record("dose", agent, t)
        failure = p.primary_failure_dose1 if st.doses == 1 else p.primary_failure_dose2
        if s.uniform() < failure:
            self.outcomes["primary_failure"] += 1
            return "primary_failure"
        self.outcomes["protected"] += 1
        self.runtime.deliver(agent.charts, Message(None, agent.id, VZV_VACCINE, t, st.doses))
        return "protected"

    # -- transmission --------------------------------------------------------
    def begin_contacts(self, agent, start: float, source: str, duration: float) -> None:
        """Start the exposure streams of an infectious episode at ``start``."""
        st = agent.vzv
        st.episode += 1
        st.cache = {}
        st.contact_end = start + duration
        ep = st.episode
        for k, (rate, _, _) in enumerate(self.streams[source]):
            if rate > 0:
                self.engine.at(start + self.tx.exponential(rate), self._exposure_event, agent, ep, k, source)

    def _exposure_event(self, agent, ep: int, k: int, source: str) -> None:
        st = agent.vzv
        if st.episode != ep or not agent.alive:
            return
        t = self.engine.now
        if t > st.contact_end:
            return
        rate, radius, pref = self.streams[source][k]
        if not pref or self._pref_lo <= t - agent.birth_time < self._pref_hi:
            rid = self._pick_recipient(agent, k, radius, pref, t)
            if rid is not None:
                self.send_exposure(agent.id, rid, source, t)
        self.engine.at(t + self.tx.exponential(rate), self._exposure_event, agent, ep, k, source)

    def _pick_recipient(self, agent, k: int, radius: float, pref: bool, t: float) -> int | None:
        """Uniform draw from the current neighbours in range (children only when ``pref``).

        Neighbour lists are cached per episode and stream and rebuilt when a
        grid cell they cover changes; the child-only list also expires when
        any candidate crosses an age limit.
        """
        space = self.pop.space
        cache = agent.vzv.cache
        entry = cache.get(k)
        if entry is None:
            cells = space.cell_span(agent.x, agent.y, radius)
            sig = None
        else:
            cells, sig, ids, valid_until = entry
        cur = space.signature(cells)
        if cur != sig or (pref and t >= valid_until):
            arr = space.query_array(agent.x, agent.y, radius)
            arr = arr[arr != agent.id]
            valid_until = math.inf
            if pref and len(arr):
                b = self.pop.birth_times[arr]
                age = t - b
                lo, hi = self._pref_lo, self._pref_hi
                keep = (age >= lo) & (age < hi)
                upcoming = np.where(age < lo, b + lo, np.where(age < hi, b + hi, math.inf))
                valid_until = float(upcoming.min())
                arr = arr[keep]
            ids = arr.tolist()
            cache[k] = (cells, cur, ids, valid_until)
        if not ids:
            return None
        return ids[self.tx.index(len(ids))]

    def send_exposure(self, sender: int | None, recipient: int, source: str, t: float) -> None:
        agent = self.pop.agents[recipient]
        if not agent.alive:
            return
        self.exposures += 1
        self.runtime.deliver(agent.charts, Message(sender, recipient, VZV_EXPOSURE, t, source))

    def _exogenous_event(self) -> None:
        t = self.engine.now
        target = self.pop.random_alive(self.tx)
        if target is not None:
            self.send_exposure(None, target.id, "full", t)
        self.engine.at(t + self.tx.exponential(self.params.exogenous_infection_rate), self._exogenous_event)

    # -- bookkeeping -----------------------------------------------------------
    def record(self, kind: str, agent, t: float) -> None:
        self.log.record(kind, agent.id, t - agent.birth_time, t)

    def charge_episode(self, agent, tag: str, t: float) -> None:
        events = self.econ_params.episode_events.get(tag)
        if events:
            for cat, n in events.items():
                self.ledger.charge(agent.id, cat, n, t)

    def _on_accrue(self, inst, tag: str, start: float, end: float) -> None:
        if tag == "alive":
            utility = 1.0
        else:
            # disease states lower the alive baseline of 1.0
            utility = self.econ_params.utilities.get(tag, 1.0) - 1.0
        self.ledger.accrue(inst.agent.id, start, end, utility)

    def occupancy(self) -> dict[str, int]:
        counts = dict.fromkeys(NH_STATES, 0)
        for a in self.pop.living():
            counts[a.charts[0].state] += 1
        return counts

    def _sample_occupancy(self) -> None:
        self.occupancy_samples.append((self.engine.now, self.occupancy(), self.pop.alive_count))

    def describe(self, agent) -> str:
        return "|".join(c.state for c in agent.charts)

    # -- run -------------------------------------------------------------------
    def run(self) -> RunResult:
        self.engine.run_until(self.horizon)
        return self.result()

    def result(self) -> RunResult:
        t = self.engine.now
        charts = [c for a in self.pop.living() for c in a.charts]
        self.runtime.flush_accruals(charts, t)
        inc = incidence_for(self.log, {"chickenpox": "cp", "shingles": "hz"}, self.pop, self.burn_in, self.horizon)
        cp_t, cp_age = self.log.select("cp")
        post = cp_age[cp_t >= self.burn_in] if len(cp_t) else cp_age
        stats = {
            "initial_population": self.pop.initial_count,
            "births": self.pop.births,
            "deaths": self.pop.deaths,
            "final_population": self.pop.alive_count,
            "exposures": self.exposures,
            "boosts": self.boosts,
            "dose1_due": self.due[1],
            "dose1_given": self.given[1],
            "dose2_due": self.due[2],
            "dose2_given": self.given[2],
            "catch_up_given": self.given[3],
            "median_cp_age": float(sorted(post)[len(post) // 2]) if len(post) else float("nan"),
            "events_processed": self.engine.processed,
        }
        return RunResult(
            pack=self.pack,
            arm=self.arm,
            realization=self.realization,
            incidence=inc,
            costs=dict(self.ledger.totals),
            qalys=self.ledger.qalys,
            stats=stats,
            draw_counts=self.rng.draw_counts(),
        )


def dose_cohort_experiment(
    params: VaricellaParams, n: int, seed: int, age: float = 0.9, span: float = 0.2
) -> tuple[int, int]:
    """Run ``n`` agents of one age cohort past the first-dose age with the programme on.

    Transmission is switched off so only the adherence chart acts.  Returns
    ``(due, administered)`` for the first dose.
    """
    quiet = params.model_copy(update={"exogenous_infection_rate": 0.0, "initial_infectious": 0})
    m = VaricellaModel(
        quiet, population_size=0, burn_in=0.0, horizon=span, seed=seed,
        vaccination=True, vaccination_start=-1.0, populate=False,
    )
    pop = m.pop
    s = m.rng["initialization"]
    hh = pop.new_household(pop.side / 2 if pop.side else 0.0, 0.0, True)
    for _ in range(n):
        a = pop.create_agent("F" if s.uniform() < 0.5 else "M", -age, hh)
        a.attitude = ATTITUDES[s.categorical(m._attitude_weights)]
        a.vzv = m.new_state(s)
        m.attach(a, 0.0, "susceptible", "tooYoung")
    pop.initial_count = n
    m.engine.run_until(span)
    return m.due[1], m.given[1]


def chart_definitions(params: VaricellaParams | None = None) -> dict[str, ChartDefinition]:
    nh, aging, adh = build_vzv_pack(params or VaricellaParams())
    return {d.name: d for d in (nh, aging, adh)}

