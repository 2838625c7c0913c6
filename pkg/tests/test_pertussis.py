import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abmsim.engine import RngRegistry
from abmsim.pertussis import (
    ImmunityError,
    ImmunityState,
    PertussisModel,
    PertussisParams,
    apply_dose,
    chart_definitions,
    expose,
    protection_level,
    recover,
    refresh,
    transfer_maternal,
    vaccinate_mother,
)

P = PertussisParams()


def state(pa=0.0, pp=0.0, wa=0.0, wp=2.0, t0=0.0, memory="naive"):
    return ImmunityState(pa, pp, memory, wa, wp, t0)


# -- protection level -------------------------------------------------------

def test_protection_cap_and_sum():
    assert protection_level(state(0.7, 0.5), 0.0) == 1.0
    assert protection_level(state(0.3, 0.2), 0.0) == pytest.approx(0.5, abs=1e-15)


def test_protection_closed_form():
    s = state(1.0, 0.0, wa=0.2)
    assert abs(protection_level(s, 1.0) - 0.8187307530779818) < 1e-12


def test_protection_before_last_update_faults():
    with pytest.raises(ImmunityError):
        protection_level(state(t0=5.0), 4.0)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 2), st.floats(0, 5),
    st.floats(0, 30), st.floats(0, 1),
)
def test_lazy_refresh_composes(pa, pp, wa, wp, t, frac):
    direct = protection_level(state(pa, pp, wa, wp), t)
    s = state(pa, pp, wa, wp)
    refresh(s, t * frac)
    assert abs(protection_level(s, t) - direct) < 1e-12
    assert 0.0 <= direct <= 1.0


# -- dosing -----------------------------------------------------------------

def test_saw_tooth():
    s = state()
    t = 0.0
    for k, age in enumerate(P.dose_ages[:5], start=1):
        if k > 1:
            gap = age - P.dose_ages[k - 2]
            before = protection_level(s, age)
            assert before == pytest.approx(P.dose_boosts[k - 2] * math.exp(-P.waning_acellular * gap), abs=1e-12)
        apply_dose(s, k, age, P, blunting_enabled=False)
        assert protection_level(s, age) == pytest.approx(P.dose_boosts[k - 1], abs=1e-12)
        assert s.memory == "acellular"


def test_blunting_only_with_passive_present():
    with_passive = apply_dose(state(pp=0.5), 1, 0.0, P, blunting_enabled=True)
    assert with_passive.p_active == pytest.approx(P.dose_boosts[0] * P.blunting_factor)
    assert with_passive.p_active < P.dose_boosts[0]
    no_passive = apply_dose(state(pp=0.0), 1, 0.0, P, blunting_enabled=True)
    assert no_passive.p_active == P.dose_boosts[0]
    off = apply_dose(state(pp=0.5), 1, 0.0, P, blunting_enabled=False)
    assert off.p_active == P.dose_boosts[0]
    late = apply_dose(state(pp=0.5), P.blunting_max_dose + 1, 0.0, P, blunting_enabled=True)
    assert late.p_active == P.dose_boosts[P.blunting_max_dose]


def test_dose_index_checked():
    with pytest.raises(ImmunityError):
        apply_dose(state(), 0, 0.0, P, False)
    with pytest.raises(ImmunityError):
        apply_dose(state(), len(P.dose_boosts) + 1, 0.0, P, False)


def test_whole_cell_era():
    p = PertussisParams(vaccine_memory="wholeCell")
    s = apply_dose(state(), 1, 0.0, p, False)
    assert s.memory == "wholeCell" and s.w_active == p.waning_whole_cell


# -- maternal transfer ------------------------------------------------------

def test_transfer_examples():
    assert transfer_maternal(state(), 0.0, P).p_passive == 0.0
    m1 = PertussisParams(maternal_transfer=1.0)
    child = transfer_maternal(state(0.8), 0.0, m1)
    assert child.p_passive == pytest.approx(0.8)
    assert child.p_active == 0.0 and child.memory == "naive"
    assert transfer_maternal(state(0.8), 0.0, P, passive_enabled=False).p_passive == 0.0


def test_vaccinated_mother_gives_higher_start_same_decay():
    mother_a = state(0.3, 0.0, wa=P.waning_natural, memory="natural")
    mother_b = state(0.3, 0.0, wa=P.waning_natural, memory="natural")
    vaccinate_mother(mother_b, 0.0, P)
    a = transfer_maternal(mother_a, 0.25, P)
    b = transfer_maternal(mother_b, 0.25, P)
    assert b.p_passive > a.p_passive
    assert a.w_passive == b.w_passive
    for t in (0.3, 0.5, 1.0):
        ratio = protection_level(b, t) / protection_level(a, t)
        assert ratio == pytest.approx(b.p_passive / a.p_passive)


# -- exposure ---------------------------------------------------------------

def test_full_protection_never_infected():
    s = RngRegistry(1).stream("t")
    assert not any(expose(state(1.0), 30.0, 0.0, P, s) for _ in range(10_000))


def test_infection_probability_binomial():
    p = PertussisParams(infection_probability=0.5)
    s = RngRegistry(2).stream("t")
    n = 100_000
    k = sum(expose(state(), 30.0, 0.0, p, s) for _ in range(n))
    assert abs(k / n - 0.5) < 0.01


def test_recovery_sets_full_natural_protection():
    s = recover(state(0.2, 0.1, wa=0.1), 3.0, P)
    assert s.p_active == 1.0 and s.memory == "natural" and s.w_active == P.waning_natural
    assert protection_level(s, 3.0) == 1.0


def test_age_banded_threshold():
    p = PertussisParams(alpha_edges=[0.0, 1.0], alpha_values=[0.8, 0.4])
    assert p.alpha(0.5) == 0.8 and p.alpha(30.0) == 0.4
    s = RngRegistry(3).stream("t")
    # protection 0.6 is below the infant threshold only
    assert not any(expose(state(0.6), 30.0, 0.0, p, s) for _ in range(1000))
    assert any(expose(state(0.6), 0.5, 0.0, p, s) for _ in range(1000))


# -- parameters ---------------------------------------------------------------

def test_param_validation():
    with pytest.raises(ValueError):
        PertussisParams(waning_natural=0.2, waning_acellular=0.1)
    with pytest.raises(ValueError):
        PertussisParams(infection_probability=1.5)
    with pytest.raises(ValueError):
        PertussisParams(dose_boosts=[0.5])
    with pytest.raises(ValueError):
        PertussisParams(dose_boosts=[0.0, 0.4, 0.7, 0.85, 0.9, 0.9])
    # targets need not increase
    PertussisParams(dose_boosts=[0.9, 0.5, 0.7, 0.85, 0.9, 0.4])


def test_compliance_limits():
    assert P.noncompliance_hazard(1.0) == 0.0
    assert P.return_hazard(0.0) == 0.0
    us = np.linspace(0, 1, 11)
    h = [P.noncompliance_hazard(u) for u in us]
    g = [P.return_hazard(u) for u in us]
    assert all(a >= b for a, b in zip(h, h[1:]))
    assert all(a <= b for a, b in zip(g, g[1:]))


# -- model-level ------------------------------------------------------------

def bare_model(**kw):
    params = PertussisParams(importation_rate_per_100k=0.0, initial_infected=0, **kw)
    return PertussisModel(params, population_size=0, burn_in=0.0, horizon=1.0, seed=1, survey=False)


def add_person(m, age, hh=None, x=10.0, y=10.0, acceptance=1.0):
    pop = m.pop
    if hh is None:
        hh = pop.new_household(x, y, True)
    a = pop.create_agent("M", -age, hh)
    hh.parents.append(a.id)
    a.acceptance = acceptance
    a.imm = state()
    m._attach(a, 0.0, "notInfected", "onSchedule" if age < P.compliance_age_limit else None)
    m._schedule_doses(a, 0.0)
    return a


def test_isolated_agent_sends_nothing():
    m = bare_model()
    m.pop.side = 1000.0
    a = add_person(m, 30.0)
    m.begin_contacts(a, 0.0)
    m.engine.run_until(0.2)
    assert m.exposures == 0


def test_school_layer_needs_enrolment():
    m = bare_model()
    a = add_person(m, 30.0)
    assert m.layer_partner(a, 1, m.tx, None) is None


def test_household_layer_reaches_members_only():
    m = bare_model()
    a = add_person(m, 30.0, x=5.0, y=5.0)
    hh = m.pop.households[a.household_id]
    b = add_person(m, 2.0, hh=hh)
    add_person(m, 40.0, x=500.0, y=500.0)
    picks = {m.layer_partner(a, 0, m.tx, None) for _ in range(200)}
    assert picks == {b.id}


def test_compliance_chart_is_inert_at_full_acceptance():
    m = bare_model()
    a = add_person(m, 0.1, acceptance=1.0)
    m.engine.run_until(1.0)
    assert m.compliance_state(a) == "onSchedule"


def test_zero_acceptance_never_returns():
    m = bare_model()
    a = add_person(m, 0.1, acceptance=0.0)
    comp = next(c for c in a.charts if c.definition.name == "pertussis_compliance")
    m.runtime.fire(comp, comp.definition.transitions[0], 0.0)
    assert m.compliance_state(a) == "nonCompliant"
    m.engine.run_until(1.0)
    assert m.compliance_state(a) == "nonCompliant"


def test_missed_doses_caught_up_on_return():
    m = bare_model()
    a = add_person(m, 0.1, acceptance=0.0)
    comp = next(c for c in a.charts if c.definition.name == "pertussis_compliance")
    m.runtime.fire(comp, comp.definition.transitions[0], 0.0)
    m.engine.run_until(0.9)
    assert a.doses == 0 and a.missed == [1, 2, 3]
    m.catch_up(a, 0.9)
    assert a.doses == 3 and a.missed == []
    assert a.imm.p_active == P.dose_boosts[2]


def test_infections_only_below_threshold():
    m = PertussisModel(P, population_size=3000, burn_in=2.0, horizon=8.0, seed=4, survey=False)
    r = m.run()
    assert m.infection_checks, "expected some infections"
    assert all(p < a for p, a in m.infection_checks)
    assert r.incidence["pertussis"].counts.sum() <= len(m.infection_checks) + 3000


def test_chart_topology():
    defs = chart_definitions()
    assert set(defs) == {"pertussis_infection", "pertussis_compliance", "fertility"}
    assert set(defs["pertussis_compliance"].states) == {"onSchedule", "nonCompliant"}
    assert defs["pertussis_infection"].initial == "notInfected"


@pytest.mark.parametrize("passive", [True, False])
def test_passive_switch_only_removes_the_vaccine_share(passive):
    params = PertussisParams(importation_rate_per_100k=0.0, initial_infected=0)
    m = PertussisModel(params, population_size=0, burn_in=0.0, horizon=1.0, seed=1, survey=False,
                       maternal_coverage=1.0, passive_transfer=passive)
    mother = add_person(m, 28.0)
    mother.sex = "F"
    mother.imm = state(0.3, 0.0, wa=P.waning_natural, memory="natural")
    m.maybe_vaccinate_mother(mother, 0.1)
    assert m.maternal_doses == 1
    assert protection_level(mother.imm, 0.35) > 0.8
    m.engine.run_until(0.35)
    m.pop.process_birth(mother, 0.35)
    child = m.pop.agents[-1]
    if passive:
        source = P.maternal_dose_level * math.exp(-0.25 * P.waning_acellular)
    else:
        source = 0.3 * math.exp(-0.35 * P.waning_natural)
    assert child.imm.p_passive == pytest.approx(P.maternal_transfer * source, rel=1e-12)
    # the mother keeps her dose either way
    assert protection_level(mother.imm, 0.35) > 0.8
