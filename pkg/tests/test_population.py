import math

import numpy as np
import pytest

from abmsim.engine import Engine, RngRegistry
from abmsim.population import (
    DemographyParams,
    SpatialIndex,
    cumulative_survival,
    init_population,
    life_expectancy,
    sample_piecewise_hazard,
)


def make(n=2000, seed=1, **kw):
    params = DemographyParams(**kw)
    eng = Engine()
    rng = RngRegistry(seed)
    pop = init_population(n, params, eng, rng, cell_size=5.0)
    return pop, eng, rng


def test_piecewise_hazard_constant_rate_matches_exponential():
    u = np.linspace(0.001, 0.999, 50)
    for x in u:
        w = sample_piecewise_hazard([0.0], [0.5], 12.0, x)
        assert w == pytest.approx(-math.log(1 - x) / 0.5, rel=1e-12)


def test_piecewise_hazard_crosses_bands():
    # rate 1 on [0, 1), rate 2 after; cumulative 1 is reached exactly at age 1
    w = sample_piecewise_hazard([0.0, 1.0], [1.0, 2.0], 0.0, 1 - math.exp(-1.0))
    assert w == pytest.approx(1.0)
    w = sample_piecewise_hazard([0.0, 1.0], [1.0, 2.0], 0.0, 1 - math.exp(-2.0))
    assert w == pytest.approx(1.5)


def test_piecewise_hazard_can_be_infinite():
    assert sample_piecewise_hazard([0.0, 10.0], [0.1, 0.0], 0.0, 0.99) == math.inf


def test_survival_and_life_expectancy():
    s = cumulative_survival([0.0], [0.02], np.array([0.0, 10.0, 50.0]))
    assert np.allclose(s, np.exp(-0.02 * np.array([0.0, 10.0, 50.0])))
    assert life_expectancy([0.0], [0.02], max_age=2000.0) == pytest.approx(50.0, rel=1e-3)
    p = DemographyParams()
    assert 70 < life_expectancy(p.mortality_edges, p.mortality_rates) < 90


def test_population_has_exact_size_and_valid_households():
    pop, _, _ = make(1234)
    assert len(pop.agents) == 1234 == pop.alive_count
    for a in pop.agents:
        hh = pop.households[a.household_id]
        assert a.id in hh.members
        assert a.age(0.0) >= 0
        assert a.sex in ("F", "M")
    assert sum(len(h.members) for h in pop.households.values()) == 1234
    assert all(h.members for h in pop.households.values())


def test_children_have_plausible_mothers():
    pop, _, _ = make(3000, schools_enabled=True)
    p = pop.params
    for a in pop.agents:
        if a.mother_id is not None:
            m = pop.agents[a.mother_id]
            gap = a.birth_time - m.birth_time
            assert p.min_parent_age - 1e-9 <= gap <= p.max_parent_age + 1e-9


def test_schools_only_hold_school_age_children():
    pop, eng, _ = make(3000, schools_enabled=True, household_formation=True)
    pop.mortality_managed = False
    for a in pop.agents:
        pop.schedule_life_course(a, 0.0)
    for t in (0.0, 3.0, 7.5):
        eng.run_until(t)
        for s in pop.schools:
            for i in s.enrolled:
                age = pop.agents[i].age(t)
                assert pop.params.school_entry_age - 1e-9 <= age < pop.params.school_exit_age + 1e-9
        for a in pop.living():
            if a.school_id is not None:
                assert a.id in pop.schools[a.school_id].enrolled


def test_accounting_identity_with_births_and_deaths():
    from abmsim.population import fertility_chart
    from abmsim.statechart import ChartRuntime

    pop, eng, rng = make(1500, household_formation=True, schools_enabled=True)
    pop.mortality_managed = False
    rt = ChartRuntime(eng, rng.stream("fertility"), context=pop)
    fert = fertility_chart(lambda i: pop, lambda i: rng.stream("fertility"), 0.75, 0.25)

    def attach(agent, t):
        if agent.sex == "F":
            agent.charts = [rt.instantiate(fert, agent, t)]

    for a in pop.agents:
        pop.schedule_life_course(a, 0.0)
        attach(a, 0.0)
    pop.birth_listeners.append(lambda c, m, t: attach(c, t))
    for t in range(1, 21):
        eng.run_until(float(t))
        assert pop.initial_count + pop.births - pop.deaths == pop.alive_count
        assert len(set(pop.alive_ids)) == pop.alive_count
        for hid, hh in pop.households.items():
            assert hh.members
            for i in hh.members:
                assert pop.agents[i].alive and pop.agents[i].household_id == hid
    assert pop.births > 0 and pop.deaths > 0


def test_spatial_query_equals_brute_force():
    rng = np.random.default_rng(3)
    side = 50.0
    idx = SpatialIndex(side, 4.0)
    pts = rng.uniform(0, side, size=(3000, 2))
    for i, (x, y) in enumerate(pts):
        idx.insert(i, x, y)
    for i in rng.choice(3000, 300, replace=False):
        idx.remove(int(i))
    removed = set(range(3000)) - {j for c in idx.cells for j in c}
    for _ in range(1000):
        x, y = rng.uniform(-2, side + 2, size=2)
        r = rng.uniform(0, 10)
        got = sorted(idx.query(x, y, r))
        want = sorted(
            j for j in range(3000)
            if j not in removed and (pts[j, 0] - x) ** 2 + (pts[j, 1] - y) ** 2 <= r * r
        )
        assert got == want


def test_pick_neighbor_uses_current_neighbours():
    pop, _, rng = make(800)
    s = rng.stream("transmission")
    a = pop.agents[0]
    cache = {}
    near = set(pop.neighbors_within(a, 3.0))
    for _ in range(200):
        j = pop.pick_neighbor(a, 3.0, s, cache)
        assert (j in near) if near else j is None
    # a death inside the ball invalidates the cached list
    if near:
        victim = pop.agents[next(iter(near))]
        pop.kill(victim, 0.0)
        for _ in range(200):
            assert pop.pick_neighbor(a, 3.0, s, cache) != victim.id


def test_household_acceptance_is_min_over_parents():
    pop, _, _ = make(500)
    hh = next(h for h in pop.households.values() if len(h.parents) == 2 and len(h.members) > 2)
    p0, p1 = (pop.agents[i] for i in hh.parents)
    p0.acceptance, p1.acceptance = 0.9, 0.4
    child = next(pop.agents[i] for i in hh.members if i not in hh.parents)
    child.acceptance = 1.0
    assert pop.household_effective_acceptance(child) == 0.4
    pop.kill(p1, 0.0)
    assert pop.household_effective_acceptance(child) == 0.9


def test_snapshot_export(tmp_path):
    pop, _, _ = make(50)
    path = tmp_path / "snap.csv"
    pop.export_snapshot(path, 0.0)
    lines = path.read_text().splitlines()
    assert len(lines) == 51


def test_demography_validation():
    with pytest.raises(ValueError):
        DemographyParams(mortality_edges=[1.0], mortality_rates=[0.1])
    with pytest.raises(ValueError):
        DemographyParams(age_pyramid=[(10.0, 5.0, 1.0)])
    with pytest.raises(ValueError):
        DemographyParams(not_a_field=1)
