import math

import numpy as np
import pytest
from scipy import stats

from abmsim.engine import Engine, Message, RngRegistry
from abmsim.statechart import (
    ChartDefinition,
    ChartError,
    ChartRuntime,
    Condition,
    OnMessage,
    Rate,
    State,
    Timeout,
    Transition,
    deliver,
    fire,
    instantiate,
    write_dot,
)


class Agent:
    def __init__(self):
        self.log = []
        self.flag = False


def runtime(seed=1):
    eng = Engine()
    return eng, ChartRuntime(eng, RngRegistry(seed).stream("x"))


def test_definition_validation():
    with pytest.raises(ChartError):
        ChartDefinition("c", ["a"], [], "missing")
    with pytest.raises(ChartError):
        ChartDefinition("c", ["a"], [Transition("a", "b", Rate(1.0))], "a")
    with pytest.raises(ChartError):
        ChartDefinition("c", ["a", "a"], [], "a")
    with pytest.raises(ChartError):
        ChartDefinition("c", ["a", "b"], [Transition("a", ("a", "b"), Rate(1.0))], "a")
    with pytest.raises(ChartError):
        ChartDefinition("c", ["a", "b"], [Transition("a", "b", Rate(1.0), internal=True)], "a")
    with pytest.raises(ChartError):
        ChartDefinition("c", ["a", "b"], [Transition("a", "b", Timeout(-1.0))], "a")


def test_absorbing_initial_state_is_inert():
    eng, rt = runtime()
    d = ChartDefinition("c", ["only"], [], "only")
    inst = instantiate(rt, d, Agent(), 0.0)
    assert inst.state == "only"
    assert len(eng) == 0


def test_timeout_fires_at_exact_time():
    eng, rt = runtime()
    d = ChartDefinition("c", ["a", "b"], [Transition("a", "b", Timeout(2.5))], "a")
    inst = rt.instantiate(d, Agent(), 1.0)
    eng.run_until(3.49)
    assert inst.state == "a"
    eng.run_until(3.5)
    assert inst.state == "b"
    assert inst.entry_time == 3.5


def test_parallel_charts_are_independent():
    eng, rt = runtime()
    d1 = ChartDefinition("one", ["a", "b"], [Transition("a", "b", Rate(1.0))], "a")
    d2 = ChartDefinition("two", ["x"], [], "x")
    agent = Agent()
    rt.instantiate(d1, agent, 0.0)
    n = len(eng)
    i2 = rt.instantiate(d2, agent, 0.0)
    assert len(eng) == n
    eng.run_until(100.0)
    assert i2.state == "x"


def test_guard_false_keeps_state_and_rearms_rate():
    eng, rt = runtime()
    agent = Agent()
    tries = []

    def guard(inst, t, msg):
        tries.append(t)
        return len(tries) >= 3

    d = ChartDefinition("c", ["a", "b"], [Transition("a", "b", Rate(10.0), guard=guard)], "a")
    inst = rt.instantiate(d, agent, 0.0)
    eng.run_until(100.0)
    assert inst.state == "b"
    assert len(tries) == 3


def test_message_trigger_matches_kind_only():
    eng, rt = runtime()
    d = ChartDefinition("c", ["a", "b"], [Transition("a", "b", OnMessage("PING"))], "a")
    agent = Agent()
    inst = rt.instantiate(d, agent, 0.0)
    assert deliver([inst], Message(None, 0, "OTHER", 0.0)) == 0
    assert inst.state == "a"
    assert deliver([inst], Message(None, 0, "PING", 0.0)) == 1
    assert inst.state == "b"
    # no listener in the new state
    assert deliver([inst], Message(None, 0, "PING", 0.0)) == 0


def test_message_to_halted_instance_is_discarded():
    eng, rt = runtime()
    d = ChartDefinition("c", ["a", "b"], [Transition("a", "b", OnMessage("PING"))], "a")
    inst = rt.instantiate(d, Agent(), 0.0)
    rt.halt(inst, 1.0)
    assert rt.deliver([inst], Message(None, 0, "PING", 1.0)) == 0
    assert inst.state == "a"


def test_stale_events_are_dropped():
    eng, rt = runtime()
    d = ChartDefinition(
        "c", ["a", "b", "c"],
        [Transition("a", "b", Timeout(5.0)), Transition("a", "c", OnMessage("GO"))], "a",
    )
    inst = rt.instantiate(d, Agent(), 0.0)
    rt.deliver([inst], Message(None, 0, "GO", 1.0))
    eng.run_until(10.0)
    assert inst.state == "c"
    assert rt.stale == 1


def test_fire_from_wrong_state_is_a_noop():
    eng, rt = runtime()
    tr = Transition("b", "a", Rate(1.0))
    d = ChartDefinition("c", ["a", "b"], [tr], "a")
    inst = rt.instantiate(d, Agent(), 0.0)
    assert fire(inst, tr, 0.0) is False
    assert inst.state == "a"


def test_self_transition_reruns_action_and_resets_epoch():
    eng, rt = runtime()
    agent = Agent()
    d = ChartDefinition(
        "c", ["a"],
        [Transition("a", "a", Timeout(1.0), action=lambda i, t, m: i.agent.log.append(t))], "a",
    )
    inst = rt.instantiate(d, agent, 0.0)
    eng.run_until(4.5)
    assert agent.log == [1.0, 2.0, 3.0, 4.0]
    assert inst.entry_time == 4.0


def test_internal_timed_transition_rearms_without_leaving():
    eng, rt = runtime()
    agent = Agent()
    accr = []
    rt.on_accrue = lambda inst, tag, a, b: accr.append((a, b))
    d = ChartDefinition(
        "c", [State("a", accrual="tag")],
        [Transition("a", "a", Timeout(1.0), action=lambda i, t, m: i.agent.log.append(t), internal=True)],
        "a",
    )
    inst = rt.instantiate(d, agent, 0.0)
    eng.run_until(3.5)
    assert agent.log == [1.0, 2.0, 3.0]
    assert inst.entry_time == 0.0
    assert accr == []
    rt.flush_accruals([inst], 3.5)
    assert accr == [(0.0, 3.5)]


def test_choice_target_and_hooks_order():
    eng, rt = runtime()
    agent = Agent()
    d = ChartDefinition(
        "c",
        [State("a", on_exit=lambda i, t: i.agent.log.append("exit a")),
         State("b", on_entry=lambda i, t: i.agent.log.append("enter b")), "c"],
        [Transition("a", ("b", "c"), OnMessage("GO"), select=lambda i, t, m: m.data,
                    action=lambda i, t, m: i.agent.log.append("action"))],
        "a",
    )
    inst = rt.instantiate(d, agent, 0.0)
    rt.deliver([inst], Message(None, 0, "GO", 0.0, "b"))
    assert inst.state == "b"
    assert agent.log == ["exit a", "enter b", "action"]


def test_condition_trigger_on_notify():
    eng, rt = runtime()
    agent = Agent()
    d = ChartDefinition("c", ["a", "b"], [Transition("a", "b", Condition(lambda i, t: i.agent.flag))], "a")
    inst = rt.instantiate(d, agent, 0.0)
    assert inst.state == "a"
    agent.flag = True
    assert inst.state == "a"  # not polled
    assert rt.notify(inst, 1.0)
    assert inst.state == "b"


def test_competing_rates_split_by_hazard():
    eng, rt = runtime(3)
    d = ChartDefinition(
        "c", ["a", "b", "c"],
        [Transition("a", "b", Rate(3.0)), Transition("a", "c", Rate(1.0))], "a",
    )
    insts = [rt.instantiate(d, Agent(), 0.0) for _ in range(20_000)]
    eng.run_until(1e6)
    share_b = sum(i.state == "b" for i in insts) / len(insts)
    assert abs(share_b - 0.75) < 4 * math.sqrt(0.75 * 0.25 / len(insts))


def test_sojourn_times_are_exponential():
    eng, rt = runtime(8)
    exits = []
    lam = 1.7
    d = ChartDefinition(
        "c", ["a", "b"],
        [Transition("a", "b", Rate(lam), action=lambda i, t, m: exits.append(t))], "a",
    )
    for _ in range(5000):
        rt.instantiate(d, Agent(), 0.0)
    eng.run_until(1e6)
    res = stats.kstest(exits, "expon", args=(0, 1 / lam))
    assert res.pvalue > 0.01


def test_dot_export(tmp_path):
    d = ChartDefinition(
        "demo", [State("a", accrual="x"), "b"],
        [Transition("a", "b", Rate(2.0), name="go"), Transition("b", "b", Timeout(1.0), internal=True)], "a",
    )
    p = tmp_path / "demo.dot"
    write_dot(d, p)
    text = p.read_text()
    assert text.startswith('digraph "demo"')
    assert '"a" -> "b" [label="go: rate 2/yr"]' in text
    assert "style=dashed" in text
