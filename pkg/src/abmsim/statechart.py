"""Flat statechart runtime.

A :class:`ChartDefinition` is an immutable description (states, triggered
transitions, initial state) that model packs build in code.  Each agent owns
one :class:`ChartInstance` per parallel chart.  Timed triggers (rates and
timeouts) are scheduled on the engine and tagged with the instance's
generation counter; any state change bumps the generation, so events armed
for a state that has since been left are dropped when they come due.

Callback signatures used throughout:

* guards: ``guard(inst, t, msg) -> bool``
* actions: ``action(inst, t, msg)``
* entry/exit hooks: ``hook(inst, t)``
* rate triggers: ``rate(inst, t) -> float`` (per year; ``<= 0`` means never)
* timeouts: ``duration(inst, t) -> float`` (years; ``inf`` means never)
* conditions: ``predicate(inst, t) -> bool``
* choice selectors: ``select(inst, t, msg) -> state name``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .engine import Engine, Message, Substream


class ChartError(ValueError):
    """Invalid chart definition."""


@dataclass(frozen=True)
class Rate:
    rate: float | Callable[["ChartInstance", float], float]


@dataclass(frozen=True)
class Timeout:
    duration: float | Callable[["ChartInstance", float], float]


@dataclass(frozen=True)
class OnMessage:
    kind: str


@dataclass(frozen=True)
class Condition:
    predicate: Callable[["ChartInstance", float], bool]


Trigger = Rate | Timeout | OnMessage | Condition


@dataclass(frozen=True)
class State:
    name: str
    on_entry: Callable[["ChartInstance", float], None] | None = None
    on_exit: Callable[["ChartInstance", float], None] | None = None
    accrual: str | None = None


@dataclass(frozen=True)
class Transition:
    """An arrow ``source -> target``.

    ``target`` may be a tuple of candidate states, in which case ``select``
    picks one at firing time (a choice point).  ``internal`` transitions must
    have ``source == target``: they run the action without leaving the state,
    and timed internal transitions re-arm themselves after firing.
    """

    source: str
    target: str | tuple[str, ...]
    trigger: Trigger
    guard: Callable[["ChartInstance", float, Any], bool] | None = None
    action: Callable[["ChartInstance", float, Any], None] | None = None
    select: Callable[["ChartInstance", float, Any], str] | None = None
    internal: bool = False
    name: str = ""

    @property
    def targets(self) -> tuple[str, ...]:
        return self.target if isinstance(self.target, tuple) else (self.target,)

    @property
    def label(self) -> str:
        return self.name or f"{self.source}->{'|'.join(self.targets)}"


class ChartDefinition:
    def __init__(
        self,
        name: str,
        states: Sequence[State | str],
        transitions: Sequence[Transition],
        initial: str,
    ):
        self.name = name
        self.states: dict[str, State] = {}
        for s in states:
            st = State(s) if isinstance(s, str) else s
            if st.name in self.states:
                raise ChartError(f"{name}: duplicate state {st.name!r}")
            self.states[st.name] = st
        self.transitions = tuple(transitions)
        self.initial = initial
        self.validate()
        self._timed: dict[str, tuple[Transition, ...]] = {}
        self._messages: dict[str, dict[str, tuple[Transition, ...]]] = {}
        self._conditions: dict[str, tuple[Transition, ...]] = {}
        for sname in self.states:
            out = [tr for tr in self.transitions if tr.source == sname]
            self._timed[sname] = tuple(
                tr for tr in out if isinstance(tr.trigger, (Rate, Timeout))
            )
            by_kind: dict[str, list[Transition]] = {}
            for tr in out:
                if isinstance(tr.trigger, OnMessage):
                    by_kind.setdefault(tr.trigger.kind, []).append(tr)
            self._messages[sname] = {k: tuple(v) for k, v in by_kind.items()}
            self._conditions[sname] = tuple(
                tr for tr in out if isinstance(tr.trigger, Condition)
            )

    def validate(self) -> None:
        if self.initial not in self.states:
            raise ChartError(f"{self.name}: initial state {self.initial!r} is not a state")
        for tr in self.transitions:
            if tr.source not in self.states:
                raise ChartError(f"{self.name}: unknown source {tr.source!r}")
            for tgt in tr.targets:
                if tgt not in self.states:
                    raise ChartError(f"{self.name}: unknown target {tgt!r}")
            if len(tr.targets) > 1 and tr.select is None:
                raise ChartError(f"{self.name}: choice {tr.label} needs a select callback")
            if tr.internal and tr.targets != (tr.source,):
                raise ChartError(f"{self.name}: internal transition {tr.label} must loop")
            trig = tr.trigger
            if isinstance(trig, Rate) and not callable(trig.rate) and trig.rate < 0:
                raise ChartError(f"{self.name}: negative rate on {tr.label}")
            if isinstance(trig, Timeout) and not callable(trig.duration) and trig.duration < 0:
                raise ChartError(f"{self.name}: negative timeout on {tr.label}")

    def outgoing(self, state: str) -> list[Transition]:
        return [tr for tr in self.transitions if tr.source == state]

    def message_kinds(self, state: str) -> set[str]:
        return set(self._messages[state])

    def to_dot(self) -> str:
        lines = [f'digraph "{self.name}" {{', "  rankdir=LR;", '  __init [shape=point];']
        for s in self.states.values():
            extra = f'\\n[{s.accrual}]' if s.accrual else ""
            lines.append(f'  "{s.name}" [shape=box, style=rounded, label="{s.name}{extra}"];')
        lines.append(f'  __init -> "{self.initial}";')
        for tr in self.transitions:
            trig = tr.trigger
            if isinstance(trig, Rate):
                lab = "rate" if callable(trig.rate) else f"rate {trig.rate:g}/yr"
            elif isinstance(trig, Timeout):
                lab = "timeout" if callable(trig.duration) else f"after {trig.duration:g} yr"
            elif isinstance(trig, OnMessage):
                lab = f"msg {trig.kind}"
            else:
                lab = "condition"
            if tr.guard is not None:
                lab += " [guard]"
            if tr.name:
                lab = f"{tr.name}: {lab}"
            style = ", style=dashed" if tr.internal else ""
            for tgt in tr.targets:
                lines.append(f'  "{tr.source}" -> "{tgt}" [label="{lab}"{style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


class ChartInstance:
    __slots__ = ("definition", "agent", "state", "generation", "entry_time", "runtime", "active")

    def __init__(self, definition: ChartDefinition, agent: Any, runtime: "ChartRuntime"):
        self.definition = definition
        self.agent = agent
        self.runtime = runtime
        self.state = definition.initial
        self.generation = 0
        self.entry_time = 0.0
        self.active = True

    def __repr__(self) -> str:
        return f"<{self.definition.name}:{self.state} gen={self.generation}>"


AccrualListener = Callable[[ChartInstance, str, float, float], None]


@dataclass
class ChartRuntime:
    """Arms timed triggers on an engine and dispatches messages.

    ``context`` is an arbitrary object callbacks can reach through
    ``inst.runtime.context`` (model packs put themselves there).
    """

    engine: Engine
    stream: Substream
    context: Any = None
    on_accrue: AccrualListener | None = None
    fired: int = 0
    stale: int = 0
    trace: list | None = field(default=None, repr=False)

    # -- lifecycle -------------------------------------------------------
    def instantiate(
        self, definition: ChartDefinition, agent: Any, t: float, state: str | None = None
    ) -> ChartInstance:
        """Create an instance in ``state`` (default: the initial state) and arm it."""
        inst = ChartInstance(definition, agent, self)
        if state is not None:
            if state not in definition.states:
                raise ChartError(f"{definition.name}: unknown state {state!r}")
            inst.state = state
        inst.entry_time = t
        st = definition.states[inst.state]
        if st.on_entry is not None:
            st.on_entry(inst, t)
        self._arm(inst, t)
        self._check_conditions(inst, t)
        return inst

    def halt(self, inst: ChartInstance, t: float) -> None:
        """Deactivate an instance (agent death); pending events become stale."""
        if not inst.active:
            return
        st = inst.definition.states[inst.state]
        if st.on_exit is not None:
            st.on_exit(inst, t)
        if st.accrual is not None and self.on_accrue is not None:
            self.on_accrue(inst, st.accrual, inst.entry_time, t)
        inst.active = False
        inst.generation += 1

    def flush_accruals(self, instances: Iterable[ChartInstance], t: float) -> None:
        """Close open accrual episodes at ``t`` without changing state."""
        if self.on_accrue is None:
            return
        for inst in instances:
            if not inst.active:
                continue
            tag = inst.definition.states[inst.state].accrual
            if tag is not None and t > inst.entry_time:
                self.on_accrue(inst, tag, inst.entry_time, t)
                inst.entry_time = t

    # -- firing ----------------------------------------------------------
    def fire(self, inst: ChartInstance, tr: Transition, t: float, msg: Any = None) -> bool:
        """Fire ``tr`` if ``inst`` is still in its source state and the guard holds."""
        if not inst.active or inst.state != tr.source:
            self.stale += 1
            return False
        if tr.guard is not None and not tr.guard(inst, t, msg):
            return False
        self._take(inst, tr, t, msg)
        return True

    def _take(self, inst: ChartInstance, tr: Transition, t: float, msg: Any) -> None:
        self.fired += 1
        if self.trace is not None:
            self.trace.append((t, inst, tr.source, tr.targets))
        if tr.internal:
            if tr.action is not None:
                tr.action(inst, t, msg)
            return
        d = inst.definition
        old = d.states[inst.state]
        if old.on_exit is not None:
            old.on_exit(inst, t)
        if old.accrual is not None and self.on_accrue is not None:
            self.on_accrue(inst, old.accrual, inst.entry_time, t)
        target = tr.target if tr.select is None else tr.select(inst, t, msg)
        inst.state = target
        inst.generation += 1
        inst.entry_time = t
        new = d.states[target]
        if new.on_entry is not None:
            new.on_entry(inst, t)
        gen = inst.generation
        if inst.active and inst.generation == gen:
            self._arm(inst, t)
        if tr.action is not None:
            tr.action(inst, t, msg)
        if inst.active and inst.generation == gen:
            self._check_conditions(inst, t)

    def _arm(self, inst: ChartInstance, t: float) -> None:
        for tr in inst.definition._timed[inst.state]:
            self._arm_one(inst, tr, t)

    def _arm_one(self, inst: ChartInstance, tr: Transition, t: float) -> None:
        trig = tr.trigger
        if type(trig) is Rate:
            rate = trig.rate(inst, t) if callable(trig.rate) else trig.rate
            if rate <= 0.0:
                return
            delay = self.stream.exponential(rate)
        else:
            delay = trig.duration(inst, t) if callable(trig.duration) else trig.duration
            if delay == math.inf:
                return
            if delay < 0:
                raise ChartError(f"negative timeout on {tr.label}")
        self.engine.at(t + delay, self._on_timer, inst, inst.generation, tr)

    def _on_timer(self, inst: ChartInstance, gen: int, tr: Transition) -> None:
        if inst.generation != gen or not inst.active:
            self.stale += 1
            return
        t = self.engine.now
        if tr.guard is not None and not tr.guard(inst, t, None):
            if type(tr.trigger) is Rate:
                self._arm_one(inst, tr, t)
            return
        self._take(inst, tr, t, None)
        if tr.internal and inst.active and inst.generation == gen:
            self._arm_one(inst, tr, t)

    # -- messages and conditions ------------------------------------------
    def deliver(self, charts: Sequence[ChartInstance], msg: Message) -> int:
        """Offer ``msg`` to each chart in turn; returns the number of firings."""
        fired = 0
        kind = msg.kind
        t = msg.delivery_time
        for inst in charts:
            if not inst.active:
                continue
            cands = inst.definition._messages[inst.state].get(kind)
            if not cands:
                continue
            for tr in cands:
                if tr.guard is None or tr.guard(inst, t, msg):
                    self._take(inst, tr, t, msg)
                    fired += 1
                    break
        return fired

    def notify(self, inst: ChartInstance, t: float) -> bool:
        """Re-evaluate condition triggers after an external state change."""
        if not inst.active:
            return False
        return self._check_conditions(inst, t)

    def _check_conditions(self, inst: ChartInstance, t: float) -> bool:
        conds = inst.definition._conditions[inst.state]
        for tr in conds:
            if tr.trigger.predicate(inst, t) and (tr.guard is None or tr.guard(inst, t, None)):
                self._take(inst, tr, t, None)
                return True
        return False


def instantiate(runtime: ChartRuntime, definition: ChartDefinition, agent: Any, t: float) -> ChartInstance:
    return runtime.instantiate(definition, agent, t)


def fire(inst: ChartInstance, transition: Transition, t: float, msg: Any = None) -> bool:
    return inst.runtime.fire(inst, transition, t, msg)


def deliver(charts: Sequence[ChartInstance], msg: Message) -> int:
    if not charts:
        return 0
    return charts[0].runtime.deliver(charts, msg)


def write_dot(definition: ChartDefinition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(definition.to_dot())
