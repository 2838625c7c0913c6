"""Continuous-time discrete-event scheduler and reproducible random streams.

Time is measured in years (float) from the start of the simulation, burn-in
included.  The queue orders events by ``(fire_time, sequence)`` where the
sequence is a monotone insertion counter, so simultaneous events run in the
order they were scheduled.

Random numbers come from named substreams.  Each substream is a Philox
counter-based generator keyed by ``(master_seed, realization, name)``, so the
``k``-th uniform drawn from a substream depends only on those three values and
``k``.  Extra draws on one substream never shift another.
"""

from __future__ import annotations

import bisect
import hashlib
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

STREAM_NAMES = (
    "demographics",
    "transmission",
    "vaccination",
    "fertility",
    "compliance",
    "initialization",
    "survey",
)

_BLOCK = 2048


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock (a model bug)."""


class SamplingError(ValueError):
    """A sampler was called with invalid parameters."""


def derive_key(master_seed: int, realization: int, name: str) -> int:
    digest = hashlib.blake2b(
        f"{int(master_seed)}/{int(realization)}/{name}".encode(), digest_size=16
    ).digest()
    return int.from_bytes(digest, "little")


class Substream:
    """Buffered uniform source with variate helpers.

    Every variate is built from the buffered uniforms, so ``draws`` (the number
    of uniforms consumed) is the draw index that positions the stream.
    """

    __slots__ = ("name", "_gen", "_buf", "_pos", "_consumed")

    def __init__(self, name: str, key: int):
        self.name = name
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._buf: list[float] = []
        self._pos = 0
        self._consumed = 0

    @property
    def draws(self) -> int:
        return self._consumed + self._pos

    def uniform(self) -> float:
        pos = self._pos
        if pos >= len(self._buf):
            self._consumed += len(self._buf)
            self._buf = self._gen.random(_BLOCK).tolist()
            pos = 0
        self._pos = pos + 1
        return self._buf[pos]

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def index(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise SamplingError("index() needs n >= 1")
        i = int(self.uniform() * n)
        return i if i < n else n - 1

    def exponential(self, rate: float) -> float:
        if not rate > 0.0:
            raise SamplingError(f"exponential rate must be > 0, got {rate!r}")
        return -math.log(1.0 - self.uniform()) / rate

    def categorical(self, weights: Sequence[float]) -> int:
        if len(weights) == 0:
            raise SamplingError("categorical weights are empty")
        cum = []
        total = 0.0
        for w in weights:
            if w < 0 or not math.isfinite(w):
                raise SamplingError(f"invalid categorical weight {w!r}")
            total += w
            cum.append(total)
        if total <= 0.0:
            raise SamplingError("categorical weights sum to zero")
        # first slot whose cumulative weight exceeds the draw: never a zero-weight slot
        i = bisect.bisect_right(cum, self.uniform() * total)
        return min(i, len(cum) - 1)

    def normal(self, mean: float = 0.0, sd: float = 1.0) -> float:
        # Box-Muller, one uniform pair per variate keeps the draw count fixed
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mean + sd * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def gamma(self, shape: float, scale: float) -> float:
        """Marsaglia-Tsang; integer shapes use a sum of exponentials."""
        if shape <= 0 or scale <= 0:
            raise SamplingError("gamma shape and scale must be > 0")
        if float(shape).is_integer() and shape <= 8:
            return scale * sum(-math.log(1.0 - self.uniform()) for _ in range(int(shape)))
        boost = 1.0
        if shape < 1.0:
            boost = self.uniform() ** (1.0 / shape)
            shape += 1.0
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = (1.0 + c * x) ** 3
            if v <= 0:
                continue
            u = 1.0 - self.uniform()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return scale * d * v * boost

    def beta(self, a: float, b: float) -> float:
        x = self.gamma(a, 1.0)
        y = self.gamma(b, 1.0)
        return x / (x + y)


class RngRegistry:
    """Named substreams for one realization."""

    def __init__(self, master_seed: int, realization_index: int = 0):
        if not 0 <= int(master_seed) < 2**64:
            raise SamplingError("master_seed must be a 64-bit unsigned integer")
        self.master_seed = int(master_seed)
        self.realization_index = int(realization_index)
        self._streams: dict[str, Substream] = {}

    def stream(self, name: str) -> Substream:
        s = self._streams.get(name)
        if s is None:
            s = Substream(name, derive_key(self.master_seed, self.realization_index, name))
            self._streams[name] = s
        return s

    __getitem__ = stream

    def draw_counts(self) -> dict[str, int]:
        return {k: v.draws for k, v in sorted(self._streams.items())}


def sample_exponential(stream: Substream, rate: float) -> float:
    return stream.exponential(rate)


def sample_categorical(stream: Substream, weights: Sequence[float]) -> int:
    return stream.categorical(weights)


@dataclass
class Event:
    """A pending action.  ``sequence`` is assigned by the queue."""

    fire_time: float
    action: Callable[..., Any]
    args: tuple = ()
    target: Any = None
    kind: str = "action"
    sequence: int = -1


class Message(NamedTuple):
    sender: int | None
    recipient: int
    kind: str
    delivery_time: float
    data: Any = None


@dataclass
class Engine:
    """Single-realization event loop.

    Heap entries are ``(fire_time, sequence, action, args)``; the sequence is
    unique so tuple comparison never reaches the callable.
    """

    now: float = 0.0
    processed: int = 0
    _heap: list = field(default_factory=list, repr=False)
    _seq: int = 0

    def schedule(self, event: Event) -> Event:
        if event.fire_time < self.now:
            raise SchedulingError(
                f"event {event.kind!r} scheduled at {event.fire_time} < clock {self.now}"
            )
        event.sequence = self._seq
        heapq.heappush(self._heap, (event.fire_time, self._seq, event.action, event.args))
        self._seq += 1
        return event

    def at(self, fire_time: float, action: Callable[..., Any], *args: Any) -> None:
        """Fast path of :meth:`schedule` without an Event object."""
        if fire_time < self.now:
            raise SchedulingError(f"event scheduled at {fire_time} < clock {self.now}")
        heapq.heappush(self._heap, (fire_time, self._seq, action, args))
        self._seq += 1

    def after(self, delay: float, action: Callable[..., Any], *args: Any) -> None:
        self.at(self.now + delay, action, *args)

    def __len__(self) -> int:
        return len(self._heap)

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def run_until(self, t_end: float) -> int:
        """Process every event with ``fire_time <= t_end``; the clock ends at ``t_end``."""
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before the clock {self.now}")
        heap = self._heap
        pop = heapq.heappop
        n = 0
        while heap and heap[0][0] <= t_end:
            t, _, action, args = pop(heap)
            self.now = t
            action(*args)
            n += 1
        self.now = t_end
        self.processed += n
        return n
