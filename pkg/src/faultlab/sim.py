"""Deterministic discrete-event simulation core.

The clock is virtual and counts milliseconds as floats. Work is expressed
as generator processes driven by the event loop. A process may yield:

* a number: sleep that many virtual milliseconds; ``None`` is sent back.
* a :class:`Completion`: wait for it to fire; ``(True, value)`` is sent back.
* ``(completion, limit_ms)``: wait at most ``limit_ms``; ``(False, None)``
  is sent back if the limit elapses first, otherwise ``(True, value)``.

Sub-processes compose with ``yield from``. Every resumption goes through
the event heap, and simultaneous events run in scheduling order, so a run
with a given seed replays identically.
"""

from __future__ import annotations

import heapq
import itertools
import random
from typing import Any, Callable, Generator

Process = Generator[Any, Any, Any]


class Completion:
    """One-shot event. Fires at most once and wakes everything waiting on it."""

    __slots__ = ("fired", "value", "_waiters")

    def __init__(self) -> None:
        self.fired = False
        self.value: Any = None
        self._waiters: list[Callable[[Any], None]] = []

    def fire(self, value: Any = None) -> None:
        if self.fired:
            raise RuntimeError("Completion fired twice")
        self.fired = True
        self.value = value
        waiters, self._waiters = self._waiters, []
        for cb in waiters:
            cb(value)

    def add_listener(self, cb: Callable[[Any], None]) -> None:
        if self.fired:
            cb(self.value)
        else:
            self._waiters.append(cb)


class Simulation:
    """Virtual-time event loop with a single seeded random stream."""

    def __init__(self, seed: int = 0) -> None:
        self.now = 0.0
        self.rng = random.Random(seed)
        self._heap: list[tuple[float, int, Callable, tuple]] = []
        self._seq = itertools.count()

    @property
    def now_s(self) -> float:
        return self.now / 1000.0

    def call_at(self, at_ms: float, fn: Callable, *args: Any) -> None:
        if at_ms < self.now:
            raise ValueError(f"cannot schedule into the past: {at_ms} < {self.now}")
        heapq.heappush(self._heap, (at_ms, next(self._seq), fn, args))

    def call_later(self, delay_ms: float, fn: Callable, *args: Any) -> None:
        if delay_ms < 0:
            raise ValueError(f"negative delay: {delay_ms}")
        self.call_at(self.now + delay_ms, fn, *args)

    def spawn(self, process: Process) -> Completion:
        """Start a process. The returned Completion fires with its return value."""
        done = Completion()
        self.call_later(0, self._advance, process, None, done)
        return done

    def run_until(self, t_ms: float) -> None:
        """Process every event due at or before ``t_ms``, then set the clock there."""
        if t_ms < self.now:
            raise ValueError(f"cannot run backwards: {t_ms} < {self.now}")
        while self._heap and self._heap[0][0] <= t_ms:
            at, _, fn, args = heapq.heappop(self._heap)
            self.now = at
            fn(*args)
        self.now = t_ms

    def run_for(self, delay_ms: float) -> None:
        self.run_until(self.now + delay_ms)

    def _advance(self, process: Process, send: Any, done: Completion) -> None:
        try:
            item = process.send(send)
        except StopIteration as stop:
            done.fire(stop.value)
            return
        if isinstance(item, (int, float)):
            self.call_later(item, self._advance, process, None, done)
        elif isinstance(item, Completion):
            self._wait(item, None, process, done)
        elif isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], Completion):
            self._wait(item[0], item[1], process, done)
        else:
            raise TypeError(f"process yielded unsupported item: {item!r}")

    def _wait(self, comp: Completion, limit_ms: float | None, process: Process,
              done: Completion) -> None:
        state = {"resolved": False}

        def on_fire(value: Any) -> None:
            if state["resolved"]:
                return
            state["resolved"] = True
            self.call_later(0, self._advance, process, (True, value), done)

        def on_limit() -> None:
            if state["resolved"]:
                return
            state["resolved"] = True
            self.call_later(0, self._advance, process, (False, None), done)

        comp.add_listener(on_fire)
        if limit_ms is not None and not state["resolved"]:
            self.call_later(limit_ms, on_limit)
