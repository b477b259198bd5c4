"""Deterministic discrete-event kernel.

Events are ordered by ``(time, seq)`` where ``seq`` is the insertion counter,
so simultaneous events fire in the order they were scheduled. Random draws
come from :class:`RngStream`, a counter-based generator keyed by
``(seed, stream name, draw index)``: a consumer's draws never depend on how
its events interleave with anybody else's.
"""

import csv
import hashlib
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import SimulationError


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    detail: str = field(compare=False, default="")
    action: Optional[Callable[[], None]] = field(compare=False, default=None, repr=False)
    cancelled: bool = field(compare=False, default=False)


@dataclass
class RunStats:
    final_time: float
    events_processed: int


class Simulation:
    """Event queue plus clock. One instance per run; not thread-safe."""

    def __init__(self, trace=False):
        self.now = 0.0
        self.events_processed = 0
        self.trace = [] if trace else None
        self._queue = []
        self._seq = itertools.count()
        self._halted = False

    def schedule(self, time, kind, action=None, detail=""):
        """Enqueue an event at absolute ``time``; returns a cancellable handle."""
        if not math.isfinite(time):
            raise SimulationError(f"event {kind!r} scheduled at non-finite time {time}")
        if time < self.now:
            raise SimulationError(
                f"event {kind!r} scheduled at t={time} before the clock (t={self.now})"
            )
        event = Event(float(time), next(self._seq), kind, detail, action)
        heapq.heappush(self._queue, event)
        return event

    def schedule_in(self, delay, kind, action=None, detail=""):
        return self.schedule(self.now + delay, kind, action, detail)

    def cancel(self, event):
        event.cancelled = True

    def halt(self):
        """Stop :meth:`run_until` after the event currently being dispatched."""
        self._halted = True

    def peek_time(self):
        self._drop_cancelled()
        return self._queue[0].time if self._queue else None

    def _drop_cancelled(self):
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)

    def step(self):
        """Dispatch the next live event and return it (``None`` if the queue is empty)."""
        self._drop_cancelled()
        if not self._queue:
            return None
        event = heapq.heappop(self._queue)
        if event.time < self.now:
            raise SimulationError(f"clock went backwards: {event.time} < {self.now}")
        self.now = event.time
        self.events_processed += 1
        if self.trace is not None:
            self.trace.append((event.time, event.seq, event.kind, event.detail))
        if event.action is not None:
            event.action()
        return event

    def run_until(self, stop=None):
        """Process events until ``stop`` or queue exhaustion.

        ``stop`` may be ``None`` (drain the queue), a time (events later than
        it stay queued) or a predicate called with the simulation after each
        event.
        """
        self._halted = False
        if stop is None or callable(stop):
            predicate = stop
            horizon = math.inf
        else:
            predicate = None
            horizon = float(stop)
        while not self._halted:
            t = self.peek_time()
            if t is None or t > horizon:
                break
            self.step()
            if predicate is not None and predicate(self):
                break
        return RunStats(self.now, self.events_processed)


def write_trace_csv(trace, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["time", "seq", "kind", "detail"])
    for time, seq, kind, detail in trace:
        writer.writerow([repr(time), seq, kind, detail])


def _stream_key(name):
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


class RngStream:
    """Counter-based random stream for one consumer.

    Draw ``i`` of stream ``name`` under ``seed`` is always the same numbers,
    regardless of what other streams did. Uses Philox with the key built from
    (seed, name) and the draw index in the counter.
    """

    def __init__(self, seed, name):
        self.seed = int(seed)
        self.name = name
        self._key = ((self.seed % 2**64) << 64) | _stream_key(name)
        self.index = 0

    def generator(self, index):
        bitgen = np.random.Philox(key=self._key, counter=index << 64)
        return np.random.Generator(bitgen)

    def next_generator(self):
        gen = self.generator(self.index)
        self.index += 1
        return gen

    def uniform(self):
        return float(self.next_generator().random())

    def normal(self, mean, stddev, size=None):
        return self.next_generator().normal(mean, stddev, size)

    def truncated_normal(self, mean, stddev):
        """One draw from N(mean, stddev) conditioned on being > 0."""
        if stddev == 0:
            return float(mean)
        gen = self.next_generator()
        while True:
            x = float(gen.normal(mean, stddev))
            if x > 0:
                return x
