"""Shared software watchdog: one thread kicks overrunning backend runs.

Every core arms one entry per backend run, tagged with the run's kick id.
When an entry comes due the watchdog compares the tag against the core's
current id under the core's kick lock and delivers a stop request only on
a match, so a kick aimed at a finished run can never interrupt a later
one.  Completed runs bump the id, turning their entries stale in place;
stale entries simply expire.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

from .simtime import SEC, WINDOW_RESOLUTION

log = logging.getLogger(__name__)

THREAD_NAME = "vpsim-watchdog"


class WatchdogError(RuntimeError):
    pass


class KickTarget(Protocol):
    """What the watchdog needs from a core: an id cell, its lock, a stopper."""

    kick_id: int
    kick_lock: threading.Lock

    def deliver_stop(self) -> None: ...


@dataclass(order=True)
class _Entry:
    fire_at: float
    seq: int
    target: KickTarget = field(compare=False)
    kick_id: int = field(compare=False)


class Watchdog:
    """Deadline-ordered kick queue served by a single waiting thread."""

    def __init__(self, resolution: int = WINDOW_RESOLUTION) -> None:
        self.resolution_s = resolution / SEC
        self._cv = threading.Condition()
        self._heap: list[_Entry] = []
        self._pending: set[tuple[int, int]] = set()
        self._seq = itertools.count()
        self._stopping = False
        self._thread: threading.Thread | None = None
        self.fired_count = 0
        self.stale_count = 0

    def start(self) -> None:
        if self._thread is not None:
            raise WatchdogError("watchdog already started")
        self._stopping = False
        self._thread = threading.Thread(target=self._serve, name=THREAD_NAME, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        thread = self._thread
        if thread is None:
            return
        with self._cv:
            self._stopping = True
            self._cv.notify_all()
        thread.join()
        self._thread = None

    def __enter__(self) -> Watchdog:
        self.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def schedule_kick(self, target: KickTarget, kick_id: int, window: int) -> None:
        """Arm a kick for (target, kick_id) `window` ticks of wall clock from now.

        window 0 makes the kick eligible immediately.  Scheduling a second
        entry for the same (target, kick_id) is a caller bug.
        """
        if window < 0:
            raise WatchdogError(f"window must be non-negative, got {window}")
        key = (id(target), kick_id)
        entry = _Entry(time.monotonic() + window / SEC, next(self._seq), target, kick_id)
        with self._cv:
            if key in self._pending:
                raise WatchdogError(f"kick already pending for kick_id {kick_id}")
            self._pending.add(key)
            heapq.heappush(self._heap, entry)
            self._cv.notify()

    def kick(self, target: KickTarget, kick_id: int) -> bool:
        """Deliver a stop to target iff kick_id is still its current id."""
        with target.kick_lock:
            if target.kick_id != kick_id:
                self.stale_count += 1
                return False
            target.deliver_stop()
        self.fired_count += 1
        return True

    def bump_id(self, target: KickTarget) -> int:
        """Advance the target's kick id; called after each backend run returns."""
        with target.kick_lock:
            target.kick_id += 1
            return target.kick_id

    def _serve(self) -> None:
        while True:
            with self._cv:
                while not self._stopping:
                    if not self._heap:
                        self._cv.wait()
                        continue
                    delay = self._heap[0].fire_at - time.monotonic()
                    if delay <= 0:
                        break
                    self._cv.wait(delay)
                if self._stopping:
                    return
                entry = heapq.heappop(self._heap)
                self._pending.discard((id(entry.target), entry.kick_id))
            # Kick outside the queue lock; it takes the target's kick lock.
            self.kick(entry.target, entry.kick_id)
