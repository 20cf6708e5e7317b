"""Discrete-event kernel: global time, event queue, coordinator context.

All device models run on a single coordinator context (the thread driving
the event loop).  Decoupled worker contexts never touch models directly;
they hand work over via execute_on_coordinator or, for the platform's
core scheduling, via the report channel in vpsim.platform.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from .simtime import MAX_TIME, check_time

log = logging.getLogger(__name__)

# Queue ordering lanes: scheduled events sort before per-core actions that
# carry the same deadline.  Core lanes are 1 + core index.
EVENT_LANE = 0


class KernelError(RuntimeError):
    pass


class DeadlockError(KernelError):
    """Every process is suspended and no event can ever wake one."""

    def __init__(self, idle_cores: list[int]):
        self.idle_cores = idle_cores
        names = ", ".join(str(c) for c in idle_cores)
        super().__init__(f"deadlock: all cores idle ({names}), event queue empty")


class ShutdownError(KernelError):
    """Raised for coordinator requests submitted after the kernel stopped."""


@dataclass
class EventHandle:
    deadline: int
    action: Callable[[], None]
    cancelled: bool = False


@dataclass
class CoordinatorRequest:
    """A unit of work a worker context asks the coordinator to run."""

    origin: int
    payload: Callable[[], Any]
    done: threading.Event = field(default_factory=threading.Event)
    result: Any = None
    error: BaseException | None = None


class Kernel:
    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, int, EventHandle]] = []
        self._seq = itertools.count()
        self._shutdown = False
        self._coordinator_tid: int | None = None
        self._inbox: queue.SimpleQueue[CoordinatorRequest] = queue.SimpleQueue()
        # Parked cores waiting for an interrupt: id -> wake callback(line).
        self._parked: dict[int, Callable[[int], None]] = {}

    # -- coordinator identity -------------------------------------------------

    def claim_coordinator(self) -> None:
        """Bind the coordinator context to the calling thread."""
        self._coordinator_tid = threading.get_ident()

    def on_coordinator(self) -> bool:
        return threading.get_ident() == self._coordinator_tid

    def assert_coordinator(self, what: str) -> None:
        if self._coordinator_tid is None:
            self._coordinator_tid = threading.get_ident()
        elif not self.on_coordinator():
            raise KernelError(f"{what} invoked off the coordinator context")

    # -- event queue ----------------------------------------------------------

    def schedule(self, at: int, action: Callable[[], None], lane: int = EVENT_LANE) -> EventHandle:
        """Schedule action at absolute time `at`. Ties pop in insertion order."""
        check_time(at)
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} before current time {self.now}")
        handle = EventHandle(at, action)
        heapq.heappush(self._queue, (at, lane, next(self._seq), handle))
        return handle

    def schedule_after(self, delay: int, action: Callable[[], None]) -> EventHandle:
        return self.schedule(self.now + delay, action)

    def cancel(self, handle: EventHandle) -> None:
        handle.cancelled = True

    def peek_deadline(self) -> int | None:
        """Earliest live event deadline, or None when the queue is empty."""
        while self._queue:
            deadline, _, _, handle = self._queue[0]
            if handle.cancelled:
                heapq.heappop(self._queue)
                continue
            return deadline
        return None

    def pop_due(self, limit: int) -> EventHandle | None:
        """Pop the next live event with deadline <= limit, advancing now."""
        while self._queue:
            deadline, _, _, handle = self._queue[0]
            if handle.cancelled:
                heapq.heappop(self._queue)
                continue
            if deadline > limit:
                return None
            heapq.heappop(self._queue)
            assert deadline >= self.now, "event queue yielded a stale deadline"
            self.now = deadline
            return handle
        return None

    def run_until(self, t: int) -> int:
        """Execute every event with deadline <= t in order; returns final time.

        Global time lands on the last executed deadline; an empty queue
        leaves it unchanged.
        """
        check_time(t)
        self.assert_coordinator("run_until")
        while True:
            handle = self.pop_due(t)
            if handle is None:
                return self.now
            handle.action()

    def run(self) -> int:
        """Drain the event queue completely (standalone use and tests)."""
        return self.run_until(MAX_TIME)

    def advance_to(self, t: int) -> None:
        """run_until(t), then pin global time at t (quantum fold-in)."""
        self.run_until(t)
        if t > self.now:
            self.now = t

    # -- coordinator request channel -------------------------------------------

    def execute_on_coordinator(self, origin: int, payload: Callable[[], Any]) -> Any:
        """Run payload on the coordinator context and return its result.

        Called from the coordinator it executes inline; from a worker it
        enqueues a request and blocks on its completion latch.  Requests are
        served in arrival order whenever the coordinator polls the inbox.
        """
        if self._shutdown:
            raise ShutdownError("kernel is shut down")
        if self.on_coordinator():
            return payload()
        request = CoordinatorRequest(origin, payload)
        self._inbox.put(request)
        request.done.wait()
        if isinstance(request.error, ShutdownError):
            raise request.error
        if request.error is not None:
            raise KernelError(f"coordinator payload from core {origin} failed") from request.error
        return request.result

    def drain_requests(self) -> int:
        """Serve queued coordinator requests in arrival order."""
        self.assert_coordinator("drain_requests")
        served = 0
        while True:
            try:
                request = self._inbox.get_nowait()
            except queue.Empty:
                return served
            self._serve(request)
            served += 1

    def _serve(self, request: CoordinatorRequest) -> None:
        try:
            if self._shutdown:
                raise ShutdownError("kernel is shut down")
            request.result = request.payload()
        except BaseException as exc:  # propagated to the waiting worker
            request.error = exc
        finally:
            request.done.set()

    def shutdown(self) -> None:
        """Fail all queued and future coordinator requests."""
        self._shutdown = True
        while True:
            try:
                request = self._inbox.get_nowait()
            except queue.Empty:
                break
            request.error = ShutdownError("kernel is shut down")
            request.done.set()

    # -- idle suspension --------------------------------------------------------

    def park(self, core_id: int, wake: Callable[[int], None]) -> None:
        """Suspend a core until wake_core; consumes no events meanwhile."""
        self.assert_coordinator("park")
        if core_id in self._parked:
            raise KernelError(f"core {core_id} is already parked")
        self._parked[core_id] = wake

    def is_parked(self, core_id: int) -> bool:
        return core_id in self._parked

    def parked_cores(self) -> list[int]:
        return sorted(self._parked)

    def wake_core(self, core_id: int, line: int) -> bool:
        """Resume a parked core at the current time; returns False if absent."""
        wake = self._parked.pop(core_id, None)
        if wake is None:
            return False
        wake(line)
        return True
