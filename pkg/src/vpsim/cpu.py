"""Core model: drives one execution backend under the quantum protocol.

simulate() performs exactly one backend run: clear residual stop state,
arm the watchdog for the budget's wall-clock window, inject pending
interrupts, run, bump the kick id, then account consumed cycles either
from the backend's exact count or from measured wall clock.  Breakpoint
exits are classified against the idle annotation before they reach the
scheduler.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from .backend import Backend, ExitKind, MmioAccess, RunResult
from .idle import HitKind, IdleAnnotation, classify_hit
from .simtime import budget_to_window, cycles_to_ticks, elapsed_to_cycles
from .watchdog import Watchdog

log = logging.getLogger(__name__)


@dataclass
class CoreState:
    core_id: int
    clock_hz: int
    kick_id: int = 0
    instruction_counter: int = 0
    local_offset: int = 0  # ticks consumed by the most recent simulate call
    max_offset: int = 0
    pending_irqs: set[int] = field(default_factory=set)


@dataclass
class SegmentResult:
    """One simulate call: consumed cycles, their duration, classified exit."""

    consumed: int
    duration: int  # ticks
    exit: ExitKind
    mmio: MmioAccess | None = None
    pc: int | None = None
    hit: HitKind | None = None
    detail: str = ""


class Core:
    def __init__(
        self,
        core_id: int,
        clock_hz: int,
        backend: Backend,
        watchdog: Watchdog,
        n_irq_lines: int = 32,
    ) -> None:
        if clock_hz <= 0:
            raise ValueError(f"core {core_id}: clock must be positive")
        self.state = CoreState(core_id, clock_hz)
        self.backend = backend
        self.watchdog = watchdog
        self.n_irq_lines = n_irq_lines
        self.annotation: IdleAnnotation | None = None
        self.user_breakpoints: set[int] = set()
        self.kick_lock = threading.Lock()
        self._irq_lock = threading.Lock()
        # Set by the scheduler; called on a raise so parked cores resume.
        self.wake_hook: Callable[[Core, int], None] | None = None

    @property
    def core_id(self) -> int:
        return self.state.core_id

    @property
    def clock_hz(self) -> int:
        return self.state.clock_hz

    # -- KickTarget protocol -------------------------------------------------

    @property
    def kick_id(self) -> int:
        return self.state.kick_id

    @kick_id.setter
    def kick_id(self, value: int) -> None:
        self.state.kick_id = value

    def deliver_stop(self) -> None:
        self.backend.request_stop()

    # -- interrupts ------------------------------------------------------------

    def raise_irq(self, line: int, level: bool = True) -> None:
        """Level change on an interrupt line; high wakes a suspended core."""
        if not 0 <= line < self.n_irq_lines:
            raise ValueError(
                f"core {self.core_id}: line {line} outside 0..{self.n_irq_lines - 1}"
            )
        with self._irq_lock:
            if level:
                self.state.pending_irqs.add(line)
            else:
                self.state.pending_irqs.discard(line)
        if level and self.wake_hook is not None:
            self.wake_hook(self, line)

    def pending_irqs(self) -> frozenset[int]:
        with self._irq_lock:
            return frozenset(self.state.pending_irqs)

    # -- breakpoints -----------------------------------------------------------

    def insert_breakpoint(self, address: int) -> None:
        if address in self.user_breakpoints:
            raise ValueError(f"breakpoint already set at {address:#x}")
        self.user_breakpoints.add(address)
        self.backend.insert_breakpoint(address)

    def remove_breakpoint(self, address: int) -> None:
        if address not in self.user_breakpoints:
            log.warning("core %d: no breakpoint at %#x to remove", self.core_id, address)
            return
        self.user_breakpoints.discard(address)
        self.backend.remove_breakpoint(address)

    def arm_annotation(self, annotation: IdleAnnotation) -> None:
        self.annotation = annotation
        self.backend.insert_breakpoint(annotation.wfi_address)

    # -- the quantum step --------------------------------------------------------

    def simulate(self, budget: int) -> SegmentResult:
        """Run the backend for at most `budget` cycles; one backend run per call."""
        if budget < 0:
            raise ValueError(f"budget must be non-negative, got {budget}")
        state = self.state
        window = budget_to_window(budget, state.clock_hz)
        self.backend.clear_stop()  # residual stop hygiene: cleared as the run arms
        self.watchdog.schedule_kick(self, state.kick_id, window)
        self.backend.set_pending_irqs(self.pending_irqs())
        wall_start = time.perf_counter()
        result = self.backend.run(budget)
        elapsed = time.perf_counter() - wall_start
        self.watchdog.bump_id(self)
        exit_kind, hit, retired_wfi = self._classify(result)
        if result.instructions is not None:
            consumed = result.instructions + retired_wfi
        else:
            consumed = elapsed_to_cycles(elapsed, state.clock_hz, budget)
        state.instruction_counter += consumed
        state.local_offset = cycles_to_ticks(consumed, state.clock_hz)
        state.max_offset = max(state.max_offset, state.local_offset)
        return SegmentResult(
            consumed,
            state.local_offset,
            exit_kind,
            mmio=result.mmio,
            pc=result.pc,
            hit=hit,
            detail=result.detail,
        )

    def _classify(self, result: RunResult) -> tuple[ExitKind, HitKind | None, int]:
        if result.exit is not ExitKind.BREAKPOINT:
            return result.exit, None, 0
        assert result.pc is not None
        hit = classify_hit(result.pc, self.annotation, self.user_breakpoints)
        if hit is HitKind.IDLE_HINT:
            # The trap fires before the WFI executes; treat it as retired
            # and resume just past it.  The trap point is always short of
            # the budget, so the extra retirement cannot overrun it.
            self.backend.set_pc(result.pc + self.backend.isa_width)
            return ExitKind.IDLE_HINT, hit, 1
        return ExitKind.BREAKPOINT, hit, 0
