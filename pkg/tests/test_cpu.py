"""Core quantum protocol: arming, accounting, exit classification."""

from __future__ import annotations

import logging
import threading
import time

import pytest

from vpsim.backend import Backend, ExitKind, RunResult
from vpsim.cpu import Core
from vpsim.elf import SymbolRecord
from vpsim.idle import HitKind, IdleAnnotation
from vpsim.simtime import SEC, budget_to_window, cycles_to_ticks
from vpsim.watchdog import Watchdog

CLOCK = 1_000_000


class ScriptedBackend(Backend):
    """Replays canned run results and records every protocol call."""

    exact_counts = True
    isa = "toy"
    isa_width = 8

    def __init__(self, log: list, script: list | None = None) -> None:
        self.log = log
        self.script = list(script or [])
        self.pending: frozenset[int] = frozenset()
        self.pc = 0
        self.stopped = False
        self.breakpoints: set[int] = set()

    def run(self, budget_hint: int | None) -> RunResult:
        self.log.append(("run", budget_hint, self.stopped))
        item = self.script.pop(0)
        return item(self) if callable(item) else item

    def request_stop(self) -> None:
        self.stopped = True

    def clear_stop(self) -> None:
        self.stopped = False
        self.log.append(("clear_stop",))

    def set_pending_irqs(self, lines: frozenset[int]) -> None:
        self.pending = lines
        self.log.append(("pending", lines))

    def get_pc(self) -> int:
        return self.pc

    def set_pc(self, pc: int) -> None:
        self.pc = pc
        self.log.append(("set_pc", pc))

    def read_reg(self, index: int) -> int:
        return 0

    def write_reg(self, index: int, value: int) -> None:
        pass

    def map_guest_memory(self, grant, base=None) -> None:
        pass

    def unmap_grant(self, grant) -> None:
        pass

    def insert_breakpoint(self, address: int) -> None:
        self.breakpoints.add(address)
        self.log.append(("insert_bp", address))

    def remove_breakpoint(self, address: int) -> None:
        self.breakpoints.discard(address)
        self.log.append(("remove_bp", address))

    def resume_over_breakpoint(self) -> None:
        self.log.append(("resume_bp",))


class RecordingWatchdog:
    """Stands in for the watchdog to capture arming values."""

    def __init__(self, log: list) -> None:
        self.log = log

    def schedule_kick(self, target, kick_id: int, window: int) -> None:
        self.log.append(("arm", kick_id, window))

    def bump_id(self, target) -> int:
        target.kick_id += 1
        self.log.append(("bump", target.kick_id))
        return target.kick_id


def make_core(script: list) -> tuple[Core, ScriptedBackend, list]:
    log: list = []
    backend = ScriptedBackend(log, script)
    core = Core(0, CLOCK, backend, RecordingWatchdog(log))
    return core, backend, log


def exhausted(n: int) -> RunResult:
    return RunResult(ExitKind.BUDGET_EXHAUSTED, n)


class TestProtocolOrder:
    def test_one_run_per_call_in_order(self) -> None:
        core, backend, log = make_core([exhausted(10)])
        backend.stopped = True  # residual stop from a previous segment
        core.raise_irq(3)
        segment = core.simulate(10)
        assert segment.consumed == 10
        window = budget_to_window(10, CLOCK)
        assert log == [
            ("clear_stop",),
            ("arm", 0, window),
            ("pending", frozenset({3})),
            ("run", 10, False),  # the stale stop was cleared before running
            ("bump", 1),
        ]

    def test_kick_id_advances_once_per_segment(self) -> None:
        core, _, _ = make_core([exhausted(1), exhausted(1), exhausted(1)])
        for expected in (1, 2, 3):
            core.simulate(1)
            assert core.kick_id == expected

    def test_window_matches_budget_arithmetic(self) -> None:
        for budget in (1, 99, 100, 101, 10_000):
            core, _, log = make_core([exhausted(budget)])
            core.simulate(budget)
            arm = next(entry for entry in log if entry[0] == "arm")
            assert arm[2] == budget_to_window(budget, CLOCK)

    def test_negative_budget_rejected(self) -> None:
        core, _, _ = make_core([])
        with pytest.raises(ValueError, match="non-negative"):
            core.simulate(-1)

    def test_bad_clock_rejected(self) -> None:
        with pytest.raises(ValueError, match="clock"):
            Core(0, 0, ScriptedBackend([]), RecordingWatchdog([]))


class TestAccounting:
    def test_exact_counts_accumulate(self) -> None:
        core, _, _ = make_core([exhausted(7), exhausted(5)])
        first = core.simulate(10)
        assert first.consumed == 7
        assert first.duration == cycles_to_ticks(7, CLOCK)
        second = core.simulate(10)
        assert core.state.instruction_counter == 12
        assert core.state.local_offset == second.duration
        assert core.state.max_offset == first.duration

    def test_spurious_kick_consumes_nothing(self) -> None:
        core, _, _ = make_core([RunResult(ExitKind.KICKED, 0)])
        segment = core.simulate(100)
        assert segment.exit is ExitKind.KICKED
        assert segment.consumed == 0
        assert segment.duration == 0
        assert core.kick_id == 1

    def test_wall_clock_estimate_when_counts_unknown(self) -> None:
        def slow_run(backend: ScriptedBackend) -> RunResult:
            time.sleep(0.002)
            return RunResult(ExitKind.KICKED, None)

        core, _, _ = make_core([slow_run])
        budget = 100_000  # 100 ms at 1 MHz, far beyond the sleep
        segment = core.simulate(budget)
        assert 0 < segment.consumed <= budget
        assert segment.duration == cycles_to_ticks(segment.consumed, CLOCK)

    def test_wall_clock_estimate_capped_at_budget(self) -> None:
        def overrun(backend: ScriptedBackend) -> RunResult:
            time.sleep(0.005)
            return RunResult(ExitKind.KICKED, None)

        core, _, _ = make_core([overrun])
        segment = core.simulate(10)  # 10 us of budget, 5 ms of wall
        assert segment.consumed == 10


class TestInterrupts:
    def test_pending_set_tracks_levels(self) -> None:
        core, _, _ = make_core([])
        core.raise_irq(2)
        core.raise_irq(5)
        core.raise_irq(2, level=False)
        assert core.pending_irqs() == frozenset({5})

    def test_wake_hook_fires_on_raise_only(self) -> None:
        core, _, _ = make_core([])
        wakes: list[int] = []
        core.wake_hook = lambda c, line: wakes.append(line)
        core.raise_irq(4)
        core.raise_irq(4, level=False)
        assert wakes == [4]

    def test_line_range_checked(self) -> None:
        core, _, _ = make_core([])
        with pytest.raises(ValueError, match="line 32"):
            core.raise_irq(32)


class TestBreakpointClassification:
    IDLE = IdleAnnotation(SymbolRecord("cpu_do_idle", 0x1000, 24, True), 0x1008, "toy")

    def test_annotated_hit_retires_the_wfi(self) -> None:
        core, backend, log = make_core([RunResult(ExitKind.BREAKPOINT, 5, pc=0x1008)])
        core.arm_annotation(self.IDLE)
        assert ("insert_bp", 0x1008) in log
        segment = core.simulate(100)
        assert segment.exit is ExitKind.IDLE_HINT
        assert segment.hit is HitKind.IDLE_HINT
        assert segment.consumed == 6  # the trapped WFI counts as retired
        assert ("set_pc", 0x1008 + 8) in log

    def test_user_breakpoint_passes_through(self) -> None:
        core, _, log = make_core([RunResult(ExitKind.BREAKPOINT, 3, pc=0x2000)])
        core.insert_breakpoint(0x2000)
        segment = core.simulate(100)
        assert segment.exit is ExitKind.BREAKPOINT
        assert segment.hit is HitKind.USER_BREAKPOINT
        assert segment.consumed == 3
        assert not any(entry[0] == "set_pc" for entry in log)

    def test_unattributed_hit_is_spurious(self, caplog: pytest.LogCaptureFixture) -> None:
        core, _, _ = make_core([RunResult(ExitKind.BREAKPOINT, 1, pc=0x3000)])
        with caplog.at_level(logging.WARNING):
            segment = core.simulate(100)
        assert segment.hit is HitKind.SPURIOUS
        assert "spurious breakpoint" in caplog.text

    def test_duplicate_user_breakpoint_rejected(self) -> None:
        core, _, _ = make_core([])
        core.insert_breakpoint(0x2000)
        with pytest.raises(ValueError, match="already set"):
            core.insert_breakpoint(0x2000)

    def test_remove_missing_breakpoint_warns(self, caplog: pytest.LogCaptureFixture) -> None:
        core, backend, _ = make_core([])
        with caplog.at_level(logging.WARNING):
            core.remove_breakpoint(0x4000)
        assert "no breakpoint" in caplog.text
        assert backend.breakpoints == set()


class TestRealWatchdogIntegration:
    def test_blocking_run_is_kicked_within_window(self) -> None:
        log: list = []

        class BlockingBackend(ScriptedBackend):
            def __init__(self) -> None:
                super().__init__(log)
                self.stop_event = threading.Event()

            def run(self, budget_hint: int | None) -> RunResult:
                assert self.stop_event.wait(5.0), "watchdog never kicked"
                return RunResult(ExitKind.KICKED, 3)

            def request_stop(self) -> None:
                self.stop_event.set()

        backend = BlockingBackend()
        with Watchdog() as dog:
            core = Core(0, CLOCK, backend, dog)
            budget = 1000  # 1 ms window at 1 MHz
            started = time.monotonic()
            segment = core.simulate(budget)
            elapsed = time.monotonic() - started
            assert dog.fired_count == 1
        assert segment.exit is ExitKind.KICKED
        assert segment.consumed == 3
        assert elapsed <= budget_to_window(budget, CLOCK) / SEC + 0.050
