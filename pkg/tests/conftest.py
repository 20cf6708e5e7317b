"""Shared fixtures: toy guest programs, platform wiring, image files."""

from __future__ import annotations

from pathlib import Path

import pytest

from vpsim import ImageSpec, PlatformConfig, Watchdog, interp

RAM_BASE = 0x4000_0000
IRQCTL_BASE = 0x0800_0000
UART_BASE = 0x0900_0000
TIMER_BASE = 0x0901_0000
RTC_BASE = 0x0902_0000

IRQ_ENABLE = IRQCTL_BASE + 0x00
IRQ_PENDING = IRQCTL_BASE + 0x08
IRQ_CLAIM = IRQCTL_BASE + 0x10
IRQ_COMPLETE = IRQCTL_BASE + 0x18

TIMER_COMPARE = TIMER_BASE + 0x00
TIMER_CONTROL = TIMER_BASE + 0x08
TIMER_PERIOD = TIMER_BASE + 0x10
TIMER_STATUS = TIMER_BASE + 0x18

UART_DATA = UART_BASE + 0x0


def addr_of(index: int, base: int = RAM_BASE) -> int:
    return base + 8 * index


def prog_countdown(n: int) -> bytes:
    """LDI; n * (ADDI -1; BNZ) then HALT: executes 1 + 2n instructions."""
    return interp.assemble([
        interp.ldi(0, n),
        interp.addi(0, 0xFFFF_FFFF),
        interp.bnz(0, addr_of(1)),
        interp.halt(),
    ])


def prog_busy() -> bytes:
    """Endless increment loop; 2 instructions per iteration after setup."""
    return interp.assemble([
        interp.ldi(1, 1),
        interp.addi(0, 1),
        interp.bnz(1, addr_of(1)),
    ])


def prog_uart(message: bytes, uart: int = UART_DATA) -> bytes:
    """Write each byte of `message` to the UART data register, then halt."""
    code = []
    for byte in message:
        code.append(interp.ldi(2, byte))
        code.append(interp.st(2, uart))
    code.append(interp.halt())
    return interp.assemble(code)


def prog_wfi_idle(
    wakes: int,
    period_ticks: int,
    first_compare: int | None = None,
    counter: int = RAM_BASE + 0x10_0000,
) -> bytes:
    """Program the timer, then `wakes` rounds of {WFI; count; ack}, then halt.

    The handler increments a RAM word at `counter` so guest-visible progress
    is observable from outside.  The timer is disabled before the final HALT
    so the platform drains cleanly.
    """
    first = period_ticks if first_compare is None else first_compare
    code = [
        interp.ldi(1, 1),
        interp.st(1, IRQ_ENABLE),          # enable controller line 0
        interp.ldi(2, period_ticks),
        interp.st(2, TIMER_PERIOD),
        interp.ldi(2, first),
        interp.st(2, TIMER_COMPARE),
        interp.ldi(3, 3),
        interp.st(3, TIMER_CONTROL),       # enable | periodic
        interp.ldi(0, wakes),
    ]
    loop = len(code)
    code += [
        interp.wfi(),
        interp.ld(4, counter),
        interp.addi(4, 1),
        interp.st(4, counter),             # counter += 1
        interp.ldi(5, 1),
        interp.st(5, TIMER_STATUS),        # ack: lowers the line
        interp.addi(0, 0xFFFF_FFFF),
        interp.bnz(0, addr_of(loop)),
    ]
    code += [
        interp.ldi(6, 0),
        interp.st(6, TIMER_CONTROL),       # disable before halting
        interp.halt(),
    ]
    return interp.assemble(code)


def idle_forever_block(start_index: int) -> list[bytes]:
    """An idle function: {WFI; ack timer; loop}. Starts at instruction slot start_index."""
    return [
        interp.wfi(),
        interp.ldi(5, 1),
        interp.st(5, TIMER_STATUS),
        interp.bnz(5, addr_of(start_index)),
    ]


@pytest.fixture
def watchdog():
    with Watchdog() as dog:
        yield dog


@pytest.fixture
def make_image(tmp_path: Path):
    counter = iter(range(10_000))

    def _write(blob: bytes, suffix: str = ".bin") -> Path:
        path = tmp_path / f"guest{next(counter)}{suffix}"
        path.write_bytes(blob)
        return path

    return _write


@pytest.fixture
def make_config(make_image):
    def _config(program: bytes, **overrides) -> PlatformConfig:
        image = make_image(program)
        defaults = dict(
            cores=1,
            clock_hz=[1_000_000],
            images=[ImageSpec(image, "flat", RAM_BASE)],
            max_sim_time=10**12,
        )
        defaults.update(overrides)
        return PlatformConfig(**defaults)

    return _config
