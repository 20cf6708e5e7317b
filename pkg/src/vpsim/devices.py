"""Device models: RAM, UART, timer, interrupt controller, RTC.

Register peripherals accept only size-4 or size-8 accesses aligned to the
register offset; anything else is a device error.  64-bit registers also
accept 4-byte half accesses at +0 (low) and +4 (high).  RAM accepts any
transaction size and alignment.  All values are little-endian.
"""

from __future__ import annotations

import logging
import mmap
from collections import deque
from typing import IO, Callable

from .bus import Transaction, TxKind, TxStatus
from .kernel import EventHandle, Kernel

log = logging.getLogger(__name__)

SPURIOUS_LINE = 0xFFFF_FFFF


class Ram:
    """Byte-addressable RAM backed by an anonymous mmap (page aligned for DMI)."""

    def __init__(self, name: str, size: int) -> None:
        if size <= 0:
            raise ValueError(f"RAM size must be positive, got {size}")
        self.name = name
        self.size = size
        self._mem = mmap.mmap(-1, size)

    def handle(self, tx: Transaction, offset: int) -> TxStatus:
        if tx.kind is TxKind.READ:
            tx.data[:] = self._mem[offset : offset + tx.size]
        else:
            self._mem[offset : offset + tx.size] = tx.data
        return TxStatus.OK

    def dmi_region(self) -> memoryview:
        return memoryview(self._mem)

    def load(self, offset: int, blob: bytes) -> None:
        if offset < 0 or offset + len(blob) > self.size:
            raise ValueError(f"image [{offset:#x}, {offset + len(blob):#x}) outside {self.name}")
        self._mem[offset : offset + len(blob)] = blob

    def read(self, offset: int, size: int) -> bytes:
        return self._mem[offset : offset + size]


class Uart:
    """Transmit/receive register pair.

    data (+0x0): write transmits the low byte; read pops one rx byte or 0.
    status (+0x4): read-only, bit0 set while rx is non-empty.
    """

    OFF_DATA = 0x0
    OFF_STATUS = 0x4

    def __init__(self, name: str = "uart") -> None:
        self.name = name
        self.sink = bytearray()
        self.tx_log: list[tuple[int, int]] = []  # (origin core, byte)
        self._rx: deque[int] = deque()
        self._tees: list[IO[bytes]] = []

    def add_tee(self, stream: IO[bytes]) -> None:
        self._tees.append(stream)

    def push_rx(self, data: bytes) -> None:
        self._rx.extend(data)

    def sink_for(self, origin: int) -> bytes:
        return bytes(b for core, b in self.tx_log if core == origin)

    def handle(self, tx: Transaction, offset: int) -> TxStatus:
        if tx.size != 4 or offset not in (self.OFF_DATA, self.OFF_STATUS):
            return TxStatus.DEVICE_ERROR
        if offset == self.OFF_DATA:
            if tx.kind is TxKind.WRITE:
                byte = tx.value() & 0xFF
                self.sink.append(byte)
                self.tx_log.append((tx.origin, byte))
                for tee in self._tees:
                    tee.write(bytes([byte]))
                return TxStatus.OK
            tx.set_value(self._rx.popleft() if self._rx else 0)
            return TxStatus.OK
        if tx.kind is TxKind.WRITE:
            return TxStatus.DEVICE_ERROR
        tx.set_value(1 if self._rx else 0)
        return TxStatus.OK


class MmTimer:
    """One-shot/periodic compare timer in simulation ticks.

    compare (+0x00, 64-bit): absolute expiry time in ticks.
    control (+0x08, 32-bit): bit0 enable, bit1 periodic.
    period  (+0x10, 64-bit): periodic reload added to compare on expiry.
    status  (+0x18, 32-bit): read bit0 = fired; write 1 acks (lowers the line).

    While enabled exactly one expiry event is pending.  Writing compare in
    the past with enable set fires immediately.  One-shot expiry clears the
    enable bit; periodic expiry advances compare by period and rearms.
    """

    OFF_COMPARE = 0x00
    OFF_CONTROL = 0x08
    OFF_PERIOD = 0x10
    OFF_STATUS = 0x18

    CTRL_ENABLE = 1 << 0
    CTRL_PERIODIC = 1 << 1

    def __init__(
        self,
        name: str,
        kernel: Kernel,
        set_line: Callable[[bool], None],
    ) -> None:
        self.name = name
        self.kernel = kernel
        self.set_line = set_line
        self.compare = 0
        self.control = 0
        self.period = 0
        self.fired = False
        self._event: EventHandle | None = None
        self.expiry_log: list[int] = []

    @property
    def enabled(self) -> bool:
        return bool(self.control & self.CTRL_ENABLE)

    @property
    def periodic(self) -> bool:
        return bool(self.control & self.CTRL_PERIODIC)

    def handle(self, tx: Transaction, offset: int) -> TxStatus:
        value = tx.value()
        if tx.size == 8 and offset in (self.OFF_COMPARE, self.OFF_PERIOD):
            if tx.kind is TxKind.WRITE:
                self._store64(offset, value)
            else:
                tx.set_value(self.compare if offset == self.OFF_COMPARE else self.period)
            return TxStatus.OK
        if tx.size != 4:
            return TxStatus.DEVICE_ERROR
        if offset in (self.OFF_COMPARE, self.OFF_COMPARE + 4, self.OFF_PERIOD, self.OFF_PERIOD + 4):
            base = self.OFF_COMPARE if offset < self.OFF_PERIOD else self.OFF_PERIOD
            current = self.compare if base == self.OFF_COMPARE else self.period
            if tx.kind is TxKind.READ:
                tx.set_value((current >> (32 if offset == base + 4 else 0)) & 0xFFFF_FFFF)
                return TxStatus.OK
            if offset == base:
                merged = (current & ~0xFFFF_FFFF) | value
            else:
                merged = (current & 0xFFFF_FFFF) | (value << 32)
            self._store64(base, merged)
            return TxStatus.OK
        if offset == self.OFF_CONTROL:
            if tx.kind is TxKind.READ:
                tx.set_value(self.control)
            else:
                self.control = value & (self.CTRL_ENABLE | self.CTRL_PERIODIC)
                self._rearm()
            return TxStatus.OK
        if offset == self.OFF_STATUS:
            if tx.kind is TxKind.READ:
                tx.set_value(1 if self.fired else 0)
            elif value & 1:
                self.fired = False
                self.set_line(False)
            return TxStatus.OK
        return TxStatus.DEVICE_ERROR

    def _store64(self, offset: int, value: int) -> None:
        if offset == self.OFF_COMPARE:
            self.compare = value
        else:
            self.period = value
        self._rearm()

    def _rearm(self) -> None:
        if self._event is not None:
            self.kernel.cancel(self._event)
            self._event = None
        if self.enabled:
            at = max(self.compare, self.kernel.now)
            self._event = self.kernel.schedule(at, self._expire)

    def _expire(self) -> None:
        self._event = None
        self.fired = True
        self.expiry_log.append(self.kernel.now)
        self.set_line(True)
        if self.periodic and self.period > 0:
            self.compare += self.period
            self._event = self.kernel.schedule(max(self.compare, self.kernel.now), self._expire)
        else:
            self.control &= ~self.CTRL_ENABLE


class IrqController:
    """Simplified interrupt controller: latch, enable mask, claim/complete.

    Semantics (the reference model in the tests mirrors this paragraph):
    a raise latches the line unconditionally and latched state clears only
    on claim.  The level forwarded to a line's target core is
    (enabled AND raw level); any change is pushed through raise_irq.  A
    claim read returns the lowest latched+enabled line not already active,
    clears its latch and marks it active until its id is written to
    complete; with nothing claimable it returns the spurious id.  Claim
    state does not gate level forwarding.

    enable  (+0x00, 32-bit RW): per-line enable mask.
    pending (+0x08, 32-bit RO): latched mask.
    claim   (+0x10, 32-bit RO): consume the highest-priority latched line.
    complete(+0x18, 32-bit WO): finish a claimed line id.
    target  (+0x100 + 8*line, 32-bit RW): destination core for the line.
    """

    OFF_ENABLE = 0x00
    OFF_PENDING = 0x08
    OFF_CLAIM = 0x10
    OFF_COMPLETE = 0x18
    OFF_TARGETS = 0x100

    def __init__(self, name: str, n_lines: int = 32) -> None:
        if not 1 <= n_lines <= 32:
            raise ValueError(f"line count must be 1..32, got {n_lines}")
        self.name = name
        self.n_lines = n_lines
        self.enabled = 0
        self.latched = 0
        self.active = 0
        self.raw = 0
        self.targets = [0] * n_lines
        self._cores: dict[int, Callable[[int, bool], None]] = {}
        self._forwarded = 0

    def bind_core(self, core_id: int, raise_irq: Callable[[int, bool], None]) -> None:
        self._cores[core_id] = raise_irq

    def set_target(self, line: int, core_id: int) -> None:
        self._check_line(line)
        self.targets[line] = core_id
        self._push_levels()

    def set_line(self, line: int, level: bool) -> None:
        """Device-side line input; latches on raise, forwards effective level."""
        self._check_line(line)
        bit = 1 << line
        if level:
            self.raw |= bit
            self.latched |= bit
        else:
            self.raw &= ~bit
        self._push_levels()

    def claim(self) -> int:
        claimable = self.latched & self.enabled & ~self.active
        if claimable == 0:
            return SPURIOUS_LINE
        line = (claimable & -claimable).bit_length() - 1
        self.latched &= ~(1 << line)
        self.active |= 1 << line
        return line

    def complete(self, line: int) -> None:
        if 0 <= line < self.n_lines:
            self.active &= ~(1 << line)

    def handle(self, tx: Transaction, offset: int) -> TxStatus:
        if tx.size != 4:
            return TxStatus.DEVICE_ERROR
        if offset >= self.OFF_TARGETS:
            line, rem = divmod(offset - self.OFF_TARGETS, 8)
            if rem != 0 or line >= self.n_lines:
                return TxStatus.DEVICE_ERROR
            if tx.kind is TxKind.READ:
                tx.set_value(self.targets[line])
            else:
                self.set_target(line, tx.value())
            return TxStatus.OK
        if offset == self.OFF_ENABLE:
            if tx.kind is TxKind.READ:
                tx.set_value(self.enabled)
            else:
                self.enabled = tx.value() & ((1 << self.n_lines) - 1)
                self._push_levels()
            return TxStatus.OK
        if offset == self.OFF_PENDING and tx.kind is TxKind.READ:
            tx.set_value(self.latched)
            return TxStatus.OK
        if offset == self.OFF_CLAIM and tx.kind is TxKind.READ:
            tx.set_value(self.claim())
            return TxStatus.OK
        if offset == self.OFF_COMPLETE and tx.kind is TxKind.WRITE:
            self.complete(tx.value())
            return TxStatus.OK
        return TxStatus.DEVICE_ERROR

    def _check_line(self, line: int) -> None:
        if not 0 <= line < self.n_lines:
            raise ValueError(f"{self.name}: line {line} outside 0..{self.n_lines - 1}")

    def _push_levels(self) -> None:
        effective = self.enabled & self.raw
        changed = effective ^ self._forwarded
        self._forwarded = effective
        for line in range(self.n_lines):
            bit = 1 << line
            if changed & bit:
                raise_irq = self._cores.get(self.targets[line])
                if raise_irq is not None:
                    raise_irq(line, bool(effective & bit))


class Rtc:
    """Read-only wall of simulation time: +0x0 holds the current time in ns."""

    OFF_TIME = 0x0

    def __init__(self, name: str, kernel: Kernel) -> None:
        self.name = name
        self.kernel = kernel

    def handle(self, tx: Transaction, offset: int) -> TxStatus:
        if tx.kind is TxKind.WRITE:
            return TxStatus.DEVICE_ERROR
        now_ns = self.kernel.now // 1000
        if tx.size == 8 and offset == self.OFF_TIME:
            tx.set_value(now_ns & (2**64 - 1))
            return TxStatus.OK
        if tx.size == 4 and offset in (self.OFF_TIME, self.OFF_TIME + 4):
            shift = 32 if offset == self.OFF_TIME + 4 else 0
            tx.set_value((now_ns >> shift) & 0xFFFF_FFFF)
            return TxStatus.OK
        return TxStatus.DEVICE_ERROR
