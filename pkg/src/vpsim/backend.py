"""Execution backend contract shared by the interpreter and KVM backends."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum, auto

from .bus import DmiGrant, TxKind


class ExitKind(Enum):
    MMIO = auto()
    BREAKPOINT = auto()
    IDLE_HINT = auto()
    KICKED = auto()
    BUDGET_EXHAUSTED = auto()
    HALTED = auto()
    BACKEND_ERROR = auto()


@dataclass
class MmioAccess:
    """Trapped guest access awaiting bus service.

    For writes `data` carries the payload.  For reads the servicer fills
    `data` before the backend resumes; the backend then completes the
    architectural effects of the trapped instruction.
    """

    kind: TxKind
    address: int
    size: int
    data: bytearray | None = None


@dataclass
class RunResult:
    exit: ExitKind
    instructions: int | None  # exact count, or None when only wall clock is known
    mmio: MmioAccess | None = None
    pc: int | None = None
    detail: str = ""


class Backend(ABC):
    """One guest core's execution engine.

    `run` executes guest code until the budget hint is spent or an exit
    condition occurs, and must honour request_stop within one instruction
    (interpreter) or one host preemption (hardware).  Guest memory is
    reached through DMI grants registered with map_guest_memory; accesses
    outside every mapping trap out as MMIO.
    """

    #: True when run() reports exact instruction counts.
    exact_counts: bool = True
    #: ISA tag used by the idle annotator to pick the WFI byte pattern.
    isa: str = "toy"
    #: Instruction width in bytes (resume point past an annotated WFI).
    isa_width: int = 8

    @abstractmethod
    def run(self, budget_hint: int | None) -> RunResult: ...

    @abstractmethod
    def request_stop(self) -> None: ...

    @abstractmethod
    def clear_stop(self) -> None: ...

    @abstractmethod
    def set_pending_irqs(self, lines: frozenset[int]) -> None: ...

    @abstractmethod
    def get_pc(self) -> int: ...

    @abstractmethod
    def set_pc(self, pc: int) -> None: ...

    @abstractmethod
    def read_reg(self, index: int) -> int: ...

    @abstractmethod
    def write_reg(self, index: int, value: int) -> None: ...

    @abstractmethod
    def map_guest_memory(self, grant: DmiGrant, base: int | None = None) -> None: ...

    @abstractmethod
    def unmap_grant(self, grant: DmiGrant) -> None: ...

    @abstractmethod
    def insert_breakpoint(self, address: int) -> None: ...

    @abstractmethod
    def remove_breakpoint(self, address: int) -> None: ...

    @abstractmethod
    def resume_over_breakpoint(self) -> None:
        """Arm a one-shot pass over the breakpoint at the current pc."""

    def close(self) -> None:
        """Release host resources (file descriptors, mapped pages)."""
