"""vpsim: a quantum-based multicore virtual platform simulator.

Cores execute guest code in bounded segments under a shared software
watchdog, devices live behind a transaction bus on a single coordinator
context, and an idle annotation suspends cores sitting in the guest's
idle loop.  Guests run either on a deterministic interpreter or, on
capable hosts, under hardware virtualization.
"""

from .backend import Backend, ExitKind, MmioAccess, RunResult
from .bus import Bus, BusError, DmiGrant, Transaction, TxKind, TxStatus, read_tx, write_tx
from .cpu import Core, CoreState, SegmentResult
from .devices import IrqController, MmTimer, Ram, Rtc, Uart
from .elf import ElfImage, ElfParseError, LoadSegment, SymbolRecord, parse_elf, parse_elf_symbols
from .idle import AnnotationError, HitKind, IdleAnnotation, build_annotation, find_idle_symbol, locate_wfi
from .interp import InterpreterBackend
from .kernel import DeadlockError, EventHandle, Kernel, ShutdownError
from .kvm import CapabilityError
from .platform import (
    ConfigError,
    ImageSpec,
    MemoryRegion,
    Platform,
    PlatformConfig,
    PlatformError,
    RunMetrics,
    default_memory_map,
    load_config,
    run_platform,
)
from .report import format_table, render_sweep, write_csv
from .simtime import (
    MS,
    NS,
    PS,
    SEC,
    US,
    budget_to_window,
    cycles_to_ticks,
    elapsed_to_cycles,
    format_duration,
    parse_duration,
)
from .watchdog import Watchdog, WatchdogError

__version__ = "0.1.0"

__all__ = [
    "Backend", "ExitKind", "MmioAccess", "RunResult",
    "Bus", "BusError", "DmiGrant", "Transaction", "TxKind", "TxStatus", "read_tx", "write_tx",
    "Core", "CoreState", "SegmentResult",
    "IrqController", "MmTimer", "Ram", "Rtc", "Uart",
    "ElfImage", "ElfParseError", "LoadSegment", "SymbolRecord", "parse_elf", "parse_elf_symbols",
    "AnnotationError", "HitKind", "IdleAnnotation", "build_annotation", "find_idle_symbol", "locate_wfi",
    "InterpreterBackend",
    "DeadlockError", "EventHandle", "Kernel", "ShutdownError",
    "CapabilityError",
    "ConfigError", "ImageSpec", "MemoryRegion", "Platform", "PlatformConfig",
    "PlatformError", "RunMetrics", "default_memory_map", "load_config", "run_platform",
    "format_table", "render_sweep", "write_csv",
    "PS", "NS", "US", "MS", "SEC",
    "budget_to_window", "cycles_to_ticks", "elapsed_to_cycles", "format_duration", "parse_duration",
    "Watchdog", "WatchdogError",
    "__version__",
]
