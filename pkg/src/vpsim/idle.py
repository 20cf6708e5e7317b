"""Idle-loop annotation: find the guest's idle routine and trap its WFI.

The guest's idle function (cpu_do_idle by convention) wraps exactly one
wait-for-interrupt instruction.  A breakpoint armed on that instruction
turns an otherwise invisible idle entry into a backend exit the platform
can convert into a core suspension; execution resumes at the instruction
after the WFI, which therefore counts as retired.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum, auto

from .elf import SymbolRecord

log = logging.getLogger(__name__)

# WFI byte patterns and their alignment per ISA tag.  AArch64 WFI is the
# fixed word 0xd503207f; the toy ISA uses opcode 7 in an 8-byte slot.
WFI_PATTERNS: dict[str, tuple[bytes, int]] = {
    "aarch64": (bytes.fromhex("7f2003d5"), 4),
    "toy": (bytes([7, 0, 0, 0, 0, 0, 0, 0]), 8),
}


class AnnotationError(ValueError):
    pass


class HitKind(Enum):
    IDLE_HINT = auto()
    USER_BREAKPOINT = auto()
    SPURIOUS = auto()


@dataclass
class IdleAnnotation:
    symbol: SymbolRecord
    wfi_address: int
    isa: str


def find_idle_symbol(symbols: list[SymbolRecord], name: str = "cpu_do_idle") -> SymbolRecord:
    """The unique function symbol called `name`; ambiguity and absence are errors."""
    matches = [s for s in symbols if s.name == name and s.is_func]
    if not matches:
        raise AnnotationError(f"idle symbol {name!r} not found among {len(symbols)} function symbols")
    if len(matches) > 1:
        places = ", ".join(f"{s.address:#x}" for s in matches)
        raise AnnotationError(f"idle symbol {name!r} is ambiguous: candidates at {places}")
    symbol = matches[0]
    if symbol.size == 0:
        raise AnnotationError(f"idle symbol {name!r} has zero size; nothing to scan")
    return symbol


def locate_wfi(code: bytes, base: int, isa: str) -> int:
    """Address of the first aligned WFI inside `code` loaded at `base`.

    Scans only offsets aligned to the ISA's instruction width, so a WFI
    byte pattern straddling instruction slots does not count.  Multiple
    aligned occurrences resolve to the first, with a log note.
    """
    try:
        pattern, width = WFI_PATTERNS[isa]
    except KeyError:
        raise AnnotationError(f"no WFI pattern known for ISA {isa!r}") from None
    if base % width:
        raise AnnotationError(f"function base {base:#x} not {width}-byte aligned")
    hits = [
        off
        for off in range(0, len(code) - len(pattern) + 1, width)
        if code[off : off + len(pattern)] == pattern
    ]
    if not hits:
        raise AnnotationError(f"no aligned WFI in {len(code)} bytes at {base:#x} (isa {isa})")
    if len(hits) > 1:
        log.info("multiple WFIs at %s; annotating the first", [hex(base + h) for h in hits])
    return base + hits[0]


def classify_hit(pc: int, annotation: IdleAnnotation | None, user_breakpoints: set[int]) -> HitKind:
    """Attribute a breakpoint exit: annotated WFI, user breakpoint, or noise."""
    if annotation is not None and pc == annotation.wfi_address:
        return HitKind.IDLE_HINT
    if pc in user_breakpoints:
        return HitKind.USER_BREAKPOINT
    log.warning("spurious breakpoint exit at %#x", pc)
    return HitKind.SPURIOUS


def build_annotation(
    symbols: list[SymbolRecord],
    read_memory,
    isa: str,
    name: str = "cpu_do_idle",
) -> IdleAnnotation:
    """Resolve the idle symbol and locate its WFI via `read_memory(addr, size)`."""
    symbol = find_idle_symbol(symbols, name)
    code = read_memory(symbol.address, symbol.size)
    return IdleAnnotation(symbol, locate_wfi(code, symbol.address, isa), isa)
