"""Deterministic interpreter backend for the toy ISA.

Instructions are 8 bytes: opcode in byte 0, register index in byte 1,
bytes 2-3 reserved zero, and a 32-bit little-endian immediate in bytes
4-7.  The program counter stays 8-byte aligned.  Registers r0-r7 are
64 bits wide and wrap modulo 2**64.

opcode  mnemonic  effect
  0     NOP       pc += 8
  1     HALT      stop; pc unchanged, instruction not counted
  2     LDI       reg = imm (zero-extended)
  3     LD        reg = mem32[imm] (zero-extended)
  4     ST        mem32[imm] = reg (low 32 bits)
  5     ADDI      reg += imm (sign-extended), mod 2**64
  6     BNZ       if reg != 0: pc = imm
  7     WFI       idle hint; completes immediately if an irq is pending

LD/ST addresses outside every DMI mapping trap out as MMIO before the
access commits; the trapped instruction is counted at the trap and its
register/pc effects complete on the next run() call once the platform
has serviced the access.
"""

from __future__ import annotations

import struct

from .backend import Backend, ExitKind, MmioAccess, RunResult
from .bus import DmiGrant, TxKind

INSTRUCTION_BYTES = 8
MASK64 = 2**64 - 1

OP_NOP = 0
OP_HALT = 1
OP_LDI = 2
OP_LD = 3
OP_ST = 4
OP_ADDI = 5
OP_BNZ = 6
OP_WFI = 7

_INSN = struct.Struct("<BBHI")
_WORD = struct.Struct("<I")


def encode(op: int, reg: int = 0, imm: int = 0) -> bytes:
    if not 0 <= op <= OP_WFI:
        raise ValueError(f"opcode {op} out of range")
    if not 0 <= reg <= 7:
        raise ValueError(f"register {reg} out of range")
    return _INSN.pack(op, reg, 0, imm & 0xFFFF_FFFF)


def nop() -> bytes:
    return encode(OP_NOP)


def halt() -> bytes:
    return encode(OP_HALT)


def ldi(reg: int, imm: int) -> bytes:
    return encode(OP_LDI, reg, imm)


def ld(reg: int, address: int) -> bytes:
    return encode(OP_LD, reg, address)


def st(reg: int, address: int) -> bytes:
    return encode(OP_ST, reg, address)


def addi(reg: int, imm: int) -> bytes:
    return encode(OP_ADDI, reg, imm)


def bnz(reg: int, target: int) -> bytes:
    return encode(OP_BNZ, reg, target)


def wfi() -> bytes:
    return encode(OP_WFI)


def assemble(instructions: list[bytes]) -> bytes:
    return b"".join(instructions)


def _sext32(value: int) -> int:
    return value - (1 << 32) if value & (1 << 31) else value


class InterpreterBackend(Backend):
    exact_counts = True
    isa = "toy"
    isa_width = INSTRUCTION_BYTES

    def __init__(self) -> None:
        self.regs = [0] * 8
        self.pc = 0
        self._maps: list[tuple[int, int, memoryview, DmiGrant]] = []
        self._breakpoints: set[int] = set()
        self._stop = False
        self._pending_irqs: frozenset[int] = frozenset()
        self._pending_mmio: tuple[MmioAccess, int] | None = None
        self._skip_bp: int | None = None
        self.instruction_total = 0

    # -- state accessors --------------------------------------------------

    def get_pc(self) -> int:
        return self.pc

    def set_pc(self, pc: int) -> None:
        if pc % INSTRUCTION_BYTES:
            raise ValueError(f"pc {pc:#x} not {INSTRUCTION_BYTES}-byte aligned")
        self.pc = pc

    def read_reg(self, index: int) -> int:
        if not 0 <= index <= 7:
            raise ValueError(f"register {index} out of range")
        return self.regs[index]

    def write_reg(self, index: int, value: int) -> None:
        if not 0 <= index <= 7:
            raise ValueError(f"register {index} out of range")
        self.regs[index] = value & MASK64

    # -- memory and control plumbing ---------------------------------------

    def map_guest_memory(self, grant: DmiGrant, base: int | None = None) -> None:
        if grant.revoked:
            raise ValueError("cannot map a revoked grant")
        start = grant.base if base is None else base
        end = start + grant.size
        for mapped_start, mapped_end, _, _ in self._maps:
            if start < mapped_end and mapped_start < end:
                raise ValueError(
                    f"guest mapping [{start:#x}, {end:#x}) overlaps "
                    f"[{mapped_start:#x}, {mapped_end:#x})"
                )
        self._maps.append((start, end, grant.memory, grant))

    def unmap_grant(self, grant: DmiGrant) -> None:
        self._maps = [m for m in self._maps if m[3] is not grant]

    def insert_breakpoint(self, address: int) -> None:
        self._breakpoints.add(address)

    def remove_breakpoint(self, address: int) -> None:
        self._breakpoints.discard(address)

    def resume_over_breakpoint(self) -> None:
        self._skip_bp = self.pc

    def request_stop(self) -> None:
        self._stop = True

    def clear_stop(self) -> None:
        self._stop = False

    def set_pending_irqs(self, lines: frozenset[int]) -> None:
        self._pending_irqs = lines

    def _find(self, address: int, size: int) -> tuple[int, memoryview] | None:
        for start, end, memory, _ in self._maps:
            if start <= address and address + size <= end:
                return start, memory
        return None

    # -- execution ---------------------------------------------------------

    def run(self, budget_hint: int | None) -> RunResult:
        executed = 0
        if self._pending_mmio is not None:
            self._complete_mmio()
        regs = self.regs
        breakpoints = self._breakpoints
        unpack = _INSN.unpack_from
        fetch_base, fetch_end, fetch_mem = 0, 0, b""  # last-hit fetch window
        while True:
            if self._stop:
                self._stop = False
                break
            if budget_hint is not None and executed >= budget_hint:
                self.instruction_total += executed
                return RunResult(ExitKind.BUDGET_EXHAUSTED, executed)
            pc = self.pc
            if pc in breakpoints:
                if self._skip_bp == pc:
                    self._skip_bp = None
                else:
                    self.instruction_total += executed
                    return RunResult(ExitKind.BREAKPOINT, executed, pc=pc)
            if not fetch_base <= pc < fetch_end:
                hit = self._find(pc, INSTRUCTION_BYTES)
                if hit is None:
                    return self._fail(
                        executed, f"instruction fetch outside guest memory at {pc:#x}"
                    )
                start, memory = hit
                fetch_base, fetch_end, fetch_mem = start, start + len(memory) - 7, memory
            op, reg, reserved, imm = unpack(fetch_mem, pc - fetch_base)
            if reserved:
                return self._fail(executed, f"reserved bytes non-zero at {pc:#x}")
            if op == OP_NOP:
                self.pc = pc + 8
            elif op == OP_LDI:
                regs[reg] = imm
                self.pc = pc + 8
            elif op == OP_ADDI:
                regs[reg] = (regs[reg] + _sext32(imm)) & MASK64
                self.pc = pc + 8
            elif op == OP_BNZ:
                self.pc = imm if regs[reg] else pc + 8
            elif op == OP_LD:
                target = self._find(imm, 4)
                if target is None:
                    executed += 1
                    self.instruction_total += executed
                    access = MmioAccess(TxKind.READ, imm, 4)
                    self._pending_mmio = (access, reg)
                    return RunResult(ExitKind.MMIO, executed, mmio=access)
                tbase, tmem = target
                regs[reg] = _WORD.unpack_from(tmem, imm - tbase)[0]
                self.pc = pc + 8
            elif op == OP_ST:
                target = self._find(imm, 4)
                if target is None:
                    executed += 1
                    self.instruction_total += executed
                    payload = bytearray((regs[reg] & 0xFFFF_FFFF).to_bytes(4, "little"))
                    access = MmioAccess(TxKind.WRITE, imm, 4, payload)
                    self._pending_mmio = (access, reg)
                    return RunResult(ExitKind.MMIO, executed, mmio=access)
                tbase, tmem = target
                _WORD.pack_into(tmem, imm - tbase, regs[reg] & 0xFFFF_FFFF)
                self.pc = pc + 8
            elif op == OP_WFI:
                executed += 1
                self.pc = pc + 8
                if self._pending_irqs:
                    continue
                self.instruction_total += executed
                return RunResult(ExitKind.IDLE_HINT, executed)
            elif op == OP_HALT:
                self.instruction_total += executed
                return RunResult(ExitKind.HALTED, executed)
            else:
                return self._fail(executed, f"bad opcode {op} at {pc:#x}")
            executed += 1
        self.instruction_total += executed
        return RunResult(ExitKind.KICKED, executed)

    def _complete_mmio(self) -> None:
        assert self._pending_mmio is not None
        access, reg = self._pending_mmio
        self._pending_mmio = None
        if access.kind is TxKind.READ:
            if access.data is None:
                raise RuntimeError("MMIO read resumed without data")
            self.regs[reg] = int.from_bytes(access.data, "little")
        self.pc += 8

    def _fail(self, executed: int, detail: str) -> RunResult:
        self.instruction_total += executed
        return RunResult(ExitKind.BACKEND_ERROR, executed, detail=detail)
