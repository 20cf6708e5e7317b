"""Hardware-virtualized backend for AArch64 guests on AArch64 hosts.

Guest vCPUs run under /dev/kvm while every device stays in the Python
model: MMIO exits surface through the normal backend interface and the
platform serves them on the coordinator.  Interrupt lines forwarded by
the modeled controller are delivered as per-vCPU PPIs through an
in-kernel GIC placed outside the modeled address map, so guests observe
only the modeled controller registers.

Construction fails loudly with CapabilityError when the host cannot
virtualize the guest ISA; importing this module is always safe.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import errno
import logging
import mmap
import os
import platform as host_platform
import signal
import struct
import threading

from .backend import Backend, ExitKind, MmioAccess, RunResult
from .bus import DmiGrant, TxKind

log = logging.getLogger(__name__)


class CapabilityError(RuntimeError):
    """The host lacks what hardware-backed execution needs."""


class KvmError(RuntimeError):
    pass


# ioctl encoding (asm-generic), KVM magic 0xAE.
def _ioc(direction: int, nr: int, size: int) -> int:
    return (direction << 30) | (size << 16) | (0xAE << 8) | nr


def _io(nr: int) -> int:
    return _ioc(0, nr, 0)


def _ior(nr: int, size: int) -> int:
    return _ioc(2, nr, size)


def _iow(nr: int, size: int) -> int:
    return _ioc(1, nr, size)


def _iowr(nr: int, size: int) -> int:
    return _ioc(3, nr, size)


KVM_GET_API_VERSION = _io(0x00)
KVM_CREATE_VM = _io(0x01)
KVM_CHECK_EXTENSION = _io(0x03)
KVM_GET_VCPU_MMAP_SIZE = _io(0x04)
KVM_CREATE_VCPU = _io(0x41)
KVM_SET_USER_MEMORY_REGION = _iow(0x46, 32)
KVM_RUN = _io(0x80)
# kvm_guest_debug on aarch64: control + pad + 4x16 u64 debug registers.
KVM_SET_GUEST_DEBUG = _iow(0x9B, 520)
KVM_IRQ_LINE = _iow(0x61, 8)
KVM_GET_ONE_REG = _iow(0xAB, 16)
KVM_SET_ONE_REG = _iow(0xAC, 16)
KVM_ARM_VCPU_INIT = _iow(0xAE, 32)
KVM_ARM_PREFERRED_TARGET = _ior(0xAF, 32)
KVM_CREATE_DEVICE = _iowr(0xE0, 12)
KVM_SET_DEVICE_ATTR = _iow(0xE1, 24)

KVM_API_VERSION = 12

KVM_EXIT_DEBUG = 4
KVM_EXIT_MMIO = 6
KVM_EXIT_INTR = 10
KVM_EXIT_INTERNAL_ERROR = 17
KVM_EXIT_SYSTEM_EVENT = 24

# kvm_run field offsets
_RUN_IMMEDIATE_EXIT = 1
_RUN_EXIT_REASON = 8
_RUN_UNION = 32
_MMIO_PHYS = _RUN_UNION
_MMIO_DATA = _RUN_UNION + 8
_MMIO_LEN = _RUN_UNION + 16
_MMIO_IS_WRITE = _RUN_UNION + 20

# ONE_REG ids for the AArch64 core register file
_REG_ARM64 = 0x6000_0000_0000_0000
_REG_SIZE_U64 = 0x0030_0000_0000_0000
_REG_ARM_CORE = 0x0010_0000
_PT_REGS_PC = 256  # byte offset of pc in user_pt_regs


def _core_reg(byte_offset: int) -> int:
    return _REG_ARM64 | _REG_SIZE_U64 | _REG_ARM_CORE | (byte_offset // 4)


KVM_GUESTDBG_ENABLE = 1
KVM_GUESTDBG_USE_SW_BP = 0x0001_0000

KVM_DEV_TYPE_ARM_VGIC_V2 = 5
KVM_DEV_ARM_VGIC_GRP_ADDR = 0
KVM_DEV_ARM_VGIC_GRP_CTRL = 4
KVM_VGIC_V2_ADDR_TYPE_DIST = 0
KVM_VGIC_V2_ADDR_TYPE_CPU = 1
KVM_DEV_ARM_VGIC_CTRL_INIT = 0

KVM_ARM_IRQ_TYPE_PPI = 2
PPI_BASE = 16


def ppi_irq_field(vcpu: int, line: int) -> int:
    """KVM_IRQ_LINE encoding for a per-vCPU PPI."""
    return (KVM_ARM_IRQ_TYPE_PPI << 24) | (vcpu << 16) | (PPI_BASE + line)

BRK_INSN = bytes.fromhex("000020d4")  # brk #0, little-endian

_libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
_libc.ioctl.restype = ctypes.c_int


def _raw_ioctl(fd: int, request: int, arg: int = 0) -> int:
    """ioctl that surfaces EINTR instead of retrying behind our back."""
    while True:
        rc = _libc.ioctl(fd, ctypes.c_ulong(request), ctypes.c_ulong(arg))
        if rc >= 0:
            return rc
        err = ctypes.get_errno()
        if err == errno.EINTR:
            raise InterruptedError(err, os.strerror(err))
        raise OSError(err, os.strerror(err))


def _ioctl_ptr(fd: int, request: int, data: bytes | bytearray) -> int:
    buf = (ctypes.c_char * len(data)).from_buffer(bytearray(data) if isinstance(data, bytes) else data)
    return _raw_ioctl(fd, request, ctypes.addressof(buf))


class KvmSystem:
    """Handle on /dev/kvm; owns the host capability check."""

    def __init__(self) -> None:
        machine = host_platform.machine()
        if machine != "aarch64":
            raise CapabilityError(
                f"hardware backend needs an aarch64 host to run aarch64 guests; this host is {machine}"
            )
        try:
            self.fd = os.open("/dev/kvm", os.O_RDWR | os.O_CLOEXEC)
        except OSError as exc:
            raise CapabilityError(f"/dev/kvm unavailable: {exc}") from exc
        version = _raw_ioctl(self.fd, KVM_GET_API_VERSION)
        if version != KVM_API_VERSION:
            os.close(self.fd)
            raise CapabilityError(f"unsupported KVM API version {version}")
        # A kick must interrupt KVM_RUN without killing the process.
        signal.signal(signal.SIGUSR1, lambda *_: None)

    def vcpu_mmap_size(self) -> int:
        return _raw_ioctl(self.fd, KVM_GET_VCPU_MMAP_SIZE)

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


class KvmVm:
    """One VM with per-core vCPU backends and pass-through RAM."""

    def __init__(
        self,
        n_cores: int,
        ram_regions: list[tuple[int, mmap.mmap]],
        vgic_dist: int = 0x0803_0000,
        vgic_cpu: int = 0x0804_0000,
    ) -> None:
        self.system = KvmSystem()
        self.fd = _raw_ioctl(self.system.fd, KVM_CREATE_VM)
        self._ram_bases = []
        for slot, (base, mem) in enumerate(ram_regions):
            addr = ctypes.addressof(ctypes.c_ubyte.from_buffer(mem))
            region = struct.pack("<IIQQQ", slot, 0, base, len(mem), addr)
            _ioctl_ptr(self.fd, KVM_SET_USER_MEMORY_REGION, region)
            self._ram_bases.append((base, len(mem), mem))
        self._vcpus: list[KvmVcpuBackend] = []
        run_size = self.system.vcpu_mmap_size()
        preferred = bytearray(32)
        _ioctl_ptr(self.fd, KVM_ARM_PREFERRED_TARGET, preferred)
        for index in range(n_cores):
            vcpu_fd = _raw_ioctl(self.fd, KVM_CREATE_VCPU, index)
            _ioctl_ptr(vcpu_fd, KVM_ARM_VCPU_INIT, bytes(preferred))
            run = mmap.mmap(vcpu_fd, run_size)
            self._vcpus.append(KvmVcpuBackend(self, index, vcpu_fd, run))
        self._init_vgic(vgic_dist, vgic_cpu)

    def _set_device_attr(self, dev_fd: int, group: int, attr: int, value: int | None) -> None:
        if value is None:
            payload = struct.pack("<IIQQ", 0, group, attr, 0)
        else:
            holder = ctypes.c_uint64(value)
            payload = struct.pack("<IIQQ", 0, group, attr, ctypes.addressof(holder))
        _ioctl_ptr(dev_fd, KVM_SET_DEVICE_ATTR, payload)

    def _init_vgic(self, dist: int, cpu: int) -> None:
        # The in-kernel GIC lives outside the modeled map; guests never read it.
        create = bytearray(struct.pack("<III", KVM_DEV_TYPE_ARM_VGIC_V2, 0, 0))
        _ioctl_ptr(self.fd, KVM_CREATE_DEVICE, create)
        self._gic_fd = struct.unpack_from("<I", create, 4)[0]
        self._set_device_attr(self._gic_fd, KVM_DEV_ARM_VGIC_GRP_ADDR, KVM_VGIC_V2_ADDR_TYPE_DIST, dist)
        self._set_device_attr(self._gic_fd, KVM_DEV_ARM_VGIC_GRP_ADDR, KVM_VGIC_V2_ADDR_TYPE_CPU, cpu)
        self._set_device_attr(self._gic_fd, KVM_DEV_ARM_VGIC_GRP_CTRL, KVM_DEV_ARM_VGIC_CTRL_INIT, None)

    def vcpu_backend(self, index: int) -> KvmVcpuBackend:
        return self._vcpus[index]

    def set_ppi(self, vcpu: int, line: int, level: bool) -> None:
        irq = ppi_irq_field(vcpu, line)
        _ioctl_ptr(self.fd, KVM_IRQ_LINE, struct.pack("<Ii", irq, 1 if level else 0))

    def guest_memory(self, address: int, size: int) -> memoryview:
        for base, length, mem in self._ram_bases:
            if base <= address and address + size <= base + length:
                offset = address - base
                return memoryview(mem)[offset : offset + size]
        raise KvmError(f"guest range [{address:#x}, {address + size:#x}) is not RAM")

    def close(self) -> None:
        for vcpu in self._vcpus:
            vcpu.close()
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1
        self.system.close()


class KvmVcpuBackend(Backend):
    """Backend adapter around one KVM vCPU."""

    exact_counts = False
    isa = "aarch64"
    isa_width = 4

    def __init__(self, vm: KvmVm, index: int, fd: int, run: mmap.mmap) -> None:
        self.vm = vm
        self.index = index
        self.fd = fd
        self.run_map = run
        self._lock = threading.Lock()
        self._run_tid: int | None = None
        self._pending_mmio: MmioAccess | None = None
        self._pending_lines: frozenset[int] = frozenset()
        self._asserted: set[int] = set()
        self._breakpoints: dict[int, bytes] = {}
        self._skip_bp: int | None = None
        self._debug_armed = False

    # -- register file ------------------------------------------------------

    def _one_reg(self, reg_id: int, value: int | None = None) -> int:
        holder = ctypes.c_uint64(0 if value is None else value)
        payload = struct.pack("<QQ", reg_id, ctypes.addressof(holder))
        _ioctl_ptr(self.fd, KVM_SET_ONE_REG if value is not None else KVM_GET_ONE_REG, payload)
        return holder.value

    def get_pc(self) -> int:
        return self._one_reg(_core_reg(_PT_REGS_PC))

    def set_pc(self, value: int) -> None:
        self._one_reg(_core_reg(_PT_REGS_PC), value)

    def read_reg(self, index: int) -> int:
        return self._one_reg(_core_reg(index * 8))

    def write_reg(self, index: int, value: int) -> None:
        self._one_reg(_core_reg(index * 8), value)

    # -- memory and breakpoints ----------------------------------------------

    def map_guest_memory(self, grant: DmiGrant) -> None:
        # RAM is registered with the VM at construction; grants only gate use.
        self.vm.guest_memory(grant.base, 1)

    def unmap_grant(self, grant: DmiGrant) -> None:
        pass

    def _arm_debug(self) -> None:
        if self._debug_armed:
            return
        control = KVM_GUESTDBG_ENABLE | KVM_GUESTDBG_USE_SW_BP
        payload = struct.pack("<II", control, 0) + bytes(512)
        _ioctl_ptr(self.fd, KVM_SET_GUEST_DEBUG, payload)
        self._debug_armed = True

    def insert_breakpoint(self, address: int) -> None:
        if address in self._breakpoints:
            raise ValueError(f"breakpoint already set at {address:#x}")
        self._arm_debug()
        window = self.vm.guest_memory(address, 4)
        self._breakpoints[address] = bytes(window)
        window[:] = BRK_INSN

    def remove_breakpoint(self, address: int) -> None:
        original = self._breakpoints.pop(address, None)
        if original is None:
            log.warning("remove_breakpoint: none at %#x", address)
            return
        self.vm.guest_memory(address, 4)[:] = original

    def resume_over_breakpoint(self) -> None:
        # One-shot: put the original instruction back and let it execute.
        pc = self.get_pc()
        original = self._breakpoints.pop(pc, None)
        if original is not None:
            self.vm.guest_memory(pc, 4)[:] = original

    # -- interrupts and stop requests ----------------------------------------

    def set_pending_irqs(self, lines: frozenset[int]) -> None:
        for line in lines - self._asserted:
            self.vm.set_ppi(self.index, line, True)
        for line in self._asserted - lines:
            self.vm.set_ppi(self.index, line, False)
        self._asserted = set(lines)
        self._pending_lines = lines

    def request_stop(self) -> None:
        self.run_map[_RUN_IMMEDIATE_EXIT] = 1
        with self._lock:
            tid = self._run_tid
        if tid is not None:
            try:
                signal.pthread_kill(tid, signal.SIGUSR1)
            except ProcessLookupError:
                pass

    def clear_stop(self) -> None:
        self.run_map[_RUN_IMMEDIATE_EXIT] = 0

    # -- execution -------------------------------------------------------------

    def _complete_mmio(self) -> None:
        access = self._pending_mmio
        self._pending_mmio = None
        if access is None or access.kind is not TxKind.READ:
            return
        assert access.data is not None
        self.run_map[_MMIO_DATA : _MMIO_DATA + access.size] = bytes(access.data)

    def run(self, budget_hint: int) -> RunResult:
        self._complete_mmio()
        with self._lock:
            self._run_tid = threading.get_native_id()
        try:
            while True:
                try:
                    _raw_ioctl(self.fd, KVM_RUN)
                except InterruptedError:
                    if self.run_map[_RUN_IMMEDIATE_EXIT]:
                        return RunResult(ExitKind.KICKED, None, None, self.get_pc())
                    continue
                reason = struct.unpack_from("<I", self.run_map, _RUN_EXIT_REASON)[0]
                if reason == KVM_EXIT_INTR:
                    if self.run_map[_RUN_IMMEDIATE_EXIT]:
                        return RunResult(ExitKind.KICKED, None, None, self.get_pc())
                    continue
                if reason == KVM_EXIT_MMIO:
                    phys, = struct.unpack_from("<Q", self.run_map, _MMIO_PHYS)
                    length, = struct.unpack_from("<I", self.run_map, _MMIO_LEN)
                    is_write = self.run_map[_MMIO_IS_WRITE]
                    if is_write:
                        data = bytearray(self.run_map[_MMIO_DATA : _MMIO_DATA + length])
                        access = MmioAccess(TxKind.WRITE, phys, length, data)
                    else:
                        access = MmioAccess(TxKind.READ, phys, length, bytearray(length))
                    self._pending_mmio = access
                    return RunResult(ExitKind.MMIO, None, access, self.get_pc())
                if reason == KVM_EXIT_DEBUG:
                    return RunResult(ExitKind.BREAKPOINT, None, None, self.get_pc())
                if reason == KVM_EXIT_SYSTEM_EVENT:
                    return RunResult(ExitKind.HALTED, None, None, self.get_pc())
                if reason == KVM_EXIT_INTERNAL_ERROR:
                    return RunResult(
                        ExitKind.BACKEND_ERROR, None, None, self.get_pc(),
                        detail="KVM internal error",
                    )
                return RunResult(
                    ExitKind.BACKEND_ERROR, None, None, self.get_pc(),
                    detail=f"unhandled KVM exit reason {reason}",
                )
        finally:
            with self._lock:
                self._run_tid = None

    def close(self) -> None:
        self.run_map.close()
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1
