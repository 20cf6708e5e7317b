"""Platform assembly and the deterministic core-scheduling engine.

The engine executes every coordinator-side item (device event, MMIO
service, core scheduling step) in a single global order keyed by
(simulation time, lane), where scheduled events take lane 0 and each
core's actions take lane 1 + core index.  Sequential mode computes a
core's segment eagerly when its step executes; parallel mode dispatches
the same segment to a worker thread and gates the loop so no item runs
while a busy worker could still report an earlier-timestamped action.
Both modes therefore serve guest-visible effects in the same order at
the same simulation times.
"""

from __future__ import annotations

import hashlib
import logging
import queue
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Callable

import yaml

from .backend import ExitKind
from .bus import Bus, BusError, Transaction, TxKind, TxStatus
from .cpu import Core, SegmentResult
from .devices import IrqController, MmTimer, Ram, Rtc, Uart
from .elf import ElfImage, SymbolRecord, parse_elf
from .idle import HitKind, build_annotation
from .kernel import DeadlockError, Kernel
from .simtime import MS, SEC, parse_duration, quantum_check
from .watchdog import Watchdog

log = logging.getLogger(__name__)

DEFAULT_IDLE_SYMBOL = "cpu_do_idle"
MAX_CORES = 8
_WORKER_PATIENCE_S = 60.0

_SIZE_SUFFIXES = {"kib": 2**10, "mib": 2**20, "gib": 2**30}


class ConfigError(ValueError):
    pass


class PlatformError(RuntimeError):
    pass


def _parse_int(value: Any, what: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        text = value.strip().lower().replace("_", "")
        for suffix, scale in _SIZE_SUFFIXES.items():
            if text.endswith(suffix):
                return int(float(text[: -len(suffix)]) * scale)
        try:
            return int(text, 0)
        except ValueError:
            raise ConfigError(f"{what}: malformed number {value!r}") from None
    raise ConfigError(f"{what}: expected a number, got {value!r}")


@dataclass
class MemoryRegion:
    kind: str  # ram | uart | timer | irqctl | rtc
    base: int
    size: int
    name: str = ""
    irq_line: int | None = None  # timer only
    lines: int = 32  # irqctl only


@dataclass
class ImageSpec:
    path: Path
    format: str  # flat | elf
    load_address: int | None = None


def default_memory_map() -> list[MemoryRegion]:
    return [
        MemoryRegion("ram", 0x4000_0000, 64 * 2**20, "ram0"),
        MemoryRegion("irqctl", 0x0800_0000, 0x1_0000, "irqctl"),
        MemoryRegion("uart", 0x0900_0000, 0x1000, "uart0"),
        MemoryRegion("timer", 0x0901_0000, 0x1000, "timer0", irq_line=0),
        MemoryRegion("rtc", 0x0902_0000, 0x1000, "rtc"),
    ]


@dataclass
class PlatformConfig:
    cores: int = 1
    clock_hz: list[int] = field(default_factory=lambda: [10**9])
    quantum: int = MS  # ticks
    backend: str = "interpreter"
    parallel: bool = False
    memory_map: list[MemoryRegion] = field(default_factory=default_memory_map)
    images: list[ImageSpec] = field(default_factory=list)
    entry: list[int] | None = None
    idle_symbol: str = DEFAULT_IDLE_SYMBOL
    wfi_annotation: bool = False
    idle_suspend: bool = True
    max_sim_time: int | None = None  # ticks
    max_instructions: int | None = None
    csv: Path | None = None
    uart_capture: Path | None = None
    uart_stdout: bool = False

    def clock_for(self, core: int) -> int:
        return self.clock_hz[core] if len(self.clock_hz) > 1 else self.clock_hz[0]

    def entry_for(self, core: int) -> int | None:
        if self.entry is None:
            return None
        return self.entry[core] if len(self.entry) > 1 else self.entry[0]

    def validate(self) -> None:
        if not 1 <= self.cores <= MAX_CORES:
            raise ConfigError(f"cores: must be 1..{MAX_CORES}, got {self.cores}")
        if len(self.clock_hz) not in (1, self.cores):
            raise ConfigError(f"clock_hz: need 1 or {self.cores} values, got {len(self.clock_hz)}")
        for hz in self.clock_hz:
            if hz <= 0:
                raise ConfigError(f"clock_hz: must be positive, got {hz}")
        if self.quantum <= 0:
            raise ConfigError(f"quantum: must be positive, got {self.quantum}")
        if self.backend not in ("interpreter", "hardware"):
            raise ConfigError(f"backend: unknown backend {self.backend!r}")
        if self.entry is not None and len(self.entry) not in (1, self.cores):
            raise ConfigError(f"entry: need 1 or {self.cores} values, got {len(self.entry)}")
        if not any(r.kind == "ram" for r in self.memory_map):
            raise ConfigError("memory_map: at least one ram region is required")
        for region in self.memory_map:
            if region.kind not in ("ram", "uart", "timer", "irqctl", "rtc"):
                raise ConfigError(f"memory_map: unknown region kind {region.kind!r}")
            if region.size <= 0:
                raise ConfigError(f"memory_map: {region.name or region.kind}: size must be positive")
        if sum(1 for r in self.memory_map if r.kind == "irqctl") > 1:
            raise ConfigError("memory_map: at most one irqctl region")
        for image in self.images:
            if image.format not in ("flat", "elf"):
                raise ConfigError(f"images: unknown format {image.format!r}")
            if image.format == "flat" and image.load_address is None:
                raise ConfigError(f"images: flat image {image.path} needs load_address")
        if self.max_sim_time is not None and self.max_sim_time < 0:
            raise ConfigError("max_sim_time: must be non-negative")
        if self.max_instructions is not None and self.max_instructions < 0:
            raise ConfigError("max_instructions: must be non-negative")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> PlatformConfig:
        base = base_dir or Path.cwd()
        known = {
            "cores", "clock_hz", "quantum", "backend", "parallel", "memory_map",
            "images", "entry", "idle_symbol", "wfi_annotation", "idle_suspend",
            "max_sim_time", "max_instructions", "csv", "uart_capture", "uart_stdout",
        }
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls()
        if "cores" in data:
            cfg.cores = _parse_int(data["cores"], "cores")
        if "clock_hz" in data:
            raw = data["clock_hz"]
            values = raw if isinstance(raw, list) else [raw]
            cfg.clock_hz = [_parse_int(v, "clock_hz") for v in values]
        if "quantum" in data:
            cfg.quantum = parse_duration(data["quantum"])
        if "backend" in data:
            cfg.backend = str(data["backend"])
        if "parallel" in data:
            cfg.parallel = bool(data["parallel"])
        if "memory_map" in data:
            cfg.memory_map = []
            for i, entry in enumerate(data["memory_map"]):
                what = f"memory_map[{i}]"
                if not isinstance(entry, dict) or "kind" not in entry:
                    raise ConfigError(f"{what}: expected a mapping with a kind")
                region = MemoryRegion(
                    kind=str(entry["kind"]),
                    base=_parse_int(entry.get("base", 0), f"{what}.base"),
                    size=_parse_int(entry.get("size", 0), f"{what}.size"),
                    name=str(entry.get("name", f"{entry['kind']}{i}")),
                )
                if "irq_line" in entry:
                    region.irq_line = _parse_int(entry["irq_line"], f"{what}.irq_line")
                if "lines" in entry:
                    region.lines = _parse_int(entry["lines"], f"{what}.lines")
                cfg.memory_map.append(region)
        if "images" in data:
            cfg.images = []
            for i, entry in enumerate(data["images"]):
                what = f"images[{i}]"
                if isinstance(entry, str):
                    entry = {"path": entry}
                if not isinstance(entry, dict) or "path" not in entry:
                    raise ConfigError(f"{what}: expected a path")
                path = Path(entry["path"])
                if not path.is_absolute():
                    path = base / path
                fmt = entry.get("format")
                if fmt is None:
                    fmt = "elf" if path.suffix == ".elf" else "flat"
                load = entry.get("load_address")
                cfg.images.append(
                    ImageSpec(
                        path,
                        str(fmt),
                        None if load is None else _parse_int(load, f"{what}.load_address"),
                    )
                )
        if "entry" in data and data["entry"] is not None:
            raw = data["entry"]
            values = raw if isinstance(raw, list) else [raw]
            cfg.entry = [_parse_int(v, "entry") for v in values]
        if "idle_symbol" in data:
            cfg.idle_symbol = str(data["idle_symbol"])
        if "wfi_annotation" in data:
            cfg.wfi_annotation = bool(data["wfi_annotation"])
        if "idle_suspend" in data:
            cfg.idle_suspend = bool(data["idle_suspend"])
        if "max_sim_time" in data and data["max_sim_time"] is not None:
            cfg.max_sim_time = parse_duration(data["max_sim_time"])
        if "max_instructions" in data and data["max_instructions"] is not None:
            cfg.max_instructions = _parse_int(data["max_instructions"], "max_instructions")
        if "csv" in data and data["csv"]:
            cfg.csv = base / Path(data["csv"]) if not Path(data["csv"]).is_absolute() else Path(data["csv"])
        if "uart_capture" in data and data["uart_capture"]:
            raw_path = Path(data["uart_capture"])
            cfg.uart_capture = raw_path if raw_path.is_absolute() else base / raw_path
        if "uart_stdout" in data:
            cfg.uart_stdout = bool(data["uart_stdout"])
        cfg.validate()
        return cfg


def load_config(path: str | Path) -> PlatformConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return PlatformConfig.from_dict(data, base_dir=path.parent)


CSV_COLUMNS = [
    "cores", "quantum_ns", "parallel", "backend", "wall_s",
    "sim_s", "instructions", "mips", "rtf", "exit_cause",
]


@dataclass
class RunMetrics:
    cores: int
    quantum: int  # ticks
    parallel: bool
    backend: str
    wall_s: float
    sim: int  # ticks
    instructions: int
    per_core: list[int]
    exit_cause: str
    counts_exact: bool

    @property
    def sim_s(self) -> float:
        return self.sim / SEC

    @property
    def mips(self) -> float:
        return self.instructions / max(self.wall_s, 1e-9) / 1e6

    @property
    def rtf(self) -> float:
        return self.sim_s / max(self.wall_s, 1e-9)

    def csv_row(self) -> list[str]:
        count = str(self.instructions)
        if not self.counts_exact:
            # Wall-clock-derived counts are approximations, not retirements.
            count += " (estimated)"
        return [
            str(self.cores),
            str(self.quantum // 1000),
            "on" if self.parallel else "off",
            self.backend,
            f"{self.wall_s:.6f}",
            f"{self.sim_s:.9f}",
            count,
            f"{self.mips:.3f}",
            f"{self.rtf:.6f}",
            self.exit_cause,
        ]


_STOP = object()


@dataclass
class _CoreSched:
    core: Core
    lane: int
    budget: int  # cycles per quantum
    next_action: tuple[int, str, Any] | None = None
    running: bool = False
    reserved: int = 0
    frontier: int = 0
    segment_start: int = 0
    starved_at: int | None = None
    halted: bool = False
    time_done: bool = False
    inbox: queue.SimpleQueue | None = None


class Platform:
    """A configured virtual platform, runnable exactly once."""

    def __init__(self, config: PlatformConfig) -> None:
        config.validate()
        self.config = config
        self.kernel = Kernel()
        self.bus = Bus(self.kernel)
        self.bus.record_contexts = True
        self.watchdog = Watchdog()
        self.rams: list[Ram] = []
        self.uarts: list[Uart] = []
        self.timers: list[MmTimer] = []
        self.irqctl: IrqController | None = None
        self.rtc: Rtc | None = None
        self.cores: list[Core] = []
        self.symbols: list[SymbolRecord] = []
        self.elf_images: list[ElfImage] = []
        self.breakpoint_hits: list[tuple[int, int, int]] = []
        self.suspend_log: list[tuple[int, int]] = []
        self.wake_log: list[tuple[int, int, int]] = []
        self.on_breakpoint: Callable[[Core, int], str] | None = None
        self._ram_regions: list[tuple[MemoryRegion, Ram]] = []
        self._ran = False
        self._vm = None
        self._build()

    # -- assembly ---------------------------------------------------------

    def _build(self) -> None:
        cfg = self.config
        # Controller first so timers can bind their lines to it.
        ctl_region = next((r for r in cfg.memory_map if r.kind == "irqctl"), None)
        if ctl_region is not None:
            self.irqctl = IrqController(ctl_region.name or "irqctl", ctl_region.lines)
            self._map(ctl_region, self.irqctl)
        for region in cfg.memory_map:
            if region.kind == "ram":
                ram = Ram(region.name or "ram", region.size)
                self.rams.append(ram)
                self._ram_regions.append((region, ram))
                self._map(region, ram)
            elif region.kind == "uart":
                uart = Uart(region.name or "uart")
                self.uarts.append(uart)
                self._map(region, uart)
            elif region.kind == "timer":
                if self.irqctl is None:
                    raise ConfigError(f"timer {region.name!r} requires an irqctl region")
                line = region.irq_line if region.irq_line is not None else 0
                if not 0 <= line < self.irqctl.n_lines:
                    raise ConfigError(f"timer {region.name!r}: irq_line {line} out of range")
                timer = MmTimer(
                    region.name or "timer",
                    self.kernel,
                    lambda level, _line=line: self.irqctl.set_line(_line, level),
                )
                self.timers.append(timer)
                self._map(region, timer)
            elif region.kind == "rtc":
                self.rtc = Rtc(region.name or "rtc", self.kernel)
                self._map(region, self.rtc)

        self._build_cores()
        self._load_images()
        self._apply_entries()
        if cfg.wfi_annotation:
            self._annotate()

    def _map(self, region: MemoryRegion, device) -> None:
        try:
            self.bus.map_target(region.base, region.size, device)
        except BusError as exc:
            raise ConfigError(str(exc)) from exc

    def _build_cores(self) -> None:
        cfg = self.config
        n_lines = self.irqctl.n_lines if self.irqctl else 32
        if cfg.backend == "hardware":
            from . import kvm  # deferred: import probes nothing, construction does

            self._vm = kvm.KvmVm(cfg.cores, [(r.base, ram._mem) for r, ram in self._ram_regions])
            backends = [self._vm.vcpu_backend(i) for i in range(cfg.cores)]
        else:
            from .interp import InterpreterBackend

            backends = [InterpreterBackend() for _ in range(cfg.cores)]
        for i, backend in enumerate(backends):
            core = Core(i, cfg.clock_for(i), backend, self.watchdog, n_lines)
            self.cores.append(core)
            if self.irqctl is not None:
                self.irqctl.bind_core(i, core.raise_irq)
        # DMI: every core maps every RAM window directly.
        for region, _ram in self._ram_regions:
            grant = self.bus.acquire_dmi(region.base, region.size)
            if grant is None:
                raise PlatformError(f"no DMI grant for RAM at {region.base:#x}")
            for core in self.cores:
                core.backend.map_guest_memory(grant)
        self.bus.on_revoke(self._drop_grant)

    def _drop_grant(self, grant) -> None:
        for core in self.cores:
            core.backend.unmap_grant(grant)

    def _ram_for(self, address: int, size: int) -> tuple[MemoryRegion, Ram]:
        for region, ram in self._ram_regions:
            if region.base <= address and address + size <= region.base + region.size:
                return region, ram
        raise ConfigError(f"range [{address:#x}, {address + size:#x}) lands outside every RAM")

    def _load_images(self) -> None:
        for spec in self.config.images:
            try:
                blob = spec.path.read_bytes()
            except OSError as exc:
                raise ConfigError(f"cannot read image {spec.path}: {exc}") from exc
            if spec.format == "elf":
                image = parse_elf(blob)
                self.elf_images.append(image)
                self.symbols.extend(s for s in image.symbols if s.is_func)
                for seg in image.segments:
                    region, ram = self._ram_for(seg.vaddr, max(seg.memsz, len(seg.data)))
                    ram.load(seg.vaddr - region.base, seg.data)
            else:
                assert spec.load_address is not None
                region, ram = self._ram_for(spec.load_address, len(blob))
                ram.load(spec.load_address - region.base, blob)

    def _apply_entries(self) -> None:
        cfg = self.config
        default_entry: int | None = None
        if self.elf_images:
            default_entry = self.elf_images[0].entry
        elif cfg.images:
            default_entry = cfg.images[0].load_address
        elif self._ram_regions:
            default_entry = self._ram_regions[0][0].base
        for core in self.cores:
            entry = cfg.entry_for(core.core_id)
            if entry is None:
                entry = default_entry
            if entry is None:
                raise ConfigError("no entry point: provide images or an entry address")
            core.backend.set_pc(entry)
            if core.backend.isa == "toy":
                # Reset convention: r7 carries the core index.
                core.backend.write_reg(7, core.core_id)

    def read_guest(self, address: int, size: int) -> bytes:
        region, ram = self._ram_for(address, size)
        return ram.read(address - region.base, size)

    def _annotate(self) -> None:
        if not self.symbols:
            log.warning("wfi_annotation requested but no symbols available; disabled")
            return
        try:
            annotation = build_annotation(
                self.symbols,
                self.read_guest,
                self.cores[0].backend.isa,
                self.config.idle_symbol,
            )
        except ConfigError:
            raise
        for core in self.cores:
            core.arm_annotation(annotation)

    # -- accessors ----------------------------------------------------------

    @property
    def uart(self) -> Uart:
        if not self.uarts:
            raise PlatformError("platform has no UART")
        return self.uarts[0]

    def ram_digest(self) -> str:
        digest = hashlib.sha256()
        for _region, ram in self._ram_regions:
            digest.update(ram.read(0, ram.size))
        return digest.hexdigest()

    def total_instructions(self) -> int:
        return sum(core.state.instruction_counter for core in self.cores)

    # -- the engine -----------------------------------------------------------

    def run(self) -> RunMetrics:
        if self._ran:
            raise PlatformError("platform instances run exactly once; build a fresh one")
        self._ran = True
        cfg = self.config
        self.kernel.claim_coordinator()

        tees: list[IO[bytes]] = []
        capture: IO[bytes] | None = None
        if cfg.uart_capture is not None:
            capture = open(cfg.uart_capture, "wb")
            tees.append(capture)
        if cfg.uart_stdout:
            tees.append(sys.stdout.buffer)
        for uart in self.uarts:
            for tee in tees:
                uart.add_tee(tee)

        scheds = [
            _CoreSched(
                core,
                lane=1 + i,
                budget=max(1, cfg.quantum * core.clock_hz // SEC),
                next_action=(0, "step", None),
            )
            for i, core in enumerate(self.cores)
        ]
        for sched in scheds:
            sched.core.wake_hook = self._make_wake_hook(sched)

        reports: queue.SimpleQueue = queue.SimpleQueue()
        workers: list[threading.Thread] = []
        if cfg.parallel:
            for sched in scheds:
                sched.inbox = queue.SimpleQueue()
                worker = threading.Thread(
                    target=self._worker_loop,
                    args=(sched, reports),
                    name=f"vpsim-core-{sched.core.core_id}",
                    daemon=True,
                )
                workers.append(worker)
                worker.start()

        self.watchdog.start()
        self._scheds = scheds
        self._consumed_total = 0
        self._outstanding = 0
        wall_start = time.perf_counter()
        try:
            cause = self._engine_loop(scheds, reports)
        finally:
            self._drain_running(scheds, reports)
            wall = time.perf_counter() - wall_start
            for sched in scheds:
                if sched.inbox is not None:
                    sched.inbox.put(_STOP)
            for worker in workers:
                worker.join(timeout=5)
            self.watchdog.stop()
            self.kernel.shutdown()
            for tee in tees:
                try:
                    tee.flush()
                except ValueError:
                    pass
            if capture is not None:
                capture.close()
            if self._vm is not None:
                self._vm.close()

        return RunMetrics(
            cores=cfg.cores,
            quantum=cfg.quantum,
            parallel=cfg.parallel,
            backend=cfg.backend,
            wall_s=wall,
            sim=self.kernel.now,
            instructions=self.total_instructions(),
            per_core=[core.state.instruction_counter for core in self.cores],
            exit_cause=cause,
            counts_exact=all(core.backend.exact_counts for core in self.cores),
        )

    def _make_wake_hook(self, sched: _CoreSched) -> Callable[[Core, int], None]:
        def hook(core: Core, line: int) -> None:
            if self.kernel.wake_core(core.core_id, line):
                self.wake_log.append((core.core_id, line, self.kernel.now))

        return hook

    def _worker_loop(self, sched: _CoreSched, reports: queue.SimpleQueue) -> None:
        assert sched.inbox is not None
        while True:
            job = sched.inbox.get()
            if job is _STOP:
                return
            budget, start = job
            try:
                seg = sched.core.simulate(budget)
                reports.put((sched, start, seg, None))
            except BaseException as exc:  # surfaces in the engine loop
                reports.put((sched, start, None, exc))

    def _engine_loop(self, scheds: list[_CoreSched], reports: queue.SimpleQueue) -> str:
        cfg = self.config
        kernel = self.kernel
        limit = cfg.max_sim_time
        while True:
            kernel.drain_requests()
            self._drain_reports(reports, block=False)

            if all(s.halted for s in scheds):
                return "halted"
            running = [s for s in scheds if s.running]
            if (
                cfg.max_instructions is not None
                and self._consumed_total >= cfg.max_instructions
                and not running
            ):
                self._advance_to_horizon(scheds)
                return "instruction-limit"

            ev_deadline = kernel.peek_deadline()
            best: _CoreSched | None = None
            best_key: tuple[int, int] | None = None
            if ev_deadline is not None:
                best_key = (ev_deadline, 0)
            for sched in scheds:
                if sched.next_action is not None:
                    key = (sched.next_action[0], sched.lane)
                    if best_key is None or key < best_key:
                        best_key = key
                        best = sched

            if best_key is None:
                if running:
                    self._drain_reports(reports, block=True)
                    continue
                if any(s.starved_at is not None for s in scheds):
                    self._advance_to_horizon(scheds)
                    return "instruction-limit"
                if any(s.time_done for s in scheds):
                    assert limit is not None
                    kernel.advance_to(limit)
                    return "time-limit"
                parked = kernel.parked_cores()
                if parked:
                    if limit is not None:
                        kernel.advance_to(limit)
                        return "idle"
                    raise DeadlockError(parked)
                return "halted"

            if running:
                bound = min(s.frontier for s in running)
                if best_key[0] > bound:
                    self._drain_reports(reports, block=True)
                    continue

            if limit is not None and best_key[0] > limit:
                # Items at exactly the limit still run; beyond it nothing does.
                kernel.advance_to(limit)
                return "time-limit"

            if best is None:
                handle = kernel.pop_due(best_key[0])
                assert handle is not None
                handle.action()
            else:
                at, kind, payload = best.next_action  # type: ignore[misc]
                best.next_action = None
                kernel.advance_to(at)
                self._execute_action(best, at, kind, payload)

    def _execute_action(self, sched: _CoreSched, at: int, kind: str, payload: Any) -> None:
        if kind == "step":
            self._dispatch(sched, at)
            return
        if kind == "mmio":
            access = payload
            data = access.data if access.data is not None else bytearray(access.size)
            tx = Transaction(access.kind, access.address, data, origin=sched.core.core_id)
            self.bus.transport(tx)
            if tx.status is not TxStatus.OK:
                raise PlatformError(
                    f"core {sched.core.core_id}: guest {access.kind.name.lower()} of "
                    f"{access.size} bytes at {access.address:#x} failed: {tx.status.name}"
                )
            access.data = tx.data
            sched.next_action = (at, "step", None)
            return
        if kind == "idle":
            if not self.config.idle_suspend:
                sched.next_action = (at, "step", None)
                return
            pending = sched.core.pending_irqs()
            if pending:
                # An interrupt is already pending: skip suspension entirely.
                sched.next_action = (at, "step", None)
                return
            self.suspend_log.append((sched.core.core_id, at))
            self.kernel.park(sched.core.core_id, self._make_wake_action(sched))
            return
        if kind == "bp":
            pc = payload
            self.breakpoint_hits.append((sched.core.core_id, pc, at))
            policy = "resume"
            if self.on_breakpoint is not None:
                policy = self.on_breakpoint(sched.core, pc)
            if policy == "halt":
                sched.halted = True
                return
            sched.core.backend.resume_over_breakpoint()
            sched.next_action = (at, "step", None)
            return
        if kind == "spurious":
            sched.core.backend.resume_over_breakpoint()
            sched.next_action = (at, "step", None)
            return
        if kind == "halt":
            sched.halted = True
            return
        if kind == "error":
            raise PlatformError(f"core {sched.core.core_id} backend error: {payload}")
        raise AssertionError(f"unknown action {kind!r}")

    def _advance_to_horizon(self, scheds: list[_CoreSched]) -> None:
        # Pull global time up to the end of all consumed work so the
        # reported simulated time covers every retired instruction.
        horizon = self.kernel.now
        for sched in scheds:
            if sched.next_action is not None:
                horizon = max(horizon, sched.next_action[0])
        self.kernel.advance_to(horizon)

    def _make_wake_action(self, sched: _CoreSched) -> Callable[[int], None]:
        def wake(_line: int) -> None:
            sched.next_action = (self.kernel.now, "step", None)

        return wake

    def _dispatch(self, sched: _CoreSched, at: int) -> None:
        budget = sched.budget
        limit = self.config.max_sim_time
        if limit is not None:
            # Clip so the segment cannot run past the simulation horizon.
            room = (limit - at) * sched.core.clock_hz // SEC
            if room <= 0:
                sched.time_done = True
                return
            budget = min(budget, room)
        cap = self.config.max_instructions
        if cap is not None:
            available = cap - self._consumed_total - self._outstanding
            if available <= 0:
                sched.starved_at = at
                return
            budget = min(budget, available)
        sched.segment_start = at
        if sched.inbox is not None:
            sched.running = True
            sched.reserved = budget
            sched.frontier = at
            self._outstanding += budget
            sched.inbox.put((budget, at))
        else:
            seg = sched.core.simulate(budget)
            self._integrate(sched, at, seg)

    def _integrate(self, sched: _CoreSched, start: int, seg: SegmentResult) -> None:
        if sched.running:
            sched.running = False
            self._outstanding -= sched.reserved
            sched.reserved = 0
        self._consumed_total += seg.consumed
        if quantum_check(seg.duration, max(self.config.quantum, 1)):
            log.debug("core %d synchronised a full quantum", sched.core.core_id)
        t_end = start + seg.duration
        exit_kind = seg.exit
        if exit_kind in (ExitKind.BUDGET_EXHAUSTED, ExitKind.KICKED):
            sched.next_action = (t_end, "step", None)
        elif exit_kind is ExitKind.MMIO:
            sched.next_action = (t_end, "mmio", seg.mmio)
        elif exit_kind is ExitKind.IDLE_HINT:
            sched.next_action = (t_end, "idle", None)
        elif exit_kind is ExitKind.BREAKPOINT:
            action = "spurious" if seg.hit is HitKind.SPURIOUS else "bp"
            sched.next_action = (t_end, action, seg.pc)
        elif exit_kind is ExitKind.HALTED:
            sched.next_action = (t_end, "halt", None)
        elif exit_kind is ExitKind.BACKEND_ERROR:
            sched.next_action = (t_end, "error", seg.detail)
        else:
            raise AssertionError(f"unhandled exit {exit_kind}")
        self._revive_starved()

    def _revive_starved(self) -> None:
        cap = self.config.max_instructions
        if cap is None:
            return
        for sched in self._scheds:
            if sched.starved_at is None:
                continue
            if cap - self._consumed_total - self._outstanding > 0:
                at = max(sched.starved_at, self.kernel.now)
                sched.starved_at = None
                sched.next_action = (at, "step", None)

    def _drain_reports(self, reports: queue.SimpleQueue, block: bool) -> None:
        deadline = time.monotonic() + _WORKER_PATIENCE_S
        while True:
            try:
                item = reports.get(timeout=0.05) if block else reports.get_nowait()
            except queue.Empty:
                if not block:
                    return
                self.kernel.drain_requests()
                if time.monotonic() > deadline:
                    raise PlatformError("no worker report within patience window") from None
                continue
            sched, start, seg, error = item
            if error is not None:
                sched.running = False
                self._outstanding -= sched.reserved
                sched.reserved = 0
                raise PlatformError(
                    f"core {sched.core.core_id} worker failed: {error}"
                ) from error
            self._integrate(sched, start, seg)
            block = False

    def _drain_running(self, scheds: list[_CoreSched], reports: queue.SimpleQueue) -> None:
        try:
            while any(s.running for s in scheds):
                self._drain_reports(reports, block=True)
        except PlatformError:
            log.exception("lost a worker while draining outstanding segments")


def run_platform(config: PlatformConfig) -> tuple[Platform, RunMetrics]:
    """Build a platform from config, run it once, return platform and metrics."""
    platform = Platform(config)
    metrics = platform.run()
    return platform, metrics
