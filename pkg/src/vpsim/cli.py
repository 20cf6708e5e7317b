"""Command line entry points for running and sweeping virtual platforms."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bus import BusError
from .elf import ElfParseError
from .kernel import DeadlockError
from .kvm import CapabilityError
from .platform import (
    ConfigError,
    ImageSpec,
    PlatformConfig,
    PlatformError,
    RunMetrics,
    load_config,
    run_platform,
)
from .report import format_table, render_sweep, write_csv
from .simtime import parse_duration

log = logging.getLogger(__name__)


def _parse_image(text: str) -> ImageSpec:
    # IMAGE[@LOADADDR]; ELF images carry their own layout.
    path_text, sep, addr = text.partition("@")
    path = Path(path_text)
    if sep:
        return ImageSpec(path, "flat", int(addr, 0))
    if path.suffix == ".elf":
        return ImageSpec(path, "elf")
    raise ConfigError(f"flat image {path} needs a load address, e.g. {path}@0x40000000")


def _parallel_flag(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", type=Path, help="platform YAML file")
    parser.add_argument("--image", action="append", default=[], metavar="PATH[@ADDR]",
                        help="guest image; repeatable")
    parser.add_argument("--cores", type=int, help="number of cores")
    parser.add_argument("--clock", type=str, help="core clock in Hz")
    parser.add_argument("--backend", choices=["interpreter", "hardware"])
    parser.add_argument("--entry", type=str, help="entry pc, e.g. 0x40000000")
    parser.add_argument("--max-sim-time", type=str, metavar="DUR",
                        help="stop after this much simulated time, e.g. 50ms")
    parser.add_argument("--max-instructions", type=int, metavar="N",
                        help="stop once N instructions have been consumed")
    parser.add_argument("--annotate-wfi", dest="wfi", action="store_true", default=None,
                        help="locate the idle loop and trap its wait-for-interrupt")
    parser.add_argument("--no-idle-suspend", dest="idle_suspend", action="store_false",
                        default=None, help="trap idle hints but never suspend")
    parser.add_argument("--uart-capture", type=Path, metavar="FILE")
    parser.add_argument("--uart-stdout", action="store_true", default=None)
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _duration(text: str) -> int:
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _number(text: str) -> int:
    try:
        return int(text.replace("_", ""), 0)
    except ValueError:
        raise ConfigError(f"malformed number: {text!r}") from None


def _base_config(args: argparse.Namespace) -> PlatformConfig:
    cfg = load_config(args.config) if args.config else PlatformConfig()
    if args.image:
        cfg.images = [_parse_image(t) for t in args.image]
    if args.cores is not None:
        cfg.cores = args.cores
    if args.clock is not None:
        cfg.clock_hz = [_number(args.clock)]
    if args.backend is not None:
        cfg.backend = args.backend
    if args.entry is not None:
        cfg.entry = [_number(args.entry)]
    if args.max_sim_time is not None:
        cfg.max_sim_time = _duration(args.max_sim_time)
    if args.max_instructions is not None:
        cfg.max_instructions = args.max_instructions
    if args.wfi is not None:
        cfg.wfi_annotation = args.wfi
    if args.idle_suspend is not None:
        cfg.idle_suspend = args.idle_suspend
    if args.uart_capture is not None:
        cfg.uart_capture = args.uart_capture
    if args.uart_stdout is not None:
        cfg.uart_stdout = args.uart_stdout
    return cfg


def _run_one(cfg: PlatformConfig) -> RunMetrics:
    _platform, metrics = run_platform(cfg)
    return metrics


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    if args.quantum is not None:
        cfg.quantum = _duration(args.quantum)
    if args.parallel is not None:
        cfg.parallel = args.parallel
    cfg.validate()
    metrics = _run_one(cfg)
    print(format_table([metrics]))
    if args.csv or cfg.csv:
        target = args.csv or cfg.csv
        write_csv(target, [metrics], append=args.append)
        print(f"wrote {target}", file=sys.stderr)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _base_config(args)
    quantums = [_duration(q) for q in args.quantums.split(",")]
    core_counts = [_number(c) for c in args.cores_list.split(",")] if args.cores_list else [base.cores]
    modes = [False, True] if args.both_modes else [args.parallel or False]

    rows: list[RunMetrics] = []
    for cores in core_counts:
        for parallel in modes:
            for quantum in quantums:
                cfg = PlatformConfig(**{**base.__dict__})
                cfg.cores = cores
                cfg.quantum = quantum
                cfg.parallel = parallel
                cfg.validate()
                rows.append(_run_one(cfg))
                print(format_table([rows[-1]]) if len(rows) == 1 else format_table(rows).splitlines()[-1])

    csv_path = args.csv or Path("sweep.csv")
    write_csv(csv_path, rows, append=args.append)
    print(f"wrote {csv_path}", file=sys.stderr)
    plot_path = args.plot or Path(csv_path).with_suffix(".png")
    render_sweep(plot_path, rows)
    print(f"wrote {plot_path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpsim",
        description="Quantum-based multicore virtual platform simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one platform configuration")
    _add_common(p_run)
    p_run.add_argument("--quantum", type=str, help="scheduling quantum, e.g. 1ms")
    p_run.add_argument("--parallel", type=_parallel_flag, metavar="on|off", default=None)
    p_run.add_argument("--csv", type=Path, help="metrics output")
    p_run.add_argument("--append", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep quantum sizes and core counts")
    _add_common(p_sweep)
    p_sweep.add_argument("--quantums", required=True, metavar="Q1,Q2,...",
                         help="comma list of quanta, e.g. 10us,100us,1ms")
    p_sweep.add_argument("--cores-list", metavar="N1,N2,...", help="comma list of core counts")
    p_sweep.add_argument("--parallel", type=_parallel_flag, metavar="on|off", default=None)
    p_sweep.add_argument("--both-modes", action="store_true",
                         help="run each point sequentially and in parallel")
    p_sweep.add_argument("--csv", type=Path, help="metrics output (default sweep.csv)")
    p_sweep.add_argument("--append", action="store_true")
    p_sweep.add_argument("--plot", type=Path, help="figure output (default: csv name .png)")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CapabilityError, ConfigError, PlatformError, BusError, ElfParseError, DeadlockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
