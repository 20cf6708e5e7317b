"""Simulation time base: unsigned 64-bit picosecond ticks and cycle arithmetic."""

from __future__ import annotations

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000
SEC = 1_000_000_000_000

# u64 tick budget covers ~213 days of simulated time at 1 ps resolution.
MAX_TIME = 2**64 - 1

_UNITS = {
    "ps": PS,
    "ns": NS,
    "us": US,
    "µs": US,
    "ms": MS,
    "s": SEC,
}


def check_time(ticks: int) -> int:
    """Validate a tick value against the u64 range. Returns it unchanged."""
    if not 0 <= ticks <= MAX_TIME:
        raise OverflowError(f"time {ticks} outside u64 tick range")
    return ticks


def parse_duration(value: int | float | str) -> int:
    """Parse a duration into ticks.

    Bare numbers are nanoseconds; strings take a ps/ns/us/ms/s suffix
    ("10us", "1.5ms"). Fractions below one tick round to nearest.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, int):
        return check_time(value * NS)
    if isinstance(value, float):
        return check_time(round(value * NS))
    text = value.strip().lower()
    for suffix, scale in _UNITS.items():
        if text.endswith(suffix):
            number = text[: -len(suffix)].strip()
            try:
                return check_time(round(float(number) * scale))
            except ValueError:
                raise ValueError(f"malformed duration: {value!r}") from None
    try:
        return check_time(round(float(text) * NS))
    except ValueError:
        raise ValueError(f"malformed duration: {value!r}") from None


def format_duration(ticks: int) -> str:
    for suffix, scale in (("s", SEC), ("ms", MS), ("us", US), ("ns", NS)):
        if ticks >= scale and ticks % scale == 0:
            return f"{ticks // scale}{suffix}"
    return f"{ticks}ps"


def cycles_to_ticks(cycles: int, clock_hz: int) -> int:
    """Convert a cycle count to ticks at clock_hz, rounding half up."""
    if clock_hz <= 0:
        raise ValueError(f"clock must be positive, got {clock_hz}")
    return check_time((cycles * SEC + clock_hz // 2) // clock_hz)


def ticks_to_seconds(ticks: int) -> float:
    return ticks / SEC


# Wall-clock watchdog windows are quantised to this grain; see budget_to_window.
WINDOW_RESOLUTION = 100 * US


def budget_to_window(cycles: int, clock_hz: int, resolution: int = WINDOW_RESOLUTION) -> int:
    """Wall-clock window (ticks) a run of `cycles` at `clock_hz` may take.

    cycles / clock_hz, rounded up to the watchdog resolution.  Never zero:
    even a one-cycle budget yields a full resolution step, so a scheduled
    kick can always be outrun by a well-behaved backend.
    """
    if cycles < 0:
        raise ValueError(f"budget must be non-negative, got {cycles}")
    if clock_hz <= 0:
        raise ValueError(f"clock must be positive, got {clock_hz}")
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    exact = -((-cycles * SEC) // clock_hz)  # ceil division in ticks
    steps = max(1, -(-exact // resolution))
    return check_time(steps * resolution)


def elapsed_to_cycles(elapsed_s: float, clock_hz: int, budget: int) -> int:
    """Cycle count attributed to a run that took elapsed_s of wall clock.

    Rounds elapsed * clock_hz half up, then caps at the granted budget so
    host hiccups never inflate simulated progress past the window.
    """
    if elapsed_s < 0:
        raise ValueError(f"elapsed must be non-negative, got {elapsed_s}")
    if clock_hz <= 0:
        raise ValueError(f"clock must be positive, got {clock_hz}")
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")
    return min(int(elapsed_s * clock_hz + 0.5), budget)


def quantum_check(local_offset: int, quantum: int) -> bool:
    """True when a decoupled context has used up its quantum and must sync."""
    if quantum <= 0:
        raise ValueError(f"quantum must be positive, got {quantum}")
    return local_offset >= quantum
