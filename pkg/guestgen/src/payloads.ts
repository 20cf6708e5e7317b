/**
 * The guest payload programs, written against the vpsim platform's
 * default memory map.
 *
 * Every payload exposes a `cpu_do_idle` function wrapping exactly one
 * WFI so the host can annotate the idle loop: a breakpoint on that
 * address turns idle entries into core suspensions.  Payloads never
 * rely on taking an exception; WFI is a wake event even with PSTATE
 * interrupts masked, so after each wake they poll device state.
 */

import { Assembler, XZR, ret, wfi, addImm, movz, strW, ldrW, strX, ldrX } from "./asm.js";
import type { FuncSymbol, Segment } from "./elf.js";
import { PF_R, PF_X } from "./elf.js";

export const RAM_BASE = 0x4000_0000;
export const UART_DATA = 0x0900_0000;
export const TIMER_BASE = 0x0901_0000; // compare +0, control +8, period +0x10, status +0x18
export const IRQCTL_ENABLE = 0x0800_0000;

// Wake counter the wfi_idle payload maintains, well above the code.
export const COUNTER_ADDR = RAM_BASE + 0x10_0000;

// Simulation ticks are picoseconds; the sample timer runs at 1 ms.
export const PERIOD_TICKS = 1_000_000_000;

const TIMER_CONTROL = 8;
const TIMER_PERIOD = 0x10;
const TIMER_STATUS = 0x18;
const CTRL_ENABLE_PERIODIC = 3;

export interface Payload {
  name: string;
  entry: number;
  segments: Segment[];
  symbols: FuncSymbol[];
}

function emitIdleFunction(asm: Assembler): void {
  asm.beginFunction("cpu_do_idle");
  asm.emit(wfi());
  asm.emit(ret());
  asm.endFunction();
}

function finish(name: string, asm: Assembler): Payload {
  const image = asm.seal("_start");
  return {
    name,
    entry: image.entry,
    segments: [{ vaddr: image.base, data: image.code, flags: PF_R | PF_X }],
    symbols: image.symbols,
  };
}

/** Print "HI\n" on the UART, then idle forever. */
export function uartHello(): Payload {
  const asm = new Assembler(RAM_BASE);
  asm.beginFunction("_start");
  asm.loadImm(1, UART_DATA);
  for (const ch of "HI\n") {
    asm.emit(movz(2, ch.charCodeAt(0)));
    asm.emit(strW(2, 1));
  }
  asm.label("park");
  asm.call("cpu_do_idle");
  asm.branch("park");
  asm.endFunction();
  emitIdleFunction(asm);
  return finish("uart_hello", asm);
}

/** Increment x0 forever; never idles, so every quantum runs to its budget. */
export function busyLoop(): Payload {
  const asm = new Assembler(RAM_BASE);
  asm.beginFunction("_start");
  asm.emit(movz(0, 0));
  asm.label("spin");
  asm.emit(addImm(0, 0, 1));
  asm.branch("spin");
  asm.endFunction();
  emitIdleFunction(asm);
  return finish("busy_loop", asm);
}

/**
 * Classic timer-paced idle loop: program a 1 ms periodic timer, then
 * sleep in cpu_do_idle and count expiries.  The fired bit gates the
 * counter so a spurious wake just goes back to sleep.
 */
export function wfiIdle(): Payload {
  const asm = new Assembler(RAM_BASE);
  asm.beginFunction("_start");

  asm.loadImm(0, IRQCTL_ENABLE);
  asm.emit(movz(2, 1));
  asm.emit(strW(2, 0)); // unmask line 0, the timer

  asm.loadImm(1, TIMER_BASE);
  asm.loadImm(3, PERIOD_TICKS);
  asm.emit(strX(3, 1, TIMER_PERIOD));
  asm.emit(strX(XZR, 1, 0)); // compare in the past: first expiry is immediate
  asm.emit(movz(2, CTRL_ENABLE_PERIODIC));
  asm.emit(strW(2, 1, TIMER_CONTROL));

  asm.loadImm(4, COUNTER_ADDR);

  asm.label("idle");
  asm.call("cpu_do_idle");
  asm.emit(ldrW(2, 1, TIMER_STATUS));
  asm.branchIfZero(2, "idle");

  asm.emit(ldrX(5, 4));
  asm.emit(addImm(5, 5, 1));
  asm.emit(strX(5, 4));
  asm.emit(movz(2, 1));
  asm.emit(strW(2, 1, TIMER_STATUS)); // ack lowers the line
  asm.branch("idle");
  asm.endFunction();

  emitIdleFunction(asm);
  return finish("wfi_idle", asm);
}

export function buildPayloads(): Payload[] {
  return [uartHello(), busyLoop(), wfiIdle()];
}
