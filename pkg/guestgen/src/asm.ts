/**
 * Tiny two-pass AArch64 assembler for bare-metal guest payloads.
 *
 * Covers just the instructions the payloads need: wide immediate moves,
 * add/sub immediate, 32/64-bit loads and stores with scaled unsigned
 * offsets, PC-relative branches, WFI, and RET.  Branch targets are text
 * labels resolved when the program is sealed, so payload code reads in
 * source order without hand-counted offsets.
 */

// Registers are plain numbers 0..31; 31 names the zero register for the
// data-processing and store forms used here, never the stack pointer.
export const XZR = 31;

function checkReg(r: number): number {
  if (!Number.isInteger(r) || r < 0 || r > 31) {
    throw new RangeError(`register out of range: ${r}`);
  }
  return r;
}

function checkImm(value: number, bits: number, what: string): number {
  if (!Number.isInteger(value) || value < 0 || value >= 2 ** bits) {
    throw new RangeError(`${what} out of range: ${value} (need 0..${2 ** bits - 1})`);
  }
  return value;
}

/** MOVZ Xd, #imm16, LSL #shift */
export function movz(rd: number, imm16: number, shift = 0): number {
  if (shift % 16 !== 0 || shift < 0 || shift > 48) {
    throw new RangeError(`movz shift must be 0/16/32/48, got ${shift}`);
  }
  return (0xd2800000 | ((shift / 16) << 21) | (checkImm(imm16, 16, "imm16") << 5) | checkReg(rd)) >>> 0;
}

/** MOVK Xd, #imm16, LSL #shift (keeps other halfwords) */
export function movk(rd: number, imm16: number, shift = 0): number {
  if (shift % 16 !== 0 || shift < 0 || shift > 48) {
    throw new RangeError(`movk shift must be 0/16/32/48, got ${shift}`);
  }
  return (0xf2800000 | ((shift / 16) << 21) | (checkImm(imm16, 16, "imm16") << 5) | checkReg(rd)) >>> 0;
}

/** ADD Xd, Xn, #imm12 */
export function addImm(rd: number, rn: number, imm12: number): number {
  return (0x91000000 | (checkImm(imm12, 12, "imm12") << 10) | (checkReg(rn) << 5) | checkReg(rd)) >>> 0;
}

/** SUB Xd, Xn, #imm12 */
export function subImm(rd: number, rn: number, imm12: number): number {
  return (0xd1000000 | (checkImm(imm12, 12, "imm12") << 10) | (checkReg(rn) << 5) | checkReg(rd)) >>> 0;
}

// Loads and stores use the unsigned scaled-offset form; the byte offset
// must be a multiple of the access size.
function scaled(offset: number, size: number): number {
  if (offset % size !== 0) {
    throw new RangeError(`offset ${offset} not ${size}-byte aligned`);
  }
  return checkImm(offset / size, 12, "scaled offset");
}

/** LDR Wt, [Xn, #offset] */
export function ldrW(rt: number, rn: number, offset = 0): number {
  return (0xb9400000 | (scaled(offset, 4) << 10) | (checkReg(rn) << 5) | checkReg(rt)) >>> 0;
}

/** STR Wt, [Xn, #offset] */
export function strW(rt: number, rn: number, offset = 0): number {
  return (0xb9000000 | (scaled(offset, 4) << 10) | (checkReg(rn) << 5) | checkReg(rt)) >>> 0;
}

/** LDR Xt, [Xn, #offset] */
export function ldrX(rt: number, rn: number, offset = 0): number {
  return (0xf9400000 | (scaled(offset, 8) << 10) | (checkReg(rn) << 5) | checkReg(rt)) >>> 0;
}

/** STR Xt, [Xn, #offset] */
export function strX(rt: number, rn: number, offset = 0): number {
  return (0xf9000000 | (scaled(offset, 8) << 10) | (checkReg(rn) << 5) | checkReg(rt)) >>> 0;
}

function branchDelta(delta: number, bits: number): number {
  const limit = 2 ** (bits - 1);
  if (delta < -limit || delta >= limit) {
    throw new RangeError(`branch offset ${delta} words exceeds ${bits}-bit range`);
  }
  return delta & (2 ** bits - 1);
}

/** B <offset in words> */
export function b(deltaWords: number): number {
  return (0x14000000 | branchDelta(deltaWords, 26)) >>> 0;
}

/** BL <offset in words> */
export function bl(deltaWords: number): number {
  return (0x94000000 | branchDelta(deltaWords, 26)) >>> 0;
}

/** CBZ Xt, <offset in words> */
export function cbz(rt: number, deltaWords: number): number {
  return (0xb4000000 | (branchDelta(deltaWords, 19) << 5) | checkReg(rt)) >>> 0;
}

/** CBNZ Xt, <offset in words> */
export function cbnz(rt: number, deltaWords: number): number {
  return (0xb5000000 | (branchDelta(deltaWords, 19) << 5) | checkReg(rt)) >>> 0;
}

export function ret(): number {
  return 0xd65f03c0;
}

export function wfi(): number {
  return 0xd503207f;
}

export function nop(): number {
  return 0xd503201f;
}

export interface FunctionSymbol {
  name: string;
  address: number;
  size: number;
}

export interface AssembledImage {
  base: number;
  code: Uint8Array;
  entry: number;
  symbols: FunctionSymbol[];
}

type BranchEncoder = (deltaWords: number) => number;

interface Fixup {
  index: number;
  label: string;
  encode: BranchEncoder;
}

/**
 * Accumulates instruction words at a fixed load address and resolves
 * label-relative branches when `seal` is called.
 */
export class Assembler {
  readonly base: number;
  private readonly words: number[] = [];
  private readonly labels = new Map<string, number>();
  private readonly fixups: Fixup[] = [];
  private readonly functions: { name: string; start: number; end?: number }[] = [];
  private open: { name: string; start: number } | null = null;

  constructor(base: number) {
    if (base % 4 !== 0) {
      throw new RangeError(`load address ${base} not word aligned`);
    }
    this.base = base;
  }

  /** Address of the next emitted instruction. */
  get pc(): number {
    return this.base + this.words.length * 4;
  }

  emit(word: number): void {
    this.words.push(word >>> 0);
  }

  /** Define a branch target at the current position. */
  label(name: string): void {
    if (this.labels.has(name)) {
      throw new Error(`duplicate label ${name}`);
    }
    this.labels.set(name, this.words.length);
  }

  /** Open a named function; it becomes a label and a sized symbol. */
  beginFunction(name: string): void {
    if (this.open) {
      throw new Error(`function ${this.open.name} still open`);
    }
    this.label(name);
    this.open = { name, start: this.words.length };
  }

  endFunction(): void {
    if (!this.open) {
      throw new Error("no open function");
    }
    this.functions.push({ ...this.open, end: this.words.length });
    this.open = null;
  }

  /** Load a 64-bit constant with MOVZ plus as many MOVKs as needed. */
  loadImm(rd: number, value: number | bigint): void {
    let rest = BigInt(value);
    if (rest < 0n || rest >= 1n << 64n) {
      throw new RangeError(`immediate out of u64 range: ${value}`);
    }
    let emitted = false;
    for (let shift = 0; shift < 64; shift += 16) {
      const half = Number((rest >> BigInt(shift)) & 0xffffn);
      if (half !== 0) {
        this.emit(emitted ? movk(rd, half, shift) : movz(rd, half, shift));
        emitted = true;
      }
    }
    if (!emitted) {
      this.emit(movz(rd, 0));
    }
  }

  branch(label: string): void {
    this.branchTo(label, b);
  }

  call(label: string): void {
    this.branchTo(label, bl);
  }

  branchIfZero(rt: number, label: string): void {
    this.branchTo(label, (delta) => cbz(rt, delta));
  }

  branchIfNotZero(rt: number, label: string): void {
    this.branchTo(label, (delta) => cbnz(rt, delta));
  }

  private branchTo(label: string, encode: BranchEncoder): void {
    this.fixups.push({ index: this.words.length, label, encode });
    this.emit(0); // placeholder patched in seal()
  }

  /** Resolve branches and produce the final image. */
  seal(entryLabel: string): AssembledImage {
    if (this.open) {
      throw new Error(`function ${this.open.name} never closed`);
    }
    for (const fixup of this.fixups) {
      const target = this.labels.get(fixup.label);
      if (target === undefined) {
        throw new Error(`undefined label ${fixup.label}`);
      }
      this.words[fixup.index] = fixup.encode(target - fixup.index);
    }
    const entryIndex = this.labels.get(entryLabel);
    if (entryIndex === undefined) {
      throw new Error(`undefined entry label ${entryLabel}`);
    }
    const code = new Uint8Array(this.words.length * 4);
    const view = new DataView(code.buffer);
    this.words.forEach((word, i) => view.setUint32(i * 4, word, true));
    const symbols = this.functions.map((f) => ({
      name: f.name,
      address: this.base + f.start * 4,
      size: ((f.end ?? f.start) - f.start) * 4,
    }));
    return { base: this.base, code, entry: this.base + entryIndex * 4, symbols };
  }
}
