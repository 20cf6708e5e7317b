/**
 * ELF64 little-endian writer for static AArch64 executables.
 *
 * Emits exactly what a bare-metal loader needs: the file header, one
 * PT_LOAD program header per segment, the raw segment bytes, and a
 * symbol table (.symtab/.strtab/.shstrtab) describing the function
 * entry points so an annotator can find them again.
 */

const EI_NIDENT = 16;
const ELFCLASS64 = 2;
const ELFDATA2LSB = 1;
const EV_CURRENT = 1;

const ET_EXEC = 2;
const EM_AARCH64 = 183;

const PT_LOAD = 1;
export const PF_X = 1;
export const PF_W = 2;
export const PF_R = 4;

const SHT_SYMTAB = 2;
const SHT_STRTAB = 3;

const STB_GLOBAL = 1;
const STT_FUNC = 2;
const SHN_ABS = 0xfff1;

const EHDR_SIZE = 64;
const PHDR_SIZE = 56;
const SHDR_SIZE = 64;
const SYM_SIZE = 24;

export interface Segment {
  vaddr: number;
  data: Uint8Array;
  /** Total run-time size; defaults to the file size. */
  memsz?: number;
  /** PF_* mask; defaults to read+execute. */
  flags?: number;
}

export interface FuncSymbol {
  name: string;
  address: number;
  size: number;
}

class ByteWriter {
  private buf: Uint8Array;
  private view: DataView;
  private len = 0;

  constructor(capacity = 4096) {
    this.buf = new Uint8Array(capacity);
    this.view = new DataView(this.buf.buffer);
  }

  get position(): number {
    return this.len;
  }

  private grow(extra: number): void {
    if (this.len + extra <= this.buf.length) return;
    const next = new Uint8Array(Math.max(this.buf.length * 2, this.len + extra));
    next.set(this.buf.subarray(0, this.len));
    this.buf = next;
    this.view = new DataView(this.buf.buffer);
  }

  u8(v: number): void {
    this.grow(1);
    this.view.setUint8(this.len, v);
    this.len += 1;
  }

  u16(v: number): void {
    this.grow(2);
    this.view.setUint16(this.len, v, true);
    this.len += 2;
  }

  u32(v: number): void {
    this.grow(4);
    this.view.setUint32(this.len, v >>> 0, true);
    this.len += 4;
  }

  u64(v: number | bigint): void {
    this.grow(8);
    this.view.setBigUint64(this.len, BigInt(v), true);
    this.len += 8;
  }

  bytes(data: Uint8Array): void {
    this.grow(data.length);
    this.buf.set(data, this.len);
    this.len += data.length;
  }

  padTo(offset: number): void {
    if (offset < this.len) {
      throw new RangeError(`cannot pad backwards to ${offset} from ${this.len}`);
    }
    this.grow(offset - this.len);
    this.len = offset;
  }

  finish(): Uint8Array {
    return this.buf.slice(0, this.len);
  }
}

/** Section names within .shstrtab, offsets computed once. */
function stringTable(names: string[]): { blob: Uint8Array; offsets: number[] } {
  const offsets: number[] = [];
  const bytes: number[] = [0];
  for (const name of names) {
    offsets.push(bytes.length);
    for (const ch of name) bytes.push(ch.charCodeAt(0));
    bytes.push(0);
  }
  return { blob: new Uint8Array(bytes), offsets };
}

const align = (v: number, a: number): number => Math.ceil(v / a) * a;

/** Serialize segments and symbols into a static executable image. */
export function writeElf(entry: number, segments: Segment[], symbols: FuncSymbol[]): Uint8Array {
  if (segments.length === 0) {
    throw new Error("an executable needs at least one load segment");
  }

  // File layout: ehdr, phdrs, segment payloads, symtab, strtab,
  // shstrtab, then the section header table.
  const phoff = EHDR_SIZE;
  let cursor = phoff + segments.length * PHDR_SIZE;
  const segOffsets = segments.map((seg) => {
    // Keep p_offset congruent with p_vaddr modulo the segment alignment.
    cursor = align(cursor, 8) + ((seg.vaddr % 8) + 8) % 8;
    const at = cursor;
    cursor += seg.data.length;
    return at;
  });

  const symtabOff = align(cursor, 8);
  const symtabSize = (symbols.length + 1) * SYM_SIZE;

  const strings = stringTable(symbols.map((s) => s.name));
  const strtabOff = symtabOff + symtabSize;

  const shnames = stringTable([".symtab", ".strtab", ".shstrtab"]);
  const shstrtabOff = strtabOff + strings.blob.length;

  const shoff = align(shstrtabOff + shnames.blob.length, 8);
  const shnum = 4; // null, .symtab, .strtab, .shstrtab

  const w = new ByteWriter(shoff + shnum * SHDR_SIZE);

  // ELF header
  w.bytes(new Uint8Array([0x7f, 0x45, 0x4c, 0x46, ELFCLASS64, ELFDATA2LSB, EV_CURRENT, 0]));
  w.padTo(EI_NIDENT);
  w.u16(ET_EXEC);
  w.u16(EM_AARCH64);
  w.u32(EV_CURRENT);
  w.u64(entry);
  w.u64(phoff);
  w.u64(shoff);
  w.u32(0); // e_flags
  w.u16(EHDR_SIZE);
  w.u16(PHDR_SIZE);
  w.u16(segments.length);
  w.u16(SHDR_SIZE);
  w.u16(shnum);
  w.u16(3); // e_shstrndx -> .shstrtab

  // Program headers
  segments.forEach((seg, i) => {
    w.u32(PT_LOAD);
    w.u32(seg.flags ?? PF_R | PF_X);
    w.u64(segOffsets[i]);
    w.u64(seg.vaddr);
    w.u64(seg.vaddr); // p_paddr mirrors p_vaddr
    w.u64(seg.data.length);
    w.u64(seg.memsz ?? seg.data.length);
    w.u64(8);
  });

  // Segment payloads
  segments.forEach((seg, i) => {
    w.padTo(segOffsets[i]);
    w.bytes(seg.data);
  });

  // .symtab: leading null entry, then one global FUNC per symbol
  w.padTo(symtabOff);
  w.u32(0);
  w.u8(0);
  w.u8(0);
  w.u16(0);
  w.u64(0);
  w.u64(0);
  symbols.forEach((sym, i) => {
    w.u32(strings.offsets[i]);
    w.u8((STB_GLOBAL << 4) | STT_FUNC);
    w.u8(0);
    w.u16(SHN_ABS);
    w.u64(sym.address);
    w.u64(sym.size);
  });

  // String tables
  w.bytes(strings.blob);
  w.bytes(shnames.blob);

  // Section headers: index 0 is the all-zero null section.
  w.padTo(shoff);
  for (let i = 0; i < SHDR_SIZE / 4; i++) w.u32(0);

  const shdr = (
    nameOff: number,
    type: number,
    offset: number,
    size: number,
    link: number,
    info: number,
    entsize: number,
  ): void => {
    w.u32(nameOff);
    w.u32(type);
    w.u64(0); // sh_flags
    w.u64(0); // sh_addr
    w.u64(offset);
    w.u64(size);
    w.u32(link);
    w.u32(info);
    w.u64(1); // sh_addralign
    w.u64(entsize);
  };

  // symtab sh_info: index of the first non-local symbol (after the null).
  shdr(shnames.offsets[0], SHT_SYMTAB, symtabOff, symtabSize, 2, 1, SYM_SIZE);
  shdr(shnames.offsets[1], SHT_STRTAB, strtabOff, strings.blob.length, 0, 0, 0);
  shdr(shnames.offsets[2], SHT_STRTAB, shstrtabOff, shnames.blob.length, 0, 0, 0);

  return w.finish();
}

/**
 * Flatten load segments into one raw image starting at the lowest vaddr.
 * Gaps between segments are zero-filled.
 */
export function flatBinary(segments: Segment[]): { base: number; data: Uint8Array } {
  const sorted = [...segments].sort((a, b) => a.vaddr - b.vaddr);
  const base = sorted[0].vaddr;
  const end = sorted.reduce((acc, seg) => Math.max(acc, seg.vaddr + seg.data.length), base);
  const data = new Uint8Array(end - base);
  for (const seg of sorted) {
    data.set(seg.data, seg.vaddr - base);
  }
  return { base, data };
}

const hex = (v: number, width = 16): string => "0x" + v.toString(16).padStart(width, "0");

/** Human-readable symbol map, one `address size name` line per function. */
export function symbolMap(name: string, entry: number, symbols: FuncSymbol[]): string {
  const lines = [`# ${name}`, `# entry ${hex(entry)}`];
  const sorted = [...symbols].sort((a, b) => a.address - b.address);
  for (const sym of sorted) {
    lines.push(`${hex(sym.address)} ${hex(sym.size, 4)} T ${sym.name}`);
  }
  return lines.join("\n") + "\n";
}

/** Parse a symbol map back into records (the round-trip check uses this). */
export function parseSymbolMap(text: string): FuncSymbol[] {
  const out: FuncSymbol[] = [];
  for (const line of text.split("\n")) {
    if (!line || line.startsWith("#")) continue;
    const [address, size, kind, name] = line.split(/\s+/);
    if (kind !== "T" || !name) {
      throw new Error(`malformed map line: ${line}`);
    }
    out.push({ name, address: Number(address), size: Number(size) });
  }
  return out;
}
