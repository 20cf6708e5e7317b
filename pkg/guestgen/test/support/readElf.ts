/**
 * Independent ELF64 reader used only by the tests.  Deliberately built
 * straight on DataView against the file format description rather than
 * sharing any code with the writer, so a writer bug cannot hide.
 */

export interface ReadSegment {
  type: number;
  flags: number;
  offset: number;
  vaddr: number;
  paddr: number;
  filesz: number;
  memsz: number;
  align: number;
  data: Uint8Array;
}

export interface ReadSymbol {
  name: string;
  info: number;
  shndx: number;
  value: number;
  size: number;
}

export interface ReadElf {
  ident: Uint8Array;
  type: number;
  machine: number;
  entry: number;
  segments: ReadSegment[];
  sectionNames: string[];
  symbols: ReadSymbol[];
}

function cstring(bytes: Uint8Array, at: number): string {
  let end = at;
  while (end < bytes.length && bytes[end] !== 0) end++;
  return new TextDecoder().decode(bytes.subarray(at, end));
}

export function readElf(blob: Uint8Array): ReadElf {
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const u16 = (at: number) => view.getUint16(at, true);
  const u32 = (at: number) => view.getUint32(at, true);
  const u64 = (at: number) => Number(view.getBigUint64(at, true));

  const ident = blob.slice(0, 16);
  const type = u16(16);
  const machine = u16(18);
  const entry = u64(24);
  const phoff = u64(32);
  const shoff = u64(40);
  const phentsize = u16(54);
  const phnum = u16(56);
  const shentsize = u16(58);
  const shnum = u16(60);
  const shstrndx = u16(62);

  const segments: ReadSegment[] = [];
  for (let i = 0; i < phnum; i++) {
    const at = phoff + i * phentsize;
    const offset = u64(at + 8);
    const filesz = u64(at + 32);
    segments.push({
      type: u32(at),
      flags: u32(at + 4),
      offset,
      vaddr: u64(at + 16),
      paddr: u64(at + 24),
      filesz,
      memsz: u64(at + 40),
      align: u64(at + 48),
      data: blob.slice(offset, offset + filesz),
    });
  }

  interface Shdr {
    name: number;
    type: number;
    offset: number;
    size: number;
    link: number;
    entsize: number;
  }
  const sections: Shdr[] = [];
  for (let i = 0; i < shnum; i++) {
    const at = shoff + i * shentsize;
    sections.push({
      name: u32(at),
      type: u32(at + 4),
      offset: u64(at + 24),
      size: u64(at + 32),
      link: u32(at + 40),
      entsize: u64(at + 56),
    });
  }

  const shstr = sections[shstrndx];
  const shstrBytes = blob.slice(shstr.offset, shstr.offset + shstr.size);
  const sectionNames = sections.map((s) => cstring(shstrBytes, s.name));

  const symbols: ReadSymbol[] = [];
  for (const sec of sections) {
    if (sec.type !== 2) continue; // SHT_SYMTAB
    const strSec = sections[sec.link];
    const strBytes = blob.slice(strSec.offset, strSec.offset + strSec.size);
    for (let at = sec.offset; at < sec.offset + sec.size; at += sec.entsize) {
      const nameOff = u32(at);
      const name = cstring(strBytes, nameOff);
      if (!name) continue;
      symbols.push({
        name,
        info: view.getUint8(at + 4),
        shndx: u16(at + 6),
        value: u64(at + 8),
        size: u64(at + 16),
      });
    }
  }

  return { ident, type, machine, entry, segments, sectionNames, symbols };
}
