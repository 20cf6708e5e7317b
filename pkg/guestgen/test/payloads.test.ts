import { describe, expect, it } from "vitest";

import { ldrW, movk, movz, ret, strW, strX, wfi } from "../src/asm.js";
import { flatBinary, parseSymbolMap, symbolMap, writeElf } from "../src/elf.js";
import {
  COUNTER_ADDR,
  PERIOD_TICKS,
  RAM_BASE,
  buildPayloads,
  busyLoop,
  uartHello,
  wfiIdle,
  type Payload,
} from "../src/payloads.js";
import { readElf, type ReadElf } from "./support/readElf.js";

const WFI_WORD = wfi();

function elfOf(payload: Payload): ReadElf {
  return readElf(writeElf(payload.entry, payload.segments, payload.symbols));
}

function wordsOf(data: Uint8Array): number[] {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  return Array.from({ length: data.length >> 2 }, (_, i) => view.getUint32(i * 4, true));
}

describe("payload corpus", () => {
  const payloads = buildPayloads();

  it("builds the three expected programs", () => {
    expect(payloads.map((p) => p.name)).toEqual(["uart_hello", "busy_loop", "wfi_idle"]);
  });

  it.each(payloads.map((p) => [p.name, p] as const))("%s round-trips through ELF", (_name, payload) => {
    const image = elfOf(payload);
    expect(image.entry).toBe(payload.entry);
    expect(
      image.segments.some(
        (s) => s.vaddr <= image.entry && image.entry < s.vaddr + Math.max(s.memsz, s.filesz),
      ),
    ).toBe(true);
    expect(image.symbols.map((s) => [s.name, s.value, s.size])).toEqual(
      payload.symbols.map((s) => [s.name, s.address, s.size]),
    );
  });

  it.each(payloads.map((p) => [p.name, p] as const))(
    "%s has cpu_do_idle wrapping exactly one WFI",
    (_name, payload) => {
      const image = elfOf(payload);
      const idle = image.symbols.find((s) => s.name === "cpu_do_idle");
      expect(idle).toBeDefined();
      expect(idle!.info).toBe(0x12); // GLOBAL FUNC

      const seg = image.segments.find(
        (s) => s.vaddr <= idle!.value && idle!.value + idle!.size <= s.vaddr + s.filesz,
      )!;
      const body = seg.data.subarray(idle!.value - seg.vaddr, idle!.value - seg.vaddr + idle!.size);
      expect(wordsOf(body)).toEqual([WFI_WORD, ret()]);

      // The idle routine owns the only WFI in the whole program.
      const everywhere = image.segments.flatMap((s) => wordsOf(s.data));
      expect(everywhere.filter((w) => w === WFI_WORD)).toHaveLength(1);
    },
  );

  it.each(payloads.map((p) => [p.name, p] as const))(
    "%s flat binary equals its concatenated load segments",
    (_name, payload) => {
      const image = elfOf(payload);
      const { base, data } = flatBinary(payload.segments);
      const sorted = [...image.segments].sort((a, b) => a.vaddr - b.vaddr);
      expect(base).toBe(sorted[0].vaddr);
      const concat = new Uint8Array(sorted.reduce((n, s) => n + s.filesz, 0));
      let at = 0;
      for (const seg of sorted) {
        expect(seg.vaddr).toBe(base + at); // payload segments are contiguous
        concat.set(seg.data, at);
        at += seg.filesz;
      }
      expect(Array.from(data)).toEqual(Array.from(concat));
    },
  );

  it.each(payloads.map((p) => [p.name, p] as const))(
    "%s symbol map agrees with the ELF symbol table",
    (_name, payload) => {
      const image = elfOf(payload);
      const parsed = parseSymbolMap(symbolMap(payload.name, payload.entry, payload.symbols));
      expect(parsed).toEqual(image.symbols.map((s) => ({ name: s.name, address: s.value, size: s.size })));
    },
  );

  it("builds are deterministic", () => {
    const twice = [buildPayloads(), buildPayloads()].map((round) =>
      round.map((p) => Buffer.from(writeElf(p.entry, p.segments, p.symbols)).toString("hex")),
    );
    expect(twice[0]).toEqual(twice[1]);
  });
});

describe("program shape", () => {
  it("every payload starts at the RAM base", () => {
    for (const payload of buildPayloads()) {
      expect(payload.entry).toBe(RAM_BASE);
      expect(payload.segments[0].vaddr).toBe(RAM_BASE);
    }
  });

  it("uart_hello stores each byte of HI\\n with 32-bit writes", () => {
    const words = wordsOf(uartHello().segments[0].data);
    for (const ch of "HI\n") {
      expect(words).toContain(movz(2, ch.charCodeAt(0)));
    }
    expect(words.filter((w) => w === strW(2, 1))).toHaveLength(3);
  });

  it("busy_loop never reaches its idle routine", () => {
    const payload = busyLoop();
    const words = wordsOf(payload.segments[0].data);
    const spin = words.indexOf(0x17ffffff); // b #-4, the tight loop
    expect(spin).toBeGreaterThan(0);
    const idle = payload.symbols.find((s) => s.name === "cpu_do_idle")!;
    expect(RAM_BASE + 4 * spin).toBeLessThan(idle.address);
  });

  it("wfi_idle programs a 1 ms periodic timer and acks through status", () => {
    const words = wordsOf(wfiIdle().segments[0].data);
    expect(PERIOD_TICKS).toBe(1_000_000_000);
    expect(words).toContain(movz(3, PERIOD_TICKS & 0xffff));
    expect(words).toContain(movk(3, PERIOD_TICKS >>> 16, 16));
    expect(words).toContain(strX(3, 1, 0x10)); // period
    expect(words).toContain(strW(2, 1, 8)); // control: enable | periodic
    expect(words).toContain(ldrW(2, 1, 0x18)); // poll fired
    expect(words.filter((w) => w === strW(2, 1, 0x18))).toHaveLength(1); // ack
    expect(words).toContain(movz(4, COUNTER_ADDR >>> 16, 16));
  });
});
