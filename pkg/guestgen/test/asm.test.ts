import { describe, expect, it } from "vitest";

import {
  Assembler,
  XZR,
  addImm,
  b,
  bl,
  cbnz,
  cbz,
  ldrW,
  ldrX,
  movk,
  movz,
  nop,
  ret,
  strW,
  strX,
  subImm,
  wfi,
} from "../src/asm.js";

// Expected words derived by hand from the instruction descriptions:
// wide moves are sf:1 opc:2 100101 hw:2 imm16:16 rd:5, loads/stores are
// size:2 111001 opc:2 imm12:12 rn:5 rt:5, branches carry word deltas.
describe("instruction encodings", () => {
  const vectors: [string, number, number][] = [
    ["movz x1, #0x900, lsl #16", movz(1, 0x900, 16), 0xd2a12001],
    ["movz x2, #72", movz(2, 72), 0xd2800902],
    ["movz x0, #0", movz(0, 0), 0xd2800000],
    ["movk x3, #0x3b9a, lsl #16", movk(3, 0x3b9a, 16), 0xf2a77343],
    ["movk x7, #0xffff, lsl #48", movk(7, 0xffff, 48), 0xf2ffffe7],
    ["add x0, x0, #1", addImm(0, 0, 1), 0x91000400],
    ["sub x5, x5, #1", subImm(5, 5, 1), 0xd10004a5],
    ["ldr w2, [x1, #24]", ldrW(2, 1, 24), 0xb9401822],
    ["str w2, [x1]", strW(2, 1), 0xb9000022],
    ["ldr x5, [x4]", ldrX(5, 4), 0xf9400085],
    ["str x3, [x1, #16]", strX(3, 1, 16), 0xf9000823],
    ["str xzr, [x1]", strX(XZR, 1), 0xf900003f],
    ["b .", b(0), 0x14000000],
    ["b #-8", b(-2), 0x17fffffe],
    ["bl #+8", bl(2), 0x94000002],
    ["cbz x2, #+12", cbz(2, 3), 0xb4000062],
    ["cbnz x0, #-4", cbnz(0, -1), 0xb5ffffe0],
    ["ret", ret(), 0xd65f03c0],
    ["wfi", wfi(), 0xd503207f],
    ["nop", nop(), 0xd503201f],
  ];

  it.each(vectors)("%s", (_text, actual, expected) => {
    expect(actual.toString(16)).toBe(expected.toString(16));
  });

  it("rejects bad operands", () => {
    expect(() => movz(32, 0)).toThrow(RangeError);
    expect(() => movz(0, 0x1_0000)).toThrow(RangeError);
    expect(() => movz(0, 1, 8)).toThrow(RangeError);
    expect(() => movk(0, 1, 64)).toThrow(RangeError);
    expect(() => addImm(0, 0, 4096)).toThrow(RangeError);
    expect(() => ldrW(0, 1, 2)).toThrow(/aligned/);
    expect(() => strX(0, 1, 12)).toThrow(/aligned/);
    expect(() => strW(0, 1, 4 * 4096)).toThrow(RangeError);
    expect(() => cbz(0, 1 << 18)).toThrow(/range/);
    expect(() => b(1 << 25)).toThrow(/range/);
    expect(() => b(-(1 << 25) - 1)).toThrow(/range/);
  });
});

describe("assembler", () => {
  const words = (code: Uint8Array): number[] => {
    const view = new DataView(code.buffer, code.byteOffset, code.byteLength);
    return Array.from({ length: code.length / 4 }, (_, i) => view.getUint32(i * 4, true));
  };

  it("resolves forward and backward branches", () => {
    const asm = new Assembler(0x1000);
    asm.beginFunction("_start");
    asm.label("top");
    asm.emit(nop());
    asm.branch("bottom"); // forward by 2 words
    asm.emit(nop());
    asm.label("bottom");
    asm.branch("top"); // backward by 3 words
    asm.endFunction();
    const image = asm.seal("_start");
    expect(words(image.code)).toEqual([nop(), b(2), nop(), b(-3)]);
  });

  it("resolves calls and conditional branches", () => {
    const asm = new Assembler(0);
    asm.beginFunction("_start");
    asm.call("fn"); // forward by 3
    asm.branchIfZero(2, "_start"); // backward by 1
    asm.branchIfNotZero(0, "fn"); // forward by 1
    asm.endFunction();
    asm.beginFunction("fn");
    asm.emit(ret());
    asm.endFunction();
    const image = asm.seal("_start");
    expect(words(image.code)).toEqual([bl(3), cbz(2, -1), cbnz(0, 1), ret()]);
  });

  it("tracks pc and function extents", () => {
    const asm = new Assembler(0x4000_0000);
    expect(asm.pc).toBe(0x4000_0000);
    asm.beginFunction("main");
    asm.emit(nop());
    asm.emit(nop());
    asm.endFunction();
    asm.beginFunction("idle");
    asm.emit(wfi());
    asm.emit(ret());
    asm.endFunction();
    expect(asm.pc).toBe(0x4000_0010);
    const image = asm.seal("main");
    expect(image.entry).toBe(0x4000_0000);
    expect(image.symbols).toEqual([
      { name: "main", address: 0x4000_0000, size: 8 },
      { name: "idle", address: 0x4000_0008, size: 8 },
    ]);
  });

  describe("loadImm", () => {
    const emitted = (value: number | bigint): number[] => {
      const asm = new Assembler(0);
      asm.beginFunction("_start");
      asm.loadImm(3, value);
      asm.endFunction();
      return words(asm.seal("_start").code);
    };

    it("zero is a single movz", () => {
      expect(emitted(0)).toEqual([movz(3, 0)]);
    });

    it("one halfword needs one instruction", () => {
      expect(emitted(0x0900_0000)).toEqual([movz(3, 0x900, 16)]);
    });

    it("two halfwords chain movz and movk", () => {
      expect(emitted(1_000_000_000)).toEqual([movz(3, 0xca00), movk(3, 0x3b9a, 16)]);
    });

    it("a full 64-bit constant uses all four slots", () => {
      expect(emitted(0x1122_3344_5566_7788n)).toEqual([
        movz(3, 0x7788),
        movk(3, 0x5566, 16),
        movk(3, 0x3344, 32),
        movk(3, 0x1122, 48),
      ]);
    });

    it("rejects values outside u64", () => {
      expect(() => emitted(-1n)).toThrow(RangeError);
      expect(() => emitted(1n << 64n)).toThrow(RangeError);
    });
  });

  it("rejects misuse", () => {
    const asm = new Assembler(0);
    asm.beginFunction("_start");
    asm.endFunction();
    expect(() => asm.label("_start")).toThrow(/duplicate/);
    expect(() => asm.endFunction()).toThrow(/no open function/);
    asm.branch("nowhere");
    expect(() => asm.seal("_start")).toThrow(/undefined label nowhere/);
    expect(() => new Assembler(2)).toThrow(/aligned/);
  });

  it("rejects sealing with an open function or bad entry", () => {
    const asm = new Assembler(0);
    asm.beginFunction("_start");
    expect(() => asm.seal("_start")).toThrow(/never closed/);
    asm.endFunction();
    expect(() => asm.seal("absent")).toThrow(/undefined entry/);
  });
});
