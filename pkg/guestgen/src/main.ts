/** Build every payload into dist/payloads as .elf, .bin, and .map. */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { flatBinary, symbolMap, writeElf } from "./elf.js";
import { buildPayloads } from "./payloads.js";

const outDir = join(dirname(fileURLToPath(import.meta.url)), "payloads");
mkdirSync(outDir, { recursive: true });

for (const payload of buildPayloads()) {
  const elf = writeElf(payload.entry, payload.segments, payload.symbols);
  const { data } = flatBinary(payload.segments);
  const map = symbolMap(payload.name, payload.entry, payload.symbols);

  writeFileSync(join(outDir, `${payload.name}.elf`), elf);
  writeFileSync(join(outDir, `${payload.name}.bin`), data);
  writeFileSync(join(outDir, `${payload.name}.map`), map);
  console.log(`${payload.name}: ${elf.length} bytes ELF, ${data.length} bytes flat`);
}
