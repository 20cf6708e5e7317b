"""Minimal ELF64 little-endian reader: load segments and function symbols."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

ELF_MAGIC = b"\x7fELF"
ELFCLASS64 = 2
ELFDATA2LSB = 1
PT_LOAD = 1
SHT_SYMTAB = 2
STT_FUNC = 2

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_PHDR = struct.Struct("<IIQQQQQQ")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_SYM = struct.Struct("<IBBHQQ")


class ElfParseError(ValueError):
    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"at byte {offset:#x}: {message}")


@dataclass
class SymbolRecord:
    name: str
    address: int
    size: int
    is_func: bool


@dataclass
class LoadSegment:
    vaddr: int
    data: bytes
    memsz: int
    flags: int


@dataclass
class ElfImage:
    entry: int
    segments: list[LoadSegment]
    symbols: list[SymbolRecord] = field(default_factory=list)


def _slice(blob: bytes, offset: int, size: int, what: str) -> bytes:
    if offset < 0 or size < 0 or offset + size > len(blob):
        raise ElfParseError(offset, f"{what} [{offset:#x}+{size:#x}) outside file of {len(blob)} bytes")
    return blob[offset : offset + size]


def parse_elf(blob: bytes) -> ElfImage:
    """Parse an ELF64 LE image into entry point, load segments, and symbols."""
    header = _slice(blob, 0, _EHDR.size, "ELF header")
    (
        ident,
        _etype,
        _machine,
        _version,
        entry,
        phoff,
        shoff,
        _flags,
        _ehsize,
        phentsize,
        phnum,
        shentsize,
        shnum,
        shstrndx,
    ) = _EHDR.unpack(header)
    if ident[:4] != ELF_MAGIC:
        raise ElfParseError(0, "bad ELF magic")
    if ident[4] != ELFCLASS64:
        raise ElfParseError(4, f"only ELF64 supported, class={ident[4]}")
    if ident[5] != ELFDATA2LSB:
        raise ElfParseError(5, f"only little-endian supported, data={ident[5]}")

    segments: list[LoadSegment] = []
    if phnum:
        if phentsize != _PHDR.size:
            raise ElfParseError(phoff, f"program header entry size {phentsize} != {_PHDR.size}")
        for i in range(phnum):
            at = phoff + i * phentsize
            ptype, pflags, poff, vaddr, _paddr, filesz, memsz, _align = _PHDR.unpack(
                _slice(blob, at, phentsize, f"program header {i}")
            )
            if ptype != PT_LOAD:
                continue
            if memsz < filesz:
                raise ElfParseError(at, f"segment {i} memsz {memsz} < filesz {filesz}")
            data = _slice(blob, poff, filesz, f"segment {i} payload")
            segments.append(LoadSegment(vaddr, data, memsz, pflags))

    symbols: list[SymbolRecord] = []
    if shnum:
        if shentsize != _SHDR.size:
            raise ElfParseError(shoff, f"section header entry size {shentsize} != {_SHDR.size}")
        sections = []
        for i in range(shnum):
            at = shoff + i * shentsize
            sections.append(_SHDR.unpack(_slice(blob, at, shentsize, f"section header {i}")))
        symtabs = [(i, s) for i, s in enumerate(sections) if s[1] == SHT_SYMTAB]
        if not symtabs:
            log.warning("ELF image has no symbol table; symbol source is empty")
        for index, sec in symtabs:
            (_name, _stype, _sflags, _addr, soff, ssize, slink, _info, _align, sentsize) = sec
            if sentsize != _SYM.size:
                raise ElfParseError(soff, f"symbol entry size {sentsize} != {_SYM.size}")
            if not 0 <= slink < len(sections):
                raise ElfParseError(soff, f"symtab {index} links to bad strtab {slink}")
            str_off, str_size = sections[slink][4], sections[slink][5]
            strtab = _slice(blob, str_off, str_size, "string table")
            count = ssize // sentsize
            for n in range(count):
                name_off, info, _other, _shndx, value, size = _SYM.unpack(
                    _slice(blob, soff + n * sentsize, sentsize, f"symbol {n}")
                )
                if name_off >= len(strtab):
                    raise ElfParseError(soff + n * sentsize, f"symbol {n} name outside strtab")
                end = strtab.find(b"\0", name_off)
                if end < 0:
                    raise ElfParseError(str_off + name_off, "unterminated symbol name")
                name = strtab[name_off:end].decode("utf-8", "replace")
                if not name:
                    continue
                symbols.append(SymbolRecord(name, value, size, info & 0xF == STT_FUNC))
    elif shoff:
        raise ElfParseError(shoff, "section header table offset set but shnum is zero")

    return ElfImage(entry, segments, symbols)


def parse_elf_symbols(blob: bytes) -> list[SymbolRecord]:
    """Function symbols of an ELF64 LE image (the annotator's symbol source)."""
    return [s for s in parse_elf(blob).symbols if s.is_func]
