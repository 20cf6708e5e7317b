"""Memory-mapped bus: transaction routing and direct-memory grants.

Transactions are little-endian byte payloads of 1, 2, 4 or 8 bytes.  The
bus routes by address to one mapped target and never splits an access;
a transaction straddling a mapping edge is an address error.  Targets
that expose raw backing memory can hand out DMI grants so backends skip
the bus on ordinary loads and stores.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Callable, Protocol

from .kernel import Kernel

log = logging.getLogger(__name__)

TRANSACTION_SIZES = (1, 2, 4, 8)


class TxKind(Enum):
    READ = auto()
    WRITE = auto()


class TxStatus(Enum):
    OK = auto()
    ADDRESS_ERROR = auto()
    DEVICE_ERROR = auto()


class BusError(RuntimeError):
    pass


@dataclass
class Transaction:
    kind: TxKind
    address: int
    data: bytearray
    origin: int = -1
    status: TxStatus | None = None
    timestamp: int = 0

    @property
    def size(self) -> int:
        return len(self.data)

    def value(self) -> int:
        return int.from_bytes(self.data, "little")

    def set_value(self, value: int) -> None:
        self.data[:] = value.to_bytes(len(self.data), "little")


def read_tx(address: int, size: int, origin: int = -1) -> Transaction:
    return Transaction(TxKind.READ, address, bytearray(size), origin)


def write_tx(address: int, data: bytes | bytearray, origin: int = -1) -> Transaction:
    return Transaction(TxKind.WRITE, address, bytearray(data), origin)


class Target(Protocol):
    name: str

    def handle(self, tx: Transaction, offset: int) -> TxStatus: ...


@dataclass
class Mapping:
    base: int
    size: int
    target: Target

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, address: int, size: int) -> bool:
        return self.base <= address and address + size <= self.end


@dataclass
class DmiGrant:
    """Direct window into one RAM target's backing store."""

    base: int
    size: int
    memory: memoryview
    perms: frozenset[str] = frozenset({"r", "w"})
    revoked: bool = False

    @property
    def end(self) -> int:
        return self.base + self.size


class Bus:
    def __init__(self, kernel: Kernel) -> None:
        self.kernel = kernel
        self._maps: list[Mapping] = []
        self._grants: list[DmiGrant] = []
        self._revoke_listeners: list[Callable[[DmiGrant], None]] = []
        self._dispatch_contexts: list[int] = []
        self.record_contexts = False

    def map_target(self, base: int, size: int, target: Target) -> Mapping:
        if size <= 0:
            raise BusError(f"zero-size mapping for {target.name!r} at {base:#x}")
        if base < 0:
            raise BusError(f"negative base for {target.name!r}")
        new = Mapping(base, size, target)
        for existing in self._maps:
            if new.base < existing.end and existing.base < new.end:
                raise BusError(
                    f"mapping {target.name!r} [{new.base:#x}, {new.end:#x}) overlaps "
                    f"{existing.target.name!r} [{existing.base:#x}, {existing.end:#x})"
                )
        self._maps.append(new)
        self._maps.sort(key=lambda m: m.base)
        return new

    def find_mapping(self, address: int) -> Mapping | None:
        for mapping in self._maps:
            if mapping.base <= address < mapping.end:
                return mapping
        return None

    def transport(self, tx: Transaction) -> Transaction:
        """Route one transaction to its target; sets status exactly once."""
        self.kernel.assert_coordinator("bus transport")
        if tx.status is not None:
            raise BusError("transaction already carries a status")
        if self.record_contexts:
            self._dispatch_contexts.append(threading.get_ident())
        tx.timestamp = self.kernel.now
        if tx.size not in TRANSACTION_SIZES:
            tx.status = TxStatus.ADDRESS_ERROR
            return tx
        mapping = self.find_mapping(tx.address)
        if mapping is None or not mapping.contains(tx.address, tx.size):
            tx.status = TxStatus.ADDRESS_ERROR
            return tx
        tx.status = mapping.target.handle(tx, tx.address - mapping.base)
        return tx

    def acquire_dmi(self, base: int, size: int) -> DmiGrant | None:
        """Grant direct access to [base, base+size) if one RAM target covers it."""
        if size <= 0:
            return None
        mapping = self.find_mapping(base)
        if mapping is None or not mapping.contains(base, size):
            return None
        region = getattr(mapping.target, "dmi_region", None)
        if region is None:
            return None
        backing = region()
        if backing is None:
            return None
        offset = base - mapping.base
        grant = DmiGrant(base, size, backing[offset : offset + size])
        self._grants.append(grant)
        return grant

    def on_revoke(self, listener: Callable[[DmiGrant], None]) -> None:
        self._revoke_listeners.append(listener)

    def revoke_grant(self, grant: DmiGrant) -> None:
        """Invalidate a grant; listeners (backends) drop their mappings."""
        if grant.revoked:
            return
        grant.revoked = True
        for listener in self._revoke_listeners:
            listener(grant)

    def dispatch_contexts(self) -> list[int]:
        return list(self._dispatch_contexts)
