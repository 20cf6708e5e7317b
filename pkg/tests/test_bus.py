"""Bus routing, RAM round-trips, DMI grants, coordinator enforcement."""

from __future__ import annotations

import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpsim.bus import Bus, BusError, TxKind, TxStatus, read_tx, write_tx
from vpsim.devices import Ram
from vpsim.kernel import Kernel

RAM_BASE = 0x4000_0000
RAM_SIZE = 0x1_0000


def make_bus() -> tuple[Kernel, Bus, Ram]:
    kernel = Kernel()
    kernel.claim_coordinator()
    bus = Bus(kernel)
    ram = Ram("ram0", RAM_SIZE)
    bus.map_target(RAM_BASE, RAM_SIZE, ram)
    return kernel, bus, ram


class TestMapping:
    def test_overlap_rejected_naming_both(self) -> None:
        _, bus, _ = make_bus()
        with pytest.raises(BusError, match="ram1.*overlaps.*ram0"):
            bus.map_target(RAM_BASE + RAM_SIZE - 1, 16, Ram("ram1", 16))

    def test_adjacent_ok(self) -> None:
        _, bus, _ = make_bus()
        bus.map_target(RAM_BASE + RAM_SIZE, 16, Ram("ram1", 16))

    def test_zero_size_rejected(self) -> None:
        _, bus, _ = make_bus()
        with pytest.raises(BusError, match="zero-size"):
            bus.map_target(0x100, 0, Ram("r", 16))

    def test_routing_totality_at_boundaries(self) -> None:
        # Every address around each mapping edge either routes or address-errors.
        kernel = Kernel()
        kernel.claim_coordinator()
        bus = Bus(kernel)
        bus.map_target(0x1000, 0x100, Ram("a", 0x100))
        bus.map_target(0x2000, 0x80, Ram("b", 0x80))
        for edge in (0x1000, 0x1100, 0x2000, 0x2080):
            for address in (edge - 1, edge, edge + 1):
                tx = bus.transport(read_tx(address, 1))
                inside = 0x1000 <= address < 0x1100 or 0x2000 <= address < 0x2080
                expected = TxStatus.OK if inside else TxStatus.ADDRESS_ERROR
                assert tx.status is expected, hex(address)


class TestTransport:
    def test_unmapped_is_address_error(self) -> None:
        _, bus, _ = make_bus()
        assert bus.transport(read_tx(0x10, 4)).status is TxStatus.ADDRESS_ERROR

    def test_straddling_mapping_edge_is_address_error(self) -> None:
        _, bus, _ = make_bus()
        tx = bus.transport(read_tx(RAM_BASE + RAM_SIZE - 2, 4))
        assert tx.status is TxStatus.ADDRESS_ERROR

    @pytest.mark.parametrize("size", [0, 3, 5, 16])
    def test_bad_sizes_rejected(self, size: int) -> None:
        _, bus, _ = make_bus()
        assert bus.transport(read_tx(RAM_BASE, size)).status is TxStatus.ADDRESS_ERROR

    def test_status_set_exactly_once(self) -> None:
        _, bus, _ = make_bus()
        tx = bus.transport(read_tx(RAM_BASE, 4))
        with pytest.raises(BusError, match="already carries a status"):
            bus.transport(tx)

    def test_timestamp_is_kernel_now(self) -> None:
        kernel, bus, _ = make_bus()
        kernel.advance_to(777)
        assert bus.transport(read_tx(RAM_BASE, 4)).timestamp == 777

    def test_origin_preserved(self) -> None:
        _, bus, _ = make_bus()
        tx = bus.transport(write_tx(RAM_BASE, b"\x01\x02\x03\x04", origin=5))
        assert tx.origin == 5

    def test_value_helpers_little_endian(self) -> None:
        tx = write_tx(0, b"\x78\x56\x34\x12")
        assert tx.value() == 0x1234_5678
        tx.set_value(0xAABBCCDD)
        assert bytes(tx.data) == b"\xdd\xcc\xbb\xaa"

    def test_off_coordinator_transport_rejected(self) -> None:
        _, bus, _ = make_bus()
        failures: list[BaseException] = []

        def offender() -> None:
            try:
                bus.transport(read_tx(RAM_BASE, 4))
            except BaseException as exc:
                failures.append(exc)

        thread = threading.Thread(target=offender)
        thread.start()
        thread.join()
        assert failures, "transport off the coordinator must fail"

    def test_dispatch_contexts_recorded(self) -> None:
        _, bus, _ = make_bus()
        bus.record_contexts = True
        bus.transport(read_tx(RAM_BASE, 4))
        bus.transport(write_tx(RAM_BASE, b"\x00" * 4))
        contexts = bus.dispatch_contexts()
        assert contexts == [threading.get_ident()] * 2


class TestRamRoundTrip:
    @settings(max_examples=200, deadline=None)
    @given(
        offset=st.integers(0, RAM_SIZE - 8),
        payload=st.binary(min_size=1, max_size=8).filter(lambda b: len(b) in (1, 2, 4, 8)),
    )
    def test_write_then_read(self, offset: int, payload: bytes) -> None:
        _, bus, _ = make_bus()
        address = RAM_BASE + offset
        assert bus.transport(write_tx(address, payload)).status is TxStatus.OK
        tx = bus.transport(read_tx(address, len(payload)))
        assert tx.status is TxStatus.OK
        assert bytes(tx.data) == payload

    def test_unaligned_ram_access_ok(self) -> None:
        _, bus, _ = make_bus()
        bus.transport(write_tx(RAM_BASE + 3, b"\xaa\xbb"))
        tx = bus.transport(read_tx(RAM_BASE + 3, 2))
        assert bytes(tx.data) == b"\xaa\xbb"


class TestDmi:
    def test_grant_window_and_coherence(self) -> None:
        _, bus, _ = make_bus()
        grant = bus.acquire_dmi(RAM_BASE + 0x100, 0x100)
        assert grant is not None
        assert grant.base == RAM_BASE + 0x100 and grant.size == 0x100
        # transport write visible through the grant
        bus.transport(write_tx(RAM_BASE + 0x104, b"\x11\x22\x33\x44"))
        assert bytes(grant.memory[4:8]) == b"\x11\x22\x33\x44"
        # grant write visible through transport
        grant.memory[0:2] = b"\xfe\xca"
        tx = bus.transport(read_tx(RAM_BASE + 0x100, 2))
        assert bytes(tx.data) == b"\xfe\xca"

    def test_grant_requires_single_covering_ram(self) -> None:
        _, bus, _ = make_bus()
        assert bus.acquire_dmi(RAM_BASE + RAM_SIZE - 4, 8) is None
        assert bus.acquire_dmi(0x10, 4) is None
        assert bus.acquire_dmi(RAM_BASE, 0) is None

    def test_register_target_gives_no_dmi(self) -> None:
        kernel = Kernel()
        kernel.claim_coordinator()
        bus = Bus(kernel)

        class Reg:
            name = "reg"

            def handle(self, tx, offset):
                return TxStatus.OK

        bus.map_target(0x9000, 0x100, Reg())
        assert bus.acquire_dmi(0x9000, 4) is None

    def test_revocation_notifies_listeners_once(self) -> None:
        _, bus, _ = make_bus()
        grant = bus.acquire_dmi(RAM_BASE, 16)
        dropped = []
        bus.on_revoke(dropped.append)
        bus.revoke_grant(grant)
        bus.revoke_grant(grant)
        assert dropped == [grant]
        assert grant.revoked


class TestTransactionKinds:
    def test_read_tx_zero_filled(self) -> None:
        tx = read_tx(0x10, 4)
        assert tx.kind is TxKind.READ and bytes(tx.data) == b"\x00" * 4

    def test_write_tx_copies_payload(self) -> None:
        src = bytearray(b"\x01\x02")
        tx = write_tx(0x10, src)
        src[0] = 0xFF
        assert bytes(tx.data) == b"\x01\x02"
