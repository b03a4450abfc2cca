"""Domain record invariants and the canonical byte layout."""

import struct

import numpy as np
import pytest

from epitrace.records import (
    CheckinRecord,
    ContactRecord,
    GeoPath,
    HealthStatus,
    HealthStatusUpdate,
    MacAddr,
    Transaction,
)
from epitrace.ledger import (
    MalformedPayload,
    deserialize_transaction,
    serialize_transaction,
)


def test_mac_text_form_round_trip():
    mac = MacAddr(0xA1B2C3D4E5F6)
    assert str(mac) == "a1:b2:c3:d4:e5:f6"
    assert MacAddr.from_text(str(mac)) == mac


def test_mac_rejects_out_of_range():
    with pytest.raises(ValueError):
        MacAddr(1 << 48)
    with pytest.raises(ValueError):
        MacAddr(-1)


def test_geopath_requires_all_levels():
    with pytest.raises(ValueError):
        GeoPath("ca", "yolo", "", "cafe")
    geo = GeoPath("ca", "yolo", "davis", "cafe")
    assert geo == GeoPath("ca", "yolo", "davis", "cafe")
    assert geo != GeoPath("ca", "yolo", "davis", "gym")


def test_contact_record_invariants():
    mac = MacAddr(7)
    with pytest.raises(ValueError):
        ContactRecord(mac, 0.0, -40.0, "apple", 10.0)
    with pytest.raises(ValueError):
        ContactRecord(mac, 60.0, 1.0, "apple", 10.0)


def _sample_txs():
    geo = GeoPath("state-0", "county-0", "city-0", "loc-1")
    checkin = Transaction("tx-1", MacAddr(0x0102030405F6),
                          CheckinRecord(geo, 120.5, HealthStatus.NORMAL), 120.5, 380000)
    contact = Transaction("tx-2", MacAddr(42),
                          ContactRecord(MacAddr(43), 600.0, -63.25, "apple", 99.0),
                          99.0, 15000)
    update = Transaction("tx-3", MacAddr(44),
                         HealthStatusUpdate(HealthStatus.INFECTED,
                                            (MacAddr(1), MacAddr(2)),
                                            ((geo, 50.0), (geo, 80.0))),
                         130.0, 30000)
    return [checkin, contact, update]


def test_serialization_round_trip_all_payloads():
    for tx in _sample_txs():
        assert deserialize_transaction(serialize_transaction(tx)) == tx


def test_serialization_round_trip_randomized():
    rng = np.random.default_rng(7)
    for i in range(200):
        tx = Transaction(
            tx_id=f"tx-{i}",
            sender_vid=MacAddr(int(rng.integers(0, 1 << 48))),
            payload=ContactRecord(MacAddr(int(rng.integers(0, 1 << 48))),
                                  float(rng.uniform(1, 1e5)),
                                  float(-rng.uniform(0, 120)),
                                  "apple", float(rng.uniform(0, 1e6))),
            timestamp=float(rng.uniform(0, 1e6)),
            fee=int(rng.integers(0, 1 << 40)),
        )
        assert deserialize_transaction(serialize_transaction(tx)) == tx


def test_checkin_byte_layout_is_documented_exactly():
    # Rebuilt by hand from the documented layout; pins the wire format.
    geo = GeoPath("ca", "yolo", "davis", "cafe")
    tx = Transaction("t", MacAddr(0xA1B2C3D4E5F6),
                     CheckinRecord(geo, 2.5, HealthStatus.INFECTED), 2.5, 7)
    expected = bytearray()
    expected += struct.pack("<I", 1) + b"t"
    expected += bytes.fromhex("a1b2c3d4e5f6")
    expected += struct.pack("<d", 2.5)
    expected += struct.pack("<Q", 7)
    expected += bytes([0x01])
    for part in ("ca", "yolo", "davis", "cafe"):
        raw = part.encode()
        expected += struct.pack("<I", len(raw)) + raw
    expected += struct.pack("<d", 2.5)
    expected += bytes([1])
    assert serialize_transaction(tx) == bytes(expected)


def test_negative_fee_is_malformed():
    geo = GeoPath("a", "b", "c", "d")
    tx = Transaction("t", MacAddr(1), CheckinRecord(geo, 0.0, HealthStatus.NORMAL),
                     0.0, -1)
    with pytest.raises(MalformedPayload):
        serialize_transaction(tx)


def test_truncated_and_trailing_bytes_rejected():
    blob = serialize_transaction(_sample_txs()[0])
    with pytest.raises(MalformedPayload):
        deserialize_transaction(blob[:-1])
    with pytest.raises(MalformedPayload):
        deserialize_transaction(blob + b"\x00")
