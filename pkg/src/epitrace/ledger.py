"""Append-only hash-chained transaction store with tamper verification.

The ledger keeps a pending pool and a chain of sealed blocks. Every block
hashes the canonical serialization of its transactions together with the
previous block's digest, so flipping any byte of any sealed transaction is
detectable by :meth:`Ledger.verify_chain`.

Canonical wire format (all multi-byte integers little-endian):

  str        u32 byte length + UTF-8 bytes
  u64        8 bytes
  f64        IEEE 754 binary64, 8 bytes
  mac        6 raw octets, most significant first
  geo        4 x str (state, county, city, location)
  status     u8 (0 = normal, 1 = infected)

  checkin    tag 0x01 + geo + f64 checkin_time + status
  contact    tag 0x02 + mac peer + f64 delta_t_b + f64 rssi
             + str device_type + f64 observed_at
  health     tag 0x03 + status + u32 n + n x mac
             + u32 m + m x (geo + f64 time)

  tx         str tx_id + mac sender + f64 timestamp + u64 fee + payload

Block digest: SHA-256 over
  prev_hash(32) + u64 height + f64 sealed_at + u32 ntx
  + ntx x (u32 length + tx bytes).

The genesis block links to 32 zero bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Sequence, Set, Tuple

from .records import (
    CheckinRecord,
    ContactRecord,
    GeoPath,
    HealthStatus,
    HealthStatusUpdate,
    MacAddr,
    Payload,
    Transaction,
)

GENESIS_HASH = bytes(32)

_TAG_CHECKIN = 0x01
_TAG_CONTACT = 0x02
_TAG_HEALTH = 0x03


class LedgerError(Exception):
    pass


class DuplicateTxId(LedgerError):
    pass


class MalformedPayload(LedgerError):
    pass


class EmptyPool(LedgerError):
    pass


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def _w_str(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def _w_geo(out: bytearray, geo: GeoPath) -> None:
    for part in geo.components():
        _w_str(out, part)


def _w_payload(out: bytearray, payload: Payload) -> None:
    if isinstance(payload, CheckinRecord):
        out.append(_TAG_CHECKIN)
        _w_geo(out, payload.geo)
        out += struct.pack("<d", payload.checkin_time)
        out.append(payload.health_status.value)
    elif isinstance(payload, ContactRecord):
        out.append(_TAG_CONTACT)
        out += payload.peer_mac.to_bytes()
        out += struct.pack("<dd", payload.delta_t_b, payload.rssi)
        _w_str(out, payload.device_type)
        out += struct.pack("<d", payload.observed_at)
    elif isinstance(payload, HealthStatusUpdate):
        out.append(_TAG_HEALTH)
        out.append(payload.new_status.value)
        out += struct.pack("<I", len(payload.recent_macs))
        for mac in payload.recent_macs:
            out += mac.to_bytes()
        out += struct.pack("<I", len(payload.recent_visits))
        for geo, when in payload.recent_visits:
            _w_geo(out, geo)
            out += struct.pack("<d", when)
    else:
        raise MalformedPayload(f"unknown payload type: {type(payload).__name__}")


def serialize_transaction(tx: Transaction) -> bytes:
    """Encode a transaction in the canonical byte layout documented above."""
    if tx.fee < 0:
        raise MalformedPayload("transaction fee must be non-negative")
    out = bytearray()
    _w_str(out, tx.tx_id)
    out += tx.sender_vid.to_bytes()
    out += struct.pack("<d", tx.timestamp)
    out += struct.pack("<Q", tx.fee)
    _w_payload(out, tx.payload)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedPayload("truncated transaction bytes")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def mac(self) -> MacAddr:
        return MacAddr.from_bytes(self.take(6))

    def geo(self) -> GeoPath:
        return GeoPath(self.string(), self.string(), self.string(), self.string())

    def done(self) -> bool:
        return self.pos == len(self.data)


def deserialize_transaction(data: bytes) -> Transaction:
    """Decode canonical bytes back into a transaction (strict, no trailing data)."""
    r = _Reader(data)
    try:
        tx_id = r.string()
        sender = r.mac()
        timestamp = r.f64()
        fee = r.u64()
        tag = r.u8()
        payload: Payload
        if tag == _TAG_CHECKIN:
            payload = CheckinRecord(r.geo(), r.f64(), HealthStatus(r.u8()))
        elif tag == _TAG_CONTACT:
            payload = ContactRecord(r.mac(), r.f64(), r.f64(), r.string(), r.f64())
        elif tag == _TAG_HEALTH:
            status = HealthStatus(r.u8())
            macs = tuple(r.mac() for _ in range(r.u32()))
            visits = tuple((r.geo(), r.f64()) for _ in range(r.u32()))
            payload = HealthStatusUpdate(status, macs, visits)
        else:
            raise MalformedPayload(f"unknown payload tag: {tag}")
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedPayload(str(exc)) from exc
    if not r.done():
        raise MalformedPayload("trailing bytes after transaction")
    return Transaction(tx_id, sender, payload, timestamp, fee)


def block_digest(prev_hash: bytes, height: int, sealed_at: float,
                 tx_blobs: Sequence[bytes]) -> bytes:
    """SHA-256 digest binding a block's contents to its predecessor."""
    h = hashlib.sha256()
    h.update(prev_hash)
    h.update(struct.pack("<Q", height))
    h.update(struct.pack("<d", sealed_at))
    h.update(struct.pack("<I", len(tx_blobs)))
    for blob in tx_blobs:
        h.update(struct.pack("<I", len(blob)))
        h.update(blob)
    return h.digest()


# ---------------------------------------------------------------------------
# Blocks and the ledger
# ---------------------------------------------------------------------------

@dataclass
class Block:
    """A sealed, hash-chained container of transactions.

    ``tx_blobs`` holds the canonical serialization of each transaction as
    frozen at sealing time; verification checks both that the stored bytes
    still hash correctly and that they still match the stored objects.
    """

    height: int
    prev_hash: bytes
    this_hash: bytes
    txs: List[Transaction]
    tx_blobs: List[bytes]
    sealed_at: float


class Ledger:
    """Single logical chain plus a FIFO pending pool.

    There is no consensus machinery here: "other nodes verify" is modeled by
    :meth:`verify_chain` over the one chain owned by a simulation run.
    """

    def __init__(self, block_capacity: int = 256):
        if block_capacity < 1:
            raise ValueError("block capacity must be at least 1")
        self.block_capacity = block_capacity
        self.blocks: List[Block] = []
        self._pending: List[Tuple[Transaction, bytes]] = []
        self._tx_ids: Set[str] = set()
        self._id_counter = 0

    # -- identity -----------------------------------------------------------

    def new_tx_id(self) -> str:
        """Allocate the next deterministic transaction id."""
        self._id_counter += 1
        return f"tx-{self._id_counter:08d}"

    # -- admission and sealing ----------------------------------------------

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    @property
    def sealed_count(self) -> int:
        return sum(len(b.txs) for b in self.blocks)

    def submit_transaction(self, tx: Transaction) -> str:
        """Admit a well-formed transaction to the pending pool.

        Raises DuplicateTxId if the id was ever seen, MalformedPayload if the
        fee is negative or the payload cannot be canonically serialized.
        """
        if tx.tx_id in self._tx_ids:
            raise DuplicateTxId(tx.tx_id)
        blob = serialize_transaction(tx)  # raises MalformedPayload
        self._tx_ids.add(tx.tx_id)
        self._pending.append((tx, blob))
        return tx.tx_id

    def seal_block(self, now: float) -> Block:
        """Move up to ``block_capacity`` oldest pending txs into a new block."""
        if not self._pending:
            raise EmptyPool("no pending transactions to seal")
        batch = self._pending[: self.block_capacity]
        self._pending = self._pending[self.block_capacity :]
        txs = [tx for tx, _ in batch]
        blobs = [blob for _, blob in batch]
        prev = self.blocks[-1].this_hash if self.blocks else GENESIS_HASH
        height = len(self.blocks)
        digest = block_digest(prev, height, now, blobs)
        block = Block(height, prev, digest, txs, blobs, now)
        self.blocks.append(block)
        return block

    # -- verification ---------------------------------------------------------

    def verify_chain(self) -> bool:
        """True iff every block's digest recomputes and every link matches."""
        prev = GENESIS_HASH
        for height, block in enumerate(self.blocks):
            if block.height != height or block.prev_hash != prev:
                return False
            if len(block.txs) != len(block.tx_blobs) or len(block.txs) > self.block_capacity:
                return False
            for tx, blob in zip(block.txs, block.tx_blobs):
                try:
                    if serialize_transaction(tx) != blob:
                        return False
                except MalformedPayload:
                    return False
            if block_digest(prev, height, block.sealed_at, block.tx_blobs) != block.this_hash:
                return False
            prev = block.this_hash
        return True

    # -- queries ---------------------------------------------------------------

    def iter_sealed(self) -> Iterator[Tuple[Block, Transaction]]:
        for block in self.blocks:
            for tx in block.txs:
                yield block, tx

    def query_contact_txs(self, macs: Iterable[MacAddr],
                          window: Tuple[float, float]) -> List[Tuple[Transaction, ContactRecord]]:
        """Sealed contact transactions whose peer MAC is in ``macs``.

        The window is closed on both ends and filters on the transaction
        timestamp. Results are ordered by (timestamp, tx_id).
        """
        t0, t1 = window
        if t0 > t1:
            raise ValueError("window start must not exceed window end")
        macset = set(macs)
        hits = []
        for _, tx in self.iter_sealed():
            if not isinstance(tx.payload, ContactRecord):
                continue
            if tx.payload.peer_mac in macset and t0 <= tx.timestamp <= t1:
                hits.append((tx, tx.payload))
        hits.sort(key=lambda pair: (pair[0].timestamp, pair[0].tx_id))
        return hits

    def query_contacts_by_macs(self, macs: Iterable[MacAddr],
                               window: Tuple[float, float]) -> List[ContactRecord]:
        return [rec for _, rec in self.query_contact_txs(macs, window)]

    def query_checkins_by_geo(self, geo: GeoPath,
                              window: Tuple[float, float]) -> List[CheckinRecord]:
        """Sealed check-ins at exactly ``geo`` inside the closed window."""
        t0, t1 = window
        if t0 > t1:
            raise ValueError("window start must not exceed window end")
        hits = []
        for _, tx in self.iter_sealed():
            if not isinstance(tx.payload, CheckinRecord):
                continue
            if tx.payload.geo == geo and t0 <= tx.timestamp <= t1:
                hits.append((tx.timestamp, tx.tx_id, tx.payload))
        hits.sort(key=lambda item: (item[0], item[1]))
        return [rec for _, _, rec in hits]

    # -- dump / restore ---------------------------------------------------------

    def dump(self, path) -> None:
        """Write the whole ledger as newline-delimited text records.

        Format: a header line ``epitrace-ledger 1 <block_capacity>``, then per
        block a line ``block <height> <sealed_at> <prev_hex> <this_hex>``
        followed by one ``tx <hex of canonical bytes>`` line per transaction,
        then a ``pending`` line followed by the pool in submission order.
        Floats use ``repr`` so they round-trip exactly.
        """
        lines = [f"epitrace-ledger 1 {self.block_capacity}"]
        for block in self.blocks:
            lines.append(
                f"block {block.height} {block.sealed_at!r} "
                f"{block.prev_hash.hex()} {block.this_hash.hex()}"
            )
            for blob in block.tx_blobs:
                lines.append(f"tx {blob.hex()}")
        lines.append("pending")
        for _, blob in self._pending:
            lines.append(f"tx {blob.hex()}")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def restore(cls, path) -> "Ledger":
        """Rebuild a ledger from :meth:`dump` output, verifying every digest."""
        with open(path, encoding="ascii") as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
        if not lines or not lines[0].startswith("epitrace-ledger 1 "):
            raise ValueError("not an epitrace ledger dump")
        ledger = cls(block_capacity=int(lines[0].split()[2]))
        i = 1
        in_pending = False
        current: Block | None = None
        for line in lines[1:]:
            kind, _, rest = line.partition(" ")
            if kind == "block":
                height_s, sealed_s, prev_hex, this_hex = rest.split()
                current = Block(int(height_s), bytes.fromhex(prev_hex),
                                bytes.fromhex(this_hex), [], [], float(sealed_s))
                ledger.blocks.append(current)
            elif kind == "pending":
                in_pending = True
                current = None
            elif kind == "tx":
                blob = bytes.fromhex(rest)
                tx = deserialize_transaction(blob)
                if tx.tx_id in ledger._tx_ids:
                    raise ValueError(f"duplicate tx id in dump: {tx.tx_id}")
                ledger._tx_ids.add(tx.tx_id)
                if in_pending:
                    ledger._pending.append((tx, blob))
                else:
                    if current is None:
                        raise ValueError("tx line before any block line")
                    current.txs.append(tx)
                    current.tx_blobs.append(blob)
            else:
                raise ValueError(f"unrecognized dump line: {line!r}")
            i += 1
        if not ledger.verify_chain():
            raise ValueError("restored chain failed verification")
        return ledger
