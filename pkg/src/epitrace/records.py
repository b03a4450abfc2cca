"""Shared domain records: identifiers, geo paths, and transaction payloads.

Everything stored on the ledger is one of three payload kinds: a location
check-in, a Bluetooth contact record, or a health-status broadcast. The
types here are deliberately plain frozen dataclasses so they can be
serialized byte-exactly (see :mod:`epitrace.ledger`) and compared in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

SECONDS_PER_HOUR = 3600.0
SECONDS_PER_DAY = 86400.0


class HealthStatus(Enum):
    NORMAL = 0
    INFECTED = 1


@dataclass(frozen=True, order=True)
class MacAddr:
    """A 48-bit Bluetooth device address used as a rotating virtual identity."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << 48:
            raise ValueError(f"MAC value out of 48-bit range: {self.value}")

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.to_bytes())

    def to_bytes(self) -> bytes:
        # Display order: most significant octet first.
        return self.value.to_bytes(6, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "MacAddr":
        if len(raw) != 6:
            raise ValueError("MAC addresses are exactly 6 octets")
        return cls(int.from_bytes(raw, "big"))

    @classmethod
    def from_text(cls, text: str) -> "MacAddr":
        parts = text.split(":")
        if len(parts) != 6:
            raise ValueError(f"malformed MAC text: {text!r}")
        return cls.from_bytes(bytes(int(p, 16) for p in parts))


@dataclass(frozen=True, order=True)
class GeoPath:
    """A four-level administrative address: state / county / city / location."""

    state: str
    county: str
    city: str
    location: str

    def __post_init__(self):
        for name in (self.state, self.county, self.city, self.location):
            if not name:
                raise ValueError("all four GeoPath components must be nonempty")

    def components(self) -> Tuple[str, str, str, str]:
        return (self.state, self.county, self.city, self.location)

    def __str__(self) -> str:
        return "/".join(self.components())


@dataclass(frozen=True)
class CheckinRecord:
    """A user-reported visit to a location at a point in simulated time."""

    geo: GeoPath
    checkin_time: float
    health_status: HealthStatus


@dataclass(frozen=True)
class ContactRecord:
    """One observed Bluetooth encounter from a single device's point of view.

    ``delta_t_b`` is how long the peer was continuously detected; ``rssi`` is
    the low-pass-filtered received signal strength in dBm (never positive).
    """

    peer_mac: MacAddr
    delta_t_b: float
    rssi: float
    device_type: str
    observed_at: float

    def __post_init__(self):
        if self.delta_t_b <= 0:
            raise ValueError("contact duration must be positive")
        if self.rssi > 0:
            raise ValueError("RSSI is expressed in dBm and cannot be positive")


@dataclass(frozen=True)
class HealthStatusUpdate:
    """An infection-status broadcast carrying the sender's trailing history.

    When the new status is infected, ``recent_macs`` and ``recent_visits``
    cover the trailing 14-day window ending at the broadcast time.
    """

    new_status: HealthStatus
    recent_macs: Tuple[MacAddr, ...]
    recent_visits: Tuple[Tuple[GeoPath, float], ...]


Payload = Union[CheckinRecord, ContactRecord, HealthStatusUpdate]


@dataclass(frozen=True)
class Transaction:
    """The unit stored in blocks: a payload signed off by a virtual identity.

    ``fee`` is the gas the sender attached, in wei. Fee validity (>= 0) is
    enforced at ledger admission, not construction, so malformed submissions
    can be exercised.
    """

    tx_id: str
    sender_vid: MacAddr
    payload: Payload
    timestamp: float
    fee: int
