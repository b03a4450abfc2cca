"""Bluetooth-style proximity simulation: rotating MACs, RSSI, encounters.

Devices rotate to a fresh random MAC on a fixed cadence, with a short silent
gap between discarding the old address and adopting the new one. During the
gap the device neither broadcasts nor records encounters, so some contacts
are lost; that loss is the privacy/coverage trade-off this module models.
RSSI values come from a log-distance path-loss model with Gaussian noise,
smoothed by an exponential low-pass filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Set, Tuple

import numpy as np

from .records import ContactRecord, MacAddr, Transaction
from .ledger import Ledger


class DomainError(ValueError):
    """An argument is outside the physical domain of the model."""


class OutOfRange(Exception):
    """The peers are beyond Bluetooth detection range; nothing is recorded."""


class DeviceSilent(Exception):
    """A device is inside its silent period; the encounter is lost."""


# ---------------------------------------------------------------------------
# RSSI model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RssiModel:
    """Log-distance path loss with noise and exponential smoothing.

    ``ref_power_1m`` is the expected RSSI at one meter; raw samples follow
    ref_power_1m - 10 * path_loss_exponent * log10(d) + N(0, noise_sigma).
    """

    ref_power_1m: float = -59.0
    path_loss_exponent: float = 2.0
    noise_sigma: float = 2.0
    lpf_alpha: float = 0.3

    def __post_init__(self):
        if self.path_loss_exponent <= 0:
            raise ValueError("path loss exponent must be positive")
        if not 0 < self.lpf_alpha <= 1:
            raise ValueError("LPF alpha must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma cannot be negative")


def smoothed_rssi(model: RssiModel, distance_m: float, samples: int,
                  rng: np.random.Generator) -> float:
    """Low-pass-filtered RSSI for a peer at ``distance_m`` meters.

    Draws ``samples`` noisy path-loss readings and folds them through
    y0 = x0, y_i = alpha * x_i + (1 - alpha) * y_{i-1}, returning the last y.
    """
    if distance_m <= 0:
        raise DomainError("distance must be positive")
    if samples < 1:
        raise DomainError("at least one RSSI sample is required")
    mean = model.ref_power_1m - 10.0 * model.path_loss_exponent * math.log10(distance_m)
    if model.noise_sigma > 0:
        raw = mean + rng.normal(0.0, model.noise_sigma, size=samples)
    else:
        raw = np.full(samples, mean)
    y = raw[0]
    alpha = model.lpf_alpha
    for x in raw[1:]:
        y = alpha * x + (1.0 - alpha) * y
    return float(y)


# ---------------------------------------------------------------------------
# MAC rotation
# ---------------------------------------------------------------------------

class MacRegistry:
    """Scenario-wide MAC pool that rejects cross-device collisions at draw time."""

    def __init__(self):
        self._used: Set[int] = set()

    def draw(self, rng: np.random.Generator) -> MacAddr:
        while True:
            value = int(rng.integers(0, 1 << 48))
            if value not in self._used:
                self._used.add(value)
                return MacAddr(value)

    def __contains__(self, mac: MacAddr) -> bool:
        return mac.value in self._used


@dataclass(frozen=True)
class MacInterval:
    mac: MacAddr
    active_from: float
    active_to: float  # scheduled end of the rotation cycle


class DeviceState:
    """Per-device rotation state and MAC history.

    Rotation boundaries sit at ``activated_at + k * rotation_period``. At each
    boundary the device discards its address, stays silent for
    ``silent_period`` seconds, then adopts a fresh random MAC; the first MAC
    is adopted immediately at activation. History intervals are therefore
    disjoint and separated by exactly the silent period.
    """

    def __init__(self, owner: int, rng: np.random.Generator, *,
                 registry: Optional[MacRegistry] = None,
                 rotation_period: float = 900.0, silent_period: float = 10.0,
                 activated_at: float = 0.0, device_type: str = "apple"):
        if rotation_period <= 0:
            raise ValueError("rotation period must be positive")
        if not 0 <= silent_period < rotation_period:
            raise ValueError("silent period must be shorter than the rotation period")
        self.owner = owner
        self.rotation_period = rotation_period
        self.silent_period = silent_period
        self.activated_at = activated_at
        self.device_type = device_type
        self._rng = rng
        self._registry = registry if registry is not None else MacRegistry()
        self.mac_history: List[MacInterval] = []

    def _adoption_time(self, k: int) -> float:
        if k == 0:
            return self.activated_at
        return self.activated_at + k * self.rotation_period + self.silent_period

    def sync_to(self, now: float) -> None:
        """Materialize every MAC whose adoption time has been reached."""
        if now < self.activated_at:
            raise ValueError("device not yet activated")
        k = len(self.mac_history)
        while self._adoption_time(k) <= now:
            start = self._adoption_time(k)
            end = self.activated_at + (k + 1) * self.rotation_period
            self.mac_history.append(MacInterval(self._registry.draw(self._rng), start, end))
            k += 1

    def _cycle_index(self, now: float) -> int:
        return int((now - self.activated_at) // self.rotation_period)

    def current_mac(self, now: float) -> Optional[MacAddr]:
        """The MAC broadcast at ``now``, or None inside a silent period."""
        self.sync_to(now)
        k = self._cycle_index(now)
        if k < len(self.mac_history):
            interval = self.mac_history[k]
            if interval.active_from <= now < interval.active_to:
                return interval.mac
        return None  # inside the gap before the cycle's adoption

    def next_adoption_after(self, now: float) -> float:
        """Earliest time at or after ``now`` when the device is broadcasting."""
        if self.current_mac(now) is not None:
            return now
        return self._adoption_time(self._cycle_index(now))

    def macs_active_within(self, t0: float, t1: float) -> List[MacAddr]:
        """MACs whose active interval overlaps the closed window [t0, t1]."""
        self.sync_to(t1)
        return [iv.mac for iv in self.mac_history
                if iv.active_from <= t1 and iv.active_to > t0]


def rotate_mac(device: DeviceState, now: float) -> DeviceState:
    """Advance a device's rotation state to ``now`` (idempotent mid-interval)."""
    device.sync_to(now)
    return device


def broadcast_mac(device: DeviceState, now: float) -> Tuple[MacAddr, float]:
    """MAC and effective time for a broadcast requested at ``now``.

    A device caught inside its silent gap waits it out, so the effective
    submission time may be slightly later than requested.
    """
    t = device.next_adoption_after(now)
    mac = device.current_mac(t)
    assert mac is not None
    return mac, t


# ---------------------------------------------------------------------------
# Encounters
# ---------------------------------------------------------------------------

def record_encounter(a: DeviceState, b: DeviceState, distance_m: float,
                     duration_s: float, now: float, model: RssiModel,
                     rng: np.random.Generator, ledger: Ledger, *,
                     detection_range: float = 10.0, rssi_samples: int = 8,
                     fee: int = 0) -> Tuple[ContactRecord, ContactRecord,
                                            Transaction, Transaction]:
    """Record one symmetric encounter and submit both sides to the ledger.

    Each device logs the other's current MAC and device type with the shared
    contact duration; RSSI readings are smoothed independently per side.
    Raises OutOfRange beyond ``detection_range`` and DeviceSilent if either
    device is mid-rotation (that contact is simply never observed).
    """
    if duration_s <= 0:
        raise DomainError("encounter duration must be positive")
    if distance_m <= 0:
        raise DomainError("distance must be positive")
    if distance_m > detection_range:
        raise OutOfRange(f"{distance_m} m exceeds {detection_range} m")
    mac_a = a.current_mac(now)
    mac_b = b.current_mac(now)
    if mac_a is None or mac_b is None:
        silent = a.owner if mac_a is None else b.owner
        raise DeviceSilent(f"device {silent} is in its silent period")

    # RSSI never exceeds 0 dBm on record even with extreme noise draws.
    rssi_ab = min(0.0, smoothed_rssi(model, distance_m, rssi_samples, rng))
    rssi_ba = min(0.0, smoothed_rssi(model, distance_m, rssi_samples, rng))
    rec_ab = ContactRecord(peer_mac=mac_b, delta_t_b=duration_s, rssi=rssi_ab,
                           device_type=b.device_type, observed_at=now)
    rec_ba = ContactRecord(peer_mac=mac_a, delta_t_b=duration_s, rssi=rssi_ba,
                           device_type=a.device_type, observed_at=now)
    tx_ab = Transaction(ledger.new_tx_id(), mac_a, rec_ab, now, fee)
    tx_ba = Transaction(ledger.new_tx_id(), mac_b, rec_ba, now, fee)
    ledger.submit_transaction(tx_ab)
    ledger.submit_transaction(tx_ba)
    return rec_ab, rec_ba, tx_ab, tx_ba
