#!/usr/bin/env python3
"""Rotating MAC identities, silent periods, and RSSI-vs-distance.

Shows a device's rotation timeline, how encounters are lost inside silent
gaps, and the smoothed received-signal-strength curve across distances.
"""

import numpy as np

from epitrace import (
    DeviceSilent,
    DeviceState,
    Ledger,
    MacRegistry,
    RssiModel,
    record_encounter,
    rotate_mac,
    smoothed_rssi,
)


def rotation_timeline():
    dev = DeviceState(0, np.random.default_rng(1), rotation_period=900.0,
                      silent_period=10.0)
    rotate_mac(dev, 3700.0)
    print("rotation timeline over the first hour (900 s period, 10 s silent gap):")
    for interval in dev.mac_history[:5]:
        print(f"  {interval.mac}  active [{interval.active_from:7.1f}, "
              f"{interval.active_to:7.1f})")
    print(f"  MAC at t=905 (inside the gap): {dev.current_mac(905.0)}")
    day = 86400.0
    dev.sync_to(day)
    print(f"  distinct MACs in 24 h: {len(dev.macs_active_within(0, day))}")


def rssi_curve():
    print("\nsmoothed RSSI by distance (log-distance model, 8 samples, LPF):")
    model = RssiModel(ref_power_1m=-59.0, path_loss_exponent=2.0, noise_sigma=2.0,
                      lpf_alpha=0.3)
    rng = np.random.default_rng(7)
    for distance in (0.5, 1.0, 2.0, 4.0, 8.0, 10.0):
        value = smoothed_rssi(model, distance, samples=8, rng=rng)
        bar = "#" * int((value + 95) / 2)
        print(f"  {distance:5.1f} m  {value:7.2f} dBm  {bar}")


def lost_in_silence():
    print("\nencounters during a silent period are simply never observed:")
    registry = MacRegistry()
    a = DeviceState(0, np.random.default_rng(2), registry=registry)
    b = DeviceState(1, np.random.default_rng(3), registry=registry)
    ledger = Ledger()
    model = RssiModel()
    rng = np.random.default_rng(4)
    rec_ab, _, _, _ = record_encounter(a, b, 2.5, 300.0, 500.0, model, rng, ledger)
    print(f"  t=500: a logged peer {rec_ab.peer_mac} at {rec_ab.rssi:.1f} dBm")
    try:
        record_encounter(a, b, 2.5, 300.0, 905.0, model, rng, ledger)
    except DeviceSilent as exc:
        print(f"  t=905: lost ({exc})")
    print(f"  ledger holds {ledger.pending_count} contact txs (2 per encounter)")


if __name__ == "__main__":
    rotation_timeline()
    rssi_curve()
    lost_in_silence()
