#!/usr/bin/env python3
"""Location infection automaton and the 14-day lazy expiry.

Walks the full transition table, then drives one location contract through
a check-in / infection / expiry cycle via the contract tree.
"""

from epitrace import (
    CheckinRecord,
    CheckinRequest,
    ContractGroup,
    GeoPath,
    HealthStatus,
    LocationStatus,
    SECONDS_PER_DAY,
    StateEvent,
    StatusKind,
    UndefinedTransition,
    step_location_state,
)

DAY = SECONDS_PER_DAY


def show_table():
    print("transition table (status + event -> status, '-' = undefined):")
    statuses = [None, LocationStatus.empty(), LocationStatus.infected(0.0),
                LocationStatus.clean()]
    names = ["(no contract)", "empty", "infected", "clean"]
    header = f"{'':14s}" + "".join(f"{e.value:>24s}" for e in StateEvent)
    print(header)
    for status, name in zip(statuses, names):
        cells = []
        for event in StateEvent:
            try:
                out = step_location_state(status, event, now=15 * DAY)
                cells.append(out.kind.value)
            except UndefinedTransition:
                cells.append("-")
        print(f"{name:14s}" + "".join(f"{c:>24s}" for c in cells))


def walk_one_location():
    print("\ndriving one location contract:")
    group = ContractGroup()
    geo = GeoPath("state-0", "county-0", "city-0", "gym")

    def checkin(t, infected):
        status = HealthStatus.INFECTED if infected else HealthStatus.NORMAL
        return group.route_request(geo, CheckinRequest(CheckinRecord(geo, t, status)), t)

    r = checkin(0.0, infected=False)
    print(f"  t=0d      healthy check-in  -> {r.status_after.kind.value:8s} "
          f"(gas {r.gas_charged}, rebate {r.rebate})")
    r = checkin(1 * DAY, infected=True)
    print(f"  t=1d      infected check-in -> {r.status_after.kind.value}")
    s = group.get_location_status(geo, 1 * DAY + 13 * DAY - 1)
    print(f"  t=14d-1s  status query      -> {s.kind.value}")
    s = group.get_location_status(geo, 15 * DAY)
    print(f"  t=15d     status query      -> {s.kind.value}  (14-day lazy expiry)")
    r = checkin(15 * DAY + 60, infected=True)
    print(f"  t=15d+    infected check-in -> {r.status_after.kind.value}")
    s = group.clean_location(geo, 16 * DAY)
    print(f"  t=16d     operator cleaning -> {s.kind.value}")


if __name__ == "__main__":
    show_table()
    walk_one_location()
