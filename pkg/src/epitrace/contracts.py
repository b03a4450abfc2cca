"""Hierarchical location-contract tree: routing, state machine, gas metering.

One tree node per administrative unit (state -> county -> city -> location).
Leaves carry a location infection status driven by a six-event automaton, a
bounded FIFO request queue served at a fixed rate, and a gas meter. Requests
are routed from the state root down to the leaf, paying per-hop routing gas,
creating missing contracts on demand (setup gas), and a small rebate is paid
back on success as a usage incentive.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .records import SECONDS_PER_DAY, CheckinRecord, GeoPath, HealthStatus

INFECTION_WINDOW_S = 14 * SECONDS_PER_DAY
PATH_HOPS = 3  # edges on a full state->county->city->location route


class UndefinedTransition(Exception):
    """Raised for (status, event) pairs outside the transition table."""


class UnknownLocation(Exception):
    """Raised when a retroactive update references a location with no contract."""


# ---------------------------------------------------------------------------
# Location infection state machine
# ---------------------------------------------------------------------------

class StatusKind(Enum):
    EMPTY = "empty"
    INFECTED = "infected"
    CLEAN = "clean"


@dataclass(frozen=True)
class LocationStatus:
    """Infection status of one location; infected status remembers when."""

    kind: StatusKind
    since: Optional[float] = None

    def __post_init__(self):
        if (self.kind is StatusKind.INFECTED) != (self.since is not None):
            raise ValueError("exactly the infected status carries a 'since' time")

    @classmethod
    def empty(cls) -> "LocationStatus":
        return cls(StatusKind.EMPTY)

    @classmethod
    def clean(cls) -> "LocationStatus":
        return cls(StatusKind.CLEAN)

    @classmethod
    def infected(cls, since: float) -> "LocationStatus":
        return cls(StatusKind.INFECTED, since)


class StateEvent(Enum):
    GENERATE_CONTRACT = "generate_contract"
    NORMAL_USER_CHECKIN = "normal_user_checkin"
    INFECTED_USER_CHECKIN = "infected_user_checkin"
    INFECTED_USER_UPDATE = "infected_user_update"
    LOCATION_IS_CLEANED = "location_is_cleaned"
    WAIT_14_DAYS = "wait_14_days"


def step_location_state(status: Optional[LocationStatus], event: StateEvent, now: float,
                        *, infection_window: float = INFECTION_WINDOW_S) -> LocationStatus:
    """Pure transition function of the location automaton.

    ``status is None`` represents the pre-contract null state, from which only
    GENERATE_CONTRACT is defined. WAIT_14_DAYS on an infected location whose
    window has not yet elapsed leaves the status unchanged (the guard simply
    is not met); all pairs outside the table raise UndefinedTransition.
    """
    if status is None:
        if event is StateEvent.GENERATE_CONTRACT:
            return LocationStatus.empty()
        raise UndefinedTransition(f"no contract yet: {event.value}")

    kind = status.kind
    if kind is StatusKind.EMPTY:
        if event is StateEvent.NORMAL_USER_CHECKIN:
            return LocationStatus.clean()
        if event is StateEvent.INFECTED_USER_CHECKIN:
            return LocationStatus.infected(now)
    elif kind is StatusKind.CLEAN:
        if event is StateEvent.NORMAL_USER_CHECKIN:
            return status
        if event in (StateEvent.INFECTED_USER_CHECKIN, StateEvent.INFECTED_USER_UPDATE):
            return LocationStatus.infected(now)
    elif kind is StatusKind.INFECTED:
        if event is StateEvent.NORMAL_USER_CHECKIN:
            return status  # healthy visitors do not extend the infection window
        if event in (StateEvent.INFECTED_USER_CHECKIN, StateEvent.INFECTED_USER_UPDATE):
            return LocationStatus.infected(now)
        if event is StateEvent.LOCATION_IS_CLEANED:
            return LocationStatus.clean()
        if event is StateEvent.WAIT_14_DAYS:
            if now - status.since >= infection_window:
                return LocationStatus.clean()
            return status
    raise UndefinedTransition(f"{kind.value} + {event.value}")


# ---------------------------------------------------------------------------
# Gas accounting
# ---------------------------------------------------------------------------

class GasCategory(Enum):
    SETUP = "setup"  # contract creation
    LOC = "loc"      # routing hops of location-service requests
    OP = "op"        # leaf operations (check-in, status query)
    BT = "bt"        # Bluetooth contact-record transactions
    HEAL = "heal"    # health broadcasts and retroactive status updates


@dataclass(frozen=True)
class GasTable:
    """Per-operation gas prices in wei (calibration knobs, config-overridable)."""

    contract_setup: int = 1_900_000
    routing_hop: int = 5_000
    checkin_op: int = 380_000
    status_query_op: int = 20_000
    retroactive_update_op: int = 50_000
    health_broadcast_op: int = 30_000
    contact_record_op: int = 15_000


class GasMeter:
    """Non-decreasing per-category wei counters."""

    def __init__(self):
        self._totals: Dict[GasCategory, int] = {cat: 0 for cat in GasCategory}

    def charge(self, category: GasCategory, amount: int) -> None:
        if amount < 0:
            raise ValueError("gas charges cannot be negative")
        self._totals[category] += amount

    def total(self) -> int:
        return sum(self._totals.values())

    def breakdown(self) -> Dict[str, int]:
        return {cat.value: self._totals[cat] for cat in GasCategory}

    def __getitem__(self, category: GasCategory) -> int:
        return self._totals[category]


# ---------------------------------------------------------------------------
# Requests, receipts, leaf queue
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckinRequest:
    record: CheckinRecord


@dataclass(frozen=True)
class StatusQuery:
    # A requester holding the leaf's address skips the routing hops.
    cached: bool = False


Request = Union[CheckinRequest, StatusQuery]


@dataclass(frozen=True)
class Receipt:
    """Outcome of one routed request."""

    accepted: bool
    status_after: LocationStatus
    gas_charged: int
    rebate: int
    completed_at: float


class _LeafQueue:
    """Bounded FIFO with one deterministic server.

    ``capacity`` bounds the number of waiting (not yet started) requests.
    Admission assumes arrivals come in nondecreasing time order, which the
    simulation loop guarantees.
    """

    def __init__(self, service_rate: float, capacity: int):
        if service_rate <= 0:
            raise ValueError("service rate must be positive")
        if capacity < 0:
            raise ValueError("queue capacity cannot be negative")
        self.service_time = 1.0 / service_rate
        self.capacity = capacity
        self._scheduled: Deque[Tuple[float, float]] = deque()  # (start, finish)
        self.max_waiting_seen = 0

    def admit(self, now: float) -> Tuple[bool, float]:
        """Try to enqueue an arrival; returns (accepted, completion time)."""
        while self._scheduled and self._scheduled[0][1] <= now:
            self._scheduled.popleft()
        waiting = sum(1 for start, _ in self._scheduled if start > now)
        start = max(now, self._scheduled[-1][1]) if self._scheduled else now
        if start > now:  # arrival would have to wait behind the server
            if waiting >= self.capacity:
                return False, now
            self.max_waiting_seen = max(self.max_waiting_seen, waiting + 1)
        finish = start + self.service_time
        self._scheduled.append((start, finish))
        return True, finish


# ---------------------------------------------------------------------------
# Contract tree
# ---------------------------------------------------------------------------

class Level(IntEnum):
    STATE = 0
    COUNTY = 1
    CITY = 2
    LOCATION = 3


@dataclass
class ContractNode:
    level: Level
    geo_prefix: Tuple[str, ...]
    created_at: float
    children: Dict[str, "ContractNode"] = field(default_factory=dict)
    status: Optional[LocationStatus] = None
    queue: Optional[_LeafQueue] = None
    gas_meter: GasMeter = field(default_factory=GasMeter)

    @property
    def name(self) -> str:
        return self.geo_prefix[-1]


def tree_height(node: ContractNode) -> int:
    """Edges on the longest downward path from ``node``."""
    if not node.children:
        return 0
    return 1 + max(tree_height(child) for child in node.children.values())


class ContractGroup:
    """All contract trees of one simulation run (one root per state)."""

    def __init__(self, gas_table: Optional[GasTable] = None, *,
                 queue_capacity: int = 10, service_rate: float = 5.0,
                 rebate_bonus: int = 100, incentive_enabled: bool = True,
                 infection_window: float = INFECTION_WINDOW_S,
                 meter: Optional[GasMeter] = None):
        if rebate_bonus <= 0:
            raise ValueError("rebate bonus must be positive")
        self.gas_table = gas_table or GasTable()
        self.queue_capacity = queue_capacity
        self.service_rate = service_rate
        self.rebate_bonus = rebate_bonus
        self.incentive_enabled = incentive_enabled
        self.infection_window = infection_window
        self.meter = meter if meter is not None else GasMeter()
        self.roots: Dict[str, ContractNode] = {}
        self.drops = 0
        self.rebates_paid = 0

    # -- internals ------------------------------------------------------------

    def _charge(self, node: ContractNode, category: GasCategory, amount: int) -> int:
        node.gas_meter.charge(category, amount)
        self.meter.charge(category, amount)
        return amount

    def _new_node(self, level: Level, prefix: Tuple[str, ...], now: float) -> ContractNode:
        node = ContractNode(level=level, geo_prefix=prefix, created_at=now)
        if level is Level.LOCATION:
            node.status = step_location_state(None, StateEvent.GENERATE_CONTRACT, now)
            node.queue = _LeafQueue(self.service_rate, self.queue_capacity)
        return node

    def _descend(self, geo: GeoPath, now: float, *, create: bool):
        """Walk root->leaf, optionally creating; returns (leaf, setup_gas)."""
        parts = geo.components()
        setup_gas = 0
        node = self.roots.get(parts[0])
        if node is None:
            if not create:
                return None, 0
            node = self._new_node(Level.STATE, parts[:1], now)
            self.roots[parts[0]] = node
            setup_gas += self._charge(node, GasCategory.SETUP, self.gas_table.contract_setup)
        for depth in (1, 2, 3):
            child = node.children.get(parts[depth])
            if child is None:
                if not create:
                    return None, 0
                child = self._new_node(Level(depth), parts[: depth + 1], now)
                node.children[parts[depth]] = child
                setup_gas += self._charge(child, GasCategory.SETUP, self.gas_table.contract_setup)
            node = child
        return node, setup_gas

    def _lazy_expire(self, leaf: ContractNode, now: float) -> None:
        # Requests trigger the 14-day expiry check; the contract never polls.
        status = leaf.status
        if status.kind is StatusKind.INFECTED and now - status.since >= self.infection_window:
            leaf.status = step_location_state(status, StateEvent.WAIT_14_DAYS, now,
                                              infection_window=self.infection_window)

    # -- operations -------------------------------------------------------------

    def route_request(self, geo: GeoPath, request: Request, now: float) -> Receipt:
        """Route one request to its leaf contract and process it.

        Missing contracts along the path are created and charged setup gas.
        Routing charges per-hop gas (skipped for cached status queries), the
        leaf charges its operation gas, and accepted requests earn a rebate
        slightly above the gas they paid. A full queue drops the request.
        """
        leaf, gas = self._descend(geo, now, create=True)
        cached = isinstance(request, StatusQuery) and request.cached
        if not cached:
            hop_gas = PATH_HOPS * self.gas_table.routing_hop
            self._charge(leaf, GasCategory.LOC, hop_gas)
            gas += hop_gas
        self._lazy_expire(leaf, now)

        accepted, completed_at = leaf.queue.admit(now)
        if not accepted:
            self.drops += 1
            return Receipt(False, leaf.status, gas, 0, now)

        if isinstance(request, CheckinRequest):
            infected = request.record.health_status is HealthStatus.INFECTED
            event = (StateEvent.INFECTED_USER_CHECKIN if infected
                     else StateEvent.NORMAL_USER_CHECKIN)
            leaf.status = step_location_state(leaf.status, event, now,
                                              infection_window=self.infection_window)
            gas += self._charge(leaf, GasCategory.OP, self.gas_table.checkin_op)
        else:
            gas += self._charge(leaf, GasCategory.OP, self.gas_table.status_query_op)

        rebate = gas + self.rebate_bonus if self.incentive_enabled else 0
        self.rebates_paid += rebate
        return Receipt(True, leaf.status, gas, rebate, completed_at)

    def get_location_status(self, geo: GeoPath, now: float) -> LocationStatus:
        """Read a location's status, creating the contract path on demand.

        This is the direct/cached read path: it charges setup gas for any
        contracts it creates but no routing or operation gas. The read
        triggers lazy 14-day expiry first.
        """
        leaf, _ = self._descend(geo, now, create=True)
        self._lazy_expire(leaf, now)
        return leaf.status

    def apply_retroactive_infection(self, visits: Sequence[Tuple[GeoPath, float]],
                                    now: float) -> List[GeoPath]:
        """Mark every visited location infected; return those that changed.

        Visits must fall inside the trailing infection window and must refer
        to locations whose contracts exist (a visit implies a past check-in).
        Already-infected locations get their ``since`` refreshed but are not
        reported as changed. These updates bypass the leaf queues: they are
        system-initiated maintenance, not user requests.
        """
        for _, when in visits:
            if when < now - self.infection_window:
                raise ValueError("retroactive visit outside the infection window")
        changed: List[GeoPath] = []
        for geo, _ in visits:
            leaf, _ = self._descend(geo, now, create=False)
            if leaf is None:
                raise UnknownLocation(str(geo))
            self._lazy_expire(leaf, now)
            was_infected = leaf.status.kind is StatusKind.INFECTED
            leaf.status = step_location_state(leaf.status, StateEvent.INFECTED_USER_UPDATE,
                                              now, infection_window=self.infection_window)
            self._charge(leaf, GasCategory.HEAL, self.gas_table.retroactive_update_op)
            if not was_infected:
                changed.append(geo)
        return changed

    def clean_location(self, geo: GeoPath, now: float) -> LocationStatus:
        """Operator-injected disinfection event for scenario scripting."""
        leaf, _ = self._descend(geo, now, create=False)
        if leaf is None:
            raise UnknownLocation(str(geo))
        leaf.status = step_location_state(leaf.status, StateEvent.LOCATION_IS_CLEANED, now,
                                          infection_window=self.infection_window)
        return leaf.status

    # -- inspection ---------------------------------------------------------------

    def tree_height(self) -> int:
        if not self.roots:
            return 0
        return max(tree_height(root) for root in self.roots.values())

    def iter_nodes(self) -> Iterator[ContractNode]:
        stack = list(self.roots.values())
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())

    def iter_leaves(self) -> Iterator[ContractNode]:
        for node in self.iter_nodes():
            if node.level is Level.LOCATION:
                yield node

    def node_count(self) -> int:
        return sum(1 for _ in self.iter_nodes())
