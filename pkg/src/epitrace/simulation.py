"""Workload generation, scenario execution, and cost-surface measurement.

A scenario drives Poisson streams of check-ins, Bluetooth encounters, status
queries, and a few seeded infection reports through the proximity layer, the
ledger, and the contract tree, all from a single seed. Network admission is
a token-bucket bandwidth shaper (excess waits) followed by Bernoulli packet
loss; leaf-queue overflow drops the request and records a synthetic latency
sample with a resynchronization penalty. A request counts as completed when
its contract processing has finished and its transaction is sealed.

Everything is deterministic in the config (seed included): running the same
scenario twice yields byte-identical metrics.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .records import (
    SECONDS_PER_HOUR,
    CheckinRecord,
    GeoPath,
    HealthStatus,
    HealthStatusUpdate,
    Transaction,
)
from .ledger import Ledger
from .contracts import (
    CheckinRequest,
    ContractGroup,
    GasCategory,
    GasMeter,
    GasTable,
    StatusKind,
    StatusQuery,
)
from .proximity import (
    DeviceState,
    DeviceSilent,
    MacRegistry,
    RssiModel,
    broadcast_mac,
    record_encounter,
)
from .health import DEFAULT_RISK_PARAMS, MaterialSurface, ModelParams, report_infected

log = logging.getLogger("epitrace.simulation")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class CostArgs:
    """The swept decision variables of the cost optimization."""

    n_contracts: int = 6
    queue_capacity: int = 10
    block_capacity: int = 256
    rotation_period: float = 900.0
    service_rate: float = 5.0

    def as_tuple(self) -> Tuple:
        return (self.n_contracts, self.queue_capacity, self.block_capacity,
                self.rotation_period, self.service_rate)


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 100
    checkin_rate: float = 1.0      # check-ins per user per simulated hour
    contact_rate: float = 0.0      # encounters initiated per user per hour
    query_rate: float = 0.0        # status queries per user per hour
    n_locations: int = 6
    n_states: int = 1
    n_counties: int = 1
    n_cities: int = 1
    block_capacity: int = 256
    block_interval: float = 15.0   # sealing cadence in simulated seconds
    queue_capacity: int = 10
    service_rate: float = 5.0      # requests per second per leaf contract
    bandwidth: float = 50.0        # network-wide admitted requests per second
    packet_loss_rate: float = 0.0
    duration: float = 3600.0
    seed: int = 0
    gas: GasTable = field(default_factory=GasTable)
    rotation_period: float = 900.0
    silent_period: float = 10.0
    detection_range: float = 10.0
    rssi: RssiModel = field(default_factory=RssiModel)
    rssi_samples: int = 8
    encounter_duration: Tuple[float, float] = (60.0, 600.0)
    infected_seed_users: int = 0
    # operator-injected disinfection events: (location index, simulated time)
    cleanings: Tuple[Tuple[int, float], ...] = ()
    rebate_bonus: int = 100
    incentive_enabled: bool = True
    resync_penalty: float = 60.0
    risk_params: ModelParams = DEFAULT_RISK_PARAMS

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be at least 1")
        for name in ("checkin_rate", "contact_rate", "query_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} cannot be negative")
        if not 0 <= self.packet_loss_rate < 1:
            raise ConfigError("packet_loss_rate must lie in [0, 1)")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        if self.n_locations < 1:
            raise ConfigError("n_locations must be at least 1")
        if min(self.n_states, self.n_counties, self.n_cities) < 1:
            raise ConfigError("geo layout levels need at least one unit each")
        if self.block_interval <= 0:
            raise ConfigError("block_interval must be positive")
        if self.infected_seed_users > self.n_users:
            raise ConfigError("cannot seed more infections than users")
        for loc, when in self.cleanings:
            if not 0 <= loc < self.n_locations:
                raise ConfigError(f"cleaning event references location {loc}")
            if when < 0:
                raise ConfigError("cleaning events need non-negative times")
        if not 0 <= self.silent_period < self.rotation_period:
            raise ConfigError("silent_period must be shorter than rotation_period")
        if self.encounter_duration[0] <= 0 or self.encounter_duration[1] < self.encounter_duration[0]:
            raise ConfigError("encounter_duration must be a positive (lo, hi) pair")

    def locations(self) -> List[GeoPath]:
        """Deterministic geo layout: locations spread round-robin over cities."""
        paths = []
        for i in range(self.n_locations):
            city = i % self.n_cities
            county = city % self.n_counties
            state = county % self.n_states
            paths.append(GeoPath(f"state-{state}", f"county-{county}",
                                 f"city-{city}", f"loc-{i}"))
        return paths

    def surface_map(self) -> Dict[GeoPath, MaterialSurface]:
        """Dominant material per location, cycling through the six surfaces."""
        surfaces = list(MaterialSurface)
        return {geo: surfaces[i % len(surfaces)]
                for i, geo in enumerate(self.locations())}


def apply_cost_args(cfg: ScenarioConfig, args: CostArgs) -> ScenarioConfig:
    return replace(cfg, n_locations=args.n_contracts,
                   queue_capacity=args.queue_capacity,
                   block_capacity=args.block_capacity,
                   rotation_period=args.rotation_period,
                   service_rate=args.service_rate)


# ---------------------------------------------------------------------------
# Event stream
# ---------------------------------------------------------------------------

class EventKind(IntEnum):
    CHECKIN = 0
    ENCOUNTER = 1
    QUERY = 2
    REPORT_INFECTED = 3
    CLEAN_LOCATION = 4  # operator-injected, not user traffic


@dataclass(frozen=True)
class Event:
    time: float
    user: int
    kind: EventKind
    seq: int
    location: int = -1
    partner: int = -1
    distance: float = 0.0
    duration: float = 0.0

    def sort_key(self) -> Tuple[float, int, int, int]:
        # Strict total order: ties broken by user id, then event kind.
        return (self.time, self.user, int(self.kind), self.seq)


def generate_events(cfg: ScenarioConfig, rng: np.random.Generator) -> List[Event]:
    """Per-user independent Poisson processes, merged into one ordered stream."""
    cfg.validate()
    events: List[Event] = []
    seq = 0
    hours = cfg.duration / SECONDS_PER_HOUR

    def uniform_times(count: int) -> np.ndarray:
        return np.sort(rng.uniform(0.0, cfg.duration, size=count))

    for user in range(cfg.n_users):
        for t in uniform_times(int(rng.poisson(cfg.checkin_rate * hours))):
            events.append(Event(float(t), user, EventKind.CHECKIN, seq,
                                location=int(rng.integers(cfg.n_locations))))
            seq += 1
        for t in uniform_times(int(rng.poisson(cfg.contact_rate * hours))):
            partner = int(rng.integers(cfg.n_users - 1))
            if partner >= user:
                partner += 1
            lo, hi = cfg.encounter_duration
            events.append(Event(float(t), user, EventKind.ENCOUNTER, seq,
                                partner=partner,
                                distance=float(rng.uniform(0.5, cfg.detection_range)),
                                duration=float(rng.uniform(lo, hi))))
            seq += 1
        for t in uniform_times(int(rng.poisson(cfg.query_rate * hours))):
            events.append(Event(float(t), user, EventKind.QUERY, seq,
                                location=int(rng.integers(cfg.n_locations))))
            seq += 1
    for user in range(cfg.infected_seed_users):
        events.append(Event(float(rng.uniform(0.0, cfg.duration)), user,
                            EventKind.REPORT_INFECTED, seq))
        seq += 1
    for loc, when in cfg.cleanings:
        events.append(Event(float(when), -1, EventKind.CLEAN_LOCATION, seq,
                            location=loc))
        seq += 1
    events.sort(key=Event.sort_key)
    return events


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------

@dataclass
class User:
    uid: int
    device: DeviceState
    visits: List[Tuple[GeoPath, float]] = field(default_factory=list)
    infected_since: Optional[float] = None


@dataclass
class ScenarioMetrics:
    offered: int
    completed: int
    drops: int
    drops_loss: int
    drops_queue: int
    lost_encounters: int
    throughput: float
    # mean over completed-request samples plus the synthetic resync-penalty
    # samples recorded for queue-overflow drops
    mean_latency: float
    latencies: List[float]
    drop_latencies: List[float]
    gas: Dict[str, int]
    total_gas: int
    avg_request_cost: float
    cost_stddev_over_rounds: Optional[float] = None


@dataclass
class SimulationResult:
    config: ScenarioConfig
    metrics: ScenarioMetrics
    ledger: Ledger
    contracts: ContractGroup
    users: List[User]
    updates: List[Tuple[Transaction, HealthStatusUpdate]]


@dataclass(frozen=True)
class _Admitted:
    """A check-in that cleared loss and shaping, waiting for its slot time."""

    intent_time: float
    event: Event


def execute_scenario(cfg: ScenarioConfig) -> SimulationResult:
    """Run one scenario end to end and keep all state for inspection."""
    cfg.validate()
    root_ss = np.random.SeedSequence(cfg.seed)
    events_ss, network_ss, rssi_ss, devices_ss = root_ss.spawn(4)
    rng_events = np.random.default_rng(events_ss)
    rng_network = np.random.default_rng(network_ss)
    rng_rssi = np.random.default_rng(rssi_ss)
    device_seeds = devices_ss.spawn(cfg.n_users)

    registry = MacRegistry()
    users = [User(uid=u, device=DeviceState(u, np.random.default_rng(device_seeds[u]),
                                            registry=registry,
                                            rotation_period=cfg.rotation_period,
                                            silent_period=cfg.silent_period))
             for u in range(cfg.n_users)]
    locations = cfg.locations()
    ledger = Ledger(cfg.block_capacity)
    meter = GasMeter()
    contracts = ContractGroup(cfg.gas, queue_capacity=cfg.queue_capacity,
                              service_rate=cfg.service_rate,
                              rebate_bonus=cfg.rebate_bonus,
                              incentive_enabled=cfg.incentive_enabled,
                              meter=meter)

    sealed_at: Dict[str, float] = {}
    next_seal = cfg.block_interval

    def advance_seals(t: float) -> None:
        nonlocal next_seal
        while next_seal <= t:
            if ledger.pending_count:
                block = ledger.seal_block(next_seal)
                for tx in block.txs:
                    sealed_at[tx.tx_id] = block.sealed_at
            next_seal += cfg.block_interval

    offered = completed = drops_loss = drops_queue = lost_encounters = 0
    latencies: List[float] = []
    drop_latencies: List[float] = []
    # (intent time, contract completion, tx id) for check-ins awaiting sealing
    open_checkins: List[Tuple[float, float, str]] = []
    updates: List[Tuple[Transaction, HealthStatusUpdate]] = []
    shaper_free_at = 0.0

    heap: List[Tuple[Tuple[float, int, int, int], object]] = []
    for ev in generate_events(cfg, rng_events):
        heapq.heappush(heap, (ev.sort_key(), ev))

    def push_admitted(adm: _Admitted, at: float) -> None:
        ev = adm.event
        heapq.heappush(heap, ((at, ev.user, int(ev.kind), ev.seq), adm))

    while heap:
        (now, _, _, _), item = heapq.heappop(heap)
        advance_seals(now)

        if isinstance(item, _Admitted):
            # Shaped check-in reaching the contract layer at its slot time.
            ev = item.event
            user = users[ev.user]
            mac, t_eff = broadcast_mac(user.device, now)
            if t_eff > now:
                push_admitted(item, t_eff)  # silent gap: broadcast when it ends
                continue
            geo = locations[ev.location]
            status = (HealthStatus.INFECTED if user.infected_since is not None
                      else HealthStatus.NORMAL)
            record = CheckinRecord(geo, now, status)
            receipt = contracts.route_request(geo, CheckinRequest(record), now)
            if not receipt.accepted:
                drops_queue += 1
                drop_latencies.append((now - item.intent_time) + cfg.resync_penalty)
                continue
            tx = Transaction(ledger.new_tx_id(), mac, record, now, cfg.gas.checkin_op)
            ledger.submit_transaction(tx)
            user.visits.append((geo, now))
            open_checkins.append((item.intent_time, receipt.completed_at, tx.tx_id))
            continue

        ev = item
        if ev.kind is EventKind.CHECKIN:
            offered += 1
            slot = max(ev.time, shaper_free_at)
            shaper_free_at = slot + 1.0 / cfg.bandwidth
            if rng_network.random() < cfg.packet_loss_rate:
                drops_loss += 1
                continue
            push_admitted(_Admitted(ev.time, ev), slot)

        elif ev.kind is EventKind.QUERY:
            offered += 1
            slot = max(ev.time, shaper_free_at)
            shaper_free_at = slot + 1.0 / cfg.bandwidth
            if rng_network.random() < cfg.packet_loss_rate:
                drops_loss += 1
                continue
            receipt = contracts.route_request(locations[ev.location], StatusQuery(), slot)
            if not receipt.accepted:
                drops_queue += 1
                drop_latencies.append((slot - ev.time) + cfg.resync_penalty)
            elif receipt.completed_at <= cfg.duration:
                completed += 1
                latencies.append(receipt.completed_at - ev.time)

        elif ev.kind is EventKind.ENCOUNTER:
            try:
                record_encounter(users[ev.user].device, users[ev.partner].device,
                                 ev.distance, ev.duration, ev.time, cfg.rssi,
                                 rng_rssi, ledger,
                                 detection_range=cfg.detection_range,
                                 rssi_samples=cfg.rssi_samples,
                                 fee=cfg.gas.contact_record_op)
            except DeviceSilent:
                lost_encounters += 1
            else:
                meter.charge(GasCategory.BT, 2 * cfg.gas.contact_record_op)

        elif ev.kind is EventKind.REPORT_INFECTED:
            user = users[ev.user]
            user.infected_since = ev.time
            txs = report_infected(user, ledger, contracts, ev.time,
                                  fee=cfg.gas.health_broadcast_op)
            meter.charge(GasCategory.HEAL, cfg.gas.health_broadcast_op)
            updates.append((txs[0], txs[0].payload))

        elif ev.kind is EventKind.CLEAN_LOCATION:
            # Disinfection applies only to locations currently infected.
            geo = locations[ev.location]
            status = contracts.get_location_status(geo, ev.time)
            if status.kind is StatusKind.INFECTED:
                contracts.clean_location(geo, ev.time)

    # Seal whatever the cadence owes up to the horizon, then flush the pool so
    # every submitted transaction ends up sealed (stamped at the horizon).
    advance_seals(cfg.duration)
    while ledger.pending_count:
        block = ledger.seal_block(max(cfg.duration, next_seal - cfg.block_interval))
        for tx in block.txs:
            sealed_at[tx.tx_id] = block.sealed_at

    for intent, contract_done, tx_id in open_checkins:
        done = max(contract_done, sealed_at[tx_id])
        if done <= cfg.duration:
            completed += 1
            latencies.append(done - intent)

    drops = drops_loss + drops_queue
    total_gas = meter.total()
    all_samples = latencies + drop_latencies
    metrics = ScenarioMetrics(
        offered=offered,
        completed=completed,
        drops=drops,
        drops_loss=drops_loss,
        drops_queue=drops_queue,
        lost_encounters=lost_encounters,
        throughput=completed / cfg.duration,
        mean_latency=float(np.mean(all_samples)) if all_samples else 0.0,
        latencies=latencies,
        drop_latencies=drop_latencies,
        gas=meter.breakdown(),
        total_gas=total_gas,
        avg_request_cost=total_gas / completed if completed else 0.0,
    )
    log.debug("scenario done: offered=%d completed=%d drops=%d gas=%d",
              offered, completed, drops, total_gas)
    return SimulationResult(cfg, metrics, ledger, contracts, users, updates)


def run_scenario(cfg: ScenarioConfig) -> ScenarioMetrics:
    """Run a scenario and return only its metrics (pure function of the config)."""
    return execute_scenario(cfg).metrics


# ---------------------------------------------------------------------------
# Cost surface and optimization
# ---------------------------------------------------------------------------

@dataclass
class SurfaceRow:
    args: CostArgs
    rounds: int
    avg_cost_mean: float
    avg_cost_var: float
    avg_cost_stddev: float
    total_gas_mean: float
    total_gas_var: float
    gas_mean: Dict[str, float]
    per_round: List[ScenarioMetrics]


def round_seeds(base_seed: int, rounds: int) -> List[int]:
    """Derived per-round seeds, shared across grid points so rounds are paired."""
    ss = np.random.SeedSequence([base_seed, 0x5eed])
    return [int(s) for s in ss.generate_state(rounds)]


def measure_cost_surface(grid: Sequence[CostArgs], base_cfg: ScenarioConfig,
                         rounds: int,
                         seeds: Optional[Sequence[int]] = None) -> List[SurfaceRow]:
    """Run every grid point for ``rounds`` seeds and aggregate cost statistics.

    Variance uses the sample estimator (ddof=1). Passing an explicit ``seeds``
    list (length ``rounds``) pins the per-round seeds; repeating one seed
    yields zero variance, which is the degenerate determinism check.
    """
    if rounds < 2:
        raise ValueError("variance needs at least two rounds")
    if seeds is None:
        seeds = round_seeds(base_cfg.seed, rounds)
    if len(seeds) != rounds:
        raise ValueError("seeds must match the round count")
    surface = []
    for args in grid:
        cfg_point = apply_cost_args(base_cfg, args)
        per_round = [run_scenario(replace(cfg_point, seed=seed)) for seed in seeds]
        avg_costs = np.array([m.avg_request_cost for m in per_round])
        totals = np.array([float(m.total_gas) for m in per_round])
        gas_mean = {cat: float(np.mean([m.gas[cat] for m in per_round]))
                    for cat in per_round[0].gas}
        surface.append(SurfaceRow(
            args=args,
            rounds=rounds,
            avg_cost_mean=float(np.mean(avg_costs)),
            avg_cost_var=float(np.var(avg_costs, ddof=1)),
            avg_cost_stddev=float(np.std(avg_costs, ddof=1)),
            total_gas_mean=float(np.mean(totals)),
            total_gas_var=float(np.var(totals, ddof=1)),
            gas_mean=gas_mean,
            per_round=per_round,
        ))
    return surface


def optimize_cost(surface: Sequence[SurfaceRow],
                  penalty_weights: Tuple[float, float] = (0.5, 0.5)) -> CostArgs:
    """Pick the grid point minimizing the weighted normalized cost penalty.

    The penalty is w1 * minmax(avg cost) + w2 * minmax(cost variance); a
    degenerate axis (all values equal) contributes zero. Ties break
    lexicographically on the argument tuple.
    """
    if not surface:
        raise ValueError("cost surface is empty")
    w_avg, w_var = penalty_weights

    def minmax(values: np.ndarray) -> np.ndarray:
        lo, hi = float(np.min(values)), float(np.max(values))
        if hi == lo:
            return np.zeros(len(values))
        return (values - lo) / (hi - lo)

    avgs = minmax(np.array([row.avg_cost_mean for row in surface]))
    variances = minmax(np.array([row.avg_cost_var for row in surface]))
    scores = w_avg * avgs + w_var * variances
    best = min(range(len(surface)),
               key=lambda i: (scores[i], surface[i].args.as_tuple()))
    return surface[best].args
