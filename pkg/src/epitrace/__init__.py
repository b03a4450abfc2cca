"""Deterministic simulator for a ledger-backed contact-tracing system.

The package models five cooperating pieces: a hash-chained transaction
ledger, a hierarchical location-contract tree with an infection state
machine and gas metering, Bluetooth-style proximity sensing with rotating
MAC identities, a logistic infection-risk model with IRLS fitting and
exposure notification, and a Poisson workload harness that measures
latency, throughput, and operating cost.
"""

from .records import (
    SECONDS_PER_DAY,
    SECONDS_PER_HOUR,
    CheckinRecord,
    ContactRecord,
    GeoPath,
    HealthStatus,
    HealthStatusUpdate,
    MacAddr,
    Transaction,
)
from .ledger import (
    Block,
    DuplicateTxId,
    EmptyPool,
    GENESIS_HASH,
    Ledger,
    MalformedPayload,
    block_digest,
    deserialize_transaction,
    serialize_transaction,
)
from .contracts import (
    INFECTION_WINDOW_S,
    CheckinRequest,
    ContractGroup,
    ContractNode,
    GasCategory,
    GasMeter,
    GasTable,
    Level,
    LocationStatus,
    Receipt,
    StateEvent,
    StatusKind,
    StatusQuery,
    UndefinedTransition,
    UnknownLocation,
    step_location_state,
    tree_height,
)
from .proximity import (
    DeviceSilent,
    DeviceState,
    DomainError,
    MacInterval,
    MacRegistry,
    OutOfRange,
    RssiModel,
    broadcast_mac,
    record_encounter,
    rotate_mac,
    smoothed_rssi,
)
from .health import (
    DEFAULT_EXPOSURE_WINDOW_S,
    DEFAULT_RISK_PARAMS,
    Exposure,
    ExposureFeatures,
    ExposureKind,
    ExposureReport,
    FitResult,
    LabeledDataset,
    MaterialSurface,
    ModelParams,
    NonFiniteInput,
    SignConvention,
    SingularSystem,
    beta4,
    fit_irls,
    infection_probability,
    load_dataset,
    log_likelihood,
    make_synthetic_dataset,
    match_exposure,
    report_infected,
    save_dataset,
)
from .simulation import (
    ConfigError,
    CostArgs,
    Event,
    EventKind,
    ScenarioConfig,
    ScenarioMetrics,
    SimulationResult,
    SurfaceRow,
    User,
    apply_cost_args,
    execute_scenario,
    generate_events,
    measure_cost_surface,
    optimize_cost,
    run_scenario,
)

__version__ = "0.1.0"
