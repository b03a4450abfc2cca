"""Health tracing: infection-risk scoring, model fitting, and notification.

The risk score is a logistic model over four exposure features: smoothed
Bluetooth signal strength (RSSI), Bluetooth contact duration, check-in
overlap time at a shared location, and the viral survival hours of the
location's dominant material surface. The linear term is

    z = b0 + (b1 * rssi) * (b2 * delta_t_b) + (b3 * delta_t_c) * beta4(ms)

with two sign conventions: ``AS_WRITTEN`` scores 1 / (1 + e^z) and
``STANDARD_LOGIT`` (the default) scores 1 / (1 + e^-z), so that larger
exposure yields larger risk. Only the product b1*b2 is statistically
identifiable, so fitting works in the collapsed space (b0, b1*b2, b3) and
reports the split symmetrically: b1 = sign(c) * sqrt(|c|), b2 = sqrt(|c|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .records import (
    SECONDS_PER_DAY,
    ContactRecord,
    GeoPath,
    HealthStatus,
    HealthStatusUpdate,
    MacAddr,
    Transaction,
)
from .contracts import INFECTION_WINDOW_S, ContractGroup
from .ledger import Ledger
from .proximity import broadcast_mac

DEFAULT_EXPOSURE_WINDOW_S = 72 * 3600.0  # largest surface-survival entry


class NonFiniteInput(ValueError):
    """A feature or coefficient is NaN or infinite."""


class SingularSystem(Exception):
    """The fitting design matrix is rank-deficient (collinear features)."""


# ---------------------------------------------------------------------------
# Features and parameters
# ---------------------------------------------------------------------------

class MaterialSurface(Enum):
    AEROSOL = "aerosol"
    COPPER = "copper"
    CARDBOARD = "cardboard"
    OTHER = "other"
    STAINLESS_STEEL = "stainless_steel"
    PLASTIC = "plastic"


_BETA4_HOURS: Dict[MaterialSurface, float] = {
    MaterialSurface.AEROSOL: 3.0,
    MaterialSurface.COPPER: 4.0,
    MaterialSurface.CARDBOARD: 24.0,
    MaterialSurface.OTHER: 30.0,
    MaterialSurface.STAINLESS_STEEL: 48.0,
    MaterialSurface.PLASTIC: 72.0,
}


def beta4(ms: MaterialSurface) -> float:
    """Viral survival hours on a material surface (fixed covariate, not fitted)."""
    return _BETA4_HOURS[ms]


class SignConvention(Enum):
    AS_WRITTEN = "as_written"        # risk = 1 / (1 + e^z)
    STANDARD_LOGIT = "standard_logit"  # risk = 1 / (1 + e^-z)


@dataclass(frozen=True)
class ExposureFeatures:
    rssi: float
    delta_t_b: float
    delta_t_c: float
    ms: MaterialSurface

    def __post_init__(self):
        if self.delta_t_b < 0 or self.delta_t_c < 0:
            raise ValueError("exposure durations cannot be negative")


@dataclass(frozen=True)
class ModelParams:
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    sign_convention: SignConvention = SignConvention.STANDARD_LOGIT


# Illustrative defaults for scenario scoring; carries no clinical meaning.
DEFAULT_RISK_PARAMS = ModelParams(beta0=-3.0, beta1=-0.02, beta2=0.001, beta3=5e-5)


def _stable_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def infection_probability(features: ExposureFeatures, params: ModelParams) -> float:
    """Score one exposure with the logistic risk model."""
    values = (features.rssi, features.delta_t_b, features.delta_t_c,
              params.beta0, params.beta1, params.beta2, params.beta3)
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteInput("features and coefficients must be finite")
    z = (params.beta0
         + (params.beta1 * features.rssi) * (params.beta2 * features.delta_t_b)
         + (params.beta3 * features.delta_t_c) * beta4(features.ms))
    if params.sign_convention is SignConvention.AS_WRITTEN:
        return _stable_sigmoid(-z)
    return _stable_sigmoid(z)


# ---------------------------------------------------------------------------
# Labeled data and the fixture format
# ---------------------------------------------------------------------------

@dataclass
class LabeledDataset:
    """Rows of (exposure features, binary infected label)."""

    rows: List[Tuple[ExposureFeatures, int]]

    def __post_init__(self):
        for _, label in self.rows:
            if label not in (0, 1):
                raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.rows)

    def labels(self) -> List[int]:
        return [label for _, label in self.rows]


DATASET_COLUMNS = ("rssi", "delta_t_b", "delta_t_c", "ms", "label")


def save_dataset(dataset: LabeledDataset, path) -> None:
    """Write a dataset as tab-separated text with a fixed header.

    Floats use ``repr`` so a save/load round trip is bit-exact; surfaces are
    written as their lowercase enum value.
    """
    lines = ["\t".join(DATASET_COLUMNS)]
    for feats, label in dataset.rows:
        lines.append("\t".join((repr(feats.rssi), repr(feats.delta_t_b),
                                repr(feats.delta_t_c), feats.ms.value, str(label))))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledDataset:
    with open(path, encoding="ascii") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or tuple(lines[0].split("\t")) != DATASET_COLUMNS:
        raise ValueError("dataset file must start with the documented header")
    rows = []
    for line in lines[1:]:
        rssi_s, dtb_s, dtc_s, ms_s, label_s = line.split("\t")
        feats = ExposureFeatures(float(rssi_s), float(dtb_s), float(dtc_s),
                                 MaterialSurface(ms_s))
        rows.append((feats, int(label_s)))
    return LabeledDataset(rows)


def make_synthetic_dataset(n: int, params: ModelParams,
                           rng: np.random.Generator) -> LabeledDataset:
    """Draw features from broad uniform ranges and label by the model itself."""
    surfaces = list(MaterialSurface)
    rows = []
    for _ in range(n):
        feats = ExposureFeatures(
            rssi=float(rng.uniform(-90.0, -30.0)),
            delta_t_b=float(rng.uniform(30.0, 900.0)),
            delta_t_c=float(rng.uniform(0.0, 600.0)),
            ms=surfaces[int(rng.integers(len(surfaces)))],
        )
        p = infection_probability(feats, params)
        rows.append((feats, int(rng.random() < p)))
    return LabeledDataset(rows)


# ---------------------------------------------------------------------------
# IRLS fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    converged: bool
    n_iter: int
    log_likelihood: float


def design_matrix(dataset: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed design: columns (1, rssi * delta_t_b, delta_t_c * beta4(ms))."""
    X = np.array([[1.0, f.rssi * f.delta_t_b, f.delta_t_c * beta4(f.ms)]
                  for f, _ in dataset.rows])
    y = np.array(dataset.labels(), dtype=float)
    return X, y


def _collapsed(params: ModelParams) -> np.ndarray:
    return np.array([params.beta0, params.beta1 * params.beta2, params.beta3])


def _split(theta: np.ndarray, sign_convention: SignConvention) -> ModelParams:
    b0, c, b3 = (float(v) for v in theta)
    root = math.sqrt(abs(c))
    return ModelParams(beta0=b0, beta1=math.copysign(root, c) if c else 0.0,
                       beta2=root, beta3=b3, sign_convention=sign_convention)


def _log_likelihood_theta(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    eta = X @ theta
    # log sigma(eta) = -log(1 + e^-eta), computed stably via logaddexp
    return float(np.sum(y * -np.logaddexp(0.0, -eta) + (1 - y) * -np.logaddexp(0.0, eta)))


def log_likelihood(dataset: LabeledDataset, params: ModelParams) -> float:
    """Bernoulli log-likelihood of the dataset under the model."""
    X, y = design_matrix(dataset)
    theta = _collapsed(params)
    if params.sign_convention is SignConvention.AS_WRITTEN:
        theta = -theta
    return _log_likelihood_theta(theta, X, y)


def fit_irls(dataset: LabeledDataset, tol: float = 1e-8, max_iter: int = 100,
             sign_convention: SignConvention = SignConvention.STANDARD_LOGIT) -> FitResult:
    """Maximum-likelihood logistic fit by iteratively reweighted least squares.

    Each step solves the weighted normal equations with weights mu * (1 - mu)
    and stops when the largest coefficient update falls below ``tol``. On
    separable data the iteration hits ``max_iter`` with the best iterate and
    ``converged=False``; structurally collinear features raise SingularSystem.

    Only the product beta1 * beta2 is identifiable; see the module docstring
    for the reported split.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit an empty dataset")
    labels = set(dataset.labels())
    if labels != {0, 1}:
        raise ValueError("fitting requires both classes present")
    X, y = design_matrix(dataset)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularSystem("design matrix columns are collinear")

    theta = np.zeros(X.shape[1])
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = X @ theta
        mu = np.clip(1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500))), 1e-12, 1 - 1e-12)
        w = mu * (1.0 - mu)
        xtwx = X.T @ (X * w[:, None])
        grad = X.T @ (y - mu)
        try:
            delta = np.linalg.solve(xtwx, grad)
        except np.linalg.LinAlgError:
            # Weights collapse on separable data; keep pushing via lstsq.
            delta = np.linalg.lstsq(xtwx, grad, rcond=None)[0]
        theta = theta + delta
        if np.max(np.abs(delta)) < tol:
            converged = True
            break

    ll = _log_likelihood_theta(theta, X, y)
    if sign_convention is SignConvention.AS_WRITTEN:
        theta = -theta
    return FitResult(_split(theta, sign_convention), converged, n_iter, ll)


# ---------------------------------------------------------------------------
# Broadcast and exposure matching
# ---------------------------------------------------------------------------

class ExposureKind(Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"


@dataclass(frozen=True)
class Exposure:
    kind: ExposureKind
    evidence: Union[ContactRecord, Tuple[GeoPath, float]]
    probability: float

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")


@dataclass(frozen=True)
class ExposureReport:
    exposures: Tuple[Exposure, ...]

    def direct(self) -> List[Exposure]:
        return [e for e in self.exposures if e.kind is ExposureKind.DIRECT]

    def indirect(self) -> List[Exposure]:
        return [e for e in self.exposures if e.kind is ExposureKind.INDIRECT]


def report_infected(user, ledger: Ledger, contracts: ContractGroup, now: float, *,
                    window: float = INFECTION_WINDOW_S, fee: int = 0) -> List[Transaction]:
    """Broadcast a user's infected status and retro-infect their visited places.

    ``user`` needs a ``device`` (proximity.DeviceState) and a ``visits`` list
    of (GeoPath, time). Emits one status-update transaction carrying every MAC
    and visit from the trailing window, then flips the visited locations'
    contracts to infected. A device caught in its silent period broadcasts as
    soon as the next MAC is adopted.
    """
    device = user.device
    device.sync_to(now)
    macs = tuple(device.macs_active_within(now - window, now))
    visits = tuple((geo, t) for geo, t in user.visits if now - window <= t <= now)
    update = HealthStatusUpdate(HealthStatus.INFECTED, macs, visits)
    mac, effective = broadcast_mac(device, now)
    tx = Transaction(ledger.new_tx_id(), mac, update, effective, fee)
    ledger.submit_transaction(tx)
    contracts.apply_retroactive_infection(visits, now)
    return [tx]


def match_exposure(receiver, ledger: Ledger, update: HealthStatusUpdate,
                   params: ModelParams, now: float, *,
                   window: float = INFECTION_WINDOW_S,
                   exposure_window: float = DEFAULT_EXPOSURE_WINDOW_S,
                   surfaces: Optional[Mapping[GeoPath, MaterialSurface]] = None,
                   default_surface: MaterialSurface = MaterialSurface.OTHER) -> ExposureReport:
    """Check one receiver's local history against an infection broadcast.

    Direct exposures are the receiver's own sealed contact records whose peer
    MAC appears in the broadcast, within the trailing ``window``; they are
    scored with the airborne surface entry (the surface term is suppressed by
    delta_t_c = 0 anyway). Indirect exposures pair the receiver's visits with
    the broadcast visits at the same location when the check-in times differ
    by at most ``exposure_window``; they are scored with the location's
    dominant surface and no Bluetooth contribution (delta_t_b = 0).
    """
    if update.new_status is not HealthStatus.INFECTED:
        raise ValueError("exposure matching applies to infected broadcasts only")
    t0, t1 = now - window, now
    receiver.device.sync_to(now)
    own_macs = {iv.mac for iv in receiver.device.mac_history}

    exposures: List[Exposure] = []
    for tx, rec in ledger.query_contact_txs(update.recent_macs, (t0, t1)):
        if tx.sender_vid not in own_macs:
            continue  # someone else's observation of the infected user
        feats = ExposureFeatures(rssi=rec.rssi, delta_t_b=rec.delta_t_b,
                                 delta_t_c=0.0, ms=MaterialSurface.AEROSOL)
        exposures.append(Exposure(ExposureKind.DIRECT, rec,
                                  infection_probability(feats, params)))

    for geo, t_inf in update.recent_visits:
        for geo_r, t_recv in receiver.visits:
            if geo_r != geo:
                continue
            overlap = abs(t_inf - t_recv)
            if overlap > exposure_window:
                continue
            ms = surfaces.get(geo, default_surface) if surfaces else default_surface
            feats = ExposureFeatures(rssi=0.0, delta_t_b=0.0, delta_t_c=overlap, ms=ms)
            exposures.append(Exposure(ExposureKind.INDIRECT, (geo, overlap),
                                      infection_probability(feats, params)))
    return ExposureReport(tuple(exposures))
