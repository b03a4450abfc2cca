"""Plain-text ``key = value`` scenario configuration files.

Lines are ``key = value`` with ``#`` comments and blank lines ignored.
Scalar keys map straight onto scenario fields (``n_users = 200``); dotted
prefixes reach nested groups: ``gas.checkin_op``, ``rssi.noise_sigma``,
``risk.beta0``, ``sweep.contracts``, ``fit.dataset``. List values are
comma-separated. Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

from .contracts import GasTable
from .health import ModelParams, SignConvention
from .proximity import RssiModel
from .simulation import ConfigError, ScenarioConfig


@dataclass
class SweepSpec:
    contracts: List[int]
    requests: List[int]
    rounds: int


@dataclass
class FitSpec:
    dataset: str
    tol: float = 1e-8
    max_iter: int = 100
    sign_convention: SignConvention = SignConvention.STANDARD_LOGIT


@dataclass
class LoadedConfig:
    scenario: ScenarioConfig
    sweep: Optional[SweepSpec]
    fit: Optional[FitSpec]


DEFAULT_SWEEP = SweepSpec(contracts=[3, 9, 18],
                          requests=[100, 200, 300, 400, 500, 600],
                          rounds=10)

# The built-in sweep workload: a short burst window where the request count
# is swept by scaling the per-user check-in rate.
DEFAULT_SWEEP_BASE = ScenarioConfig(n_users=30, checkin_rate=1.0, contact_rate=0.0,
                                    query_rate=0.0, n_locations=6, duration=60.0,
                                    bandwidth=200.0, seed=0)


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_lines(path) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise ConfigError(f"{path}:{lineno}: empty key or value")
            if key in pairs:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = value
    return pairs


_SCENARIO_SCALARS = {f.name: f.type for f in fields(ScenarioConfig)
                     if f.name not in ("gas", "rssi", "risk_params",
                                       "encounter_duration", "cleanings")}
_GAS_FIELDS = {f.name for f in fields(GasTable)}
_RSSI_FIELDS = {f.name for f in fields(RssiModel)}
_INT_FIELDS = {"n_users", "n_locations", "n_states", "n_counties", "n_cities",
               "block_capacity", "queue_capacity", "seed", "rssi_samples",
               "infected_seed_users", "rebate_bonus"}
_BOOL_FIELDS = {"incentive_enabled"}


def load_config(path) -> LoadedConfig:
    """Parse a config file into a scenario plus optional sweep and fit specs."""
    pairs = _parse_lines(path)
    scenario_kw: Dict[str, object] = {}
    gas_kw: Dict[str, int] = {}
    rssi_kw: Dict[str, float] = {}
    risk_kw: Dict[str, object] = {}
    sweep_kw: Dict[str, object] = {}
    fit_kw: Dict[str, object] = {}

    for key, raw in pairs.items():
        try:
            if key in _SCENARIO_SCALARS:
                if key in _BOOL_FIELDS:
                    scenario_kw[key] = _parse_bool(raw, key)
                elif key in _INT_FIELDS:
                    scenario_kw[key] = int(raw)
                else:
                    scenario_kw[key] = float(raw)
            elif key == "encounter_duration":
                lo, hi = (float(v) for v in raw.split(","))
                scenario_kw[key] = (lo, hi)
            elif key == "cleanings":
                # comma-separated location:time pairs, e.g. "2:3600, 5:7200"
                pairs_list = []
                for chunk in raw.split(","):
                    loc_s, _, when_s = chunk.strip().partition(":")
                    pairs_list.append((int(loc_s), float(when_s)))
                scenario_kw[key] = tuple(pairs_list)
            elif key.startswith("gas."):
                name = key[4:]
                if name not in _GAS_FIELDS:
                    raise ConfigError(f"unknown gas table entry: {name}")
                gas_kw[name] = int(raw)
            elif key.startswith("rssi."):
                name = key[5:]
                if name not in _RSSI_FIELDS:
                    raise ConfigError(f"unknown RSSI model field: {name}")
                rssi_kw[name] = float(raw)
            elif key.startswith("risk."):
                name = key[5:]
                if name in ("beta0", "beta1", "beta2", "beta3"):
                    risk_kw[name] = float(raw)
                elif name == "sign_convention":
                    risk_kw["sign_convention"] = SignConvention(raw)
                else:
                    raise ConfigError(f"unknown risk model field: {name}")
            elif key in ("sweep.contracts", "sweep.requests"):
                sweep_kw[key.split(".", 1)[1]] = [int(v) for v in raw.split(",")]
            elif key == "sweep.rounds":
                sweep_kw["rounds"] = int(raw)
            elif key == "fit.dataset":
                fit_kw["dataset"] = raw
            elif key == "fit.tol":
                fit_kw["tol"] = float(raw)
            elif key == "fit.max_iter":
                fit_kw["max_iter"] = int(raw)
            elif key == "fit.sign_convention":
                fit_kw["sign_convention"] = SignConvention(raw)
            else:
                raise ConfigError(f"unknown config key: {key}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from exc

    scenario = ScenarioConfig(**scenario_kw)
    if gas_kw:
        scenario = replace(scenario, gas=replace(scenario.gas, **gas_kw))
    if rssi_kw:
        scenario = replace(scenario, rssi=replace(scenario.rssi, **rssi_kw))
    if risk_kw:
        scenario = replace(scenario, risk_params=replace(scenario.risk_params, **risk_kw))
    scenario.validate()

    sweep = None
    if sweep_kw:
        sweep = SweepSpec(
            contracts=sweep_kw.get("contracts", list(DEFAULT_SWEEP.contracts)),
            requests=sweep_kw.get("requests", list(DEFAULT_SWEEP.requests)),
            rounds=sweep_kw.get("rounds", DEFAULT_SWEEP.rounds),
        )
        if not sweep.contracts or not sweep.requests or sweep.rounds < 2:
            raise ConfigError("sweep needs contracts, requests, and >= 2 rounds")

    fit = None
    if fit_kw:
        if "dataset" not in fit_kw:
            raise ConfigError("fit mode needs fit.dataset")
        fit = FitSpec(**fit_kw)

    return LoadedConfig(scenario=scenario, sweep=sweep, fit=fit)


def checkin_rate_for_requests(cfg: ScenarioConfig, requests: int) -> float:
    """Per-user hourly rate that makes the expected request count ``requests``."""
    hours = cfg.duration / 3600.0
    return requests / (cfg.n_users * hours)
