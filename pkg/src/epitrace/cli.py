"""Command-line entrypoint: single runs, grid sweeps, model fits, self-checks.

All table outputs are plot-ready tab-separated text with stable documented
columns; floats are written with ``repr`` so repeated runs with the same
manifest produce byte-identical files. Verbosity is controlled by the
``EPITRACE_LOG`` environment variable (DEBUG, INFO, WARNING, ...).

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .records import GeoPath
from .contracts import (
    LocationStatus,
    StateEvent,
    StatusKind,
    UndefinedTransition,
    step_location_state,
)
from .health import fit_irls, load_dataset
from .simulation import (
    ConfigError,
    CostArgs,
    ScenarioConfig,
    ScenarioMetrics,
    execute_scenario,
    measure_cost_surface,
    optimize_cost,
    round_seeds,
    run_scenario,
)
from .configfile import (
    DEFAULT_SWEEP,
    DEFAULT_SWEEP_BASE,
    FitSpec,
    SweepSpec,
    checkin_rate_for_requests,
    load_config,
)

log = logging.getLogger("epitrace.cli")

MODES = ("single", "sweep", "fit", "verify")

GAS_COLUMNS = ("setup", "loc", "op", "bt", "heal")

ROUNDS_COLUMNS = ("contracts", "requests", "round", "seed", "offered", "completed",
                  "drops", "drops_loss", "drops_queue", "throughput", "mean_latency",
                  *(f"gas_{c}" for c in GAS_COLUMNS), "total_gas", "avg_request_cost")

SURFACE_COLUMNS = ("contracts", "requests", "rounds", "avg_cost_mean",
                   "avg_cost_stddev", "avg_cost_var", "total_gas_mean",
                   "total_gas_var", *(f"gas_{c}_mean" for c in GAS_COLUMNS))

METRICS_COLUMNS = ("offered", "completed", "drops", "drops_loss", "drops_queue",
                   "lost_encounters", "throughput", "mean_latency",
                   *(f"gas_{c}" for c in GAS_COLUMNS), "total_gas",
                   "avg_request_cost")


@dataclass
class RunManifest:
    config: Optional[Path]
    out: Path
    mode: str
    seed: Optional[int] = None
    rounds: Optional[int] = None


# ---------------------------------------------------------------------------
# Table I/O
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _read_tsv(path: Path) -> Tuple[List[str], List[Dict[str, str]]]:
    lines = path.read_text(encoding="ascii").splitlines()
    header = lines[0].split("\t")
    rows = [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]
    return header, rows


def _metrics_row(m: ScenarioMetrics) -> List:
    return [m.offered, m.completed, m.drops, m.drops_loss, m.drops_queue,
            m.lost_encounters, m.throughput, m.mean_latency,
            *(m.gas[c] for c in GAS_COLUMNS), m.total_gas, m.avg_request_cost]


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------

def _run_single(cfg: ScenarioConfig, out: Path) -> int:
    metrics = run_scenario(cfg)
    _write_tsv(out / "metrics.tsv", METRICS_COLUMNS, [_metrics_row(metrics)])
    print(f"completed {metrics.completed}/{metrics.offered} requests, "
          f"throughput {metrics.throughput:.3f}/s, total gas {metrics.total_gas} wei")
    print(f"wrote {out / 'metrics.tsv'}")
    return 0


def _run_sweep(base: ScenarioConfig, sweep: SweepSpec, out: Path) -> int:
    seeds = round_seeds(base.seed, sweep.rounds)
    rounds_rows: List[List] = []
    surface_rows: List[List] = []
    # (contracts, requests) -> (avg mean, avg stddev, total mean)
    cells: Dict[Tuple[int, int], Tuple[float, float, float]] = {}
    all_rows = []
    for requests in sweep.requests:
        point_base = replace(base, checkin_rate=checkin_rate_for_requests(base, requests))
        grid = [CostArgs(n_contracts=c, queue_capacity=base.queue_capacity,
                         block_capacity=base.block_capacity,
                         rotation_period=base.rotation_period,
                         service_rate=base.service_rate)
                for c in sweep.contracts]
        for row in measure_cost_surface(grid, point_base, sweep.rounds, seeds=seeds):
            c = row.args.n_contracts
            cells[(c, requests)] = (row.avg_cost_mean, row.avg_cost_stddev,
                                    row.total_gas_mean)
            all_rows.append(row)
            surface_rows.append([c, requests, row.rounds, row.avg_cost_mean,
                                 row.avg_cost_stddev, row.avg_cost_var,
                                 row.total_gas_mean, row.total_gas_var,
                                 *(row.gas_mean[g] for g in GAS_COLUMNS)])
            for i, m in enumerate(row.per_round):
                rounds_rows.append([c, requests, i, seeds[i], m.offered, m.completed,
                                    m.drops, m.drops_loss, m.drops_queue, m.throughput,
                                    m.mean_latency, *(m.gas[g] for g in GAS_COLUMNS),
                                    m.total_gas, m.avg_request_cost])

    _write_tsv(out / "rounds.tsv", ROUNDS_COLUMNS, rounds_rows)
    _write_tsv(out / "surface.tsv", SURFACE_COLUMNS, surface_rows)

    fig_header = ["requests", *(f"contracts_{c}" for c in sweep.contracts)]
    for name, idx in (("fig5_avg_request_cost.tsv", 0),
                      ("fig6_cost_stddev.tsv", 1),
                      ("fig7_total_gas.tsv", 2)):
        rows = [[r, *(cells[(c, r)][idx] for c in sweep.contracts)]
                for r in sweep.requests]
        _write_tsv(out / name, fig_header, rows)

    best = optimize_cost(all_rows)
    _write_tsv(out / "optimal.tsv",
               ("n_contracts", "queue_capacity", "block_capacity",
                "rotation_period", "service_rate", "penalty_weight_avg",
                "penalty_weight_var"),
               [[best.n_contracts, best.queue_capacity, best.block_capacity,
                 best.rotation_period, best.service_rate, 0.5, 0.5]])
    print(f"swept {len(sweep.contracts)}x{len(sweep.requests)} grid, "
          f"{sweep.rounds} rounds; wrote 6 tables under {out}")
    return 0


def _run_fit(fit: FitSpec, out: Path) -> int:
    dataset = load_dataset(fit.dataset)
    result = fit_irls(dataset, tol=fit.tol, max_iter=fit.max_iter,
                      sign_convention=fit.sign_convention)
    p = result.params
    _write_tsv(out / "fit.tsv",
               ("beta0", "beta1", "beta2", "beta3", "sign_convention",
                "converged", "n_iter", "log_likelihood"),
               [[p.beta0, p.beta1, p.beta2, p.beta3, p.sign_convention.value,
                 result.converged, result.n_iter, result.log_likelihood]])
    print(f"fitted {len(dataset)} rows: beta0={p.beta0:.6g} beta1={p.beta1:.6g} "
          f"beta2={p.beta2:.6g} beta3={p.beta3:.6g}")
    print(f"converged={result.converged} after {result.n_iter} iterations, "
          f"log-likelihood {result.log_likelihood:.6f}")
    return 0


# Expected transitions of the location automaton, used by the self-check.
_DAY = 86400.0
_STATE_VECTORS = [
    (None, StateEvent.GENERATE_CONTRACT, StatusKind.EMPTY),
    (LocationStatus.empty(), StateEvent.NORMAL_USER_CHECKIN, StatusKind.CLEAN),
    (LocationStatus.empty(), StateEvent.INFECTED_USER_CHECKIN, StatusKind.INFECTED),
    (LocationStatus.clean(), StateEvent.NORMAL_USER_CHECKIN, StatusKind.CLEAN),
    (LocationStatus.clean(), StateEvent.INFECTED_USER_CHECKIN, StatusKind.INFECTED),
    (LocationStatus.clean(), StateEvent.INFECTED_USER_UPDATE, StatusKind.INFECTED),
    (LocationStatus.infected(0.0), StateEvent.NORMAL_USER_CHECKIN, StatusKind.INFECTED),
    (LocationStatus.infected(0.0), StateEvent.INFECTED_USER_CHECKIN, StatusKind.INFECTED),
    (LocationStatus.infected(0.0), StateEvent.INFECTED_USER_UPDATE, StatusKind.INFECTED),
    (LocationStatus.infected(0.0), StateEvent.LOCATION_IS_CLEANED, StatusKind.CLEAN),
    (LocationStatus.infected(0.0), StateEvent.WAIT_14_DAYS, StatusKind.CLEAN),
]
_UNDEFINED_VECTORS = [
    (None, e) for e in StateEvent if e is not StateEvent.GENERATE_CONTRACT
] + [
    (LocationStatus.empty(), StateEvent.INFECTED_USER_UPDATE),
    (LocationStatus.empty(), StateEvent.LOCATION_IS_CLEANED),
    (LocationStatus.empty(), StateEvent.WAIT_14_DAYS),
    (LocationStatus.empty(), StateEvent.GENERATE_CONTRACT),
    (LocationStatus.clean(), StateEvent.LOCATION_IS_CLEANED),
    (LocationStatus.clean(), StateEvent.WAIT_14_DAYS),
    (LocationStatus.clean(), StateEvent.GENERATE_CONTRACT),
    (LocationStatus.infected(0.0), StateEvent.GENERATE_CONTRACT),
]


def _run_verify(seed: int) -> int:
    """Self-check: chain integrity, tamper detection, state-machine table."""
    failures = 0

    def check(name: str, ok: bool) -> None:
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures += 1

    cfg = ScenarioConfig(n_users=20, checkin_rate=6.0, contact_rate=6.0,
                         query_rate=2.0, n_locations=4, duration=600.0,
                         infected_seed_users=1, seed=seed)
    result = execute_scenario(cfg)
    ledger = result.ledger
    check("pristine chain verifies", ledger.verify_chain())

    # Any single flipped byte in a sealed transaction must break verification.
    target = ledger.blocks[len(ledger.blocks) // 2]
    original = target.tx_blobs[0]
    target.tx_blobs[0] = bytes([original[0] ^ 0xFF]) + original[1:]
    check("tampered chain is detected", not ledger.verify_chain())
    target.tx_blobs[0] = original
    check("restored chain verifies again", ledger.verify_chain())

    table_ok = True
    for status, event, expected in _STATE_VECTORS:
        now = 15 * _DAY  # far enough past `since` that the expiry guard is met
        if step_location_state(status, event, now).kind is not expected:
            table_ok = False
    check("state machine matches the transition table", table_ok)

    undefined_ok = True
    for status, event in _UNDEFINED_VECTORS:
        try:
            step_location_state(status, event, 0.0)
            undefined_ok = False
        except UndefinedTransition:
            pass
    check("undefined transitions are rejected", undefined_ok)

    return 3 if failures else 0


# ---------------------------------------------------------------------------
# Explain
# ---------------------------------------------------------------------------

def _r_squared(xs: np.ndarray, ys: np.ndarray) -> float:
    slope, intercept = np.polyfit(xs, ys, 1)
    predicted = slope * xs + intercept
    ss_res = float(np.sum((ys - predicted) ** 2))
    ss_tot = float(np.sum((ys - np.mean(ys)) ** 2))
    return 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot


def cmd_explain(out: Path) -> int:
    """Summarize a previous run's outputs in human-readable form."""
    surface_path = out / "surface.tsv"
    metrics_path = out / "metrics.tsv"
    if not surface_path.exists() and not metrics_path.exists():
        print(f"error: no run outputs found under {out}", file=sys.stderr)
        return 1

    if metrics_path.exists() and not surface_path.exists():
        _, rows = _read_tsv(metrics_path)
        m = rows[0]
        print("single-run summary:")
        print(f"  completed {m['completed']}/{m['offered']} requests, "
              f"drops {m['drops']}, mean latency {float(m['mean_latency']):.3f} s")
        print(f"  total gas {m['total_gas']} wei, "
              f"avg request cost {float(m['avg_request_cost']):.1f} wei")
        print("  (no sweep surface present; amortization and fit sections absent)")
        return 0

    _, srows = _read_tsv(surface_path)
    by_contract: Dict[int, List[Dict[str, str]]] = {}
    for row in srows:
        by_contract.setdefault(int(row["contracts"]), []).append(row)

    print("sweep summary:")
    for contracts in sorted(by_contract):
        rows = sorted(by_contract[contracts], key=lambda r: int(r["requests"]))
        lo, hi = rows[0], rows[-1]
        factor = float(lo["avg_cost_mean"]) / float(hi["avg_cost_mean"])
        xs = np.array([float(r["requests"]) for r in rows])
        ys = np.array([float(r["total_gas_mean"]) for r in rows])
        r2 = _r_squared(xs, ys)
        print(f"  contracts={contracts}: avg request cost "
              f"{float(lo['avg_cost_mean']):.1f} -> {float(hi['avg_cost_mean']):.1f} wei "
              f"({lo['requests']} -> {hi['requests']} requests), "
              f"amortization factor {factor:.3f}, "
              f"total-gas linear fit R^2 {r2:.5f}")

    rounds_path = out / "rounds.tsv"
    if rounds_path.exists():
        _, rrows = _read_tsv(rounds_path)
        drops = sum(int(r["drops"]) for r in rrows)
        lat = [float(r["mean_latency"]) for r in rrows]
        print(f"  rounds: {len(rrows)}, total drops {drops}, "
              f"mean of per-round mean latency {float(np.mean(lat)):.3f} s")
    return 0


# ---------------------------------------------------------------------------
# Entry
# ---------------------------------------------------------------------------

def cmd_run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit code."""
    if manifest.mode not in MODES:
        raise ConfigError(f"unknown mode: {manifest.mode}")
    loaded = load_config(manifest.config) if manifest.config else None
    manifest.out.mkdir(parents=True, exist_ok=True)

    if manifest.mode == "verify":
        return _run_verify(manifest.seed if manifest.seed is not None else 0)

    if manifest.mode == "fit":
        fit = loaded.fit if loaded else None
        if fit is None:
            raise ConfigError("fit mode needs a config file with fit.dataset")
        return _run_fit(fit, manifest.out)

    scenario = loaded.scenario if loaded else DEFAULT_SWEEP_BASE
    if manifest.seed is not None:
        scenario = replace(scenario, seed=manifest.seed)

    if manifest.mode == "single":
        return _run_single(scenario, manifest.out)

    sweep = (loaded.sweep if loaded and loaded.sweep else
             SweepSpec(list(DEFAULT_SWEEP.contracts), list(DEFAULT_SWEEP.requests),
                       DEFAULT_SWEEP.rounds))
    if manifest.rounds is not None:
        if manifest.rounds < 2:
            raise ConfigError("sweeps need at least 2 rounds")
        sweep.rounds = manifest.rounds
    if loaded is None:
        scenario = DEFAULT_SWEEP_BASE if manifest.seed is None \
            else replace(DEFAULT_SWEEP_BASE, seed=manifest.seed)
    return _run_sweep(scenario, sweep, manifest.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epitrace",
        description="Deterministic contact-tracing ledger/contract simulator.",
        epilog="Set EPITRACE_LOG=DEBUG|INFO|WARNING for verbosity. Exit codes: "
               "0 ok, 1 config error, 2 runtime error, 3 verification failure.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario, sweep, fit, or self-check")
    run.add_argument("--config", type=Path, default=None,
                     help="key=value scenario config file (built-in defaults if omitted)")
    run.add_argument("--mode", choices=MODES, default="single")
    run.add_argument("--seed", type=int, default=None, help="seed override")
    run.add_argument("--out", type=Path, default=Path("epitrace-out"),
                     help="output directory for tables")
    run.add_argument("--rounds", type=int, default=None,
                     help="override sweep round count")

    explain = sub.add_parser("explain", help="summarize a previous run's outputs")
    explain.add_argument("--out", type=Path, default=Path("epitrace-out"),
                         help="output directory of the previous run")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("EPITRACE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; those are configuration errors here.
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "explain":
            return cmd_explain(args.out)
        manifest = RunManifest(config=args.config, out=args.out, mode=args.mode,
                               seed=args.seed, rounds=args.rounds)
        return cmd_run(manifest)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # pragma: no cover - defensive runtime guard
        traceback.print_exc()
        return 2


def entrypoint() -> None:
    sys.exit(main())
