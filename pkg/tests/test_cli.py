"""Config parsing and the command-line surface."""

import numpy as np
import pytest

from epitrace.cli import RunManifest, cmd_run, main
from epitrace.configfile import (
    DEFAULT_SWEEP_BASE,
    checkin_rate_for_requests,
    load_config,
)
from epitrace.health import (
    ModelParams,
    SignConvention,
    make_synthetic_dataset,
    save_dataset,
)
from epitrace.simulation import ConfigError


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def write(tmp_path, text, name="scenario.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_config_scalars_and_nested_groups(tmp_path):
    path = write(tmp_path, """
        # comment line
        n_users = 12
        duration = 120          # trailing comment
        checkin_rate = 3.5
        packet_loss_rate = 0.25
        incentive_enabled = false
        encounter_duration = 30,90
        gas.checkin_op = 111111
        rssi.noise_sigma = 0.5
        risk.beta0 = -2.5
        risk.sign_convention = as_written
    """)
    loaded = load_config(path)
    cfg = loaded.scenario
    assert (cfg.n_users, cfg.duration, cfg.checkin_rate) == (12, 120.0, 3.5)
    assert cfg.packet_loss_rate == 0.25
    assert cfg.incentive_enabled is False
    assert cfg.encounter_duration == (30.0, 90.0)
    assert cfg.gas.checkin_op == 111111
    assert cfg.gas.contract_setup == 1_900_000  # untouched default
    assert cfg.rssi.noise_sigma == 0.5
    assert cfg.risk_params.beta0 == -2.5
    assert cfg.risk_params.sign_convention is SignConvention.AS_WRITTEN
    assert loaded.sweep is None and loaded.fit is None


def test_config_sweep_and_fit_sections(tmp_path):
    path = write(tmp_path, """
        n_users = 10
        duration = 60
        sweep.contracts = 3,6
        sweep.requests = 40,80
        sweep.rounds = 2
        fit.dataset = data.tsv
        fit.max_iter = 50
    """)
    loaded = load_config(path)
    assert loaded.sweep.contracts == [3, 6]
    assert loaded.sweep.requests == [40, 80]
    assert loaded.sweep.rounds == 2
    assert loaded.fit.dataset == "data.tsv"
    assert loaded.fit.max_iter == 50


def test_config_rejects_unknown_and_duplicate_keys(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "no_such_key = 1\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "n_users = 1\nn_users = 2\n", name="dup.cfg"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "gas.bogus = 5\n", name="gas.cfg"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "n_users\n", name="syntax.cfg"))


def test_checkin_rate_for_requests_round_trips():
    rate = checkin_rate_for_requests(DEFAULT_SWEEP_BASE, 300)
    expected = DEFAULT_SWEEP_BASE.n_users * rate * DEFAULT_SWEEP_BASE.duration / 3600.0
    assert expected == pytest.approx(300.0)


# ---------------------------------------------------------------------------
# CLI surface
# ---------------------------------------------------------------------------

SMALL_SWEEP = """
n_users = 10
duration = 60
bandwidth = 200
seed = 5
sweep.contracts = 3,6
sweep.requests = 40,80
sweep.rounds = 2
"""

SWEEP_FILES = ("rounds.tsv", "surface.tsv", "fig5_avg_request_cost.tsv",
               "fig6_cost_stddev.tsv", "fig7_total_gas.tsv", "optimal.tsv")


def test_run_single_writes_metrics(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write(tmp_path, "n_users = 5\nduration = 120\ncheckin_rate = 30\nseed = 2\n")
    code = main(["run", "--config", str(cfg), "--mode", "single", "--out", str(out)])
    assert code == 0
    assert (out / "metrics.tsv").exists()
    header, row = (out / "metrics.tsv").read_text().splitlines()
    assert header.split("\t")[0] == "offered"
    assert "completed" in capsys.readouterr().out


def test_run_sweep_writes_all_tables(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, SMALL_SWEEP)
    code = main(["run", "--config", str(cfg), "--mode", "sweep", "--out", str(out)])
    assert code == 0
    for name in SWEEP_FILES:
        assert (out / name).exists(), name
    surface = (out / "surface.tsv").read_text().splitlines()
    assert len(surface) == 1 + 2 * 2  # header + contracts x requests
    fig5 = (out / "fig5_avg_request_cost.tsv").read_text().splitlines()
    assert fig5[0] == "requests\tcontracts_3\tcontracts_6"
    assert len(fig5) == 3


def test_sweep_outputs_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL_SWEEP)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--mode", "sweep", "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "sweep", "--out", str(out_b)]) == 0
    for name in SWEEP_FILES:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_rounds_override(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path, SMALL_SWEEP)
    code = main(["run", "--config", str(cfg), "--mode", "sweep",
                 "--out", str(out), "--rounds", "3"])
    assert code == 0
    rounds = (out / "rounds.tsv").read_text().splitlines()
    assert len(rounds) == 1 + 2 * 2 * 3


def test_explain_on_sweep_and_single_and_empty(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_SWEEP)
    out = tmp_path / "out"
    main(["run", "--config", str(cfg), "--mode", "sweep", "--out", str(out)])
    assert main(["explain", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "amortization factor" in text
    assert "R^2" in text

    single_out = tmp_path / "single"
    main(["run", "--config", str(cfg), "--mode", "single", "--out", str(single_out)])
    assert main(["explain", "--out", str(single_out)]) == 0
    assert "absent" in capsys.readouterr().out

    assert main(["explain", "--out", str(tmp_path / "nowhere")]) == 1


def test_fit_mode_end_to_end(tmp_path, capsys):
    truth = ModelParams(-1.0, 0.02, 0.001, 5e-5)
    ds = make_synthetic_dataset(800, truth, np.random.default_rng(1))
    data_path = tmp_path / "exposures.tsv"
    save_dataset(ds, data_path)
    cfg = write(tmp_path, f"fit.dataset = {data_path}\n")
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg), "--mode", "fit", "--out", str(out)])
    assert code == 0
    assert (out / "fit.tsv").exists()
    text = capsys.readouterr().out
    assert "converged=True" in text
    header, row = (out / "fit.tsv").read_text().splitlines()
    values = dict(zip(header.split("\t"), row.split("\t")))
    assert abs(float(values["beta0"]) - truth.beta0) < 0.4


def test_fit_mode_without_dataset_is_config_error(tmp_path):
    cfg = write(tmp_path, "n_users = 5\n")
    assert main(["run", "--config", str(cfg), "--mode", "fit",
                 "--out", str(tmp_path / "out")]) == 1


def test_verify_mode_passes(tmp_path, capsys):
    code = main(["run", "--mode", "verify", "--out", str(tmp_path / "out"),
                 "--seed", "4"])
    assert code == 0
    text = capsys.readouterr().out
    assert "PASS  pristine chain verifies" in text
    assert "FAIL" not in text


def test_missing_config_file_exits_one(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.cfg"),
                 "--mode", "single", "--out", str(tmp_path / "out")]) == 1


def test_bad_usage_exits_one():
    assert main(["run", "--mode", "bogus"]) == 1
    assert main([]) == 1


def test_help_exits_zero():
    assert main(["--help"]) == 0


def test_runtime_error_exits_two(tmp_path, monkeypatch):
    import epitrace.cli as cli_module

    def boom(cfg):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(cli_module, "run_scenario", boom)
    cfg = write(tmp_path, "n_users = 2\nduration = 30\n")
    assert main(["run", "--config", str(cfg), "--mode", "single",
                 "--out", str(tmp_path / "out")]) == 2


def test_log_env_var_accepted(tmp_path, monkeypatch):
    monkeypatch.setenv("EPITRACE_LOG", "DEBUG")
    assert main(["run", "--mode", "verify", "--out", str(tmp_path / "o")]) == 0


def test_cleanings_config_key(tmp_path):
    loaded = load_config(write(tmp_path, "n_locations = 4\ncleanings = 1:60, 3:120\n"))
    assert loaded.scenario.cleanings == ((1, 60.0), (3, 120.0))


def test_cmd_run_manifest_api(tmp_path):
    manifest = RunManifest(config=None, out=tmp_path / "out", mode="verify", seed=1)
    assert cmd_run(manifest) == 0
