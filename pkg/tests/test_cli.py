import json

import pytest

from ucmcf.cli import main
from ucmcf.config import (
    ConfigError,
    IMPLEMENTED_CHECKS,
    PRESETS,
    RunConfig,
    config_from_mapping,
    preset,
)


def run_cli(args, tmp_path, monkeypatch):
    monkeypatch.setenv("UCMCF_OUT", str(tmp_path / "default-out"))
    return main(args)


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(flow_kind="normalized", init="circle", dt=-1.0).validate()
    with pytest.raises(ConfigError):
        RunConfig(flow_kind="regularized", init="circle", dt=1e-8,
                  t_end=0.1).validate()  # epsilon missing
    with pytest.raises(ConfigError):
        RunConfig(flow_kind="normalized", init="circle", dt=1e-3, t_end=1.0,
                  epsilon=1e-3).validate()  # epsilon without regularized
    with pytest.raises(ConfigError):
        config_from_mapping({"flow_kind": "normalized", "init": "circle",
                             "bogus": 1})
    cfg = config_from_mapping({"flow_kind": "normalized", "init": "circle",
                               "dt": 1e-3, "t_end": 0.1})
    assert cfg.n == 256


def test_canonical_hash_is_stable():
    a = RunConfig(flow_kind="normalized", init="circle", dt=1e-3, t_end=0.1)
    b = RunConfig(flow_kind="normalized", init="circle", dt=1e-3, t_end=0.1)
    assert a.config_hash() == b.config_hash()
    c = RunConfig(flow_kind="normalized", init="circle", dt=2e-3, t_end=0.1)
    assert a.config_hash() != c.config_hash()


def test_preset_manifests_name_implemented_checks():
    for name, spec in PRESETS.items():
        assert set(spec.checks) <= IMPLEMENTED_CHECKS, name
    with pytest.raises(ConfigError):
        preset("nonexistent")


def test_cli_successful_run_exit_zero(tmp_path, monkeypatch):
    out = tmp_path / "run"
    code = run_cli(["run-normalized", "--init", "circle", "--n", "64",
                    "--dt", "1e-3", "--t-end", "0.02", "--out", str(out)],
                   tmp_path, monkeypatch)
    assert code == 0
    text = (out / "series.csv").read_text()
    assert text.startswith("time,M,L,sigma_bar,c,theta,xi_tilde_l2,"
                           "dxi_tilde_l2,edge_cv,dissipation_gap,drift\n")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["event_count"] == 0
    assert summary["rows"] >= 20


def test_cli_deterministic_output(tmp_path, monkeypatch):
    args = ["run-normalized", "--init", "perturbed:0.01,3", "--n", "64",
            "--dt", "1e-3", "--t-end", "0.02", "--seed", "4"]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    run_cli(args + ["--out", str(out1)], tmp_path, monkeypatch)
    run_cli(args + ["--out", str(out2)], tmp_path, monkeypatch)
    assert (out1 / "series.csv").read_bytes() == (out2 / "series.csv").read_bytes()


def test_cli_regularized_requires_epsilon(tmp_path, monkeypatch):
    code = run_cli(["run-regularized", "--init", "square", "--n", "16",
                    "--dt", "1e-9", "--t-end", "1e-7"], tmp_path, monkeypatch)
    assert code == 2


def test_cli_bad_flag_usage_error(tmp_path, monkeypatch):
    assert run_cli(["run-normalized", "--bogus", "1"], tmp_path, monkeypatch) == 2
    assert run_cli(["no-such-command"], tmp_path, monkeypatch) == 2


def test_cli_config_file_with_flag_override(tmp_path, monkeypatch):
    cfgfile = tmp_path / "run.json"
    cfgfile.write_text(json.dumps({
        "init": "circle", "n": 64, "dt": 1e-2, "t_end": 0.02}))
    out = tmp_path / "out"
    code = run_cli(["run-normalized", "--config", str(cfgfile),
                    "--dt", "1e-3", "--out", str(out)], tmp_path, monkeypatch)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["dt"] == 1e-3  # flag wins over file


def test_cli_config_file_toml(tmp_path, monkeypatch):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text('init = "circle"\nn = 64\ndt = 1e-3\nt_end = 0.02\n')
    out = tmp_path / "out"
    code = run_cli(["run-normalized", "--config", str(cfgfile),
                    "--out", str(out)], tmp_path, monkeypatch)
    assert code == 0


def test_cli_config_file_unknown_key(tmp_path, monkeypatch):
    cfgfile = tmp_path / "run.json"
    cfgfile.write_text(json.dumps({
        "init": "circle", "dt": 1e-3, "t_end": 0.02, "mystery": 1}))
    code = run_cli(["run-normalized", "--config", str(cfgfile)],
                   tmp_path, monkeypatch)
    assert code == 2


def test_cli_self_test_flags_exactly_one_event(tmp_path, monkeypatch, capsys):
    code = run_cli(["self-test"], tmp_path, monkeypatch)
    assert code == 1
    lines = [l for l in capsys.readouterr().out.strip().splitlines() if l]
    events = [json.loads(l) for l in lines]
    assert len(events) == 1
    assert events[0]["check"] == "sigma_bar_nondecreasing"


def test_cli_list_presets(tmp_path, monkeypatch, capsys):
    assert run_cli(["list-presets"], tmp_path, monkeypatch) == 0
    out = capsys.readouterr().out
    for name in PRESETS:
        assert name in out


def test_cli_unknown_preset(tmp_path, monkeypatch):
    assert run_cli(["preset", "nope"], tmp_path, monkeypatch) == 2


def test_cli_stationary_check(tmp_path, monkeypatch):
    out = tmp_path / "stat"
    code = run_cli(["stationary-check", "--init", "circle", "--n", "128",
                    "--out", str(out)], tmp_path, monkeypatch)
    assert code == 0
    report = json.loads((out / "stationary.json").read_text())
    assert report["residual"] < 1e-2


def test_cli_snapshots_written(tmp_path, monkeypatch):
    out = tmp_path / "snap"
    code = run_cli(["run-original", "--init", "circle:1", "--n", "64",
                    "--dt", "1e-3", "--t-end", "0.01", "--snapshot-every", "5",
                    "--out", str(out)], tmp_path, monkeypatch)
    assert code == 0
    snaps = sorted((out / "snapshots").glob("curve_*.json"))
    assert len(snaps) >= 2
    data = json.loads(snaps[0].read_text())
    assert set(data) == {"n", "dim", "points"}
    assert data["n"] == 64


def test_cli_regularized_and_classical_paths(tmp_path, monkeypatch):
    out = tmp_path / "reg"
    code = run_cli(["run-regularized", "--init", "square", "--n", "16",
                    "--dt", "2e-7", "--t-end", "2e-4", "--epsilon", "1e-3",
                    "--out", str(out)], tmp_path, monkeypatch)
    assert code in (0, 1)  # dissipation events are data, not errors
    text = (out / "series.csv").read_text()
    assert "time," in text
    out2 = tmp_path / "cls"
    code = run_cli(["run-classical", "--init", "circle:1", "--n", "64",
                    "--dt", "1e-5", "--t-end", "1e-4", "--out", str(out2)],
                   tmp_path, monkeypatch)
    assert code == 0


def test_cli_default_outdir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("UCMCF_OUT", str(tmp_path / "envout"))
    code = main(["run-normalized", "--init", "circle", "--n", "64",
                 "--dt", "1e-3", "--t-end", "0.005"])
    assert code == 0
    assert (tmp_path / "envout" / "series.csv").exists()


def test_cli_json_series_format(tmp_path, monkeypatch):
    out = tmp_path / "jsonout"
    code = run_cli(["run-normalized", "--init", "circle", "--n", "64",
                    "--dt", "1e-3", "--t-end", "0.005", "--format", "json",
                    "--out", str(out)], tmp_path, monkeypatch)
    assert code == 0
    data = json.loads((out / "series.json").read_text())
    assert data["columns"][0] == "time"
    assert len(data["rows"]) >= 5


def test_cli_density_contrast_preset(tmp_path, monkeypatch):
    out = tmp_path / "preset"
    code = run_cli(["preset", "density-contrast", "--out", str(out)],
                   tmp_path, monkeypatch)
    assert code == 0
    report = json.loads((out / "density-contrast.json").read_text())
    assert report["ucmcf_max_drift"] < 1e-3
    assert report["classical_cv_final"] > 10 * max(report["classical_cv_initial"],
                                                   1e-15)


def test_cli_generic_preset_path(tmp_path, monkeypatch):
    # exercise the config-list preset runner on a miniature registration
    from ucmcf.config import Preset
    import ucmcf.config as config_mod

    tiny = Preset(
        name="tiny-circle",
        description="test-only miniature run",
        configs=[RunConfig(flow_kind="original", init="circle:1", n=64,
                           dt=1e-3, t_end=5e-3).validate()],
        checks=["mass_slope", "lambda_nonincreasing"],
    )
    monkeypatch.setitem(config_mod.PRESETS, "tiny-circle", tiny)
    out = tmp_path / "tiny"
    code = run_cli(["preset", "tiny-circle", "--out", str(out)],
                   tmp_path, monkeypatch)
    assert code == 0
    assert (out / "tiny-circle-0" / "series.csv").exists()
    assert (out / "preset-events.jsonl").exists()


def test_cli_stationary_rigidity_preset(tmp_path, monkeypatch):
    out = tmp_path / "rigidity"
    code = run_cli(["preset", "stationary-rigidity", "--out", str(out)],
                   tmp_path, monkeypatch)
    assert code == 0
    report = json.loads((out / "stationary.json").read_text())
    assert report["residual"] < 1e-2
    assert report["rigidity"]["hypothesis_met"]


def test_cli_parallel_presets(tmp_path, monkeypatch):
    out = tmp_path / "multi"
    code = run_cli(["preset", "density-contrast", "roundtrip",
                    "--jobs", "2", "--out", str(out)], tmp_path, monkeypatch)
    assert code == 0
    assert (out / "density-contrast" / "preset-events.jsonl").exists()
    assert (out / "roundtrip" / "roundtrip.json").exists()


def test_cli_roundtrip_command(tmp_path, monkeypatch):
    out = tmp_path / "rt"
    code = run_cli(["roundtrip", "--n", "128", "--dt", "2e-4",
                    "--t-end-frac", "0.2", "--out", str(out)],
                   tmp_path, monkeypatch)
    assert code == 0
    report = json.loads((out / "roundtrip.json").read_text())
    assert report["max"] < 5e-3
