import json

import pytest
import yaml

from modwave.cli import main
from modwave.config import apply_overrides, bundled_configs, load_config, read_config_data, validate_config
from modwave.errors import ModwaveError


def test_bundled_configs_validate():
    names = bundled_configs()
    assert {"sh_stability", "ks_whitham"} <= set(names)
    for name in names:
        load_config(name)


def test_schema_error_names_the_key():
    data = read_config_data("sh_stability")
    data["stages"][1]["N_f"] = "many"
    with pytest.raises(ModwaveError) as err:
        validate_config(data)
    assert err.value.code == "invalid-config"
    assert "N_f" in str(err.value)
    data = read_config_data("sh_stability")
    data["stages"][0]["wavenumber"] = 1.0
    with pytest.raises(ModwaveError) as err:
        validate_config(data)
    assert "wavenumber" in str(err.value)


def test_stage_dependencies_enforced():
    data = read_config_data("sh_stability")
    data["stages"] = data["stages"][1:]
    with pytest.raises(ModwaveError):
        validate_config(data)


def test_overrides():
    data = apply_overrides(read_config_data("ks_whitham"), ["whitham.half_widths=[1,1]", "model.params.x=2"])
    assert [s for s in data["stages"] if s["kind"] == "whitham"][0]["half_widths"] == [1, 1]
    assert data["model"]["params"]["x"] == 2
    with pytest.raises(ModwaveError):
        apply_overrides(data, ["simulate.W=3"])


def test_configs_subcommand(capsys):
    assert main(["configs"]) == 0
    assert "sh_stability" in capsys.readouterr().out


def test_report_without_manifest(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2
    assert "no-manifest" in capsys.readouterr().err


def test_missing_config_file(capsys):
    assert main(["profile", "--config", "no/such/file.yaml"]) == 2


def test_bundled_config_runs_and_is_deterministic(tmp_path, capsys):
    out = tmp_path / "sh"
    assert main(["spectrum", "--config", "sh_stability", "--out", str(out), "--quiet"]) == 0
    first = json.loads((out / "manifest.json").read_text())
    assert first["passed"]
    for name in ("profile.npz", "profile.csv", "report.txt", "summary.csv"):
        assert (out / name).exists(), name
    assert main(["spectrum", "--config", "sh_stability", "--out", str(out), "--quiet"]) == 0
    second = json.loads((out / "manifest.json").read_text())
    assert first["results"] == second["results"]


def test_flag_driven_profile(tmp_path, capsys):
    out = tmp_path / "ks"
    code = main(["profile", "--model", "kuramoto_sivashinsky", "--k", "0.1432", "--amplitude", "2",
                 "--set", "profile.M=[0.0]", "--set", "profile.shape=sin", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "overall: pass" in text
    assert yaml.safe_load((out / "manifest.json").read_text())["results"]["profile"]["residual"] < 1e-9


def test_failing_assertion_exit_code(tmp_path, capsys):
    out = tmp_path / "sh"
    code = main(["spectrum", "--config", "sh_stability", "--out", str(out), "--quiet",
                 "--set", "assertions.0.equals=false"])
    assert code == 1


def test_short_diffwave_run(tmp_path, capsys):
    out = tmp_path / "dw"
    code = main(["diffwave", "--model", "conservation_law", "--out", str(out), "--set", "diffwave.W=128",
                 "--set", "diffwave.T=20", "--set", "diffwave.window=[5,20]", "--set", "diffwave.n_saves=8"])
    assert code == 0
    text = capsys.readouterr().out
    assert "gap_full_decoupled" in text
    res = json.loads((out / "manifest.json").read_text())["results"]["diffwave"]
    assert res
