"""Tests for scenario files, overrides and output locations."""

import math
import pickle
from pathlib import Path

import pytest

from sis_tools.config import (
    DEFAULT_DT_LIST,
    OutputSpec,
    Route,
    ScenarioConfig,
    parse_config_text,
    parse_file,
    parse_override,
)
from sis_tools.errors import ConfigError
from sis_tools.paths import GeneralDrift, LinearDrift, NoNoise, OUNoise


def test_defaults():
    scn = ScenarioConfig.from_values({})
    assert scn.model.N == 200.0
    assert scn.model.i0 == 100.0
    assert math.isclose(scn.model.r0d, 1.2)
    assert isinstance(scn.noise, OUNoise)
    assert scn.noise.params.alpha == 0.4
    assert scn.noise.sigma == 0.005
    assert scn.route is Route.CLOSED_FORM
    assert scn.grid.n_steps == 20000
    assert scn.n_paths == 100
    assert scn.dt_list == DEFAULT_DT_LIST
    assert scn.classifier.eps_extinct is None
    assert scn.margin is None


def test_noise_kinds():
    assert isinstance(ScenarioConfig.from_values({"noise": "none"}).noise, NoNoise)
    linear = ScenarioConfig.from_values({"noise": "linear", "alpha": "-0.011"}).noise
    assert isinstance(linear, LinearDrift) and linear.alpha == -0.011
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"noise": "pink"})
    assert info.value.field == "noise"
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"sigma": "0"})
    assert info.value.field == "noise"


def test_parse_config_text():
    lines = [
        "# figure 4",
        "",
        "gamma_mu = 10  # R0 = 1.2",
        "sigma=0.05",
        "dt_list=0.1,0.05,0.025,0.0125",
    ]
    values = parse_config_text(lines)
    assert values == {"gamma_mu": "10", "sigma": "0.05", "dt_list": "0.1,0.05,0.025,0.0125"}


def test_malformed_line_names_the_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text(["N=200", "just some words"])
    assert info.value.field == "line 2"
    with pytest.raises(ConfigError):
        parse_config_text(["=5"])


def test_unknown_key():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"betta": "0.06"})
    assert info.value.field == "betta"


@pytest.mark.parametrize(
    "key, value",
    [("beta", "abc"), ("t_end", "inf"), ("paths", "1.5"), ("route", "euler"), ("paths", "0")],
)
def test_bad_values_name_their_field(key, value):
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({key: value})
    assert info.value.field == key


def test_model_errors():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"i0": "300"})
    assert info.value.field == "model"
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"t_end": "1", "dt": "0.3"})
    assert info.value.field == "dt"


def test_gray_route_needs_ou_noise():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"route": "gray", "noise": "linear"})
    assert info.value.field == "route"


def test_wong_zakai_route_takes_any_noise():
    for noise in ("none", "ou", "linear"):
        scn = ScenarioConfig.from_values({"route": "wong_zakai", "noise": noise})
        assert scn.refine_factor == 1
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"refine_factor": "0"})
    assert info.value.field == "refine_factor"


def test_dt_list_checks():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_values({"dt_list": "0.1,0.05,0.025"})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_values({"dt_list": "0.1,0.05,0.05,0.025"})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_values({"dt_list": "0.1,0.05,0.025,-0.1"})


def test_margin_checks():
    assert ScenarioConfig.from_values({"margin": "0.5"}).margin == 0.5
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_values({"margin": "150"})
    assert info.value.field == "margin"


def test_integrator_config_follows_route():
    em = ScenarioConfig.from_values({"route": "ito_em"}).integrator_config()
    wz = ScenarioConfig.from_values({"route": "wong_zakai"}).integrator_config()
    assert em.scheme.value == "euler_maruyama"
    assert wz.scheme.value == "rk4"
    assert em.margin_for(200.0) == 1e-12 * 200.0


def test_to_lines_round_trip():
    scn = ScenarioConfig.from_values(
        {"noise": "linear", "alpha": "0.011", "gamma_mu": "14", "route": "ito_em", "seed": "9"}
    )
    again = ScenarioConfig.from_values(parse_config_text(scn.to_lines()))
    assert again.model == scn.model
    assert again.noise == scn.noise
    assert again.route is scn.route
    assert again.grid == scn.grid
    assert again.seed == 9
    assert again.dt_list == scn.dt_list
    # resolved defaults are written out
    assert again.classifier.eps_extinct == 1e-3 * 200.0
    assert again.margin == 1e-12 * 200.0


def test_general_drift_has_no_file_form():
    scn = ScenarioConfig.from_values({"route": "ito_em"})
    custom = ScenarioConfig(
        model=scn.model, noise=GeneralDrift(lambda t, z: 0.0, 0.1), route=Route.ITO_EM, grid=scn.grid
    )
    with pytest.raises(ConfigError):
        custom.to_lines()


def test_parse_file(tmp_path):
    path = tmp_path / "fig2.cfg"
    path.write_text("gamma_mu=14\nroute=ito_em\n")
    assert parse_file(str(path)) == {"gamma_mu": "14", "route": "ito_em"}
    with pytest.raises(ConfigError) as info:
        parse_file(str(tmp_path / "missing.cfg"))
    assert info.value.field == "config"


def test_parse_override():
    assert parse_override("beta = 0.07") == ("beta", "0.07")
    assert parse_override("dt_list=0.1,0.05") == ("dt_list", "0.1,0.05")
    with pytest.raises(ConfigError):
        parse_override("beta")


def test_output_spec(tmp_path):
    output = OutputSpec(tmp_path / "deep" / "dir" / "run.csv")
    assert output.prepare() == tmp_path / "deep" / "dir" / "run.csv"
    assert (tmp_path / "deep" / "dir").is_dir()
    assert output.sibling(".cfg") == Path(tmp_path / "deep" / "dir" / "run.csv.cfg")


def test_config_error_survives_pickling():
    again = pickle.loads(pickle.dumps(ConfigError("route", "gray needs ou noise")))
    assert isinstance(again, ConfigError)
    assert again.field == "route"
    assert str(again) == "route: gray needs ou noise"
