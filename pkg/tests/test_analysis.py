"""Tests for reproduction numbers, verdicts, ensembles and convergence tables."""

import math

import numpy as np
import pytest

from sis_tools.analysis import (
    ClassifierConfig,
    Verdict,
    classify,
    classify_around,
    convergence_study,
    count_crossings,
    ergodic_diagnostic,
    gray_extinction_condition,
    gray_persistence_level,
    log_odds_bound,
    log_odds_slope,
    persistence_level,
    r0_deterministic,
    r0_stochastic_gray,
    run_ensemble,
    simulate_path,
    z_growth_rate,
)
from sis_tools.closedform import ModelParams, deterministic_path
from sis_tools.config import Route, ScenarioConfig
from sis_tools.errors import ConfigError, NonFiniteError
from sis_tools.paths import (
    GeneralDrift,
    LinearDrift,
    NoNoise,
    OUNoise,
    OUParams,
    PathKind,
    SamplePath,
    TimeGrid,
    gen_brownian,
    gen_general_z,
)

FIG4 = ModelParams(N=200.0, i0=100.0, beta=0.06, gamma_mu=10.0)
FIG2 = ModelParams(N=200.0, i0=100.0, beta=0.06, gamma_mu=14.0)


def scenario(**kwargs) -> ScenarioConfig:
    settings = {
        "model": FIG4,
        "noise": OUNoise(OUParams(0.4, 0.05)),
        "route": Route.CLOSED_FORM,
        "grid": TimeGrid.from_dt(20.0, 0.05),
    }
    settings.update(kwargs)
    return ScenarioConfig(**settings)


def infected(grid: TimeGrid, values) -> SamplePath:
    return SamplePath(grid, np.asarray(values, dtype=float), PathKind.INFECTED)


def test_reproduction_numbers():
    assert math.isclose(r0_deterministic(FIG4), 1.2)
    assert math.isclose(r0_stochastic_gray(FIG4, 0.005), 1.15)
    assert r0_stochastic_gray(FIG4, 0.0) == FIG4.r0d
    with pytest.raises(ValueError):
        r0_stochastic_gray(FIG4, -0.1)


def test_gray_extinction_condition():
    assert gray_extinction_condition(FIG2, 0.005)
    assert not gray_extinction_condition(FIG4, 0.005)
    assert gray_extinction_condition(FIG4, 0.05)


def test_gray_persistence_level():
    xi = gray_persistence_level(FIG4, 0.005)
    assert xi is not None
    assert math.isclose(xi, (math.sqrt(0.0031) - 0.055) / 0.005**2)
    assert 0 < xi < 100 / 3
    assert math.isclose(gray_persistence_level(FIG4, 0.0), 100 / 3)
    assert gray_persistence_level(FIG4, 0.05) is None


def test_log_odds_slope_and_bounds():
    grid = TimeGrid(10.0, 100)
    assert log_odds_slope(infected(grid, np.full(101, 100.0)), FIG4) == 0.0
    z = gen_general_z(grid, LinearDrift(0.011, 0.0), gen_brownian(grid, seed=0))
    assert math.isclose(z_growth_rate(z), 0.011)
    assert math.isclose(log_odds_bound(FIG4, z), 4.2)
    with pytest.raises(ValueError):
        z_growth_rate(infected(grid, np.full(101, 100.0)))
    with pytest.raises(ValueError):
        log_odds_slope(z, FIG4)


def test_count_crossings():
    assert count_crossings(np.array([0.0, 10.0, 0.0, 10.0]), 5.0, 1.0) == (2, 1)
    # wandering inside the band never counts
    assert count_crossings(np.array([0.0, 5.5, 4.5, 5.5, 0.0]), 5.0, 1.0) == (0, 0)
    assert count_crossings(np.array([0.0, 5.5, 7.0, 5.5, 4.5, 3.0]), 5.0, 1.0) == (1, 1)


def test_classify_extinct():
    path = deterministic_path(FIG2, TimeGrid.from_dt(200.0, 0.1))
    verdict = classify(path, FIG2)
    assert verdict.label is Verdict.EXTINCT
    assert verdict.crossings_of_xstar == 0
    assert verdict.slope_estimate < 0


def test_classify_persistent():
    grid = TimeGrid(100.0, 1000)
    path = infected(grid, 100 / 3 + 10 * np.sin(grid.times))
    verdict = classify(path, FIG4)
    assert verdict.label is Verdict.PERSISTENT
    assert verdict.up_crossings >= 2 and verdict.down_crossings >= 2
    assert abs(verdict.window_average - 100 / 3) < 1.0


def test_terminal_value_below_eps_is_extinct_even_after_crossings():
    grid = TimeGrid(100.0, 1000)
    values = 100 / 3 + 10 * np.sin(grid.times)
    values[-1] = 0.01
    verdict = classify(infected(grid, values), FIG4)
    assert verdict.label is Verdict.EXTINCT
    assert verdict.crossings_of_xstar >= 4
    lenient = ClassifierConfig(eps_extinct=1e-3)
    assert classify(infected(grid, values), FIG4, lenient).label is Verdict.PERSISTENT


def test_classify_inconclusive():
    grid = TimeGrid(10.0, 100)
    verdict = classify(infected(grid, np.full(101, 100.0)), FIG4)
    assert verdict.label is Verdict.INCONCLUSIVE
    assert verdict.terminal_value == 100.0


def test_classify_without_a_level():
    grid = TimeGrid(10.0, 100)
    values = np.linspace(100.0, 0.01, 101)
    verdict = classify_around(infected(grid, values), FIG4, None)
    assert verdict.label is Verdict.EXTINCT
    custom = ClassifierConfig(eps_extinct=1e-3)
    assert classify_around(infected(grid, values), FIG4, None, custom).label is Verdict.INCONCLUSIVE


def test_classify_rejects_paths_outside_the_support():
    grid = TimeGrid(1.0, 2)
    with pytest.raises(ValueError):
        classify(infected(grid, [100.0, 0.0, 1.0]), FIG4)
    with pytest.raises(ValueError):
        classify(SamplePath(grid, [0.0, 1.0, 2.0], PathKind.OU), FIG4)


def test_classifier_config_bounds():
    with pytest.raises(ConfigError):
        ClassifierConfig(window_fraction=1.0)
    with pytest.raises(ConfigError):
        ClassifierConfig(eps_extinct=0.0)
    with pytest.raises(ConfigError):
        ClassifierConfig(min_crossings=0)
    with pytest.raises(ConfigError):
        ClassifierConfig(hysteresis=0.5)
    assert math.isclose(ClassifierConfig().eps_for(200.0), 0.2)


def test_persistence_level():
    assert math.isclose(persistence_level(scenario()), 100 / 3)
    shifted = persistence_level(scenario(noise=LinearDrift(0.011, 0.005)))
    assert shifted is not None and math.isclose(shifted, 200 * 4.2 / 14.2)
    assert persistence_level(scenario(model=FIG2, noise=LinearDrift(-0.011, 0.005))) is None
    assert persistence_level(scenario(noise=LinearDrift(-0.07, 0.005))) is None
    gray = scenario(route=Route.GRAY, noise=OUNoise(OUParams(0.4, 0.005)))
    assert persistence_level(gray) == gray_persistence_level(FIG4, 0.005)
    assert persistence_level(scenario(model=FIG2)) is None


def test_ergodic_diagnostic():
    grid = TimeGrid(4.0, 40)
    assert math.isclose(ergodic_diagnostic(SamplePath(grid, grid.times, PathKind.GENERAL_Z)), 2.0)
    with pytest.raises(ValueError):
        ergodic_diagnostic(infected(grid, np.full(41, 1.0)))


def test_simulate_path_is_reproducible():
    scn = scenario()
    a = simulate_path(scn, 3)
    b = simulate_path(scn, 3)
    assert np.array_equal(a.infected.values, b.infected.values)
    assert not np.array_equal(a.infected.values, simulate_path(scn, 4).infected.values)
    assert not np.array_equal(a.infected.values, simulate_path(scn, 3, seed=1).infected.values)


@pytest.mark.parametrize("route", list(Route))
def test_every_route_stays_in_support(route):
    result = simulate_path(scenario(route=route, noise=OUNoise(OUParams(0.4, 0.005))), 0)
    assert np.all(result.infected.values > 0)
    assert np.all(result.infected.values < FIG4.N)


def test_ensemble_does_not_depend_on_workers():
    scn = scenario(n_paths=6)
    one = run_ensemble(scn, workers=1)
    three = run_ensemble(scn, workers=3)
    assert one.verdicts == three.verdicts
    assert np.array_equal(one.mean_path.values, three.mean_path.values)
    assert np.array_equal(one.quantile_paths[2].values, three.quantile_paths[2].values)
    assert one.mean_ergodic_diagnostic == three.mean_ergodic_diagnostic


def test_ensemble_summary():
    summary = run_ensemble(scenario(n_paths=5))
    assert summary.n_paths == 5
    assert len(summary.verdicts) == 5
    total = summary.extinct_fraction + summary.persistent_fraction + summary.inconclusive_fraction
    assert math.isclose(total, 1.0)
    assert summary.x_star is not None and math.isclose(summary.x_star, 100 / 3)
    assert summary.persistence_level == summary.x_star
    assert summary.violations == 0
    low, mid, high = summary.quantile_paths
    assert np.all(low.values <= mid.values) and np.all(mid.values <= high.values)


def test_single_path_ensemble():
    scn = scenario(n_paths=1)
    summary = run_ensemble(scn)
    path = simulate_path(scn, 0).infected
    assert np.array_equal(summary.mean_path.values, path.values)
    assert np.array_equal(summary.quantile_paths[1].values, path.values)
    with pytest.raises(ValueError):
        run_ensemble(scn, n_paths=0)


def test_ensemble_reports_the_failing_path():
    def drift(t: float, z: float) -> float:
        return math.nan if t > 1.0 else 0.0

    scn = scenario(noise=GeneralDrift(drift, 0.01), route=Route.ITO_EM, n_paths=2)
    with pytest.raises(NonFiniteError, match="path 0"):
        run_ensemble(scn)


def test_route_value_errors_carry_the_path_index():
    def drift(t: float, z: float) -> float:
        if t > 1.0:
            raise ValueError("z out of range")
        return 0.0

    scn = scenario(noise=GeneralDrift(drift, 0.01), route=Route.ITO_EM, n_paths=2)
    with pytest.raises(ValueError, match="path 0: z out of range"):
        run_ensemble(scn)
    with pytest.raises(ValueError, match="path 3"):
        simulate_path(scn, 3)


def test_wong_zakai_route_with_linear_noise():
    scn = scenario(route=Route.WONG_ZAKAI, noise=LinearDrift(0.011, 0.005))
    result = simulate_path(scn, 0)
    assert result.infected.kind is PathKind.WZ_SMOOTHED
    assert result.noise.kind is PathKind.GENERAL_Z
    brownian = gen_brownian(scn.grid, scn.seed, 0)
    expected = 0.011 * scn.grid.times + 0.005 * brownian.values
    np.testing.assert_allclose(result.noise.values, expected, atol=1e-12)
    assert np.all(result.infected.values > 0) and np.all(result.infected.values < FIG4.N)


def test_convergence_without_noise_is_first_order():
    dt_list = tuple(2.0**-k for k in range(6, 11))
    scn = scenario(noise=NoNoise(), route=Route.ITO_EM, grid=TimeGrid(2.0, 64))
    table = convergence_study(scn, dt_list=dt_list, n_seeds=1)
    assert table.route is Route.ITO_EM
    assert [row.dt for row in table.rows] == list(dt_list)
    assert all(a > b for a, b in zip(table.errors, table.errors[1:]))
    assert 0.8 <= table.slope <= 1.2
    assert all(row.violation_rate == 0.0 for row in table.rows)


def test_convergence_rejects_bad_input():
    dt_list = tuple(2.0**-k for k in range(6, 11))
    with pytest.raises(ConfigError):
        convergence_study(scenario(), dt_list=dt_list, n_seeds=1)
    with pytest.raises(ValueError):
        convergence_study(scenario(route=Route.ITO_EM), dt_list=dt_list[:3], n_seeds=1)
    with pytest.raises(ValueError):
        convergence_study(scenario(route=Route.ITO_EM), dt_list=dt_list[::-1], n_seeds=1)
