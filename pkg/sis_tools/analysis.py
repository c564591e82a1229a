"""Reproduction numbers, trajectory verdicts, ensembles and convergence studies.

The extinction and persistence results are statements about t -> infinity;
everything here is a finite-horizon proxy for them.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import linregress
from tqdm import tqdm

from sis_tools.closedform import (
    ModelParams,
    equilibrium,
    g_transform,
    perturbed_infected_path,
)
from sis_tools.config import ClassifierConfig, Route, ScenarioConfig
from sis_tools.errors import ConfigError, GridMismatchError, NonFiniteError
from sis_tools.paths import (
    FloatArray,
    LinearDrift,
    OUNoise,
    PathKind,
    SamplePath,
    TimeGrid,
    gen_brownian,
    noise_path,
    time_average,
)
from sis_tools.sde import (
    IntegrationResult,
    integrate_general_z,
    integrate_gray,
    integrate_ou_sis,
    integrate_wong_zakai,
    integrate_wong_zakai_general,
)

__all__ = [
    "ClassifierConfig",
    "ConvergenceRow",
    "ConvergenceTable",
    "EnsembleSummary",
    "TrajectoryVerdict",
    "Verdict",
    "classify",
    "classify_around",
    "convergence_study",
    "count_crossings",
    "ergodic_diagnostic",
    "gray_extinction_condition",
    "gray_persistence_level",
    "log_odds_bound",
    "log_odds_slope",
    "persistence_level",
    "r0_deterministic",
    "r0_stochastic_gray",
    "run_ensemble",
    "simulate_path",
    "z_growth_rate",
]

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.5, 0.95)
_INFECTED_KINDS = (PathKind.INFECTED, PathKind.WZ_SMOOTHED)
_NOISE_KINDS = (PathKind.OU, PathKind.GENERAL_Z)


def r0_deterministic(params: ModelParams) -> float:
    """beta*N/(gamma + mu)."""
    return params.r0d


def r0_stochastic_gray(params: ModelParams, sigma: float) -> float:
    """Stochastic reproduction number of the Gray model."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return params.r0d - sigma**2 * params.N**2 / (2 * params.gamma_mu)


def gray_extinction_condition(params: ModelParams, sigma: float) -> bool:
    """Either of the Gray model's sufficient conditions for extinction."""
    s2 = sigma**2
    small_noise = r0_stochastic_gray(params, sigma) < 1 and s2 < params.beta / params.N
    large_noise = s2 > max(params.beta / params.N, params.beta**2 / (2 * params.gamma_mu))
    return small_noise or large_noise


def gray_persistence_level(params: ModelParams, sigma: float) -> Optional[float]:
    """Level xi the Gray model oscillates around when it persists.

    xi = (sqrt(beta^2 - 2 sigma^2 (gamma+mu)) - (beta - sigma^2 N)) / sigma^2,
    which tends to x* as sigma -> 0. None when the square root is undefined
    or xi falls outside (0, N).
    """
    if sigma == 0:
        return equilibrium(params).x_star
    disc = params.beta**2 - 2 * sigma**2 * params.gamma_mu
    if disc < 0:
        return None
    xi = (math.sqrt(disc) - (params.beta - sigma**2 * params.N)) / sigma**2
    return xi if 0 < xi < params.N else None


def _require_infected(path: SamplePath, params: ModelParams) -> None:
    if path.kind not in _INFECTED_KINDS:
        raise ValueError(f"need an infected path, got {path.kind.value}")
    if not (np.all(path.values > 0) and np.all(path.values < params.N)):
        raise ValueError(f"infected path leaves (0, {params.N})")


def log_odds_slope(path: SamplePath, params: ModelParams) -> float:
    """(1/T) G(I_T), the finite-horizon version of limsup (1/t) G(I_t)."""
    _require_infected(path, params)
    return g_transform(params, path.terminal) / path.grid.t_end


def z_growth_rate(z_path: SamplePath) -> float:
    """Z_T / T, the finite-horizon version of limsup Z_t / t."""
    if z_path.kind not in _NOISE_KINDS:
        raise ValueError(f"need a noise path, got {z_path.kind.value}")
    return z_path.terminal / z_path.grid.t_end


def log_odds_bound(params: ModelParams, z_path: SamplePath) -> float:
    """nu + N * Z_T/T: the log-odds slope can't exceed this in the limit."""
    return params.nu + params.N * z_growth_rate(z_path)


class Verdict(Enum):
    """Classification of one trajectory."""

    EXTINCT = "extinct"
    PERSISTENT = "persistent"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class TrajectoryVerdict:  # pylint: disable=too-many-instance-attributes
    """A verdict and the statistics it was based on."""

    label: Verdict
    terminal_value: float
    crossings_of_xstar: int
    slope_estimate: float
    up_crossings: int = 0
    down_crossings: int = 0
    window_average: float = math.nan


def count_crossings(values: FloatArray, level: float, band: float) -> tuple[int, int]:
    """Count (up, down) crossings of ``level`` with a hysteresis band.

    A crossing only counts once the path has gone from below level - band to
    above level + band (or back).
    """
    side = np.zeros(values.shape, dtype=np.int8)
    side[values > level + band] = 1
    side[values < level - band] = -1
    changes = np.diff(side[side != 0])
    return int(np.count_nonzero(changes > 0)), int(np.count_nonzero(changes < 0))


def _window_start(grid: TimeGrid, window_fraction: float) -> int:
    return min(round(grid.n_steps * (1 - window_fraction)), grid.n_steps - 1)


def classify(
    path: SamplePath, params: ModelParams, cfg: ClassifierConfig = ClassifierConfig()
) -> TrajectoryVerdict:
    """Call a path persistent, extinct or inconclusive, using x* as the level."""
    return classify_around(path, params, equilibrium(params).x_star, cfg)


def classify_around(
    path: SamplePath,
    params: ModelParams,
    level: Optional[float],
    cfg: ClassifierConfig = ClassifierConfig(),
) -> TrajectoryVerdict:
    """Classify against an explicit persistence level (None: there is none).

    Extinct if the terminal value is below eps_extinct, else persistent if the
    trailing window crosses the level at least min_crossings times, else
    inconclusive.
    """
    _require_infected(path, params)
    start = _window_start(path.grid, cfg.window_fraction)
    window = path.values[start:]
    window_times = path.times[start:]
    window_average = float(trapezoid(window, window_times) / (window_times[-1] - window_times[0]))
    up = down = 0
    if level is not None:
        up, down = count_crossings(window, level, cfg.hysteresis * params.N)
    if path.terminal < cfg.eps_for(params.N):
        label = Verdict.EXTINCT
    elif level is not None and up + down >= cfg.min_crossings:
        label = Verdict.PERSISTENT
    else:
        label = Verdict.INCONCLUSIVE
    return TrajectoryVerdict(
        label=label,
        terminal_value=path.terminal,
        crossings_of_xstar=up + down,
        slope_estimate=log_odds_slope(path, params),
        up_crossings=up,
        down_crossings=down,
        window_average=window_average,
    )


def persistence_level(scenario: ScenarioConfig) -> Optional[float]:
    """The level a persistent path of this scenario keeps crossing.

    x* in general; x* of the model with beta + alpha under a linear drift
    Z = alpha*t + sigma*B; the Gray level xi on the Gray route.
    """
    model, noise = scenario.model, scenario.noise
    if scenario.route is Route.GRAY:
        return gray_persistence_level(model, noise.sigma)
    if isinstance(noise, LinearDrift):
        beta = model.beta + noise.alpha
        if beta <= 0:
            return None
        return equilibrium(replace(model, beta=beta)).x_star
    return equilibrium(model).x_star


def ergodic_diagnostic(ou_path: SamplePath) -> float:
    """Time average of a noise path; tends to 0 for an OU path."""
    if ou_path.kind not in _NOISE_KINDS:
        raise ValueError(f"need a noise path, got {ou_path.kind.value}")
    return time_average(ou_path)


def _route_result(
    scenario: ScenarioConfig, grid: TimeGrid, brownian: SamplePath
) -> IntegrationResult:
    """Evaluate the scenario's route on a given Brownian path."""
    noise = scenario.noise
    model = scenario.model
    cfg = scenario.integrator_config()
    if scenario.route is Route.CLOSED_FORM:
        z = noise_path(grid, noise, brownian)
        return IntegrationResult(perturbed_infected_path(model, z), z, 0)
    if scenario.route is Route.ITO_EM:
        if isinstance(noise, OUNoise):
            return integrate_ou_sis(model, noise.params, brownian, cfg)
        return integrate_general_z(model, noise, brownian, cfg)
    if scenario.route is Route.WONG_ZAKAI:
        if isinstance(noise, OUNoise):
            return integrate_wong_zakai(model, noise.params, brownian, scenario.refine_factor, cfg)
        return integrate_wong_zakai_general(model, noise, brownian, scenario.refine_factor, cfg)
    if not isinstance(noise, OUNoise):
        raise ConfigError("route", f"{scenario.route.value} needs ou noise")
    return integrate_gray(model, noise.sigma, brownian, cfg)


def simulate_path(
    scenario: ScenarioConfig, index: int = 0, seed: Optional[int] = None
) -> IntegrationResult:
    """One path of the scenario, drawn from stream ``index`` of ``seed``.

    Route failures, including a builtin ValueError or ArithmeticError from a
    user drift, are re-raised as the same type prefixed with ``path <index>``.
    """
    seed = scenario.seed if seed is None else seed
    brownian = gen_brownian(scenario.grid, seed, index)
    try:
        return _route_result(scenario, scenario.grid, brownian)
    except ConfigError:
        raise
    except NonFiniteError as exc:
        raise NonFiniteError(f"path {index}: {exc}", index=exc.index) from exc
    except GridMismatchError as exc:
        raise GridMismatchError(f"path {index}: {exc}") from exc
    except (ValueError, ArithmeticError) as exc:
        raise type(exc)(f"path {index}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class EnsembleSummary:  # pylint: disable=too-many-instance-attributes
    """Aggregate of an ensemble, reduced in path-index order."""

    n_paths: int
    extinct_fraction: float
    persistent_fraction: float
    inconclusive_fraction: float
    mean_path: SamplePath
    quantile_paths: tuple[SamplePath, SamplePath, SamplePath]
    mean_time_average_over_window: float
    verdicts: tuple[TrajectoryVerdict, ...]
    violations: int
    x_star: Optional[float]
    persistence_level: Optional[float]
    mean_ergodic_diagnostic: float


def _ensemble_task(
    task: tuple[ScenarioConfig, int, int, Optional[float]]
) -> tuple[IntegrationResult, TrajectoryVerdict]:
    """Simulate and classify one path; module level so pool workers can run it."""
    scenario, index, seed_base, level = task
    result = simulate_path(scenario, index, seed_base)
    verdict = classify_around(result.infected, scenario.model, level, scenario.classifier)
    return result, verdict


def run_ensemble(
    scenario: ScenarioConfig,
    n_paths: Optional[int] = None,
    seed_base: Optional[int] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> EnsembleSummary:
    """Simulate, classify and summarize ``n_paths`` independent paths.

    Path i uses stream i of ``seed_base``. With ``workers > 1`` the paths run
    in a process pool, so a ``GeneralDrift`` needs a module level (picklable)
    drift. Results come back in path-index order and the output does not
    depend on the number of workers.
    """
    n_paths = scenario.n_paths if n_paths is None else n_paths
    seed_base = scenario.seed if seed_base is None else seed_base
    workers = scenario.workers if workers is None else workers
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")

    level = persistence_level(scenario)
    tasks = [(scenario, index, seed_base, level) for index in range(n_paths)]
    if workers > 1:
        with multiprocessing.Pool(min(workers, n_paths)) as pool:
            mapped = pool.imap(_ensemble_task, tasks)
            outcomes = list(tqdm(mapped, total=n_paths, desc="paths", disable=not progress))
    else:
        outcomes = [_ensemble_task(t) for t in tqdm(tasks, desc="paths", disable=not progress)]

    verdicts = tuple(v for _, v in outcomes)
    matrix = np.vstack([r.infected.values for r, _ in outcomes])
    grid = scenario.grid
    kind = outcomes[0][0].infected.kind
    quantiles = np.quantile(matrix, QUANTILES, axis=0)
    violations = sum(r.violations for r, _ in outcomes)
    if violations:
        logger.warning("%d boundary projections over %d paths", violations, n_paths)

    def fraction(label: Verdict) -> float:
        return sum(v.label is label for v in verdicts) / n_paths

    return EnsembleSummary(
        n_paths=n_paths,
        extinct_fraction=fraction(Verdict.EXTINCT),
        persistent_fraction=fraction(Verdict.PERSISTENT),
        inconclusive_fraction=fraction(Verdict.INCONCLUSIVE),
        mean_path=SamplePath(grid, matrix.mean(axis=0), kind),
        quantile_paths=(
            SamplePath(grid, quantiles[0], kind),
            SamplePath(grid, quantiles[1], kind),
            SamplePath(grid, quantiles[2], kind),
        ),
        mean_time_average_over_window=float(np.mean([v.window_average for v in verdicts])),
        verdicts=verdicts,
        violations=violations,
        x_star=equilibrium(scenario.model).x_star,
        persistence_level=level,
        mean_ergodic_diagnostic=float(
            np.mean([ergodic_diagnostic(r.noise) for r, _ in outcomes])
        ),
    )


@dataclass(frozen=True)
class ConvergenceRow:
    """Median strong error and boundary violation rate at one step size."""

    dt: float
    error: float
    violation_rate: float


@dataclass(frozen=True)
class ConvergenceTable:
    """Errors per step size and the fitted log-log slope."""

    route: Route
    rows: tuple[ConvergenceRow, ...]
    slope: float

    @property
    def errors(self) -> list[float]:
        """Median errors, in dt_list order."""
        return [row.error for row in self.rows]


def _check_dt_list(dt_list: tuple[float, ...]) -> None:
    if len(dt_list) < 4:
        raise ValueError(f"need at least 4 step sizes, got {len(dt_list)}")
    if any(a <= b for a, b in zip(dt_list, dt_list[1:])):
        raise ValueError(f"step sizes must be strictly decreasing: {dt_list}")


def convergence_study(
    scenario: ScenarioConfig,
    dt_list: Optional[tuple[float, ...]] = None,
    n_seeds: Optional[int] = None,
    progress: bool = False,
) -> ConvergenceTable:
    """Strong error of a time-stepping route against the closed form.

    All paths of one seed are cut from a single Brownian path on a reference
    grid 4 times finer than the finest step, so every route sees the same
    noise. The error at each step is the median over seeds of the largest
    node-wise distance to the closed form.
    """
    dt_list = scenario.dt_list if dt_list is None else tuple(dt_list)
    n_seeds = scenario.n_seeds if n_seeds is None else n_seeds
    _check_dt_list(dt_list)
    if scenario.route not in (Route.ITO_EM, Route.WONG_ZAKAI):
        raise ConfigError("route", f"convergence needs ito_em or wong_zakai, not {scenario.route.value}")
    t_end = scenario.grid.t_end
    grids = [TimeGrid.from_dt(t_end, dt) for dt in dt_list]
    ref_grid = grids[-1].refine(4)
    factors = [ref_grid.n_steps // g.n_steps for g in grids]
    for g, f in zip(grids, factors):
        if g.n_steps * f != ref_grid.n_steps:
            raise GridMismatchError(f"{g} does not nest in the reference grid {ref_grid}")

    errors = np.empty((n_seeds, len(grids)))
    rates = np.empty((n_seeds, len(grids)))
    for s in tqdm(range(n_seeds), desc="seeds", disable=not progress):
        ref_brownian = gen_brownian(ref_grid, scenario.seed, s)
        reference = perturbed_infected_path(
            scenario.model, noise_path(ref_grid, scenario.noise, ref_brownian)
        )
        for j, (grid, factor) in enumerate(zip(grids, factors)):
            result = _route_result(scenario, grid, ref_brownian.subsample(factor))
            diff = result.infected.values - reference.values[::factor]
            errors[s, j] = np.max(np.abs(diff))
            rates[s, j] = result.violations / grid.n_steps

    median_errors = np.median(errors, axis=0)
    median_rates = np.median(rates, axis=0)
    if np.all(median_errors > 0):
        slope = float(linregress(np.log(dt_list), np.log(median_errors)).slope)
    else:
        slope = math.nan
    logger.info("%s convergence slope %.3f", scenario.route.value, slope)
    rows = tuple(
        ConvergenceRow(dt, float(e), float(r))
        for dt, e, r in zip(dt_list, median_errors, median_rates)
    )
    return ConvergenceTable(scenario.route, rows, slope)
