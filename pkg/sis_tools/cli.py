"""Command line front end: ``sis-sim {simulate,ensemble,converge,figures,deterministic}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from sis_tools.analysis import (
    EnsembleSummary,
    convergence_study,
    r0_stochastic_gray,
    run_ensemble,
    simulate_path,
)
from sis_tools.closedform import ModelParams, deterministic_path, equilibrium, f_of_x
from sis_tools.config import (
    COMMAND_DEFAULTS,
    OutputFormat,
    OutputSpec,
    Route,
    ScenarioConfig,
    parse_file,
    parse_override,
)
from sis_tools.errors import ConfigError, SimulationError
from sis_tools.paths import (
    LinearDrift,
    NoiseSpec,
    OUNoise,
    OUParams,
    TimeGrid,
)

logger = logging.getLogger(__name__)

FIGURE_IDS = (1, 2, 3, 4, 5, 6)

# nu = 20, gamma + mu = 0.2, N = 10; i0 does not enter f
FIG1_MODEL = ModelParams(N=10.0, i0=5.0, beta=20.2 / 10.0, gamma_mu=0.2)
FIG1_POINTS = 999


def fmt(value: float) -> str:
    """17 significant digits, enough to round-trip a float64."""
    return format(value, ".17g")


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info("wrote %s", path)
    return path


def _write_lines(path: Path, lines: Iterable[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.writelines(line + "\n" for line in lines)
    logger.info("wrote %s", path)
    return path


def _write_config(scenario: ScenarioConfig, output: OutputSpec) -> Path:
    return _write_lines(output.sibling(".cfg"), scenario.to_lines())


def cmd_simulate(scenario: ScenarioConfig, output: OutputSpec) -> list[Path]:
    """One trajectory of the scenario's route as ``t,infected[,noise]``."""
    if output.format is not OutputFormat.CSV:
        raise ConfigError("format", "simulate only writes csv")
    result = simulate_path(scenario, 0)
    header = ["t", "infected"]
    columns = [result.infected.times, result.infected.values]
    if output.include_noise_column:
        header.append("noise")
        columns.append(result.noise.values)
    if result.violations:
        logger.warning("%d boundary projections", result.violations)
    rows = ([fmt(v) for v in row] for row in zip(*(c.tolist() for c in columns)))
    return [_write_rows(output.prepare(), header, rows), _write_config(scenario, output)]


def summary_lines(scenario: ScenarioConfig, summary: EnsembleSummary) -> list[str]:
    """Ensemble summary as ``key: value`` lines."""
    x_star = "none" if summary.x_star is None else fmt(summary.x_star)
    level = "none" if summary.persistence_level is None else fmt(summary.persistence_level)
    return [
        f"route: {scenario.route.value}",
        f"seed: {scenario.seed}",
        f"n_paths: {summary.n_paths}",
        f"extinct_fraction: {fmt(summary.extinct_fraction)}",
        f"persistent_fraction: {fmt(summary.persistent_fraction)}",
        f"inconclusive_fraction: {fmt(summary.inconclusive_fraction)}",
        f"mean_time_average: {fmt(summary.mean_time_average_over_window)}",
        f"x_star: {x_star}",
        f"persistence_level: {level}",
        f"violations: {summary.violations}",
        f"mean_ergodic_diagnostic: {fmt(summary.mean_ergodic_diagnostic)}",
    ]


def cmd_ensemble(
    scenario: ScenarioConfig, output: OutputSpec, progress: bool = False
) -> list[Path]:
    """Per-path verdicts, a summary and the mean/quantile paths.

    csv format: verdicts at ``out`` (``path,seed,label,terminal,crossings,slope``),
    summary at ``<out>.summary.txt``. summary_text format: summary at ``out``.
    Both also write ``<out>.paths.csv`` (``t,mean,q05,q50,q95``) and ``<out>.cfg``.
    """
    summary = run_ensemble(scenario, progress=progress)
    written = []
    lines = summary_lines(scenario, summary)
    if output.format is OutputFormat.CSV:
        rows = (
            [
                str(index),
                str(scenario.seed),
                v.label.value,
                fmt(v.terminal_value),
                str(v.crossings_of_xstar),
                fmt(v.slope_estimate),
            ]
            for index, v in enumerate(summary.verdicts)
        )
        header = ["path", "seed", "label", "terminal", "crossings", "slope"]
        written.append(_write_rows(output.prepare(), header, rows))
        written.append(_write_lines(output.sibling(".summary.txt"), lines))
    else:
        written.append(_write_lines(output.prepare(), lines))
    q05, q50, q95 = summary.quantile_paths
    columns = [summary.mean_path.times, summary.mean_path.values, q05.values, q50.values, q95.values]
    path_rows = ([fmt(v) for v in row] for row in zip(*(c.tolist() for c in columns)))
    written.append(
        _write_rows(output.sibling(".paths.csv"), ["t", "mean", "q05", "q50", "q95"], path_rows)
    )
    written.append(_write_config(scenario, output))
    return written


def cmd_converge(
    scenario: ScenarioConfig, output: OutputSpec, progress: bool = False
) -> list[Path]:
    """Strong-error table ``dt,error,slope,violation_rate``."""
    if output.format is not OutputFormat.CSV:
        raise ConfigError("format", "converge only writes csv")
    table = convergence_study(scenario, progress=progress)
    rows = (
        [fmt(row.dt), fmt(row.error), fmt(table.slope), fmt(row.violation_rate)]
        for row in table.rows
    )
    header = ["dt", "error", "slope", "violation_rate"]
    return [_write_rows(output.prepare(), header, rows), _write_config(scenario, output)]


def cmd_deterministic(scenario: ScenarioConfig, output: OutputSpec) -> list[Path]:
    """The deterministic solution on the grid, ``t,infected[,x_star]``."""
    if output.format is not OutputFormat.CSV:
        raise ConfigError("format", "deterministic only writes csv")
    path = deterministic_path(scenario.model, scenario.grid)
    x_star = equilibrium(scenario.model).x_star
    header = ["t", "infected"]
    if x_star is None:
        rows = ([fmt(t), fmt(v)] for t, v in zip(path.times.tolist(), path.values.tolist()))
    else:
        header.append("x_star")
        rows = (
            [fmt(t), fmt(v), fmt(x_star)]
            for t, v in zip(path.times.tolist(), path.values.tolist())
        )
    return [_write_rows(output.prepare(), header, rows), _write_config(scenario, output)]


@dataclass(frozen=True)
class Panel:
    """One panel of a figure."""

    name: str
    model: ModelParams
    noise: NoiseSpec


@dataclass(frozen=True)
class FigureSpec:
    """Panels of a figure and the grid they are drawn on."""

    figure_id: int
    grid: TimeGrid
    panels: tuple[Panel, ...]
    notes: tuple[str, ...] = ()


def _model(r0d: float) -> ModelParams:
    return ModelParams.from_r0(N=200.0, i0=100.0, beta=0.06, r0d=r0d)


def _ou_panels(gamma_mu: float) -> tuple[Panel, ...]:
    model = ModelParams(N=200.0, i0=100.0, beta=0.06, gamma_mu=gamma_mu)
    return tuple(
        Panel(f"sigma_{sigma}", model, OUNoise(OUParams(0.4, sigma))) for sigma in (0.005, 0.05)
    )


def _linear_panels(alpha: float, r0s: Sequence[float]) -> tuple[Panel, ...]:
    return tuple(
        Panel(f"r0_{r0:.3f}", _model(r0), LinearDrift(alpha, 0.005)) for r0 in r0s
    )


def figure_spec(figure_id: int) -> FigureSpec:
    """Panels, horizon and step for figures 2 to 6."""
    if figure_id == 2:
        return FigureSpec(
            2,
            TimeGrid.from_dt(200.0, 0.01),
            _ou_panels(14.0),
            ("R0 is 0.8 in the running text but 12/14 = 0.857 from beta, N and gamma+mu;"
             " the parameter value is used",),
        )
    if figure_id == 3:
        return FigureSpec(3, TimeGrid.from_dt(2000.0, 0.05), _ou_panels(12.0))
    if figure_id == 4:
        return FigureSpec(4, TimeGrid.from_dt(400.0, 0.01), _ou_panels(10.0))
    if figure_id == 5:
        return FigureSpec(
            5,
            TimeGrid.from_dt(1000.0, 0.05),
            _linear_panels(-0.011, (12 / 14, 1.0, 1.2, 12 / 9)),
        )
    if figure_id == 6:
        return FigureSpec(
            6,
            TimeGrid.from_dt(1000.0, 0.05),
            _linear_panels(0.011, (0.8, 12 / 14, 1.0, 1.2)),
            ("the caption gives alpha=-0.011 like figure 5, the text describes a positive"
             " drift; alpha=+0.011 is used",),
        )
    raise ConfigError("figure", f"figure {figure_id} has no time panels, expected one of 2..6")


def _noise_lines(noise: NoiseSpec) -> list[str]:
    if isinstance(noise, OUNoise):
        return [f"noise: ou alpha={fmt(noise.params.alpha)} sigma={fmt(noise.sigma)}"]
    if isinstance(noise, LinearDrift):
        return [f"noise: linear alpha={fmt(noise.alpha)} sigma={fmt(noise.sigma)}"]
    return ["noise: none"]


def cmd_equilibrium_figure(out_dir: Path) -> list[Path]:
    """Figure 1: f(x) = nu - (gamma+mu)*x/(N - x) on (0, N) with its root x*.

    Writes ``fig1_f.csv`` (``x,f,x_star``) and ``fig1_parameters.txt``.
    """
    model = FIG1_MODEL
    x_star = equilibrium(model).x_star
    if x_star is None:
        raise ValueError(f"figure 1 needs nu > 0, got {model.nu}")
    xs = [model.N * k / (FIG1_POINTS + 1) for k in range(1, FIG1_POINTS + 1)]
    rows = ([fmt(x), fmt(f_of_x(model, x)), fmt(x_star)] for x in xs)
    info = [
        "figure: 1",
        f"N: {fmt(model.N)}",
        f"beta: {fmt(model.beta)}",
        f"gamma_mu: {fmt(model.gamma_mu)}",
        f"nu: {fmt(model.nu)}",
        f"r0d: {fmt(model.r0d)}",
        f"x_star: {fmt(x_star)}",
        f"points: {FIG1_POINTS}",
    ]
    return [
        _write_rows(out_dir / "fig1_f.csv", ["x", "f", "x_star"], rows),
        _write_lines(out_dir / "fig1_parameters.txt", info),
    ]


def cmd_figures(figure_id: int, out_dir: Path, seed: int = 0) -> list[Path]:
    """Plot-ready CSVs ``t,infected,noise,deterministic[,x_star]`` for every panel.

    A companion ``fig<id>_parameters.txt`` lists everything needed to redraw them.
    """
    if figure_id == 1:
        return cmd_equilibrium_figure(out_dir)
    spec = figure_spec(figure_id)
    written = []
    info = [
        f"figure: {figure_id}",
        "route: closed_form",
        f"seed: {seed}",
        "stream: 0",
        f"t_end: {fmt(spec.grid.t_end)}",
        f"dt: {fmt(spec.grid.dt)}",
    ]
    for panel in spec.panels:
        scenario = ScenarioConfig(
            model=panel.model,
            noise=panel.noise,
            route=Route.CLOSED_FORM,
            grid=spec.grid,
            seed=seed,
        )
        result = simulate_path(scenario, 0)
        reference = deterministic_path(panel.model, spec.grid)
        x_star = equilibrium(panel.model).x_star
        columns = [
            spec.grid.times.tolist(),
            result.infected.values.tolist(),
            result.noise.values.tolist(),
            reference.values.tolist(),
        ]
        header = ["t", "infected", "noise", "deterministic"]
        if x_star is not None:
            header.append("x_star")
            columns.append([x_star] * spec.grid.n_nodes)
        rows = ([fmt(v) for v in row] for row in zip(*columns))
        path = out_dir / f"fig{figure_id}_{panel.name}.csv"
        written.append(_write_rows(path, header, rows))
        info += [
            f"panel: {panel.name}",
            f"  N: {fmt(panel.model.N)}",
            f"  i0: {fmt(panel.model.i0)}",
            f"  beta: {fmt(panel.model.beta)}",
            f"  gamma_mu: {fmt(panel.model.gamma_mu)}",
            f"  r0d: {fmt(panel.model.r0d)}",
            f"  nu: {fmt(panel.model.nu)}",
            f"  x_star: {'none' if x_star is None else fmt(x_star)}",
            *("  " + line for line in _noise_lines(panel.noise)),
        ]
        if isinstance(panel.noise, OUNoise):
            info.append(f"  r0_gray: {fmt(r0_stochastic_gray(panel.model, panel.noise.sigma))}")
    info += [f"note: {note}" for note in spec.notes]
    written.append(_write_lines(out_dir / f"fig{figure_id}_parameters.txt", info))
    return written


def scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    """Defaults, then the config file, then command line flags."""
    values: dict[str, str] = dict(COMMAND_DEFAULTS.get(args.command, {}))
    if args.config:
        values.update(parse_file(args.config))
    flags = {
        "seed": args.seed,
        "route": args.route,
        "paths": args.paths,
        "t_end": args.t_end,
        "dt": args.dt,
        "workers": args.workers,
        "dt_list": args.dt_list,
        "seeds": args.seeds,
    }
    for item in args.set or []:
        key, value = parse_override(item)
        values[key] = value
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    return ScenarioConfig.from_values(values)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress")
    common.add_argument("--seed", type=int)
    return common


def _scenario_parser() -> argparse.ArgumentParser:
    scenario = argparse.ArgumentParser(add_help=False)
    scenario.add_argument("--config", help="key=value scenario file")
    scenario.add_argument("--out", required=True, type=Path)
    scenario.add_argument("--route", choices=[r.value for r in Route])
    scenario.add_argument("--paths", type=int)
    scenario.add_argument("--t-end", type=float)
    scenario.add_argument("--dt", type=float)
    scenario.add_argument("--workers", type=int)
    scenario.add_argument("--dt-list", help="comma separated, decreasing")
    scenario.add_argument("--seeds", type=int, help="seeds per step size in converge")
    scenario.add_argument("--set", action="append", metavar="KEY=VALUE")
    scenario.add_argument(
        "--format", choices=[f.value for f in OutputFormat], default=OutputFormat.CSV.value
    )
    return scenario


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per command."""
    parser = argparse.ArgumentParser(prog="sis-sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    scenario = _scenario_parser()
    simulate = sub.add_parser("simulate", parents=[common, scenario], help="one trajectory")
    simulate.add_argument("--noise-column", action="store_true")
    sub.add_parser("ensemble", parents=[common, scenario], help="Monte Carlo ensemble")
    sub.add_parser("converge", parents=[common, scenario], help="strong convergence study")
    sub.add_parser("deterministic", parents=[common, scenario], help="deterministic solution")
    figures = sub.add_parser("figures", parents=[common], help="figure panels as CSV")
    figures.add_argument("figure_id", type=int, choices=FIGURE_IDS)
    figures.add_argument("--out-dir", type=Path, default=Path("figures"))
    return parser


def run(args: argparse.Namespace) -> list[Path]:
    """Dispatch a parsed command line."""
    progress = not args.quiet
    if args.command == "figures":
        return cmd_figures(args.figure_id, args.out_dir, 0 if args.seed is None else args.seed)
    try:
        scenario = scenario_from_args(args)
        output = OutputSpec(
            out_path=args.out,
            format=OutputFormat(args.format),
            include_noise_column=getattr(args, "noise_column", False),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("scenario", str(exc)) from exc
    if args.command == "simulate":
        return cmd_simulate(scenario, output)
    if args.command == "ensemble":
        return cmd_ensemble(scenario, output, progress)
    if args.command == "converge":
        return cmd_converge(scenario, output, progress)
    return cmd_deterministic(scenario, output)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns 0 on success, 2 on bad configuration, 1 otherwise."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(format="[%(levelname)s] %(message)s", level=level)
    try:
        run(args)
    except ConfigError as exc:
        logger.error("bad configuration: %s", exc)
        return 2
    except (SimulationError, OSError, ValueError, ArithmeticError) as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
