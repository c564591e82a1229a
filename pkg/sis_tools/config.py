"""Scenario configuration: flat ``key=value`` files, overridable from the command line."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, TypeVar

from sis_tools.closedform import ModelParams
from sis_tools.errors import ConfigError
from sis_tools.paths import (
    GeneralDrift,
    LinearDrift,
    NoiseSpec,
    NoNoise,
    OUNoise,
    OUParams,
    TimeGrid,
)
from sis_tools.sde import IntegratorConfig, Scheme

E = TypeVar("E", bound=Enum)


class Route(Enum):
    """How an infected path is produced."""

    CLOSED_FORM = "closed_form"
    ITO_EM = "ito_em"
    WONG_ZAKAI = "wong_zakai"
    GRAY = "gray"


class OutputFormat(Enum):
    """What goes into an output file."""

    CSV = "csv"
    SUMMARY_TEXT = "summary_text"


@dataclass(frozen=True)
class ClassifierConfig:
    """Finite-horizon thresholds for calling a path extinct or persistent.

    ``eps_extinct=None`` means 1e-3*N. ``hysteresis`` is the half width of the
    band around x*, as a fraction of N.
    """

    eps_extinct: Optional[float] = None
    window_fraction: float = 0.5
    min_crossings: int = 4
    hysteresis: float = 0.02

    def __post_init__(self) -> None:
        """All positive, window_fraction below 1."""
        if self.eps_extinct is not None and not self.eps_extinct > 0:
            raise ConfigError("eps_extinct", f"must be > 0, got {self.eps_extinct}")
        if not 0 < self.window_fraction < 1:
            raise ConfigError(
                "window_fraction", f"must be in (0, 1), got {self.window_fraction}"
            )
        if self.min_crossings < 1:
            raise ConfigError("min_crossings", f"must be >= 1, got {self.min_crossings}")
        if not 0 <= self.hysteresis < 0.5:
            raise ConfigError("hysteresis", f"must be in [0, 0.5), got {self.hysteresis}")

    def eps_for(self, N: float) -> float:  # pylint: disable=invalid-name
        """Extinction threshold for population N."""
        return 1e-3 * N if self.eps_extinct is None else self.eps_extinct


DEFAULT_DT_LIST = tuple(2.0**-k for k in range(6, 13))

DEFAULTS: dict[str, str] = {
    "N": "200",
    "i0": "100",
    "beta": "0.06",
    "gamma_mu": "10",
    "noise": "ou",
    "alpha": "0.4",
    "sigma": "0.005",
    "route": "closed_form",
    "t_end": "200",
    "dt": "0.01",
    "seed": "0",
    "paths": "100",
    "eps_extinct": "",
    "window_fraction": "0.5",
    "min_crossings": "4",
    "hysteresis": "0.02",
    "refine_factor": "1",
    "margin": "",
    "workers": "1",
    "dt_list": ",".join(repr(dt) for dt in DEFAULT_DT_LIST),
    "seeds": "20",
}

# convergence studies run on a short horizon with the Ito route unless told otherwise
COMMAND_DEFAULTS: dict[str, dict[str, str]] = {
    "converge": {"t_end": "10", "route": "ito_em"},
}


def _float(values: Mapping[str, str], key: str) -> float:
    text = values[key].strip()
    try:
        out = float(text)
    except ValueError:
        raise ConfigError(key, f"not a number: {text!r}") from None
    if not math.isfinite(out):
        raise ConfigError(key, f"must be finite, got {text!r}")
    return out


def _optional_float(values: Mapping[str, str], key: str) -> Optional[float]:
    if not values[key].strip():
        return None
    return _float(values, key)


def _int(values: Mapping[str, str], key: str, minimum: Optional[int] = None) -> int:
    text = values[key].strip()
    try:
        out = int(text)
    except ValueError:
        raise ConfigError(key, f"not an integer: {text!r}") from None
    if minimum is not None and out < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {out}")
    return out


def _enum(values: Mapping[str, str], key: str, kind: type[E]) -> E:
    text = values[key].strip()
    try:
        return kind(text)
    except ValueError:
        choices = ", ".join(str(e.value) for e in kind)
        raise ConfigError(key, f"{text!r} is not one of {choices}") from None


def _dt_list(values: Mapping[str, str]) -> tuple[float, ...]:
    parts = [p for p in values["dt_list"].split(",") if p.strip()]
    dts = tuple(_float({"dt_list": p}, "dt_list") for p in parts)
    if len(dts) < 4:
        raise ConfigError("dt_list", f"need at least 4 step sizes, got {len(dts)}")
    if any(dt <= 0 for dt in dts) or any(a <= b for a, b in zip(dts, dts[1:])):
        raise ConfigError("dt_list", f"must be positive and strictly decreasing: {dts}")
    return dts


def _noise(values: Mapping[str, str]) -> NoiseSpec:
    kind = values["noise"].strip()
    try:
        if kind == "none":
            return NoNoise()
        if kind == "ou":
            return OUNoise(OUParams(_float(values, "alpha"), _float(values, "sigma")))
        if kind == "linear":
            return LinearDrift(_float(values, "alpha"), _float(values, "sigma"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("noise", str(exc)) from exc
    raise ConfigError("noise", f"{kind!r} is not one of none, ou, linear")


@dataclass(frozen=True)
class ScenarioConfig:  # pylint: disable=too-many-instance-attributes
    """Everything a command needs to produce its output."""

    model: ModelParams
    noise: NoiseSpec
    route: Route
    grid: TimeGrid
    seed: int = 0
    n_paths: int = 100
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    refine_factor: int = 1
    margin: Optional[float] = None
    workers: int = 1
    dt_list: tuple[float, ...] = DEFAULT_DT_LIST
    n_seeds: int = 20

    def __post_init__(self) -> None:
        """Check that the route can use the noise."""
        if self.route is Route.GRAY and not isinstance(self.noise, OUNoise):
            raise ConfigError("route", "gray needs ou noise (only its sigma is used)")
        if self.n_paths < 1:
            raise ConfigError("paths", f"must be >= 1, got {self.n_paths}")
        if self.refine_factor < 1:
            raise ConfigError("refine_factor", f"must be >= 1, got {self.refine_factor}")
        if self.workers < 1:
            raise ConfigError("workers", f"must be >= 1, got {self.workers}")
        if self.n_seeds < 1:
            raise ConfigError("seeds", f"must be >= 1, got {self.n_seeds}")
        if self.margin is not None and not 0 < self.margin < self.model.N / 2:
            raise ConfigError("margin", f"must be in (0, N/2), got {self.margin}")

    @classmethod
    def from_values(cls, values: Mapping[str, str]) -> ScenarioConfig:
        """Build a scenario from string settings, filling gaps from DEFAULTS."""
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(unknown[0], "unknown setting")
        merged = {**DEFAULTS, **values}
        try:
            model = ModelParams(
                N=_float(merged, "N"),
                i0=_float(merged, "i0"),
                beta=_float(merged, "beta"),
                gamma_mu=_float(merged, "gamma_mu"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("model", str(exc)) from exc
        try:
            grid = TimeGrid.from_dt(_float(merged, "t_end"), _float(merged, "dt"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("dt", str(exc)) from exc
        classifier = ClassifierConfig(
            eps_extinct=_optional_float(merged, "eps_extinct"),
            window_fraction=_float(merged, "window_fraction"),
            min_crossings=_int(merged, "min_crossings"),
            hysteresis=_float(merged, "hysteresis"),
        )
        return cls(
            model=model,
            noise=_noise(merged),
            route=_enum(merged, "route", Route),
            grid=grid,
            seed=_int(merged, "seed"),
            n_paths=_int(merged, "paths"),
            classifier=classifier,
            refine_factor=_int(merged, "refine_factor"),
            margin=_optional_float(merged, "margin"),
            workers=_int(merged, "workers"),
            dt_list=_dt_list(merged),
            n_seeds=_int(merged, "seeds"),
        )

    def integrator_config(self) -> IntegratorConfig:
        """Integrator settings for this scenario's route."""
        scheme = Scheme.RK4 if self.route is Route.WONG_ZAKAI else Scheme.EULER_MARUYAMA
        return IntegratorConfig(scheme=scheme, margin=self.margin)

    def to_lines(self) -> list[str]:
        """The effective configuration as ``key=value`` lines."""
        noise = self.noise
        if isinstance(noise, GeneralDrift):
            raise ConfigError("noise", "a general drift has no file form")
        if isinstance(noise, OUNoise):
            noise_lines = ["noise=ou", f"alpha={noise.params.alpha!r}", f"sigma={noise.sigma!r}"]
        elif isinstance(noise, LinearDrift):
            noise_lines = ["noise=linear", f"alpha={noise.alpha!r}", f"sigma={noise.sigma!r}"]
        else:
            noise_lines = ["noise=none"]
        cls_cfg = self.classifier
        return [
            f"N={self.model.N!r}",
            f"i0={self.model.i0!r}",
            f"beta={self.model.beta!r}",
            f"gamma_mu={self.model.gamma_mu!r}",
            *noise_lines,
            f"route={self.route.value}",
            f"t_end={self.grid.t_end!r}",
            f"dt={self.grid.dt!r}",
            f"seed={self.seed}",
            f"paths={self.n_paths}",
            f"eps_extinct={cls_cfg.eps_for(self.model.N)!r}",
            f"window_fraction={cls_cfg.window_fraction!r}",
            f"min_crossings={cls_cfg.min_crossings}",
            f"hysteresis={cls_cfg.hysteresis!r}",
            f"refine_factor={self.refine_factor}",
            f"margin={IntegratorConfig(margin=self.margin).margin_for(self.model.N)!r}",
            f"workers={self.workers}",
            "dt_list=" + ",".join(repr(dt) for dt in self.dt_list),
            f"seeds={self.n_seeds}",
        ]


def parse_config_text(lines: list[str]) -> dict[str, str]:
    """Read ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def parse_file(filename: str) -> dict[str, str]:
    """Read a scenario file."""
    try:
        with open(filename) as f:
            return parse_config_text(f.readlines())
    except OSError as exc:
        raise ConfigError("config", f"can't read {filename}: {exc}") from exc


def parse_override(text: str) -> tuple[str, str]:
    """Split a ``--set key=value`` argument."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError("set", f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


@dataclass(frozen=True)
class OutputSpec:
    """Where a command writes, and what."""

    out_path: Path
    format: OutputFormat = OutputFormat.CSV
    include_noise_column: bool = False

    def prepare(self) -> Path:
        """Create the parent directory if needed and return the output path."""
        self.out_path.parent.mkdir(parents=True, exist_ok=True)
        return self.out_path

    def sibling(self, suffix: str) -> Path:
        """Path next to the output, e.g. ``run.csv`` -> ``run.csv.cfg``."""
        return self.out_path.with_name(self.out_path.name + suffix)
