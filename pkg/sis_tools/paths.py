"""Brownian, Ornstein-Uhlenbeck and general perturbation paths on a time grid.

Every path is a pure function of (grid, parameters, seed, stream index).
Streams: path ``index`` of an experiment seeded with ``seed`` draws from
``Philox(SeedSequence(entropy=seed mod 2**64, spawn_key=(index,)))``.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Union

import numpy as np
import numpy.typing as npt
from scipy.integrate import trapezoid
from scipy.signal import lfilter
from typing_extensions import Self, assert_never

from sis_tools.errors import GridMismatchError, NonFiniteError
from sis_tools.numbers import require_finite

FloatArray = npt.NDArray[np.float64]
DriftFn = Callable[[float, float], float]

_SEED_MODULUS = 2**64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps steps."""

    t_end: float
    n_steps: int

    def __post_init__(self) -> None:
        """Check the grid makes sense."""
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end}")
        if isinstance(self.n_steps, bool) or not isinstance(self.n_steps, numbers.Integral):
            raise ValueError(f"n_steps must be an integer, got {self.n_steps}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps}")

    @classmethod
    def from_dt(cls, t_end: float, dt: float) -> Self:
        """Create a grid from a step size; t_end/dt must be (close to) an integer."""
        if not (math.isfinite(dt) and dt > 0):
            raise ValueError(f"dt must be positive and finite, got {dt}")
        ratio = t_end / dt
        n_steps = round(ratio)
        if n_steps < 1 or not math.isclose(ratio, n_steps, rel_tol=1e-9):
            raise ValueError(f"t_end={t_end} is not a whole number of dt={dt} steps")
        return cls(t_end, n_steps)

    @property
    def dt(self) -> float:
        """Step size."""
        return self.t_end / self.n_steps

    @property
    def n_nodes(self) -> int:
        """Number of grid nodes (one more than the number of steps)."""
        return self.n_steps + 1

    def time(self, k: int) -> float:
        """Time of node k, computed as k*t_end/n_steps so nothing accumulates."""
        if k == self.n_steps:
            return self.t_end
        return k * self.t_end / self.n_steps

    @cached_property
    def times(self) -> FloatArray:
        """All node times."""
        out = np.arange(self.n_nodes, dtype=np.float64) * self.t_end / self.n_steps
        out[-1] = self.t_end
        out.setflags(write=False)
        return out

    def refine(self, factor: int) -> TimeGrid:
        """Same horizon, ``factor`` times as many steps."""
        return TimeGrid(self.t_end, self.n_steps * factor)

    def coarsen(self, factor: int) -> TimeGrid:
        """Same horizon, ``factor`` times fewer steps."""
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} steps can't be coarsened by {factor}")
        return TimeGrid(self.t_end, self.n_steps // factor)


class PathKind(Enum):
    """What a SamplePath holds."""

    BROWNIAN = "brownian"
    OU = "ou"
    GENERAL_Z = "general_z"
    INFECTED = "infected"
    WZ_SMOOTHED = "wz_smoothed"

    @property
    def starts_at_zero(self) -> bool:
        """Noise paths start at 0."""
        return self in (PathKind.BROWNIAN, PathKind.OU, PathKind.GENERAL_Z)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One realization of a process, one value per grid node."""

    grid: TimeGrid
    values: FloatArray
    kind: PathKind

    def __post_init__(self) -> None:
        """Freeze the values and check the length and the start."""
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"{self.kind.value} path has {values.size} values, grid has"
                f" {self.grid.n_nodes} nodes"
            )
        if self.kind.starts_at_zero and values[0] != 0.0:
            raise ValueError(f"{self.kind.value} path must start at 0, got {values[0]}")
        values.setflags(write=False)
        # frozen dataclass, so go around __setattr__
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> FloatArray:
        """Node times."""
        return self.grid.times

    @property
    def terminal(self) -> float:
        """Value at t_end."""
        return float(self.values[-1])

    def increments(self) -> FloatArray:
        """Differences between consecutive nodes."""
        return np.diff(self.values)

    def subsample(self, factor: int) -> SamplePath:
        """Keep every ``factor``-th node."""
        return SamplePath(self.grid.coarsen(factor), self.values[::factor], self.kind)

    def scaled(self, c: float, kind: PathKind) -> SamplePath:
        """Multiply every value by c."""
        return SamplePath(self.grid, c * self.values, kind)

    def check_grid(self, other: SamplePath) -> None:
        """Raise GridMismatchError unless both paths are on the same grid."""
        if self.grid != other.grid:
            raise GridMismatchError(
                f"{self.kind.value} path grid {self.grid} does not match"
                f" {other.kind.value} path grid {other.grid}"
            )


@dataclass(frozen=True)
class OUParams:
    """Mean reversion rate and noise intensity of dY = -alpha*Y dt + sigma dB."""

    alpha: float
    sigma: float

    def __post_init__(self) -> None:
        """Sigma can't be negative; both must be finite."""
        if not (math.isfinite(self.alpha) and math.isfinite(self.sigma)):
            raise ValueError(f"alpha and sigma must be finite, got {self}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def drift(self, t: float, y: float) -> float:  # pylint: disable=unused-argument
        """Mean-reverting drift -alpha*y."""
        return -self.alpha * y

    def stationary_variance(self) -> float:
        """sigma^2/(2 alpha), the long-run variance."""
        if self.alpha <= 0:
            raise ValueError(f"no stationary variance for alpha={self.alpha}")
        return self.sigma**2 / (2 * self.alpha)

    def variance_at(self, t: float) -> float:
        """Variance of Y_t started from Y_0 = 0."""
        if self.alpha == 0:
            return self.sigma**2 * t
        return self.sigma**2 * -math.expm1(-2 * self.alpha * t) / (2 * self.alpha)


@dataclass(frozen=True)
class NoNoise:
    """No perturbation at all."""

    sigma: float = 0.0


@dataclass(frozen=True)
class OUNoise:
    """Perturbation by an Ornstein-Uhlenbeck process."""

    params: OUParams

    def __post_init__(self) -> None:
        """The OU perturbation needs alpha > 0 and sigma > 0."""
        if self.params.alpha <= 0 or self.params.sigma <= 0:
            raise ValueError(
                f"OU noise needs alpha > 0 and sigma > 0, got {self.params}"
            )

    @property
    def sigma(self) -> float:
        """Noise intensity."""
        return self.params.sigma


@dataclass(frozen=True)
class LinearDrift:
    """Z_t = alpha*t + sigma*B_t."""

    alpha: float
    sigma: float

    def __post_init__(self) -> None:
        """Sigma can't be negative."""
        if not (math.isfinite(self.alpha) and math.isfinite(self.sigma)):
            raise ValueError(f"alpha and sigma must be finite, got {self}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def drift(self, t: float, z: float) -> float:  # pylint: disable=unused-argument
        """Constant drift alpha."""
        return self.alpha


@dataclass(frozen=True)
class GeneralDrift:
    """dZ = b(t, Z) dt + sigma dB with a user supplied drift b."""

    drift: DriftFn
    sigma: float

    def __post_init__(self) -> None:
        """Sigma can't be negative."""
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")


NoiseSpec = Union[NoNoise, OUNoise, LinearDrift, GeneralDrift]


def noise_drift(spec: NoiseSpec) -> DriftFn:
    """Drift b(t, z) of the noise driving the log-odds (0 for no noise)."""
    if isinstance(spec, NoNoise):
        return lambda t, z: 0.0
    if isinstance(spec, OUNoise):
        return spec.params.drift
    if isinstance(spec, (LinearDrift, GeneralDrift)):
        return spec.drift
    assert_never(spec)


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for path ``index`` under ``seed``."""
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    seq = np.random.SeedSequence(entropy=seed % _SEED_MODULUS, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def gen_brownian(grid: TimeGrid, seed: int, index: int = 0) -> SamplePath:
    """Standard Brownian motion sampled on the grid."""
    rng = stream(seed, index)
    steps = rng.standard_normal(grid.n_steps) * math.sqrt(grid.dt)
    values = np.empty(grid.n_nodes, dtype=np.float64)
    values[0] = 0.0
    np.cumsum(steps, out=values[1:])
    return SamplePath(grid, values, PathKind.BROWNIAN)


def _euler_noise(
    grid: TimeGrid, drift: DriftFn, sigma: float, brownian: SamplePath, kind: PathKind
) -> SamplePath:
    """Z_{k+1} = Z_k + b(t_k, Z_k)*dt + sigma*dB_k with Z_0 = 0.

    Every noise path that is integrated rather than written down goes through
    here, so OU paths and general-drift paths with b = -alpha*z agree bit for bit.
    """
    if brownian.grid != grid:
        raise GridMismatchError(f"brownian grid {brownian.grid} is not {grid}")
    dt = grid.dt
    times = grid.times.tolist()
    out = [0.0] * grid.n_nodes
    z = 0.0
    for k, d_b in enumerate(brownian.increments().tolist()):
        b = drift(times[k], z)
        if not math.isfinite(b):
            raise NonFiniteError(f"drift b(t, z) is {b} at node {k}", index=k)
        z = z + b * dt + sigma * d_b
        out[k + 1] = z
    return SamplePath(grid, np.array(out), kind)


def gen_ou_on_increments(
    grid: TimeGrid, params: OUParams, brownian: SamplePath
) -> SamplePath:
    """OU path by Euler-Maruyama on the increments of ``brownian``."""
    return _euler_noise(grid, params.drift, params.sigma, brownian, PathKind.OU)


def ou_transition(params: OUParams, dt: float) -> tuple[float, float]:
    """Exact one-step OU transition: (decay e^{-alpha dt}, innovation std)."""
    if params.alpha <= 0:
        raise ValueError(f"exact OU transition needs alpha > 0, got {params.alpha}")
    decay = math.exp(-params.alpha * dt)
    std = params.sigma * math.sqrt(-math.expm1(-2 * params.alpha * dt) / (2 * params.alpha))
    return decay, std


def gen_ou_exact(
    grid: TimeGrid, params: OUParams, seed: int, index: int = 0
) -> SamplePath:
    """OU path from the exact Gaussian transition (not tied to any Brownian path)."""
    decay, std = ou_transition(params, grid.dt)
    rng = stream(seed, index)
    xi = rng.standard_normal(grid.n_steps)
    values = np.zeros(grid.n_nodes, dtype=np.float64)
    # Y_{k+1} = decay*Y_k + std*xi_k is a first order recursive filter
    values[1:] = lfilter([std], [1.0, -decay], xi)
    return SamplePath(grid, values, PathKind.OU)


def gen_general_z(grid: TimeGrid, spec: NoiseSpec, brownian: SamplePath) -> SamplePath:
    """Z path for a linear-drift or general-drift perturbation."""
    if brownian.grid != grid:
        raise GridMismatchError(f"brownian grid {brownian.grid} is not {grid}")
    if isinstance(spec, LinearDrift):
        values = spec.alpha * grid.times + spec.sigma * brownian.values
        require_finite("linear drift Z", values)
        return SamplePath(grid, values, PathKind.GENERAL_Z)
    if isinstance(spec, GeneralDrift):
        return _euler_noise(grid, spec.drift, spec.sigma, brownian, PathKind.GENERAL_Z)
    raise ValueError(f"gen_general_z needs LinearDrift or GeneralDrift, not {spec}")


def noise_path(grid: TimeGrid, spec: NoiseSpec, brownian: SamplePath) -> SamplePath:
    """The perturbation path for any NoiseSpec, driven by ``brownian``."""
    if isinstance(spec, NoNoise):
        return SamplePath(grid, np.zeros(grid.n_nodes), PathKind.GENERAL_Z)
    if isinstance(spec, OUNoise):
        return gen_ou_on_increments(grid, spec.params, brownian)
    if isinstance(spec, (LinearDrift, GeneralDrift)):
        return gen_general_z(grid, spec, brownian)
    assert_never(spec)


def polygonal_refine(path: SamplePath, factor: int) -> SamplePath:
    """Piecewise-linear interpolation onto a grid ``factor`` times finer."""
    if factor < 2:
        raise ValueError(f"refinement factor must be >= 2, got {factor}")
    v = path.values
    frac = np.arange(factor, dtype=np.float64) / factor
    inner = v[:-1, None] + np.diff(v)[:, None] * frac[None, :]
    values = np.append(inner.ravel(), v[-1])
    return SamplePath(path.grid.refine(factor), values, path.kind)


def time_average(path: SamplePath) -> float:
    """Trapezoidal (1/T) * integral of the path over [0, T]."""
    if path.values.size < 2:
        raise ValueError("time average needs at least two nodes")
    return float(trapezoid(path.values, path.times) / path.grid.t_end)
