"""Closed-form solutions of the SIS model, deterministic and perturbed.

The perturbed solution is evaluated entirely in log space. With N = 200 the
exponent N*Y_t easily reaches a few hundred, which overflows a naive evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import expit

from sis_tools.numbers import require_finite, require_open_interval
from sis_tools.paths import FloatArray, PathKind, SamplePath, TimeGrid

# below this |nu|*t the growth integral (e^{nu t} - 1)/nu switches to its series
_SERIES_SWITCH = 1e-8
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ModelParams:
    """Parameters of dI/dt = beta*I*(N - I) - (gamma + mu)*I."""

    N: float  # pylint: disable=invalid-name
    i0: float
    beta: float
    gamma_mu: float

    def __post_init__(self) -> None:
        """Validate, and make sure both forms of the threshold agree."""
        for name in ("N", "i0", "beta", "gamma_mu"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value}")
        require_open_interval("i0", self.i0, 0.0, self.N)
        # R0 <= 1 and nu <= 0 are the same statement; they can only disagree by
        # rounding when nu is a few ulps away from 0
        tie = abs(self.nu) <= 4 * np.finfo(np.float64).eps * self.beta * self.N
        assert tie or ((self.r0d <= 1) == (self.nu <= 0)), f"threshold mismatch {self}"

    @classmethod
    def from_r0(cls, N: float, i0: float, beta: float, r0d: float) -> ModelParams:
        """Pick gamma+mu so that beta*N/(gamma+mu) = r0d."""
        # pylint: disable=invalid-name
        return cls(N=N, i0=i0, beta=beta, gamma_mu=beta * N / r0d)

    @cached_property
    def nu(self) -> float:
        """beta*N - (gamma + mu)."""
        return self.beta * self.N - self.gamma_mu

    @cached_property
    def r0d(self) -> float:
        """Deterministic basic reproduction number beta*N/(gamma + mu)."""
        return self.beta * self.N / self.gamma_mu


@dataclass(frozen=True)
class EquilibriumInfo:
    """The endemic level x*, present only when nu > 0."""

    x_star: Optional[float]

    @property
    def endemic(self) -> bool:
        """Is there an endemic equilibrium?"""
        return self.x_star is not None


def _growth_integral(nu: float, t: float) -> float:
    """Integral of e^{nu s} over [0, t], i.e. (e^{nu t} - 1)/nu, t at nu = 0."""
    x = nu * t
    if abs(x) < _SERIES_SWITCH:
        return t * (1.0 + x / 2.0)
    return math.expm1(x) / nu


def deterministic_infected(params: ModelParams, t: float) -> float:
    """Explicit solution I(t) of the deterministic model."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    nu = params.nu
    x = nu * t
    if nu > 0 and x >= _SERIES_SWITCH:
        # divide through by e^{nu t} so nothing overflows
        out = params.i0 / (
            math.exp(-x) + params.beta * params.i0 * -math.expm1(-x) / nu
        )
    else:
        out = (
            params.i0
            * math.exp(x)
            / (1.0 + params.beta * params.i0 * _growth_integral(nu, t))
        )
    return min(max(out, _TINY), math.nextafter(params.N, 0.0))


def deterministic_path(params: ModelParams, grid: TimeGrid) -> SamplePath:
    """Deterministic solution at every grid node."""
    values = [deterministic_infected(params, t) for t in grid.times.tolist()]
    return SamplePath(grid, np.array(values), PathKind.INFECTED)


def deterministic_limit(params: ModelParams) -> float:
    """Long-run limit of I(t): 0 if R0 <= 1, else N*(1 - 1/R0)."""
    info = equilibrium(params)
    return 0.0 if info.x_star is None else info.x_star


def _log_integral(params: ModelParams, noise_path: SamplePath) -> tuple[FloatArray, FloatArray]:
    """Exponent L_k = nu*t_k + N*Y_k and ln J_k with J_k = trapezoid of e^L on [0, t_k]."""
    if noise_path.kind not in (PathKind.OU, PathKind.GENERAL_Z):
        raise ValueError(f"need an ou or general_z noise path, got {noise_path.kind.value}")
    require_finite("noise path", noise_path.values)
    exponent = params.nu * noise_path.times + params.N * noise_path.values
    log_terms = math.log(noise_path.grid.dt / 2.0) + np.logaddexp(
        exponent[:-1], exponent[1:]
    )
    log_j = np.empty_like(exponent)
    log_j[0] = -np.inf
    # running log-sum-exp, one update per trapezoid
    np.logaddexp.accumulate(log_terms, out=log_j[1:])
    return exponent, log_j


def perturbed_log_odds(params: ModelParams, noise_path: SamplePath) -> FloatArray:
    """G(I_t) = ln(I_t/(N - I_t)) of the perturbed solution at every node."""
    exponent, log_j = _log_integral(params, noise_path)
    rest = np.logaddexp(
        math.log(params.N - params.i0),
        math.log(params.i0 * params.gamma_mu) + log_j,
    )
    out: FloatArray = math.log(params.i0) + exponent - rest
    return out


def perturbed_infected_path(params: ModelParams, noise_path: SamplePath) -> SamplePath:
    """Perturbed solution driven by an OU path (or a general Z path)."""
    exponent, log_j = _log_integral(params, noise_path)
    log_i0 = math.log(params.i0)
    log_den = np.logaddexp(
        np.logaddexp(math.log(params.N - params.i0), log_i0 + exponent),
        math.log(params.i0 * params.gamma_mu) + log_j,
    )
    log_infected = math.log(params.N) + log_i0 + exponent - log_den
    values = np.clip(np.exp(log_infected), _TINY, math.nextafter(params.N, 0.0))
    values[0] = params.i0
    return SamplePath(noise_path.grid, values, PathKind.INFECTED)


def f_of_x(params: ModelParams, x: float) -> float:
    """f(x) = nu - (gamma + mu)*x/(N - x), decreasing on (0, N)."""
    require_open_interval("x", x, 0.0, params.N)
    return params.nu - params.gamma_mu * x / (params.N - x)


def equilibrium(params: ModelParams) -> EquilibriumInfo:
    """Unique root of f in (0, N), if nu > 0."""
    if params.nu <= 0:
        return EquilibriumInfo(None)
    return EquilibriumInfo(params.N * params.nu / (params.nu + params.gamma_mu))


def g_transform(params: ModelParams, x: float) -> float:
    """Log-odds G(x) = ln(x/(N - x))."""
    require_open_interval("x", x, 0.0, params.N)
    return math.log(x) - math.log(params.N - x)


def g_inverse(params: ModelParams, y: float) -> float:
    """N/(1 + e^{-y}), via a stable sigmoid."""
    return float(params.N * expit(y))
