"""Time-stepping routes for the perturbed SIS model.

Three integrators, all driven by a caller supplied Brownian path so that they
can be compared pathwise with the closed form:

- Euler-Maruyama on the coupled Ito system (OU or general Z noise),
- Euler-Maruyama on the Gray model dI = [beta I(N-I) - (gamma+mu) I]dt + sigma I(N-I)dB,
- classical RK4 on the Wong-Zakai random ODEs driven by a polygonal Brownian path,
  for OU or general Z noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import sympy as sp

from sis_tools.closedform import ModelParams
from sis_tools.errors import NonFiniteError
from sis_tools.numbers import require_open_interval
from sis_tools.paths import (
    DriftFn,
    GeneralDrift,
    NoiseSpec,
    OUNoise,
    OUParams,
    PathKind,
    SamplePath,
    gen_ou_on_increments,
    noise_drift,
    noise_path,
    polygonal_refine,
)

logger = logging.getLogger(__name__)

_DEFAULT_MARGIN = 1e-12
# RK4 steps per segment of the polygonal path
RK4_STEPS_PER_SEGMENT = 8


class Scheme(Enum):
    """Time stepping scheme."""

    EULER_MARUYAMA = "euler_maruyama"
    RK4 = "rk4"


class BoundaryPolicy(Enum):
    """What happens to a step that leaves (0, N)."""

    PROJECT_WITH_MARGIN = "project_with_margin"


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings; ``margin=None`` means 1e-12*N."""

    scheme: Scheme = Scheme.EULER_MARUYAMA
    boundary_policy: BoundaryPolicy = BoundaryPolicy.PROJECT_WITH_MARGIN
    margin: Optional[float] = None

    def margin_for(self, N: float) -> float:  # pylint: disable=invalid-name
        """The projection margin for population N, checked to be in (0, N/2)."""
        margin = _DEFAULT_MARGIN * N if self.margin is None else self.margin
        require_open_interval("margin", margin, 0.0, N / 2)
        return margin


@dataclass(frozen=True)
class CoupledState:
    """The pair (I, Z) of infected count and perturbation."""

    i: float
    y: float


@dataclass(frozen=True, eq=False)
class IntegrationResult:
    """Output of an integrator: the infected path, the noise path and the
    number of raw steps that left (0, N) and were projected back."""

    infected: SamplePath
    noise: SamplePath
    violations: int


class _Projector:
    """Applies the boundary policy and counts what it had to fix."""

    def __init__(self, params: ModelParams, cfg: IntegratorConfig) -> None:
        if cfg.boundary_policy is not BoundaryPolicy.PROJECT_WITH_MARGIN:
            raise ValueError(f"unsupported boundary policy {cfg.boundary_policy}")
        self.n = params.N
        self.margin = cfg.margin_for(params.N)
        self.violations = 0

    def __call__(self, k: int, raw: float) -> float:
        if not math.isfinite(raw):
            raise NonFiniteError(f"infected count became {raw} at step {k}", index=k)
        if 0.0 < raw < self.n:
            return raw
        self.violations += 1
        fixed = self.margin if raw <= 0.0 else self.n - self.margin
        logger.debug("step %d: raw I=%r outside (0, %r), projected to %r", k, raw, self.n, fixed)
        return fixed


def ou_sis_drift(params: ModelParams, ou: OUParams, i: float, y: float) -> float:
    """Ito drift of the perturbed infected count under OU noise."""
    n = params.N
    return i * (n - i) * (
        params.nu / n - ou.alpha * y + ou.sigma**2 * (n - 2 * i) / 2
    ) - params.gamma_mu * i * i / n


def general_z_drift(params: ModelParams, sigma: float, i: float, b: float) -> float:
    """Ito drift of the perturbed infected count when the noise has drift value b."""
    n = params.N
    return (
        i * (n - i) * (params.nu / n + b + sigma**2 * n / 2 - sigma**2 * i)
        - params.gamma_mu * i * i / n
    )


def stratonovich_drift(params: ModelParams, ou: OUParams, i: float, y: float) -> float:
    """Drift of the same system read as a Stratonovich SDE."""
    return (
        params.beta * i * (params.N - i)
        - params.gamma_mu * i
        - ou.alpha * i * (params.N - i) * y
    )


def stratonovich_correction(params: ModelParams, sigma: float, i: float) -> float:
    """Ito minus Stratonovich drift: (sigma^2/2) i (N - i) (N - 2i)."""
    require_open_interval("i", i, 0.0, params.N)
    return sigma**2 / 2 * i * (params.N - i) * (params.N - 2 * i)


def symbolic_stratonovich_correction() -> sp.Expr:
    """(1/2) g dg/dx for the diffusion g(x) = sigma x (N - x), in sympy."""
    x, n, sigma = sp.symbols("x N sigma", positive=True)
    g = sigma * x * (n - x)
    return sp.factor(g * sp.diff(g, x) / 2)


def _diffusion(params: ModelParams, sigma: float, i: float) -> float:
    return sigma * i * (params.N - i)


def _check_brownian(brownian: SamplePath) -> None:
    if brownian.kind is not PathKind.BROWNIAN:
        raise ValueError(f"need a brownian path, got {brownian.kind.value}")


def _integrate_coupled(
    params: ModelParams,
    drift: DriftFn,
    sigma: float,
    noise: SamplePath,
    brownian: SamplePath,
    cfg: IntegratorConfig,
) -> IntegrationResult:
    """Euler-Maruyama for I given an already computed noise path Z."""
    noise.check_grid(brownian)
    if cfg.scheme is not Scheme.EULER_MARUYAMA:
        raise ValueError(f"Ito integration needs euler_maruyama, not {cfg.scheme.value}")
    project = _Projector(params, cfg)
    dt = brownian.grid.dt
    times = brownian.times.tolist()
    z_values = noise.values.tolist()
    out = [params.i0] * brownian.grid.n_nodes
    i = params.i0
    for k, d_b in enumerate(brownian.increments().tolist()):
        b = drift(times[k], z_values[k])
        raw = i + general_z_drift(params, sigma, i, b) * dt + _diffusion(params, sigma, i) * d_b
        i = project(k, raw)
        out[k + 1] = i
    infected = SamplePath(brownian.grid, np.array(out), PathKind.INFECTED)
    return IntegrationResult(infected, noise, project.violations)


def integrate_ou_sis(
    params: ModelParams,
    ou: OUParams,
    brownian: SamplePath,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> IntegrationResult:
    """Euler-Maruyama on the coupled (I, Y) system, one Brownian path driving both."""
    _check_brownian(brownian)
    y = gen_ou_on_increments(brownian.grid, ou, brownian)
    return _integrate_coupled(params, ou.drift, ou.sigma, y, brownian, cfg)


def integrate_general_z(
    params: ModelParams,
    spec: NoiseSpec,
    brownian: SamplePath,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> IntegrationResult:
    """Euler-Maruyama on the system perturbed by dZ = b(t, Z)dt + sigma dB."""
    _check_brownian(brownian)
    z = noise_path(brownian.grid, spec, brownian)
    return _integrate_coupled(params, noise_drift(spec), spec.sigma, z, brownian, cfg)


def integrate_gray(
    params: ModelParams,
    sigma: float,
    brownian: SamplePath,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> IntegrationResult:
    """Euler-Maruyama on the Gray model; the noise path is sigma*B."""
    _check_brownian(brownian)
    if not (math.isfinite(sigma) and sigma >= 0):
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    project = _Projector(params, cfg)
    dt = brownian.grid.dt
    n = params.N
    out = [params.i0] * brownian.grid.n_nodes
    i = params.i0
    for k, d_b in enumerate(brownian.increments().tolist()):
        drift = params.beta * i * (n - i) - params.gamma_mu * i
        i = project(k, i + drift * dt + sigma * i * (n - i) * d_b)
        out[k + 1] = i
    infected = SamplePath(brownian.grid, np.array(out), PathKind.INFECTED)
    return IntegrationResult(
        infected, brownian.scaled(sigma, PathKind.GENERAL_Z), project.violations
    )


def _wong_zakai_rhs(  # pylint: disable=too-many-arguments
    params: ModelParams,
    drift: DriftFn,
    sigma: float,
    t: float,
    slope: float,
    z: float,
    i: float,
) -> tuple[float, float]:
    """Right hand side of the smoothed system for a fixed Brownian slope.

    dZ/dt = b(t, Z) + sigma*slope and dI/dt = beta I(N-I) - (gamma+mu) I + I(N-I) dZ/dt.
    """
    dz = drift(t, z) + sigma * slope
    growth = i * (params.N - i)
    di = params.beta * growth - params.gamma_mu * i + growth * dz
    return dz, di


def integrate_wong_zakai(
    params: ModelParams,
    ou: OUParams,
    brownian: SamplePath,
    refine_factor: int = 1,
    cfg: IntegratorConfig = IntegratorConfig(scheme=Scheme.RK4),
) -> IntegrationResult:
    """RK4 on the random ODEs driven by the polygonal interpolation of ``brownian``.

    The polygonal path is cut into ``refine_factor`` segments per step of
    ``brownian`` and every segment gets RK4_STEPS_PER_SEGMENT RK4 steps. The
    returned infected (wz_smoothed) and OU paths live on the grid of ``brownian``.
    """
    return _integrate_smoothed(
        params, ou.drift, ou.sigma, brownian, refine_factor, cfg, PathKind.OU
    )


def integrate_wong_zakai_general(
    params: ModelParams,
    spec: NoiseSpec,
    brownian: SamplePath,
    refine_factor: int = 1,
    cfg: IntegratorConfig = IntegratorConfig(scheme=Scheme.RK4),
) -> IntegrationResult:
    """Wong-Zakai smoothing of the system perturbed by dZ = b(t, Z)dt + sigma dB."""
    kind = PathKind.OU if isinstance(spec, OUNoise) else PathKind.GENERAL_Z
    return _integrate_smoothed(
        params, noise_drift(spec), spec.sigma, brownian, refine_factor, cfg, kind
    )


def _integrate_smoothed(  # pylint: disable=too-many-arguments
    params: ModelParams,
    drift: DriftFn,
    sigma: float,
    brownian: SamplePath,
    refine_factor: int,
    cfg: IntegratorConfig,
    noise_kind: PathKind,
) -> IntegrationResult:
    _check_brownian(brownian)
    if refine_factor < 1:
        raise ValueError(f"refine_factor must be >= 1, got {refine_factor}")
    if cfg.scheme is not Scheme.RK4:
        raise ValueError(f"Wong-Zakai integration needs rk4, not {cfg.scheme.value}")
    fine = brownian if refine_factor == 1 else polygonal_refine(brownian, refine_factor)
    project = _Projector(params, cfg)
    h = fine.grid.dt / RK4_STEPS_PER_SEGMENT
    per_node = refine_factor * RK4_STEPS_PER_SEGMENT
    # dB/dt of the polygonal path, constant on every segment
    slopes = (fine.increments() / fine.grid.dt).tolist()

    infected = [params.i0] * brownian.grid.n_nodes
    zs = [0.0] * brownian.grid.n_nodes
    state = CoupledState(params.i0, 0.0)
    j = 0
    for slope in slopes:
        for _ in range(RK4_STEPS_PER_SEGMENT):
            state = _rk4_step(params, drift, sigma, slope, j * h, h, state, j, project)
            j += 1
        if j % per_node == 0:
            k = j // per_node
            infected[k] = state.i
            zs[k] = state.y
    return IntegrationResult(
        SamplePath(brownian.grid, np.array(infected), PathKind.WZ_SMOOTHED),
        SamplePath(brownian.grid, np.array(zs), noise_kind),
        project.violations,
    )


def _rk4_step(  # pylint: disable=too-many-arguments
    params: ModelParams,
    drift: DriftFn,
    sigma: float,
    slope: float,
    t: float,
    h: float,
    state: CoupledState,
    j: int,
    project: _Projector,
) -> CoupledState:
    """One classical RK4 step of the smoothed system."""
    y, i = state.y, state.i

    def rhs(tt: float, z: float, x: float) -> tuple[float, float]:
        return _wong_zakai_rhs(params, drift, sigma, tt, slope, z, x)

    half = t + h / 2
    k1 = rhs(t, y, i)
    k2 = rhs(half, y + h / 2 * k1[0], i + h / 2 * k1[1])
    k3 = rhs(half, y + h / 2 * k2[0], i + h / 2 * k2[1])
    k4 = rhs(t + h, y + h * k3[0], i + h * k3[1])
    y_next = y + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    if not math.isfinite(y_next):
        raise NonFiniteError(f"Z became {y_next} at sub-step {j}", index=j)
    i_next = project(j, i + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
    return CoupledState(i_next, y_next)


def as_general_drift(ou: OUParams) -> GeneralDrift:
    """The OU perturbation written as a general drift b(t, z) = -alpha*z."""
    return GeneralDrift(ou.drift, ou.sigma)
