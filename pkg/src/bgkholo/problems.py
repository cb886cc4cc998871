"""Benchmark problems: Sod shock tube, sudden wall heating, smooth periodic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (DistributionField, MomentField, fluid_from_moments,
                     maxwellian_field, moments_from_fluid, moments_of)
from .phase_space import (ConfigurationError, PhaseSpace, SpatialMesh, VelocityGrid,
                          build_spatial_mesh, build_velocity_grid)
from .solvers import FState, MMState
from .transport import BoundarySpec


@dataclass
class ProblemSpec:
    name: str
    domain: tuple[float, float]
    v_max: float
    nu: float
    dt: float
    n_v: int
    final_time: float
    regions: list                      # [((xl, xr), count), ...]
    kappa: int = 2
    time_order: int = 1
    tol: float = 1e-8
    bc: BoundarySpec = field(default_factory=BoundarySpec)
    initial_moments: object = None     # callable x -> (3, ...) moment arrays

    def build_mesh(self) -> SpatialMesh:
        a, b = self.domain
        return build_spatial_mesh(a, b, self.regions, self.kappa)

    def build_grid(self) -> VelocityGrid:
        return build_velocity_grid(self.v_max, self.n_v)

    def build_space(self) -> PhaseSpace:
        return PhaseSpace(self.build_mesh(), self.build_grid())


SOD_LEFT = (1.0, 0.0, 1.0)
SOD_RIGHT = (0.125, 0.0, 0.8)


def sod_initial(x):
    """Fluid variables of the shock-tube initial data; left state on x <= 0."""
    x = np.asarray(x, dtype=float)
    left = x <= 0.0
    n = np.where(left, SOD_LEFT[0], SOD_RIGHT[0])
    u = np.zeros_like(n)
    theta = np.where(left, SOD_LEFT[2], SOD_RIGHT[2])
    return n, u, theta


def _sod_moments(x):
    return moments_from_fluid(*sod_initial(x))


def sod_spec(n_x: int = 256, n_v: int = 32, dt: float = 3.125e-3, nu: float = 160.0,
             time_order: int = 1, tol: float = 1e-8, final_time: float = 0.1) -> ProblemSpec:
    return ProblemSpec(
        name="sod", domain=(-1.0, 1.0), v_max=6.0, nu=nu, dt=dt, n_v=n_v,
        final_time=final_time, regions=[((-1.0, 1.0), n_x)], time_order=time_order,
        tol=tol, bc=BoundarySpec(left="farfield", right="farfield"),
        initial_moments=_sod_moments)


WALL_MOMENTS = (1.0, 0.0, 1.0)          # wall Maxwellian moments (temperature 2)
WALL_INITIAL = (1.0, 0.0, 0.5)          # initial moments (temperature 1)


def wall_heating_spec(n_x1: int = 25, n_x2: int = 58, n_v: int = 32,
                      dt: float = 2.5e-2, time_order: int = 3, tol: float = 1e-6,
                      final_time: float = 1.0) -> ProblemSpec:
    def init(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array(WALL_INITIAL).reshape((3,) + (1,) * x.ndim),
                               (3,) + x.shape).copy()

    return ProblemSpec(
        name="wall_heating", domain=(0.0, 6.0), v_max=8.0, nu=128.0, dt=dt, n_v=n_v,
        final_time=final_time,
        regions=[((0.0, 0.25), n_x1), ((0.25, 6.0), n_x2)], time_order=time_order,
        tol=tol,
        bc=BoundarySpec(left="wall", right="farfield",
                        left_data=np.array(WALL_MOMENTS)),
        initial_moments=init)


def smooth_periodic_spec(n_x: int = 16, n_v: int = 16, nu: float = 1.0,
                         dt: float = 0.05, time_order: int = 3, tol: float = 1e-8,
                         final_time: float = 0.4, amplitude: float = 0.1) -> ProblemSpec:
    """Smooth Maxwellian perturbation on a periodic domain; used for order studies."""
    def init(x):
        x = np.asarray(x, dtype=float)
        n = 1.0 + amplitude * np.sin(np.pi * x)
        u = 0.5 * amplitude * np.cos(np.pi * x)
        theta = 1.0 + 0.5 * amplitude * np.sin(np.pi * x + 0.3)
        return moments_from_fluid(n, u, theta)

    return ProblemSpec(
        name="smooth_periodic", domain=(-1.0, 1.0), v_max=6.0, nu=nu, dt=dt, n_v=n_v,
        final_time=final_time, regions=[((-1.0, 1.0), n_x)], time_order=time_order,
        tol=tol, bc=BoundarySpec(left="periodic", right="periodic"),
        initial_moments=init)


def mean_free_scales(nu: float) -> tuple[float, float]:
    """Mean free path and time for the wall-heating normalization."""
    return math.sqrt(8.0) / (math.sqrt(math.pi) * nu), 2.0 / (math.sqrt(math.pi) * nu)


def dt_expl(spec: ProblemSpec) -> float:
    """Largest stable explicit timestep h_min / ((2 kappa + 1) v_max)."""
    mesh = spec.build_mesh()
    h = float(np.min(mesh.widths))
    return h / ((2 * spec.kappa + 1) * spec.v_max)


def initial_kinetic_state(spec: ProblemSpec, ps: PhaseSpace) -> FState:
    """Projected Maxwellian of the initial fluid data."""
    f0 = maxwellian_field(spec.initial_moments, ps)
    return FState(f=f0)


def initial_mm_state(spec: ProblemSpec, ps: PhaseSpace) -> MMState:
    """Moments of the projected Maxwellian with zero micro part."""
    f0 = maxwellian_field(spec.initial_moments, ps)
    return MMState(rho=moments_of(f0), g=DistributionField(np.zeros_like(f0.coeffs), ps))
