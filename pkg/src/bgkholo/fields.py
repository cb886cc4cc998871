"""Kinetic and moment state containers plus the fluid-variable bijection."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .phase_space import PhaseSpace, RealizabilityError


@dataclass
class DistributionField:
    """DG coefficients of a kinetic distribution on the trial space.

    coeffs has shape (n_x, kappa+1, n_v, 3); the velocity support is compact.
    """

    coeffs: np.ndarray
    space: PhaseSpace

    def __post_init__(self):
        expected = (self.space.mesh.n_cells, self.space.mesh.n_modes,
                    self.space.grid.n_cells, 3)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} != {expected}")

    def copy(self) -> "DistributionField":
        return DistributionField(self.coeffs.copy(), self.space)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other):
        return DistributionField(self.coeffs + other.coeffs, self.space)

    def __sub__(self, other):
        return DistributionField(self.coeffs - other.coeffs, self.space)

    def __mul__(self, a: float):
        return DistributionField(self.coeffs * a, self.space)

    __rmul__ = __mul__

    def as_matrix(self) -> np.ndarray:
        return self.space.layout.as_matrix(self.coeffs)

    def eval(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Point values f(x, v) for broadcastable x, v arrays."""
        mesh, ps = self.space.mesh, self.space
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        x, v = np.broadcast_arrays(x, v)
        i = np.clip(np.searchsorted(mesh.edges, x, side="right") - 1, 0, mesh.n_cells - 1)
        xi = 2.0 * (x - mesh.centers[i]) / mesh.widths[i]
        from .phase_space import legendre_vals
        bx = legendre_vals(mesh.kappa, xi.ravel()).reshape((mesh.n_modes,) + x.shape)
        bx = bx * ps.s_x[i]
        j, bv = ps.basis_at(v)
        c = self.coeffs[i, :, j, :]          # (..., px, 3)
        return np.einsum('...pm,p...,m...->...', c, bx, bv)


@dataclass
class MomentField:
    """Mass/momentum/energy densities as DG coefficients; shape (3, n_x, kappa+1)."""

    coeffs: np.ndarray
    space: PhaseSpace

    def __post_init__(self):
        expected = (3, self.space.mesh.n_cells, self.space.mesh.n_modes)
        if self.coeffs.shape != expected:
            raise ValueError(f"moment coefficient shape {self.coeffs.shape} != {expected}")

    def copy(self) -> "MomentField":
        return MomentField(self.coeffs.copy(), self.space)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other):
        return MomentField(self.coeffs + other.coeffs, self.space)

    def __sub__(self, other):
        return MomentField(self.coeffs - other.coeffs, self.space)

    def __mul__(self, a: float):
        return MomentField(self.coeffs * a, self.space)

    __rmul__ = __mul__

    def at_quad(self) -> np.ndarray:
        """Values at the interior quadrature nodes; shape (3, n_x, nq)."""
        ps = self.space
        return np.einsum('dip,pq->diq', self.coeffs, ps.Bx) * ps.s_x[None, :, None]

    def trace(self, cell: int, side: str) -> np.ndarray:
        """One-sided value of (rho0, rho1, rho2) at a cell edge, from inside the cell."""
        ps = self.space
        t = ps.tR if side == "right" else ps.tL
        return self.coeffs[:, cell, :] @ t * ps.s_x[cell]

    def left_traces(self) -> np.ndarray:
        """Values at the left edge of every cell, from inside; (3, n_x)."""
        ps = self.space
        return np.einsum('dip,p->di', self.coeffs, ps.tL) * ps.s_x[None, :]

    def right_traces(self) -> np.ndarray:
        ps = self.space
        return np.einsum('dip,p->di', self.coeffs, ps.tR) * ps.s_x[None, :]


@dataclass(frozen=True)
class FluidState:
    """Pointwise fluid variables (n, u, theta) with n > 0 and theta > 0."""

    n: float
    u: float
    theta: float

    def __post_init__(self):
        if self.n <= 0 or self.theta <= 0:
            raise RealizabilityError(f"non-realizable fluid state (n={self.n}, theta={self.theta})")

    def astuple(self):
        return (self.n, self.u, self.theta)


def fluid_from_moments(rho, where: str = "") -> tuple:
    """Map (rho0, rho1, rho2) -> (n, u, theta); raises on non-realizable input.

    Accepts arrays (rho stacked along the first axis) or a single 3-vector.
    """
    rho = np.asarray(rho, dtype=float)
    r0, r1, r2 = rho[0], rho[1], rho[2]
    bad = (r0 <= 0) | (2.0 * r2 * r0 - r1 ** 2 <= 0)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise RealizabilityError(
            f"non-realizable moments at {where or 'evaluation point'} index {tuple(idx)}: "
            f"rho0 must be > 0 and 2*rho2*rho0 - rho1^2 > 0")
    n = r0
    u = r1 / r0
    theta = (2.0 * r2 - r1 ** 2 / r0) / r0
    return n, u, theta


def moments_from_fluid(n, u, theta) -> np.ndarray:
    """Inverse of fluid_from_moments; stacks (n, nu, n(u^2+theta)/2) on axis 0."""
    n = np.asarray(n, dtype=float)
    return np.stack([n, n * u, 0.5 * n * (np.asarray(u) ** 2 + theta)])


def moments_of(f: DistributionField) -> MomentField:
    """Velocity moments against e = (1, v, v^2/2); exact for trial-space fields."""
    coeffs = np.einsum('ipjm,djm->dip', f.coeffs, f.space.Ev)
    return MomentField(coeffs=coeffs, space=f.space)


def maxwellian_dual(rho: MomentField, where: str = "Maxwellian source") -> np.ndarray:
    """(M(rho), z) for every test basis function z; shape (n_x, px, n_v, 3).

    The velocity integrals use the closed-form partial moments (end test cells
    run to +-infinity); the x integral uses the cell quadrature rule.
    """
    ps = rho.space
    vals = rho.at_quad()                                   # (3, n_x, nq)
    n, u, theta = fluid_from_moments(vals, where=where)
    MI = ps.maxwellian_cell_integrals(n, u, theta)         # (n_x, nq, n_v, 3)
    return np.einsum('iqjm,pq,iq->ipjm', MI, ps.Bx, ps.w_quad) * ps.s_x[:, None, None, None]


def maxwellian_moments_against_basis(rho: MomentField, weight: str = "1") -> np.ndarray:
    """Per-test-cell integrals int weight * M(rho(x)) * phi_m(v) dv at quadrature nodes.

    weight is one of '1', 'v', '|v|', 'v2'; returns shape (n_x, nq, n_v, 3).
    """
    ps = rho.space
    n, u, theta = fluid_from_moments(rho.at_quad(), where="moment weights")
    if weight == "1":
        return ps.maxwellian_cell_integrals(n, u, theta, v_power=0)
    if weight == "v":
        return ps.maxwellian_cell_integrals(n, u, theta, v_power=1)
    if weight == "|v|":
        out = ps.maxwellian_cell_integrals(n, u, theta, v_power=1)
        return out * ps.grid.signs[None, None, :, None]
    if weight == "v2":
        return ps.maxwellian_cell_integrals(n, u, theta, v_power=2)
    raise ValueError(f"unsupported weight {weight!r}")


def contract_e(dual: np.ndarray, ps: PhaseSpace) -> np.ndarray:
    """Evaluate a kinetic dual vector on z = e . q for all moment test modes.

    Input shape (n_x, px, n_v, 3); output (3, n_x, px).  Uses the polynomial
    identity expansion of (1, v, v^2/2) on every (extended) test cell.
    """
    return np.einsum('ipjm,djm->dip', dual, ps.Ev)


def weighted_l2_diff(rho_a: MomentField, rho_b: MomentField) -> float:
    """Relative L2(Omega_x) distance ||rho_a - rho_b|| / ||rho_a||."""
    denom = rho_a.norm()
    if denom == 0.0:
        raise ZeroDivisionError("weighted_l2_diff normalizer is zero")
    return float(np.linalg.norm(rho_a.coeffs - rho_b.coeffs)) / denom


def maxwellian_field(rho_init, ps: PhaseSpace, n_quad: int = 8) -> DistributionField:
    """Project M(rho_init(x)) onto the trial space; rho_init maps x -> 3 moments."""
    from .phase_space import project_function

    def fn(x, v):
        rho = rho_init(x)
        n, u, theta = fluid_from_moments(rho, where="initial data")
        return n / np.sqrt(2 * np.pi * theta) * np.exp(-(v - u) ** 2 / (2 * theta))

    return project_function(fn, ps.mesh, ps.grid, n_quad=n_quad)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_moments_csv(rho: MomentField, path) -> None:
    """CSV columns: x_cell, mode, rho0, rho1, rho2 at 17 significant digits."""
    c = rho.coeffs
    with open(path, "w") as fh:
        fh.write("x_cell,mode,rho0,rho1,rho2\n")
        for i in range(c.shape[1]):
            for p in range(c.shape[2]):
                fh.write(f"{i},{p},{c[0, i, p]:.17g},{c[1, i, p]:.17g},{c[2, i, p]:.17g}\n")


def load_moments_csv(path, ps: PhaseSpace) -> MomentField:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    coeffs = np.zeros((3, ps.mesh.n_cells, ps.mesh.n_modes))
    for row in data:
        i, p = int(row[0]), int(row[1])
        coeffs[:, i, p] = row[2:5]
    return MomentField(coeffs=coeffs, space=ps)


def save_distribution(f: DistributionField, path) -> None:
    """Flat float64 coefficient rows with a JSON sidecar header (path + '.json')."""
    layout = f.space.layout
    header = {
        "dof_x": layout.dof_x, "dof_v": layout.dof_v,
        "n_x": layout.n_x, "n_modes_x": layout.n_modes_x,
        "n_v": layout.n_v, "n_modes_v": layout.n_modes_v,
        "order": "x_cell-major rows, velocity-cell-major columns",
        "dtype": "float64",
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    f.as_matrix().astype("<f8").tofile(path)


def load_distribution(path, ps: PhaseSpace) -> DistributionField:
    with open(str(path) + ".json") as fh:
        header = json.load(fh)
    layout = ps.layout
    if (header["dof_x"], header["dof_v"]) != (layout.dof_x, layout.dof_v):
        raise ValueError("stored layout does not match the provided phase space")
    mat = np.fromfile(path, dtype="<f8").reshape(layout.dof_x, layout.dof_v)
    coeffs = mat.reshape(layout.n_x, layout.n_modes_x, layout.n_v, layout.n_modes_v)
    return DistributionField(coeffs=coeffs.copy(), space=ps)
