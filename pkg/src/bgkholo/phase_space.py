"""Phase-space discretization: meshes, DG basis machinery, exact Gaussian moments.

The spatial mesh carries per-cell orthonormal Legendre modes of degree kappa.
The velocity grid always carries quadratic modes per cell; its trial space is
supported on [-v_max, v_max] while the test space extends the first and last
cells to -inf and +inf by polynomial extension.  All inner products against a
Maxwellian are evaluated with the closed-form partial-moment recurrence below,
never with truncated quadrature, so that moment identities hold to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import erf


class ConfigurationError(ValueError):
    """Invalid mesh/grid/solver configuration."""


class RealizabilityError(ValueError):
    """Moments do not correspond to a Maxwellian (n <= 0 or theta <= 0)."""


# ---------------------------------------------------------------------------
# reference Legendre basis, orthonormal on [-1, 1]
# ---------------------------------------------------------------------------

def legendre_vals(degree: int, xi: np.ndarray) -> np.ndarray:
    """Values of the orthonormal Legendre modes on [-1,1]; shape (degree+1, len(xi))."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty((degree + 1, xi.size))
    for m in range(degree + 1):
        c = np.zeros(m + 1)
        c[m] = 1.0
        out[m] = math.sqrt((2 * m + 1) / 2.0) * np.polynomial.legendre.legval(xi, c)
    return out


def legendre_derivs(degree: int, xi: np.ndarray) -> np.ndarray:
    """d/dxi of the orthonormal Legendre modes; shape (degree+1, len(xi))."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty((degree + 1, xi.size))
    for m in range(degree + 1):
        c = np.zeros(m + 1)
        c[m] = 1.0
        dc = np.polynomial.legendre.legder(c)
        out[m] = math.sqrt((2 * m + 1) / 2.0) * np.polynomial.legendre.legval(xi, dc)
    return out


def legendre_power_coeffs(degree: int) -> np.ndarray:
    """Monomial coefficients of the orthonormal modes: row m gives xi-powers 0..degree."""
    out = np.zeros((degree + 1, degree + 1))
    for m in range(degree + 1):
        c = np.zeros(m + 1)
        c[m] = 1.0
        p = np.polynomial.legendre.leg2poly(c)
        out[m, : m + 1] = math.sqrt((2 * m + 1) / 2.0) * p
    return out


@lru_cache(maxsize=32)
def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes/weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialMesh:
    """Partition of (a, b) into cells with degree-kappa DG modes per cell."""

    a: float
    b: float
    edges: np.ndarray
    kappa: int = 2

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise ConfigurationError("mesh needs at least one cell")
        if not (edges[0] == self.a and edges[-1] == self.b):
            raise ConfigurationError("cell boundaries must start at a and end at b")
        if np.any(np.diff(edges) <= 0):
            raise ConfigurationError("cell boundaries must be strictly increasing")
        if self.kappa < 0:
            raise ConfigurationError("polynomial degree must be >= 0")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_cells(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def n_modes(self) -> int:
        return self.kappa + 1


def build_spatial_mesh(a: float, b: float, regions, kappa: int = 2) -> SpatialMesh:
    """Piecewise-uniform mesh from ((xl, xr), n_cells) regions tiling (a, b)."""
    regions = sorted(regions, key=lambda r: r[0][0])
    edges = [float(a)]
    cursor = float(a)
    for (xl, xr), count in regions:
        if count < 1:
            raise ConfigurationError("region cell count must be >= 1")
        if not math.isclose(xl, cursor, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(b - a))):
            raise ConfigurationError(f"regions leave a gap or overlap at x={cursor}")
        if xr <= xl:
            raise ConfigurationError("region endpoints must be increasing")
        sub = np.linspace(xl, xr, count + 1)[1:]
        edges.extend(sub.tolist())
        cursor = float(xr)
    if not math.isclose(cursor, b, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(b - a))):
        raise ConfigurationError("regions do not tile (a, b)")
    edges[-1] = float(b)
    return SpatialMesh(a=float(a), b=float(b), edges=np.array(edges), kappa=kappa)


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform partition of (-v_max, v_max) with quadratic trial modes per cell.

    Test cells mirror the trial cells except that the first and last extend to
    -inf/+inf; the sign of v is constant on every (extended) cell.
    """

    v_max: float
    n_cells: int
    edges: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.v_max <= 0:
            raise ConfigurationError("v_max must be positive")
        if self.n_cells < 2 or self.n_cells % 2 != 0:
            raise ConfigurationError("N_v must be an even integer >= 2 (sweeps need a fixed sign of v per cell)")
        j = np.arange(self.n_cells + 1)
        edges = -self.v_max + 2.0 * j * self.v_max / self.n_cells
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def width(self) -> float:
        return 2.0 * self.v_max / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def signs(self) -> np.ndarray:
        """+1 for cells with v >= 0, -1 for v <= 0."""
        return np.where(self.centers > 0, 1.0, -1.0)

    def half_infinite(self, j: int) -> bool:
        """True if test cell j extends to +-infinity."""
        return j == 0 or j == self.n_cells - 1


def build_velocity_grid(v_max: float, n_v: int) -> VelocityGrid:
    return VelocityGrid(v_max=float(v_max), n_cells=int(n_v))


@dataclass(frozen=True)
class QuadratureRule:
    """Per-cell Gauss rule, exact for polynomials up to `exact_degree`."""

    n_points: int

    @property
    def exact_degree(self) -> int:
        return 2 * self.n_points - 1

    @property
    def ref(self) -> tuple[np.ndarray, np.ndarray]:
        return gauss_rule(self.n_points)


@dataclass(frozen=True)
class DofLayout:
    """Flat indexing of (x cell, x mode, v cell, v mode) coefficients."""

    n_x: int
    n_modes_x: int
    n_v: int
    n_modes_v: int = 3

    @property
    def dof_x(self) -> int:
        return self.n_x * self.n_modes_x

    @property
    def dof_v(self) -> int:
        return self.n_v * self.n_modes_v

    @property
    def size(self) -> int:
        return self.dof_x * self.dof_v

    def flatten(self, i: int, p: int, j: int, m: int) -> int:
        if not (0 <= i < self.n_x and 0 <= p < self.n_modes_x
                and 0 <= j < self.n_v and 0 <= m < self.n_modes_v):
            raise IndexError("dof index out of range")
        return ((i * self.n_modes_x + p) * self.n_v + j) * self.n_modes_v + m

    def unflatten(self, idx: int) -> tuple[int, int, int, int]:
        if not (0 <= idx < self.size):
            raise IndexError("flat index out of range")
        idx, m = divmod(idx, self.n_modes_v)
        idx, j = divmod(idx, self.n_v)
        i, p = divmod(idx, self.n_modes_x)
        return i, p, j, m

    def as_matrix(self, coeffs: np.ndarray) -> np.ndarray:
        """(n_x, px, n_v, 3) coefficients viewed as a DOF_x x DOF_v matrix."""
        return coeffs.reshape(self.dof_x, self.dof_v)


# ---------------------------------------------------------------------------
# Gaussian partial moments
# ---------------------------------------------------------------------------

MAX_MOMENT_ORDER = 8

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _std_lower_moments(kmax: int, tau: np.ndarray) -> np.ndarray:
    """I_k(tau) = int_{-inf}^tau z^k phi(z) dz for the standard normal, k=0..kmax."""
    tau = np.asarray(tau, dtype=float)
    finite = np.isfinite(tau)
    t = np.where(finite, tau, 0.0)
    phi = np.where(finite, _INV_SQRT_2PI * np.exp(-0.5 * t * t), 0.0)
    Phi = np.where(finite, 0.5 * (1.0 + erf(t * _SQRT1_2)), (tau > 0).astype(float))
    out = np.empty((kmax + 1,) + tau.shape)
    out[0] = Phi
    if kmax >= 1:
        out[1] = -phi
    for k in range(2, kmax + 1):
        out[k] = -np.where(finite, t ** (k - 1) * phi, 0.0) + (k - 1) * out[k - 2]
    return out


def lower_gaussian_moments(kmax: int, t, n, u, theta) -> np.ndarray:
    """L_k(t) = int_{-inf}^t v^k M(v; n, u, theta) dv, k = 0..kmax (broadcasting)."""
    if kmax > MAX_MOMENT_ORDER:
        raise ConfigurationError(f"moment order {kmax} > {MAX_MOMENT_ORDER} not supported")
    t, n, u, theta = np.broadcast_arrays(
        np.asarray(t, dtype=float), np.asarray(n, dtype=float),
        np.asarray(u, dtype=float), np.asarray(theta, dtype=float))
    if np.any(theta <= 0):
        raise RealizabilityError("theta <= 0 in Gaussian moment evaluation")
    sig = np.sqrt(theta)
    Iz = _std_lower_moments(kmax, (t - u) / sig)
    out = np.empty_like(Iz)
    for k in range(kmax + 1):
        acc = np.zeros(t.shape)
        for i in range(k + 1):
            acc += math.comb(k, i) * u ** (k - i) * sig ** i * Iz[i]
        out[k] = n * acc
    return out


def full_gaussian_moments(kmax: int, n, u, theta) -> np.ndarray:
    """int_R v^k M dv for k = 0..kmax."""
    n, u, theta = np.broadcast_arrays(
        np.asarray(n, dtype=float), np.asarray(u, dtype=float), np.asarray(theta, dtype=float))
    if np.any(theta <= 0):
        raise RealizabilityError("theta <= 0 in Gaussian moment evaluation")
    sig = np.sqrt(theta)
    out = np.empty((kmax + 1,) + n.shape)
    for k in range(kmax + 1):
        acc = np.zeros(n.shape)
        for i in range(0, k + 1, 2):
            dfact = math.prod(range(i - 1, 0, -2)) if i else 1
            acc += math.comb(k, i) * u ** (k - i) * sig ** i * dfact
        out[k] = n * acc
    return out


def gaussian_partial_moment(k: int, interval, fluid) -> float:
    """int_alpha^beta v^k M(v; fluid) dv, alpha/beta possibly +-inf; exact to round-off."""
    if not (0 <= k <= MAX_MOMENT_ORDER):
        raise ConfigurationError(f"moment order must be in [0, {MAX_MOMENT_ORDER}]")
    alpha, beta = interval
    if not alpha < beta:
        raise ConfigurationError("interval must satisfy alpha < beta")
    n, u, theta = fluid
    if theta <= 0 or n <= 0:
        raise RealizabilityError(f"non-realizable fluid state (n={n}, theta={theta})")
    if math.isinf(beta):
        hi = full_gaussian_moments(k, n, u, theta)[k]
    else:
        hi = lower_gaussian_moments(k, beta, n, u, theta)[k]
    if math.isinf(alpha):
        lo = 0.0
    else:
        lo = lower_gaussian_moments(k, alpha, n, u, theta)[k]
    return float(hi - lo)


def interval_gaussian_moments(kmax: int, grid: VelocityGrid, n, u, theta) -> np.ndarray:
    """Moments of M over every velocity *test* cell (ends half-infinite).

    Returns shape (kmax+1, ..., N_v) broadcast over the fluid arrays; summing
    over cells telescopes exactly to the full-line moments.
    """
    n = np.asarray(n, dtype=float)
    shape = np.broadcast_shapes(n.shape, np.shape(u), np.shape(theta))
    inner = grid.edges[1:-1]  # finite test-cell boundaries
    t = np.broadcast_to(inner, shape + inner.shape)
    nn = np.broadcast_to(n, shape)[..., None]
    uu = np.broadcast_to(np.asarray(u, dtype=float), shape)[..., None]
    tt = np.broadcast_to(np.asarray(theta, dtype=float), shape)[..., None]
    L = lower_gaussian_moments(kmax, t, nn, uu, tt)
    F = full_gaussian_moments(kmax, n, u, theta)
    F = np.broadcast_to(F, (kmax + 1,) + shape)
    out = np.empty((kmax + 1,) + shape + (grid.n_cells,))
    out[..., 0] = L[..., 0]
    out[..., 1:-1] = np.diff(L, axis=-1)
    out[..., -1] = F - L[..., -1]
    return out


# ---------------------------------------------------------------------------
# assembled discretization tables
# ---------------------------------------------------------------------------

class PhaseSpace:
    """Meshes plus every precomputed basis table the solvers need.

    Immutable after construction; shared freely across solver components.
    """

    def __init__(self, mesh: SpatialMesh, grid: VelocityGrid, n_quad: int | None = None):
        self.mesh = mesh
        self.grid = grid
        px = mesh.n_modes
        if n_quad is None:
            n_quad = max(mesh.kappa, 2) + 1
        self.quad = QuadratureRule(n_points=n_quad)
        self.layout = DofLayout(n_x=mesh.n_cells, n_modes_x=px, n_v=grid.n_cells)

        xi, w = self.quad.ref
        self.xi, self.w_ref = xi, w
        h = mesh.widths
        # physical quadrature nodes/weights, (n_x, nq)
        self.x_quad = mesh.centers[:, None] + 0.5 * h[:, None] * xi[None, :]
        self.w_quad = 0.5 * h[:, None] * w[None, :]
        # reference basis tables
        self.Bx = legendre_vals(mesh.kappa, xi)          # (px, nq)
        self.Bx_d = legendre_derivs(mesh.kappa, xi)      # (px, nq)
        self.tL = legendre_vals(mesh.kappa, np.array([-1.0]))[:, 0]
        self.tR = legendre_vals(mesh.kappa, np.array([1.0]))[:, 0]
        # physical scale factors per cell: basis value = s_x * ref value
        self.s_x = np.sqrt(2.0 / h)                      # (n_x,)
        # stiffness int phi_p dphi_p' dx = (2/h) Gref[p', p]
        self.Gref = (self.Bx[None, :, :] * self.Bx_d[:, None, :] * w[None, None, :]).sum(-1)

        # velocity tables (uniform cells)
        hv = grid.width
        xs, ws = gauss_rule(4)
        bs = legendre_vals(2, xs)
        Sref = (bs[None, :, :] * bs[:, None, :] * (xs * ws)[None, None, :]).sum(-1)
        self.s_v = math.sqrt(2.0 / hv)
        # Vv[j] = int_{I_j} v phi_m' phi_m dv = c_j I + (hv/2) Sref
        self.Vv = grid.centers[:, None, None] * np.eye(3)[None] + 0.5 * hv * Sref[None]
        self.Vv.setflags(write=False)

        # e = (1, v, v^2/2) expanded in per-cell modes: Ev[d, j, m]
        xq3, wq3 = gauss_rule(4)
        vq = grid.centers[:, None] + 0.5 * hv * xq3[None, :]       # (n_v, 4)
        bv = legendre_vals(2, xq3) * self.s_v                      # (3, 4)
        wphys = 0.5 * hv * wq3
        e_vals = np.stack([np.ones_like(vq), vq, 0.5 * vq ** 2])   # (3, n_v, 4)
        self.Ev = np.einsum('djq,mq,q->djm', e_vals, bv, wphys)
        self.Ev.setflags(write=False)

        # monomial coefficients of the physical velocity modes: pw[j, m, k], k=0..2
        P = legendre_power_coeffs(2) * self.s_v                    # xi powers
        pw = np.zeros((grid.n_cells, 3, 3))
        for j in range(grid.n_cells):
            c = grid.centers[j]
            # xi = (2/hv)(v - c); expand (a0 + a1 xi + a2 xi^2) in powers of v
            r = 2.0 / hv
            for m in range(3):
                a0, a1, a2 = P[m]
                pw[j, m, 0] = a0 - a1 * r * c + a2 * (r * c) ** 2
                pw[j, m, 1] = a1 * r - 2 * a2 * r * r * c
                pw[j, m, 2] = a2 * r * r
        self.pw = pw
        self.pw.setflags(write=False)
        # cell-centered monomial coefficients, identical for every cell: pwc[m, k]
        r = 2.0 / hv
        pwc = np.zeros((3, 3))
        for m in range(3):
            a0, a1, a2 = P[m]
            pwc[m] = [a0, a1 * r, a2 * r * r]
        self.pwc = pwc
        self.pwc.setflags(write=False)

    # -- Maxwellian integrals against velocity test modes ------------------

    def maxwellian_cell_integrals(self, n, u, theta, v_power: int = 0) -> np.ndarray:
        """int_{test cell j} v^v_power M phi_{j,m} dv; shape (..., n_v, 3).

        Integrals are evaluated in cell-centered coordinates to avoid the
        catastrophic cancellation a global monomial expansion suffers on cells
        far from the origin.
        """
        g = self.grid
        n = np.asarray(n, dtype=float)
        shape = np.broadcast_shapes(n.shape, np.shape(u), np.shape(theta))
        kmax = 2 + v_power
        half = 0.5 * g.width
        # centered lower moments at both cell edges, shifted mean u - c_j
        uc = np.subtract.outer(np.broadcast_to(np.asarray(u, dtype=float), shape),
                               g.centers)                     # (..., n_v)
        nn = np.broadcast_to(n, shape)[..., None]
        tt = np.broadcast_to(np.asarray(theta, dtype=float), shape)[..., None]
        lo = lower_gaussian_moments(kmax, -half, nn, uc, tt)  # (k+1, ..., n_v)
        hi = lower_gaussian_moments(kmax, half, nn, uc, tt)
        CIM = hi - lo
        full = full_gaussian_moments(kmax, nn, uc, tt)
        CIM[..., 0] = hi[..., 0]                              # first test cell runs to -inf
        CIM[..., -1] = full[..., -1] - lo[..., -1]            # last runs to +inf
        CIM = np.moveaxis(CIM, 0, -1)                         # (..., n_v, kmax+1)
        # combine (t + c_j)^v_power with the centered mode polynomials
        c = g.centers
        if v_power == 0:
            W = CIM[..., :3]
        elif v_power == 1:
            W = CIM[..., 1:4] + c[..., :, None] * CIM[..., :3]
        elif v_power == 2:
            W = (CIM[..., 2:5] + 2.0 * c[..., :, None] * CIM[..., 1:4]
                 + (c ** 2)[..., :, None] * CIM[..., :3])
        else:
            raise ConfigurationError("v_power up to 2 supported")
        return np.einsum('...jk,mk->...jm', W, self.pwc)

    def basis_at(self, v: np.ndarray, extend: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Velocity cell index and mode values at points v; trial modes vanish outside.

        With extend=True, points outside [-v_max, v_max] evaluate the extended
        end-cell test polynomials instead of zero.
        """
        v = np.asarray(v, dtype=float)
        g = self.grid
        j = np.clip(((v + g.v_max) / g.width).astype(int), 0, g.n_cells - 1)
        xi = 2.0 * (v - g.centers[j]) / g.width
        vals = legendre_vals(2, xi.ravel()).reshape((3,) + v.shape) * self.s_v
        if not extend:
            inside = (v >= -g.v_max) & (v <= g.v_max)
            vals = vals * inside
        return j, vals


def project_function(fn, mesh: SpatialMesh, grid: VelocityGrid, n_quad: int = 8):
    """L2-project a callable f(x, v) onto the trial space; exact for members of it."""
    from .fields import DistributionField

    ps = PhaseSpace(mesh, grid)
    xi, w = gauss_rule(n_quad)
    bx = legendre_vals(mesh.kappa, xi)   # (px, nq)
    bv = legendre_vals(2, xi)            # (3, nq)
    h = mesh.widths
    hv = grid.width
    xq = mesh.centers[:, None] + 0.5 * h[:, None] * xi[None, :]       # (n_x, nq)
    vq = grid.centers[:, None] + 0.5 * hv * xi[None, :]               # (n_v, nq)
    vals = fn(xq[:, :, None, None], vq[None, None, :, :])             # (n_x, nq, n_v, nq)
    vals = np.broadcast_to(vals, (mesh.n_cells, n_quad, grid.n_cells, n_quad))
    if not np.all(np.isfinite(vals)):
        raise ConfigurationError("projected function must be finite on the phase-space domain")
    coeffs = np.einsum('iqjr,pq,mr,q,r->ipjm', vals, bx, bv, w, w)
    coeffs *= np.sqrt(0.5 * h)[:, None, None, None]   # (h/2) Jacobian times sqrt(2/h) scale
    coeffs *= math.sqrt(0.5 * hv)
    return DistributionField(coeffs=coeffs, space=ps)
