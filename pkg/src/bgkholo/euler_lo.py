"""Low-order moment system: Euler fluxes, the DG Euler form, and the JFNK solve.

The DG Euler form is built so that it matches the transport form applied to
the analytic Maxwellian exactly (both code paths are tested against each
other).  The face flux therefore carries a factor 1/2 on the half-moment jump
term; without it the identity between the moment and kinetic discretizations
breaks and the acceleration schemes lose their consistency property.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .fields import MomentField, fluid_from_moments
from .phase_space import PhaseSpace, RealizabilityError, full_gaussian_moments, lower_gaussian_moments


class DNCError(RuntimeError):
    """An iterative solve failed to converge; carries the iteration trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


def euler_flux(n, u, theta) -> np.ndarray:
    """(n u, n u^2 + n theta, n u (u^2 + 3 theta) / 2), stacked on axis 0."""
    n = np.asarray(n, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return np.stack([n * u, n * u ** 2 + n * theta, 0.5 * n * u * (u ** 2 + 3.0 * theta)])


def half_euler_flux(n, u, theta, side: str) -> np.ndarray:
    """int v e M dv over (0, inf) for side='+' or (-inf, 0) for side='-'."""
    L = lower_gaussian_moments(3, 0.0, n, u, theta)
    if side == "-":
        m = L
    else:
        m = full_gaussian_moments(3, n, u, theta) - L
    return np.stack([m[1], m[2], 0.5 * m[3]])


def abs_v_moments(n, u, theta) -> np.ndarray:
    """int |v| e M dv over the real line."""
    return half_euler_flux(n, u, theta, "+") - half_euler_flux(n, u, theta, "-")


def kinetic_numerical_flux(rho_minus, rho_plus) -> np.ndarray:
    """Face flux {F} + [[<|v| e M>]]/2 from the one-sided moment traces."""
    nm, um, tm = fluid_from_moments(np.asarray(rho_minus, dtype=float), where="left face trace")
    np_, up, tp = fluid_from_moments(np.asarray(rho_plus, dtype=float), where="right face trace")
    avg = 0.5 * (euler_flux(nm, um, tm) + euler_flux(np_, up, tp))
    jump = abs_v_moments(nm, um, tm) - abs_v_moments(np_, up, tp)
    return avg + 0.5 * jump


def _upwind_face_flux(rho_left_trace, rho_right_trace):
    """Equivalent upwind form: positive half from the left state, negative from right."""
    nm, um, tm = fluid_from_moments(rho_left_trace, where="left face trace")
    np_, up, tp = fluid_from_moments(rho_right_trace, where="right face trace")
    return half_euler_flux(nm, um, tm, "+") + half_euler_flux(np_, up, tp, "-")


def apply_E(rho: MomentField, periodic: bool = False) -> np.ndarray:
    """DG Euler form eta -> E(eta, q) on all moment test modes; shape (3, n_x, px)."""
    ps = rho.space
    h = ps.mesh.widths
    n, u, theta = fluid_from_moments(rho.at_quad(), where="Euler volume")
    F = euler_flux(n, u, theta)                                     # (3, n_x, nq)
    out = -np.einsum('diq,pq,iq->dip', F, ps.Bx_d, ps.w_quad)
    out *= (ps.s_x * 2.0 / h)[None, :, None]

    n_x = ps.mesh.n_cells
    s = ps.s_x
    rt = rho.right_traces()     # state left of edge i+1
    lt = rho.left_traces()      # state right of edge i
    if periodic:
        left_states = rt                        # edge e has left side cell e-1 (wrapped)
        right_states = np.roll(lt, -1, axis=1)  # and right side cell e
        flux = _upwind_face_flux(left_states, right_states)   # (3, n_x) edges i+1/2
        out += np.einsum('dj,q->djq', flux, ps.tR) * s[None, :, None]
        out -= np.einsum('dj,q->djq', np.roll(flux, 1, axis=1), ps.tL) * s[None, :, None]
    else:
        flux = _upwind_face_flux(rt[:, :-1], lt[:, 1:])       # (3, n_x - 1), interior edges
        out[:, :-1] += np.einsum('de,q->deq', flux, ps.tR) * s[None, :-1, None]
        out[:, 1:] -= np.einsum('de,q->deq', flux, ps.tL) * s[None, 1:, None]
        # outflow boundary terms
        nb, ub, tb = fluid_from_moments(rt[:, -1], where="right boundary trace")
        out[:, -1] += np.einsum('d,q->dq', half_euler_flux(nb, ub, tb, "+"), ps.tR) * s[-1]
        na, ua, ta = fluid_from_moments(lt[:, 0], where="left boundary trace")
        out[:, 0] -= np.einsum('d,q->dq', half_euler_flux(na, ua, ta, "-"), ps.tL) * s[0]
    return out


def boundary_moment_dual(rho: MomentField, ends: tuple[bool, bool]) -> np.ndarray:
    """B(M(rho_trace), e . q) for the self-consistent inflow at the flagged ends."""
    ps = rho.space
    out = np.zeros((3, ps.mesh.n_cells, ps.mesh.n_modes))
    left_on, right_on = ends
    if left_on:
        na, ua, ta = fluid_from_moments(rho.trace(0, "left"), where="left inflow trace")
        out[:, 0] -= np.einsum('d,q->dq', half_euler_flux(na, ua, ta, "+"), ps.tL) * ps.s_x[0]
    if right_on:
        nb, ub, tb = fluid_from_moments(rho.trace(ps.mesh.n_cells - 1, "right"),
                                        where="right inflow trace")
        out[:, -1] += np.einsum('d,q->dq', half_euler_flux(nb, ub, tb, "-"), ps.tR) * ps.s_x[-1]
    return out


def perturbative_flux(f, rho_f: MomentField, assembly) -> np.ndarray:
    """q -> A(f, e.q) - E(rho_f, q); only the heat-flux slot survives."""
    from .fields import contract_e

    return contract_e(assembly.apply_A(f), f.space) - apply_E(rho_f, periodic=assembly.periodic)


@dataclass
class NewtonKrylovConfig:
    nonlinear_tol: float = 1e-10
    max_newton: int = 50
    krylov_rtol: float = 1e-4
    krylov_restart: int = 30
    fd_scale: float = np.sqrt(np.finfo(float).eps)

    def __post_init__(self):
        if self.nonlinear_tol <= 0 or self.krylov_rtol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class LowOrderSystem:
    """Moment solve (rho, q) + dt E(rho, q) [+ dt B(M(rho), e.q)] = source(q)."""

    space: PhaseSpace
    dt: float
    source: np.ndarray                 # dual on the moment test space, (3, n_x, px)
    periodic: bool = False
    inflow_in_solve: tuple[bool, bool] = (False, False)   # Remark-style implicit inflow

    def residual(self, rho: MomentField) -> np.ndarray:
        r = rho.coeffs + self.dt * apply_E(rho, periodic=self.periodic) - self.source
        if any(self.inflow_in_solve):
            r = r + self.dt * boundary_moment_dual(rho, self.inflow_in_solve)
        return r


@dataclass
class LowOrderReport:
    newton_iterations: int = 0
    krylov_iterations: int = 0
    residual_norm: float = np.inf
    history: list = field(default_factory=list)


def solve_low_order(system: LowOrderSystem, rho0: MomentField,
                    cfg: NewtonKrylovConfig | None = None) -> tuple[MomentField, LowOrderReport]:
    """Jacobian-free Newton-Krylov solve of the low-order system.

    Directional derivatives are finite differences of the residual; the Newton
    direction comes from restarted GMRES; a backtracking line search guards
    against realizability overshoot.  Raises DNCError on stagnation.
    """
    cfg = cfg or NewtonKrylovConfig()
    ps = system.space
    shape = (3, ps.mesh.n_cells, ps.mesh.n_modes)
    size = 3 * ps.mesh.n_cells * ps.mesh.n_modes
    scale = max(np.linalg.norm(system.source), 1e-300)
    report = LowOrderReport()

    x = rho0.coeffs.copy()

    def res(vec: np.ndarray) -> np.ndarray:
        return system.residual(MomentField(vec.reshape(shape).copy(), ps)).ravel()

    r = res(x.ravel())
    rnorm = np.linalg.norm(r)
    best = rnorm
    stall = 0
    report.history.append(rnorm / scale)
    while rnorm / scale > cfg.nonlinear_tol:
        if report.newton_iterations >= cfg.max_newton:
            raise DNCError("low-order Newton iteration exceeded its budget", report.history)
        xflat = x.ravel()
        xnorm = np.linalg.norm(xflat)

        def jv(w: np.ndarray) -> np.ndarray:
            wn = np.linalg.norm(w)
            if wn == 0.0:
                return np.zeros_like(w)
            eps = cfg.fd_scale * (1.0 + xnorm) / wn
            for _ in range(2):
                try:
                    return (res(xflat + eps * w) - r) / eps
                except RealizabilityError:
                    eps *= 0.01
            raise DNCError("realizability lost in Jacobian probe", report.history)

        op = LinearOperator((size, size), matvec=jv)
        kcount = [0]
        delta, info = gmres(op, -r, rtol=cfg.krylov_rtol, atol=0.0,
                            restart=cfg.krylov_restart, maxiter=40,
                            callback=lambda *_: kcount.__setitem__(0, kcount[0] + 1),
                            callback_type="legacy")
        report.krylov_iterations += kcount[0]

        alpha = 1.0
        accepted = False
        for _ in range(9):
            try:
                r_new = res(xflat + alpha * delta)
            except RealizabilityError:
                alpha *= 0.5
                continue
            if np.linalg.norm(r_new) < rnorm or alpha < 1e-2:
                x = (xflat + alpha * delta).reshape(shape)
                r, rnorm = r_new, np.linalg.norm(r_new)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise DNCError("low-order line search failed", report.history)

        report.newton_iterations += 1
        report.history.append(rnorm / scale)
        if rnorm < best * (1.0 - 1e-12):
            best = rnorm
            stall = 0
        else:
            stall += 1
            if stall >= 5:
                raise DNCError("low-order Newton stagnated", report.history)

    report.residual_norm = rnorm / scale
    return MomentField(x, ps), report
