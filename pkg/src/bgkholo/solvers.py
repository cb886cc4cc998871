"""Outer iterations: source iteration, HOLO, MM-L, and MM-HOLO.

Each step solves one backward-Euler-form problem; DIRK stages reuse the same
machinery with a rescaled timestep and an accumulated explicit source folded
into the previous-step slot (the `base` dual).  Micro-macro states carry the
pair (rho, g); the moment-equation source is always the e-contraction of the
kinetic base so the zero-moment condition survives to round-off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .euler_lo import (DNCError, LowOrderSystem, NewtonKrylovConfig, apply_E,
                       perturbative_flux, solve_low_order)
from .fields import (DistributionField, MomentField, contract_e,
                     fluid_from_moments, maxwellian_dual, moments_of)
from .phase_space import RealizabilityError, lower_gaussian_moments
from .transport import BoundarySpec, InflowEnd, TransportAssembly

SQRT_PI = np.sqrt(np.pi)


@dataclass
class IterConfig:
    method: str = "SI"                      # SI | HOLO | MM_L | MM_HOLO
    tol: float = 1e-8
    max_iter: int = 900
    criterion: str = "52"                   # which criterion terminates: '52' or '53'
    boundary_handling: str = "moment_implicit"   # or 'lagged'
    log_residual: bool = False
    nk: NewtonKrylovConfig | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("stopping tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max iterations must be >= 1")
        if self.method not in ("SI", "HOLO", "MM_L", "MM_HOLO"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.nk is None:
            self.nk = NewtonKrylovConfig(nonlinear_tol=1e-2 * self.tol)


@dataclass
class IterLog:
    """Per-iteration stopping metrics; one terminal status."""

    rows: list = field(default_factory=list)
    status: str = "running"                 # converged | DNC | max_iter
    note: str = ""

    def add(self, **kw):
        kw.setdefault("l", len(self.rows))
        self.rows.append(kw)

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def finish(self, status: str, note: str = ""):
        if self.status != "running":
            raise RuntimeError("IterLog status already set")
        self.status = status
        self.note = note

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else {}
        return {
            "status": self.status,
            "iterations": self.iterations,
            "final_crit_52": last.get("crit_52"),
            "final_crit_53": last.get("crit_53"),
            "final_residual": last.get("residual"),
            "final_rho_g_norm": last.get("rho_g_norm"),
            "note": self.note,
        }

    def write_csv(self, path):
        cols = ["l", "crit_52", "crit_53", "residual", "rho_g_norm",
                "newton", "krylov", "wall_seconds", "suspect"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                out = []
                for c in cols:
                    v = row.get(c)
                    if v is None:
                        out.append("")
                    elif isinstance(v, float):
                        out.append(f"{v:.17g}")
                    else:
                        out.append(str(v))
                fh.write(",".join(out) + "\n")


@dataclass
class FState:
    """Kinetic iterate for SI/HOLO."""

    f: DistributionField


@dataclass
class MMState:
    """Micro-macro iterate: moments plus micro distribution with <e g> ~ 0."""

    rho: MomentField
    g: DistributionField


@dataclass
class StepProblem:
    """One implicit solve: effective timestep, collision rate, base dual, boundaries."""

    assembly: TransportAssembly
    bc: BoundarySpec
    dt: float
    nu: float
    base: np.ndarray        # (f^k, z) plus accumulated stage source, kinetic dual

    @property
    def ps(self):
        return self.assembly.ps


# ---------------------------------------------------------------------------
# boundary data helpers
# ---------------------------------------------------------------------------

def wall_sigma_f(f: DistributionField) -> float:
    """Reflection coefficient -sqrt(pi) <v f(0, v)>_{v<0} from the DG wall trace."""
    ps = f.space
    tr = np.einsum('pjm,p->jm', f.coeffs[0], ps.tL) * ps.s_x[0]
    neg = ps.grid.signs < 0
    flux = float(np.einsum('jm,jm->', ps.Ev[1][neg], tr[neg]))
    return -SQRT_PI * flux


def wall_sigma_mm(rho: MomentField, g: DistributionField) -> float:
    """Wall reflection coefficient for the micro-macro iterate M(rho) + g."""
    n, u, theta = fluid_from_moments(rho.trace(0, "left"), where="wall trace")
    maxw_flux = float(lower_gaussian_moments(1, 0.0, n, u, theta)[1])
    return -SQRT_PI * maxw_flux + wall_sigma_f(g)


def _poly_trace(f: DistributionField, end: str) -> np.ndarray:
    ps = f.space
    if end == "left":
        return np.einsum('pjm,p->jm', f.coeffs[0], ps.tL) * ps.s_x[0]
    return np.einsum('pjm,p->jm', f.coeffs[-1], ps.tR) * ps.s_x[-1]


def _farfield_state(rho: MomentField, end: str):
    cell = 0 if end == "left" else rho.space.mesh.n_cells - 1
    side = "left" if end == "left" else "right"
    return fluid_from_moments(rho.trace(cell, side), where=f"far-field {end} trace")


def inflow_data(bc: BoundarySpec, end: str, rho: MomentField | None = None,
                g: DistributionField | None = None,
                sigma: float | None = None) -> InflowEnd | None:
    """Assemble f_- at one end from the given moment/micro data.

    rho supplies the Maxwellian part for far-field ends; g adds a lagged micro
    trace; sigma scales the wall Maxwellian for wall ends.
    """
    kind = getattr(bc, end)
    data = getattr(bc, f"{end}_data")
    if kind == "periodic":
        return None
    out = InflowEnd()
    if kind == "farfield":
        if rho is not None:
            out.maxwellians.append((1.0, _farfield_state(rho, end)))
        if g is not None:
            out.poly = _poly_trace(g, end)
    elif kind == "wall":
        wall_fluid = fluid_from_moments(np.asarray(data, dtype=float), where="wall moments")
        out.maxwellians.append((float(sigma), wall_fluid))
    elif kind == "inflow":
        out.poly = data  # pre-projected modal profile (n_v, 3)
    return out


def _iterate_inflows(prob: StepProblem, f=None, rho_f=None, rho_new=None, g=None,
                     moment_implicit=False):
    """Inflow data for both ends at the current iterate.

    Far-field ends take their Maxwellian from rho_new when the moment-implicit
    treatment is active (and rho_new is available), otherwise from the lagged
    rho_f; wall ends always use the lagged kinetic trace.
    """
    bc = prob.bc
    if bc.periodic:
        return None, None, False
    suspect = False
    ends = []
    for end in ("left", "right"):
        kind = getattr(bc, end)
        if kind == "wall":
            sigma = wall_sigma_mm(rho_f, g) if g is not None else wall_sigma_f(f)
            if sigma < 0:
                suspect = True
            ends.append(inflow_data(bc, end, sigma=sigma))
        elif kind == "farfield":
            src = rho_new if (moment_implicit and rho_new is not None) else rho_f
            micro = g if g is not None else None
            ends.append(inflow_data(bc, end, rho=src, g=micro))
        else:
            ends.append(inflow_data(bc, end))
    return ends[0], ends[1], suspect


def _farfield_flags(bc: BoundarySpec) -> tuple[bool, bool]:
    return (bc.left == "farfield", bc.right == "farfield")


# ---------------------------------------------------------------------------
# single iterations
# ---------------------------------------------------------------------------

def si_step(prob: StepProblem, f: DistributionField):
    """One source iteration: lagged Maxwellian and boundary data, then a sweep."""
    rho_f = moments_of(f)
    left, right, suspect = _iterate_inflows(prob, f=f, rho_f=rho_f, moment_implicit=False)
    rhs = prob.base + prob.dt * prob.nu * maxwellian_dual(rho_f, where="relaxation source")
    rhs -= prob.dt * prob.assembly.apply_B(left, right)
    f_new = prob.assembly.sweep_solve(rhs, prob.dt, prob.nu)
    return f_new, {"suspect": suspect}


def holo_step(prob: StepProblem, f: DistributionField, cfg: IterConfig):
    """Low-order moment solve for an improved Maxwellian, then one sweep."""
    ps = prob.ps
    rho_f = moments_of(f)
    moment_implicit = cfg.boundary_handling == "moment_implicit"
    left, right, suspect = _iterate_inflows(prob, f=f, rho_f=rho_f,
                                            moment_implicit=moment_implicit)

    src = contract_e(prob.base, ps)
    src -= prob.dt * perturbative_flux(f, rho_f, prob.assembly)
    in_solve = (False, False)
    if moment_implicit and not prob.bc.periodic:
        in_solve = _farfield_flags(prob.bc)
        lag_left = None if in_solve[0] else left
        lag_right = None if in_solve[1] else right
        src -= prob.dt * contract_e(prob.assembly.apply_B(lag_left, lag_right), ps)
    else:
        src -= prob.dt * contract_e(prob.assembly.apply_B(left, right), ps)

    system = LowOrderSystem(space=ps, dt=prob.dt, source=src,
                            periodic=prob.bc.periodic, inflow_in_solve=in_solve)
    rho_lo, report = solve_low_order(system, rho_f, cfg.nk)

    if moment_implicit:
        left, right, suspect = _iterate_inflows(prob, f=f, rho_f=rho_f, rho_new=rho_lo,
                                                moment_implicit=True)
    rhs = prob.base + prob.dt * prob.nu * maxwellian_dual(rho_lo, where="relaxation source")
    rhs -= prob.dt * prob.assembly.apply_B(left, right)
    f_new = prob.assembly.sweep_solve(rhs, prob.dt, prob.nu)
    return f_new, rho_lo, {"suspect": suspect, "newton": report.newton_iterations,
                           "krylov": report.krylov_iterations}


def _mm_step(prob: StepProblem, state: MMState, cfg: IterConfig, heat_flux_correction: bool):
    """Shared MM-L / MM-HOLO update; they differ only in the low-order source."""
    ps = prob.ps
    rho, g = state.rho, state.g
    rho_g = moments_of(g)
    rho_f = rho + rho_g
    moment_implicit = cfg.boundary_handling == "moment_implicit"
    left, right, suspect = _iterate_inflows(prob, rho_f=rho, g=g,
                                            moment_implicit=moment_implicit)

    src = contract_e(prob.base, ps)
    src -= prob.dt * contract_e(prob.assembly.apply_A(g), ps)
    if heat_flux_correction:
        src -= prob.dt * (apply_E(rho, periodic=prob.bc.periodic)
                          - apply_E(rho_f, periodic=prob.bc.periodic))
    in_solve = (False, False)
    if moment_implicit and not prob.bc.periodic:
        in_solve = _farfield_flags(prob.bc)
        lag_left = None if in_solve[0] else left
        lag_right = None if in_solve[1] else right
        src -= prob.dt * contract_e(prob.assembly.apply_B(lag_left, lag_right), ps)
    else:
        src -= prob.dt * contract_e(prob.assembly.apply_B(left, right), ps)

    system = LowOrderSystem(space=ps, dt=prob.dt, source=src,
                            periodic=prob.bc.periodic, inflow_in_solve=in_solve)
    rho_new, report = solve_low_order(system, rho, cfg.nk)

    if moment_implicit:
        left, right, suspect = _iterate_inflows(prob, rho_f=rho, g=g, rho_new=rho_new,
                                                moment_implicit=True)
    rhs = prob.base - maxwellian_dual(rho_new, where="micro source")
    rhs -= prob.dt * prob.assembly.apply_A_maxwellian(rho_new)
    rhs -= prob.dt * prob.assembly.apply_B(left, right)
    g_new = prob.assembly.sweep_solve(rhs, prob.dt, prob.nu)
    info = {"suspect": suspect, "newton": report.newton_iterations,
            "krylov": report.krylov_iterations}
    return MMState(rho=rho_new, g=g_new), rho_new, info


def mml_step(prob: StepProblem, state: MMState, cfg: IterConfig):
    """Micro flux lagged in the moment solve."""
    return _mm_step(prob, state, cfg, heat_flux_correction=False)


def mmholo_step(prob: StepProblem, state: MMState, cfg: IterConfig):
    """Heat-flux source correction built from the current (rho, g) pair."""
    return _mm_step(prob, state, cfg, heat_flux_correction=True)


# ---------------------------------------------------------------------------
# stopping criteria and the outer driver
# ---------------------------------------------------------------------------

def stopping_criterion(kind: str, rho_f_new: MomentField, rho_f_old: MomentField,
                       rho_lo: MomentField | None = None) -> float:
    """Relative moment change ('52') or accelerated-vs-kinetic gap ('53')."""
    denom = rho_f_new.norm()
    if denom == 0.0:
        raise ZeroDivisionError("stopping criterion normalizer is zero")
    if kind == "52":
        return float(np.linalg.norm(rho_f_new.coeffs - rho_f_old.coeffs)) / denom
    if kind == "53":
        if rho_lo is None:
            raise ValueError("criterion '53' needs the low-order moments")
        return float(np.linalg.norm(rho_lo.coeffs - rho_f_old.coeffs)) / denom
    raise ValueError(f"unknown criterion {kind!r}")


GROWTH_FACTOR = 10.0
GROWTH_PATIENCE = 20
STALL_WINDOW = 100


def converge(prob: StepProblem, state, cfg: IterConfig):
    """Iterate the configured method until tolerance, DNC, or the budget runs out."""
    log = IterLog()
    mm = isinstance(state, MMState)
    if mm != (cfg.method in ("MM_L", "MM_HOLO")):
        raise ValueError("state type does not match the configured method")

    rho_f_old = (state.rho + moments_of(state.g)) if mm else moments_of(state.f)
    best = np.inf
    since_best = 0
    growth_run = 0

    for l in range(cfg.max_iter):
        t0 = time.perf_counter()
        try:
            if cfg.method == "SI":
                f_new, info = si_step(prob, state.f)
                state = FState(f=f_new)
                rho_lo = None
                rho_f_new = moments_of(f_new)
                rho_g_norm = None
            elif cfg.method == "HOLO":
                f_new, rho_lo, info = holo_step(prob, state.f, cfg)
                state = FState(f=f_new)
                rho_f_new = moments_of(f_new)
                rho_g_norm = None
            else:
                state, rho_lo, info = (mml_step if cfg.method == "MM_L" else mmholo_step)(
                    prob, state, cfg)
                rho_g = moments_of(state.g)
                rho_f_new = state.rho + rho_g
                rho_g_norm = rho_g.norm()
        except (DNCError, RealizabilityError, ZeroDivisionError, FloatingPointError) as exc:
            log.finish("DNC", note=f"inner solve failed: {exc}")
            return state, log

        crit52 = stopping_criterion("52", rho_f_new, rho_f_old)
        crit53 = (stopping_criterion("53", rho_f_new, rho_f_old, rho_lo)
                  if rho_lo is not None else None)
        row = {"crit_52": crit52, "crit_53": crit53, "rho_g_norm": rho_g_norm,
               "wall_seconds": time.perf_counter() - t0}
        row.update(info)
        if cfg.log_residual and not mm:
            left, right, _ = _iterate_inflows(
                prob, f=state.f, rho_f=rho_f_new, moment_implicit=False)
            res, _ = prob.assembly.residual(state.f, prob.base, prob.dt, prob.nu,
                                            left, right)
            row["residual"] = res
        log.add(**row)

        value = crit52 if cfg.criterion == "52" else crit53
        if not np.isfinite(value):
            log.finish("DNC", note="stopping criterion is not finite")
            return state, log
        if value < best:
            best = value
            since_best = 0
        else:
            since_best += 1
        growth_run = growth_run + 1 if value > GROWTH_FACTOR * best else 0
        if value < cfg.tol:
            log.finish("converged")
            return state, log
        if growth_run >= GROWTH_PATIENCE:
            log.finish("DNC", note="criterion grew 10x above its running minimum")
            return state, log
        rho_f_old = rho_f_new

    log.finish("max_iter" if since_best < STALL_WINDOW else "DNC",
               note="iteration budget exhausted")
    return state, log
