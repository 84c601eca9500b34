"""Time integration of the scaled Euler-Korteweg-Poisson system with friction.

The momentum equation is advanced in divergence form::

    d_t m = -(1/eps) div(m (x) m / rho) - m / eps^2 - (a/eps) grad(rho^gamma)
            + (b/eps) [div(|grad phi|^2 I / 2 - grad phi (x) grad phi) + M grad phi]
            + (c/eps) div(|grad rho|^2 I / 2 + rho lap(rho) I - grad rho (x) grad rho)

The friction term is integrated exactly by an integrating factor wrapped
around an explicit SSP-RK3 (Shu-Osher) scheme for everything else.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid
from .models import (
    EnergyBreakdown,
    Params,
    VACUUM_MOMENTUM,
    VACUUM_RHO,
    energy,
    kinetic_density,
    velocity,
)
from .poisson import solve_poisson

log = logging.getLogger(__name__)

IDENTITY_TOL = 1e-8


@dataclass(frozen=True)
class State:
    grid: Grid
    rho: np.ndarray
    momentum: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rho", self.grid.check_scalar(self.rho))
        object.__setattr__(self, "momentum", self.grid.check_vector(self.momentum))

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.rho)

    @classmethod
    def at_rest(cls, grid: Grid, rho, time: float = 0.0) -> "State":
        return cls(grid, rho, np.zeros((grid.dim, *grid.shape)), time)


@dataclass(frozen=True)
class EkpConfig:
    """Run controls.  ``dt=None`` picks the stability heuristic at start-up."""

    params: Params
    t_end: float
    dt: float | None = None
    imex_friction: bool = True
    clip_floor: float = 1e-8
    sample_interval: float | None = None
    cfl: float = 0.3
    identity_check_every: int = 0
    spatial_terms: bool = True
    energy_tol_factor: float = 10.0

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.sample_interval is not None and not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")


class SolverAbort(RuntimeError):
    """Raised when a step produces non-finite values; keeps the last good state."""

    def __init__(self, message: str, last_state: State):
        super().__init__(message)
        self.last_state = last_state


# -- right-hand side -----------------------------------------------------------


def _stress_divergence(grid: Grid, scalar, vec) -> np.ndarray:
    """``div(scalar I - vec (x) vec)`` with dealiased products."""
    out = np.empty((grid.dim, *grid.shape))
    for i in range(grid.dim):
        out[i] = grid.ddx(scalar, i, dealias=True) - grid.div_dealiased(vec[i] * vec)
    return out


def _check_vacuum(rho, m):
    vac = rho <= VACUUM_RHO
    if np.any(vac) and np.any(np.sqrt(np.sum(m**2, axis=0))[vac] > VACUUM_MOMENTUM):
        raise ValueError("vacuum encountered with nonzero momentum")


def _transport_rhs(grid: Grid, rho, m, params: Params):
    """Everything except friction: returns ``(d_rho, d_m)``."""
    eps = params.epsilon
    _check_vacuum(rho, m)
    d_rho = -grid.divergence(m) / eps
    u = velocity(rho, m)
    d_m = np.empty_like(m)
    for i in range(grid.dim):
        d_m[i] = -grid.div_dealiased(m[i] * u)
    d_m -= params.a * grid.grad_dealiased(np.maximum(rho, 0.0) ** params.gamma)
    if params.b != 0.0:
        pot = solve_poisson(grid, rho)
        gphi = pot.grad_phi
        half_sq = 0.5 * np.sum(gphi**2, axis=0)
        d_m += params.b * (_stress_divergence(grid, half_sq, gphi) + pot.source_mean * gphi)
    if params.c != 0.0:
        grho = grid.gradient(rho)
        iso = 0.5 * np.sum(grho**2, axis=0) + rho * grid.laplacian(rho)
        d_m += params.c * _stress_divergence(grid, iso, grho)
    return d_rho, d_m / eps


def rhs_ekp(state: State, params: Params):
    """Full right-hand side ``(d_rho, d_momentum)`` including friction."""
    d_rho, d_m = _transport_rhs(state.grid, state.rho, state.momentum, params)
    return d_rho, d_m - state.momentum / params.epsilon**2


def identity_residuals(grid: Grid, rho, params: Params | None = None):
    """Max-norm residuals of the two stress identities for a density.

    Returns ``(poisson, korteweg)`` where::

        poisson  = |(rho - M) grad phi - grad(|grad phi|^2 / 2) + div(grad phi (x) grad phi)|
        korteweg = |rho grad lap rho - grad(|grad rho|^2 / 2 + rho lap rho) + div(grad rho (x) grad rho)|
    """
    rho = grid.check_scalar(rho)
    pot = solve_poisson(grid, rho)
    g = pot.grad_phi
    lhs = (rho - pot.source_mean) * g
    rhs = np.empty_like(lhs)
    half = 0.5 * np.sum(g**2, axis=0)
    for i in range(grid.dim):
        rhs[i] = grid.ddx(half, i) - grid.divergence(g[i] * g)
    res_p = float(np.max(np.abs(lhs - rhs)))

    gr = grid.gradient(rho)
    lap = grid.laplacian(rho)
    lhs = rho * grid.gradient(lap)
    iso = 0.5 * np.sum(gr**2, axis=0) + rho * lap
    for i in range(grid.dim):
        rhs[i] = grid.ddx(iso, i) - grid.divergence(gr[i] * gr)
    res_k = float(np.max(np.abs(lhs - rhs)))
    return res_p, res_k


# -- time stepping -------------------------------------------------------------


def stable_dt(state: State, params: Params, cfl: float = 0.3) -> float:
    """Stability heuristic for the explicit part.

    ``dt <= cfl * min(eps dx / (max|u| + c_s), eps dx^2 / (pi sqrt(c rho_max)))``
    with sound speed ``c_s = sqrt(a gamma rho_max^(gamma-1))``.  Friction does
    not enter because it is integrated exactly.
    """
    grid = state.grid
    dx = grid.spacing
    rho_max = float(np.max(state.rho))
    cs = math.sqrt(params.a * params.gamma * max(rho_max, 0.0) ** (params.gamma - 1.0))
    u = velocity(state.rho, state.momentum)
    umax = float(np.max(np.sqrt(np.sum(u**2, axis=0))))
    bound = params.epsilon * dx / max(umax + cs, 1e-300)
    if params.c > 0:
        bound = min(bound, params.epsilon * dx**2 / (math.pi * math.sqrt(params.c * rho_max)))
    return cfl * bound


def _dissipation_rate(grid, rho, m, eps):
    return grid.integrate(kinetic_density(np.maximum(rho, 0.0), m)) / eps**2


def _clip(grid: Grid, rho, floor: float):
    low = rho < floor
    if not np.any(low):
        return rho, 0
    # raise low points to the floor and take the added mass proportionally
    # from the excess above it, so no point is pushed back under the floor
    mass = grid.integrate(rho)
    excess = np.where(low, 0.0, rho - floor)
    scale = (mass - floor) / grid.integrate(excess)  # unit volume
    if not scale > 0:
        raise ValueError("mass too small for the clipping floor")
    return floor + scale * excess, int(np.count_nonzero(low))


def _advance(state: State, dt: float, params: Params, config: EkpConfig):
    """One step; returns ``(new_state, dissipation_increment, clipped_points)``."""
    grid = state.grid
    eps = params.epsilon

    if config.spatial_terms:
        def transport(rho, m):
            return _transport_rhs(grid, rho, m, params)
    else:
        def transport(rho, m):
            return np.zeros_like(rho), np.zeros_like(m)

    if config.imex_friction:
        def rhs(rho, m):
            return transport(rho, m)
        E = lambda h: math.exp(-h / eps**2)  # noqa: E731
    else:
        def rhs(rho, m):
            d_rho, d_m = transport(rho, m)
            return d_rho, d_m - m / eps**2
        E = lambda h: 1.0  # noqa: E731

    def disp(rho, m):
        return _dissipation_rate(grid, rho, m, eps)

    r0, m0 = state.rho, state.momentum
    # Shu-Osher SSP-RK3 in integrating-factor (Lawson) form, nodes 0, 1, 1/2
    k_r, k_m = rhs(r0, m0)
    d0 = disp(r0, m0)
    r1 = r0 + dt * k_r
    m1 = E(dt) * (m0 + dt * k_m)

    k_r, k_m = rhs(r1, m1)
    d1 = disp(r1, m1)
    r2 = 0.75 * r0 + 0.25 * (r1 + dt * k_r)
    m2 = 0.75 * E(0.5 * dt) * m0 + 0.25 * E(-0.5 * dt) * (m1 + dt * k_m)

    k_r, k_m = rhs(r2, m2)
    d2 = disp(r2, m2)
    r3 = r0 / 3.0 + 2.0 / 3.0 * (r2 + dt * k_r)
    m3 = E(dt) * m0 / 3.0 + 2.0 / 3.0 * E(0.5 * dt) * (m2 + dt * k_m)
    # same weights applied to the dissipation quadrature
    d_inc = dt * (d0 + d1 + 4.0 * d2) / 6.0

    if not (np.all(np.isfinite(r3)) and np.all(np.isfinite(m3))):
        raise SolverAbort(f"non-finite values at t={state.time + dt:.6g}", state)
    r3, clipped = _clip(grid, r3, config.clip_floor)
    return State(grid, r3, m3, state.time + dt), d_inc, clipped


def step(state: State, config: EkpConfig, dt: float | None = None) -> State:
    """Advance one step of size ``dt`` (default ``config.dt``)."""
    dt = config.dt if dt is None else dt
    if dt is None:
        dt = stable_dt(state, config.params, config.cfl)
    return _advance(state, dt, config.params, config)[0]


# -- monitored runs --------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    time: float
    energy: EnergyBreakdown
    dissipation: float
    min_rho: float
    max_rho: float
    mass: float
    identity_residuals: tuple | None = None
    clipped_points: int = 0

    @property
    def energy_balance(self) -> float:
        """``E(t) + dissipation(t)``; equals ``E(0)`` in the continuum limit."""
        return self.energy.total + self.dissipation


@dataclass
class RunResult:
    samples: list
    records: list
    dt: float
    energy_tol: float
    violations: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and not self.violations

    @property
    def final(self) -> State:
        return self.samples[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.samples])

    def energy_margin(self) -> float:
        """``E(tau) + dissipation(tau) - E(0)`` at the last sample."""
        return self.records[-1].energy_balance - self.records[0].energy.total


def sampling_plan(t_end: float, sample_interval: float | None, dt: float):
    """Sample count, steps per sample and the adjusted step size."""
    si = t_end if sample_interval is None else sample_interval
    n_samples = int(round(t_end / si))
    if n_samples < 1 or abs(n_samples * si - t_end) > 1e-9 * t_end:
        raise ValueError("t_end must be an integer multiple of sample_interval")
    steps = max(1, math.ceil(si / dt - 1e-9))
    return n_samples, steps, si / steps


def run(initial: State, config: EkpConfig, observer=None) -> RunResult:
    """Integrate to ``config.t_end`` recording diagnostics at each sample time.

    Monitor violations (energy inequality, identity residuals) are recorded in
    ``RunResult.violations``; a non-finite state ends the run with ``error``
    set and the samples gathered so far.  ``observer(state)`` is called at
    every sample, including the initial one.  Every sample is held to the
    single run tolerance ``energy_tol_factor * dt^2 * t_end * |E(0)|``.
    """
    params = config.params
    grid = initial.grid
    dt_max = stable_dt(initial, params, config.cfl)
    if config.dt is None:
        dt = dt_max
    else:
        if config.spatial_terms and config.dt > dt_max * (1 + 1e-12):
            raise ValueError(f"dt={config.dt:.3e} exceeds the stability heuristic {dt_max:.3e}")
        dt = config.dt
    n_samples, steps, dt = sampling_plan(config.t_end, config.sample_interval, dt)
    sample_interval = steps * dt

    e0 = energy(initial, params)
    energy_tol = config.energy_tol_factor * dt**2 * config.t_end * abs(e0.total)
    result = RunResult([initial], [], dt, energy_tol)
    clipped_total = 0
    dissipation = 0.0

    def record(state):
        res = None
        k = len(result.records)
        if config.identity_check_every and k % config.identity_check_every == 0:
            res = identity_residuals(grid, state.rho, params)
            if max(res) > IDENTITY_TOL:
                result.violations.append(
                    f"t={state.time:.6g}: identity residuals {res[0]:.3e}, {res[1]:.3e}"
                )
        en = energy(state, params)
        rec = DiagnosticsRecord(
            time=state.time,
            energy=en,
            dissipation=dissipation,
            min_rho=float(state.rho.min()),
            max_rho=float(state.rho.max()),
            mass=state.mass,
            identity_residuals=res,
            clipped_points=clipped_total,
        )
        result.records.append(rec)
        margin = rec.energy_balance - e0.total
        tol = energy_tol
        if margin > tol:
            result.violations.append(
                f"t={state.time:.6g}: energy inequality margin {margin:.3e} > tol {tol:.3e}"
            )
        if observer is not None:
            observer(state)

    record(initial)
    state = initial
    for j in range(1, n_samples + 1):
        try:
            for _ in range(steps):
                state, d_inc, clipped = _advance(state, dt, params, config)
                dissipation += d_inc
                clipped_total += clipped
        except (SolverAbort, ValueError) as exc:
            result.error = str(exc)
            log.warning("EKP run aborted: %s", exc)
            break
        # pin the clock to the sampling lattice to avoid drift
        state = replace(state, time=j * sample_interval)
        result.samples.append(state)
        record(state)
    if clipped_total:
        log.info("density clipped at %d grid points over the run", clipped_total)
    return result
