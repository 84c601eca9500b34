"""Pointwise closures and integral functionals of the Euler-Korteweg-Poisson model.

Every field-valued quantity here is an atomic (single-function) evaluation:
what the measure-valued theory writes as a Young-measure average is simply the
pointwise composition on the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import binom

from .grid import Grid
from .poisson import solve_poisson

VACUUM_RHO = 1e-12
VACUUM_MOMENTUM = 1e-8
NEGATIVE_RHO_TOL = 1e-10


@dataclass(frozen=True)
class Params:
    """Physical constants of the scaled system.

    ``b < 0`` is the repulsive potential, ``b > 0`` attractive.  ``friction`` is
    only meaningful for the unscaled form; the scaled equations fix it to one.
    ``dim`` is used solely for the attractive-case admissibility gate.
    """

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    gamma: float = 2.0
    epsilon: float = 0.1
    friction: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not self.c >= 0:
            raise ValueError("c must be nonnegative")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.friction > 0:
            raise ValueError("friction must be positive")
        if self.b > 0 and not self.gamma > 2.0 - 2.0 / self.dim:
            raise ValueError(
                f"attractive potential (b > 0) needs gamma > 2 - 2/d = {2.0 - 2.0 / self.dim}"
            )

    def with_epsilon(self, epsilon: float) -> "Params":
        return Params(self.a, self.b, self.c, self.gamma, epsilon, self.friction, self.dim)


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    internal: float
    potential: float
    korteweg: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.kinetic + self.internal + self.potential + self.korteweg
        )


# -- pointwise closures ------------------------------------------------------


def _check_nonnegative(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be nonnegative")
    return rho


def entropy_h(rho, params: Params):
    rho = _check_nonnegative(rho)
    return params.a * rho**params.gamma / (params.gamma - 1.0)


def h_prime(rho, params: Params):
    rho = _check_nonnegative(rho)
    g = params.gamma
    return params.a * g * rho ** (g - 1.0) / (g - 1.0)


def _power_bregman(t, gamma):
    """``(1 + t)^gamma - 1 - gamma t`` without cancellation near ``t = 0``."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 0.1
    ts = t[small]
    acc = np.zeros_like(ts)
    power = ts * ts
    for k in range(2, 24):
        acc += binom(gamma, k) * power
        power = power * ts
    out[small] = acc
    tl = t[~small]
    with np.errstate(divide="ignore"):
        out[~small] = np.expm1(gamma * np.log1p(tl)) - gamma * tl
    return out


def relative_h(rho, r, params: Params):
    """Bregman gap ``h(rho) - h(r) - h'(r)(rho - r)`` of the internal energy."""
    rho = _check_nonnegative(rho)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("reference density must be positive")
    g = params.gamma
    rho, r = np.broadcast_arrays(rho, r)
    gap = _power_bregman((rho - r) / r, g)
    out = params.a / (g - 1.0) * r**g * gap
    return out if out.ndim else float(out)


def relative_p(rho, r, params: Params):
    """Bregman gap of the pressure ``p(rho) = rho^gamma``."""
    rho = _check_nonnegative(rho)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("reference density must be positive")
    g = params.gamma
    out = rho**g - r**g - g * r ** (g - 1.0) * (rho - r)
    return out if np.ndim(out) else float(out)


# -- field functionals ---------------------------------------------------------


def kinetic_density(rho, momentum):
    """Pointwise ``|m|^2 / rho`` with the vacuum convention.

    Where ``rho <= 1e-12`` the value is zero provided ``|m| <= 1e-8``; a larger
    momentum on vacuum is an error.
    """
    m2 = np.sum(np.asarray(momentum) ** 2, axis=0)
    vac = rho <= VACUUM_RHO
    if np.any(vac):
        if np.any(np.sqrt(m2[vac]) > VACUUM_MOMENTUM):
            raise ValueError("nonzero momentum on vacuum")
        out = np.zeros_like(m2)
        out[~vac] = m2[~vac] / rho[~vac]
        return out
    return m2 / rho


def velocity(rho, momentum):
    """``m / rho`` with zero velocity on vacuum."""
    safe = np.where(rho > VACUUM_RHO, rho, 1.0)
    return np.where(rho > VACUUM_RHO, momentum / safe, 0.0)


def _admissible_density(rho):
    if np.any(rho < -NEGATIVE_RHO_TOL):
        raise ValueError(f"density below -{NEGATIVE_RHO_TOL}: min {rho.min():.3e}")
    return np.maximum(rho, 0.0)


def energy(state, params: Params) -> EnergyBreakdown:
    """Kinetic, internal, potential and capillary energy of a state.

    ``state`` needs ``grid``, ``rho`` and ``momentum`` attributes.
    """
    grid = state.grid
    rho = _admissible_density(grid.check_scalar(state.rho))
    m = grid.check_vector(state.momentum)
    kinetic = 0.5 * grid.integrate(kinetic_density(rho, m))
    return _static_energy(grid, rho, params, kinetic)


def free_energy(grid: Grid, rho, params: Params) -> EnergyBreakdown:
    """Energy of a density at rest (the gradient-flow Lyapunov functional)."""
    rho = _admissible_density(grid.check_scalar(rho))
    return _static_energy(grid, rho, params, 0.0)


def _static_energy(grid, rho, params, kinetic):
    internal = grid.integrate(entropy_h(rho, params))
    if params.b != 0.0:
        grad_phi = solve_poisson(grid, rho).grad_phi
        potential = -0.5 * params.b * grid.integrate(np.sum(grad_phi**2, axis=0))
    else:
        potential = 0.0
    if params.c != 0.0:
        korteweg = 0.5 * params.c * grid.integrate(np.sum(grid.gradient(rho) ** 2, axis=0))
    else:
        korteweg = 0.0
    return EnergyBreakdown(kinetic, internal, potential, korteweg)


def limit_velocity_U(grid: Grid, r, params: Params, phi_r=None) -> np.ndarray:
    """Corrector velocity ``-eps grad(h'(r) - b phi_r - c lap r)``."""
    r = grid.check_scalar(r)
    if np.any(r <= 0):
        raise ValueError("limit density must be strictly positive")
    potential = h_prime(r, params)
    if params.b != 0.0:
        if phi_r is None:
            phi_r = solve_poisson(grid, r).phi
        potential = potential - params.b * phi_r
    if params.c != 0.0:
        potential = potential - params.c * grid.laplacian(r)
    return -params.epsilon * grid.gradient(potential)


def transport_flux_divergence(grid: Grid, r, U) -> np.ndarray:
    """``div(r U (x) U)`` as a vector field (component i = sum_j d_j(r U_i U_j))."""
    out = np.zeros((grid.dim, *grid.shape))
    for i in range(grid.dim):
        out[i] = grid.divergence(r * U[i] * U)
    return out


def error_term_e(
    grid: Grid,
    times: Sequence[float],
    r_traj: Sequence,
    U_traj: Sequence,
    params: Params,
    t: float,
) -> np.ndarray:
    """Residual ``d_t(r U) + (1/eps) div(r U (x) U)`` at time ``t``.

    The time derivative is a centered difference over the neighbouring
    trajectory samples, so ``t`` must be an interior sample time.
    """
    times = np.asarray(times, dtype=float)
    if len(times) != len(r_traj) or len(times) != len(U_traj):
        raise ValueError("times, r_traj and U_traj must have equal length")
    hits = np.flatnonzero(np.isclose(times, t, rtol=0.0, atol=1e-12 * max(1.0, abs(t))))
    if hits.size == 0:
        raise ValueError(f"t={t} is not a trajectory sample time")
    i = int(hits[0])
    if i == 0 or i == len(times) - 1:
        raise ValueError("centered time derivative needs a sample on each side of t")
    lo, hi = i - 1, i + 1
    rU_lo = r_traj[lo] * U_traj[lo]
    rU_hi = r_traj[hi] * U_traj[hi]
    dt_rU = (rU_hi - rU_lo) / (times[hi] - times[lo])
    return dt_rU + transport_flux_divergence(grid, r_traj[i], U_traj[i]) / params.epsilon


def relative_entropy(state, r, params: Params, U=None, grad_phi_r=None) -> float:
    """Relative entropy of an EKP state with respect to a limit density ``r``.

    Sum of the kinetic gap ``rho |u - U|^2 / 2``, ``h(rho|r)``, the potential
    gap ``-(b/2)|grad phi_rho - grad phi_r|^2`` and the capillary gap
    ``(c/2)|grad rho - grad r|^2``.
    """
    grid = state.grid
    rho = _admissible_density(grid.check_scalar(state.rho))
    m = grid.check_vector(state.momentum)
    r = grid.check_scalar(r)
    if U is None:
        U = limit_velocity_U(grid, r, params)
    kinetic_density(rho, m)  # vacuum check only
    u = velocity(rho, m)
    total = 0.5 * grid.integrate(rho * np.sum((u - U) ** 2, axis=0))
    total += grid.integrate(relative_h(rho, r, params))
    if params.b != 0.0:
        if grad_phi_r is None:
            grad_phi_r = solve_poisson(grid, r).grad_phi
        diff = solve_poisson(grid, rho).grad_phi - grad_phi_r
        total -= 0.5 * params.b * grid.integrate(np.sum(diff**2, axis=0))
    if params.c != 0.0:
        diff = grid.gradient(rho - r)
        total += 0.5 * params.c * grid.integrate(np.sum(diff**2, axis=0))
    return float(total)


def wasserstein_surrogate(grid: Grid, rho, r, params: Params) -> float:
    """``int |rho - r|^min(gamma, 2)``, the atomic-measure transport gap."""
    p = min(params.gamma, 2.0)
    return grid.integrate(np.abs(grid.check_scalar(rho) - grid.check_scalar(r)) ** p)


# -- lower bounds for h(rho|r) ---------------------------------------------------


@dataclass
class HBoundsReport:
    gamma: float
    rho_range: tuple
    r_range: tuple
    split_R0: float
    c1: float  # min h/|rho-r|^gamma for rho > R0
    c2: float  # min h/|rho-r|^2 for rho <= R0
    c3: float | None  # min h/|rho-r|^2 everywhere (gamma >= 2 only)
    c_delta: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_h_lower_bounds(
    params: Params,
    scan_resolution: int = 1000,
    rho_range: tuple = (0.0, 10.0),
    r_range: tuple = (0.5, 2.0),
    deltas: Sequence[float] = (0.1, 0.01),
    split_R0: float | None = None,
    exponent: float | None = None,
) -> HBoundsReport:
    """Brute-force scan of the quadratic/power lower bounds on ``h(rho|r)``.

    ``rho`` runs over ``(rho_lo, rho_hi]`` (the left end excluded) and ``r`` over
    the closed interval ``r_range``.  Points with ``rho == r`` are skipped.
    ``exponent`` sets the power in the ``C(delta)`` numerator (default gamma).
    """
    r_lo, r_hi = r_range
    if not 0 < r_lo <= r_hi:
        raise ValueError("r_range must lie in (0, inf)")
    rho_lo, rho_hi = rho_range
    if rho_lo < 0 or rho_hi <= rho_lo:
        raise ValueError("rho_range must be a nonempty interval in [0, inf)")
    rho = np.linspace(rho_lo, rho_hi, scan_resolution + 1)[1:]
    r = np.linspace(r_lo, r_hi, scan_resolution)
    R, Rho = np.meshgrid(r, rho, indexing="ij")
    keep = Rho != R
    Rho, R = Rho[keep], R[keep]
    h = relative_h(Rho, R, params)
    d = np.abs(Rho - R)
    g = params.gamma
    R0 = 2.0 * r_hi if split_R0 is None else split_R0

    violations = []
    bad = h <= 0
    for i in np.flatnonzero(bad)[:20]:
        violations.append((float(Rho[i]), float(R[i]), float(h[i])))

    quad = h / d**2
    power = h / d**g
    upper = Rho > R0
    c1 = float(power[upper].min()) if np.any(upper) else float("nan")
    c2 = float(quad[~upper].min()) if np.any(~upper) else float("nan")
    c3 = float(quad.min()) if g >= 2 else None
    c_delta = {}
    q = g if exponent is None else exponent
    for delta in deltas:
        num = np.maximum(d**q - delta, 0.0)
        c_delta[float(delta)] = float(np.max(num / h))
    return HBoundsReport(g, (rho_lo, rho_hi), (r_lo, r_hi), R0, c1, c2, c3, c_delta, violations)
