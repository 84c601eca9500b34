"""The high-friction limit equation (Cahn-Hilliard / Keller-Segel gradient flow).

    d_t rho = div(a grad(rho^gamma) - b rho grad phi - c rho grad(lap rho)),
    -lap(phi) = rho - mean(rho).

This is the mobility-``rho`` gradient flow of
``F(rho) = int h(rho) - (b/2)|grad phi|^2 + (c/2)|grad rho|^2``, and it is the
continuity equation transported by the corrector velocity of
:func:`ekplab.models.limit_velocity_U`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .models import Params, free_energy
from .poisson import solve_poisson

log = logging.getLogger(__name__)

SCHEMES = ("explicit-rk3", "semi-implicit-spectral")
ENVELOPE_SLACK = 1e-6


@dataclass(frozen=True)
class ChksConfig:
    params: Params
    dt: float
    t_end: float
    scheme: str = "semi-implicit-spectral"
    sample_interval: float | None = None
    free_energy_tol_factor: float = 10.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.params.c > 0 and self.scheme != "semi-implicit-spectral":
            raise ValueError("c > 0 requires the semi-implicit scheme")


def rhs_chks(grid: Grid, rho, params: Params) -> np.ndarray:
    rho = grid.check_scalar(rho)
    if np.any(rho <= 0):
        raise ValueError("density must be strictly positive")
    flux = params.a * grid.grad_dealiased(rho**params.gamma)
    if params.b != 0.0:
        flux -= params.b * rho * solve_poisson(grid, rho).grad_phi
    if params.c != 0.0:
        flux -= params.c * rho * grid.gradient(grid.laplacian(rho))
    if params.b != 0.0 or params.c != 0.0:
        # the products above were formed pointwise; dealias them before div
        return grid.div_dealiased(flux)
    return grid.divergence(flux)


def linear_symbol(grid: Grid, params: Params, mean_rho: float) -> np.ndarray:
    """Linearization of :func:`rhs_chks` about the constant ``mean_rho``."""
    k2 = grid.k_squared
    g = params.gamma
    sym = -params.a * g * mean_rho ** (g - 1.0) * k2 - params.c * mean_rho * k2**2
    if params.b != 0.0:
        sym = sym + np.where(k2 > 0, params.b * mean_rho, 0.0)
    return sym


def _etd_coefficients(L: np.ndarray, dt: float, m: int = 32):
    """ETDRK4 weights by contour-integral averaging (stable for small ``L dt``)."""
    Ld = L * dt
    roots = np.exp(1j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
    lr = Ld[..., None] + roots
    E = np.exp(Ld)
    E2 = np.exp(Ld / 2)
    Q = dt * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=-1))
    f1 = dt * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3, axis=-1))
    f2 = dt * np.real(np.mean((2 + lr + np.exp(lr) * (-2 + lr)) / lr**3, axis=-1))
    f3 = dt * np.real(np.mean((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3, axis=-1))
    return E, E2, Q, f1, f2, f3


class _Stepper:
    def __init__(self, grid: Grid, params: Params, dt: float, scheme: str, mean_rho: float):
        self.grid, self.params, self.dt, self.scheme = grid, params, dt, scheme
        if scheme == "semi-implicit-spectral":
            self.L = linear_symbol(grid, params, mean_rho)
            self.coef = _etd_coefficients(self.L, dt)

    def __call__(self, rho):
        if self.scheme == "explicit-rk3":
            return self._ssprk3(rho)
        return self._etdrk4(rho)

    def _ssprk3(self, rho):
        g, p, dt = self.grid, self.params, self.dt
        r1 = rho + dt * rhs_chks(g, rho, p)
        r2 = 0.75 * rho + 0.25 * (r1 + dt * rhs_chks(g, r1, p))
        return rho / 3.0 + 2.0 / 3.0 * (r2 + dt * rhs_chks(g, r2, p))

    def _nonlinear_hat(self, v_hat):
        """Spectral ``rhs_chks`` minus its linear part, without leaving Fourier space needlessly."""
        g, p = self.grid, self.params
        ik, k2, mask = g.derivative_symbols, g.k_squared, g.dealias_mask
        rho = g.ifft(v_hat)
        if np.any(rho <= 0):
            raise ValueError("density must be strictly positive")
        p_hat = mask * g.fft(rho**p.gamma)
        out = -p.a * k2 * p_hat
        if p.b != 0.0 or p.c != 0.0:
            extra = np.zeros_like(rho, shape=(g.dim, *g.shape))
            if p.b != 0.0:
                phi_hat = np.where(k2 > 0, v_hat / np.where(k2 > 0, k2, 1.0), 0.0)
                extra -= p.b * rho * np.stack([g.ifft(s * phi_hat) for s in ik])
            if p.c != 0.0:
                extra -= p.c * rho * np.stack([g.ifft(-s * k2 * v_hat) for s in ik])
            out = out + sum(s * mask * g.fft(e) for s, e in zip(ik, extra))
        return out - self.L * v_hat

    def _etdrk4(self, rho):
        g = self.grid
        E, E2, Q, f1, f2, f3 = self.coef
        N = self._nonlinear_hat

        v = g.fft(rho)
        Nv = N(v)
        a = E2 * v + Q * Nv
        Na = N(a)
        b = E2 * v + Q * Na
        Nb = N(b)
        c = E2 * a + Q * (2 * Nb - Nv)
        Nc = N(c)
        return g.ifft(E * v + f1 * Nv + 2 * f2 * (Na + Nb) + f3 * Nc)


def step(grid: Grid, rho, config: ChksConfig) -> np.ndarray:
    stepper = _Stepper(grid, config.params, config.dt, config.scheme, grid.integrate(rho))
    return stepper(grid.check_scalar(rho))


# -- maximum-principle envelope -------------------------------------------------


@dataclass(frozen=True)
class Envelope:
    """Exponential bounds on the extrema of a repulsive Keller-Segel solution.

    ``upper(t) = max(rho0) exp(M t)`` and
    ``lower(t) = min(rho0) exp(-(Mmax + M) t)`` with ``M`` the mean density and
    ``Mmax = max(rho0) exp(M T)`` over the horizon ``T``.
    """

    rho_star: float
    rho_upper_star: float
    mean: float
    horizon: float

    @property
    def sup_bound(self) -> float:
        return self.rho_upper_star * math.exp(self.mean * self.horizon)

    def upper(self, t: float) -> float:
        return self.rho_upper_star * math.exp(self.mean * t)

    def lower(self, t: float) -> float:
        return self.rho_star * math.exp(-(self.sup_bound + self.mean) * t)

    def contains(self, min_rho: float, max_rho: float, t: float, slack: float = ENVELOPE_SLACK) -> bool:
        return (min_rho >= self.lower(t) * (1 - slack)) and (max_rho <= self.upper(t) * (1 + slack))


def envelope_applies(params: Params) -> bool:
    """The bounds are derived for unit diffusion, unit repulsion and no capillarity."""
    return params.c == 0.0 and params.b == -1.0 and params.a == 1.0


def max_principle_envelope(grid: Grid, rho0, horizon: float) -> Envelope:
    rho0 = grid.check_scalar(rho0)
    if np.any(rho0 <= 0):
        raise ValueError("initial density must be strictly positive")
    return Envelope(float(rho0.min()), float(rho0.max()), grid.integrate(rho0), float(horizon))


# -- monitored runs ----------------------------------------------------------------


@dataclass
class ChksRecord:
    time: float
    free_energy: float
    min_rho: float
    max_rho: float
    mass: float
    envelope: tuple | None = None


@dataclass
class ChksResult:
    times: np.ndarray
    samples: list
    records: list
    envelope: Envelope | None
    violations: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and not self.violations

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]


def run(grid: Grid, rho0, config: ChksConfig, keep_samples: bool = True) -> ChksResult:
    """Integrate to ``t_end``, monitoring mass, free energy and (where valid) the envelope."""
    from .ekp import sampling_plan

    rho0 = grid.check_scalar(rho0)
    if np.any(rho0 <= 0):
        raise ValueError("initial density must be strictly positive")
    params = config.params
    n_samples, steps, dt = sampling_plan(config.t_end, config.sample_interval, config.dt)
    stepper = _Stepper(grid, params, dt, config.scheme, grid.integrate(rho0))
    envelope = max_principle_envelope(grid, rho0, config.t_end) if envelope_applies(params) else None

    f0 = free_energy(grid, rho0, params).total
    f_tol = config.free_energy_tol_factor * dt * config.t_end * abs(f0)
    mass0 = grid.integrate(rho0)
    result = ChksResult(np.zeros(n_samples + 1), [rho0] if keep_samples else [], [], envelope)

    def record(t, rho):
        f = free_energy(grid, rho, params).total
        rec = ChksRecord(t, f, float(rho.min()), float(rho.max()), grid.integrate(rho))
        if envelope is not None:
            rec.envelope = (envelope.lower(t), envelope.upper(t))
            if not envelope.contains(rec.min_rho, rec.max_rho, t):
                result.violations.append(
                    f"t={t:.6g}: extrema [{rec.min_rho:.6g}, {rec.max_rho:.6g}] outside "
                    f"envelope [{rec.envelope[0]:.6g}, {rec.envelope[1]:.6g}]"
                )
        if result.records and f > result.records[-1].free_energy + f_tol:
            result.violations.append(f"t={t:.6g}: free energy increased to {f:.12g}")
        if abs(rec.mass - mass0) > 1e-10:
            result.violations.append(f"t={t:.6g}: mass drift {rec.mass - mass0:.3e}")
        result.records.append(rec)

    record(0.0, rho0)
    rho = rho0
    si = steps * dt
    for j in range(1, n_samples + 1):
        for _ in range(steps):
            rho = stepper(rho)
        if not np.all(np.isfinite(rho)):
            result.error = f"non-finite density before t={j * si:.6g}"
            log.warning(result.error)
            break
        if np.any(rho <= 0):
            result.error = f"density lost positivity before t={j * si:.6g}"
            log.warning(result.error)
            break
        t = j * si
        result.times[j] = t
        if keep_samples:
            result.samples.append(rho)
        record(t, rho)
    if not keep_samples:
        result.samples.append(rho)
    return result
