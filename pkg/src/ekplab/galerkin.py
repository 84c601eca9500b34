"""Fourier-Galerkin construction for the viscously regularized EKP system.

The velocity lives in the span of ``n`` real trigonometric vector modes
``omega_i`` and its coefficients obey ``M(rho) dc/dt = F(rho, c)`` with
``M_ij = int rho omega_i . omega_j``.  The density is transported by the
Galerkin velocity; it is advanced on the collocation grid by the spectral
continuity equation, and the closed-form characteristics representation is
provided separately as a cross-check.

The regularization ``-mu ((u; omega_i))`` uses the per-mode weight
``sum_{j<=6} |2 pi k|^(2j)``, which is diagonal on this basis.  Its stiffness
(``mu (2 pi k)^12``) rules out explicit stepping, so the coupled system is
integrated with an implicit Radau method.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from .grid import TWO_PI, Grid
from .models import Params, entropy_h, h_prime
from .poisson import solve_poisson

log = logging.getLogger(__name__)

SOBOLEV_ORDER = 6
MASS_COND_LIMIT = 1e12
TERMS = ("convection", "pressure", "potential", "korteweg", "friction", "regularization")

_CONST, _COS, _SIN = 0, 1, 2


class GalerkinAbort(RuntimeError):
    pass


def sobolev_weight(k2) -> np.ndarray:
    """``sum_{j=0}^{6} |2 pi k|^(2j)`` given ``|2 pi k|^2``."""
    k2 = np.asarray(k2, dtype=float)
    return sum(k2**j for j in range(SOBOLEV_ORDER + 1))


def sobolev_inner(grid: Grid, u, v) -> float:
    """Order-6 periodic Sobolev product of two vector fields, evaluated per mode."""
    u = grid.check_vector(u)
    v = grid.check_vector(v)
    w = sobolev_weight(grid.k_squared)
    # rfft stores half the spectrum: interior columns of the last axis count twice
    mult = np.full(grid.spectral_shape, 2.0)
    mult[..., 0] = 1.0
    if grid.n % 2 == 0:
        mult[..., -1] = 1.0
    total = 0.0
    for uj, vj in zip(u, v):
        uh, vh = grid.fft(uj), grid.fft(vj)
        total += np.sum(mult * w * np.real(uh * np.conj(vh)))
    return float(total / grid.n ** (2 * grid.dim))


def _half_plane(dim: int, kmax: int):
    """Nonzero wavevectors with one representative of each +/- pair."""
    rng = range(-kmax, kmax + 1)
    if dim == 1:
        ks = [(k,) for k in range(1, kmax + 1)]
    else:
        ks = [(kx, ky) for kx in rng for ky in rng if (kx > 0) or (kx == 0 and ky > 0)]
    return sorted(ks, key=lambda k: (sum(x * x for x in k), k))


@dataclass(frozen=True)
class GalerkinBasis:
    """Real trigonometric vector modes, L2-orthonormal on the unit torus.

    Modes are enumerated by increasing ``|k|`` and, within a wavevector, as
    cosine then sine, each along every coordinate axis.  ``exclude_constant``
    drops the ``k = 0`` modes (mean-free velocities).
    """

    dim: int
    n: int
    exclude_constant: bool = False
    wavevectors: np.ndarray = field(init=False, repr=False)
    kinds: np.ndarray = field(init=False, repr=False)
    axes: np.ndarray = field(init=False, repr=False)
    sobolev_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n < 1:
            raise ValueError("basis needs at least one mode")
        entries = []
        if not self.exclude_constant:
            entries += [((0,) * self.dim, _CONST, j) for j in range(self.dim)]
        kmax = self.n + 1 if self.dim == 1 else int(np.sqrt(self.n)) + 2
        for k in _half_plane(self.dim, kmax):
            if sum(x * x for x in k) > kmax * kmax:
                continue
            for kind in (_COS, _SIN):
                entries += [(k, kind, j) for j in range(self.dim)]
        entries = entries[: self.n]
        ks = np.array([e[0] for e in entries], dtype=int).reshape(self.n, self.dim)
        object.__setattr__(self, "wavevectors", ks)
        object.__setattr__(self, "kinds", np.array([e[1] for e in entries]))
        object.__setattr__(self, "axes", np.array([e[2] for e in entries]))
        k2 = np.sum((TWO_PI * ks) ** 2, axis=1)
        object.__setattr__(self, "sobolev_weights", sobolev_weight(k2))

    @property
    def max_wavenumber(self) -> int:
        return int(np.abs(self.wavevectors).max()) if self.n else 0

    def _phase_and_amp(self, points):
        """Scalar mode values and their gradients at ``points`` of shape (dim, P)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        theta = TWO_PI * (self.wavevectors @ points)  # (n, P)
        val = np.where(
            self.kinds[:, None] == _CONST,
            1.0,
            np.where(self.kinds[:, None] == _COS, np.sqrt(2) * np.cos(theta), np.sqrt(2) * np.sin(theta)),
        )
        dval = np.where(
            self.kinds[:, None] == _CONST,
            0.0,
            np.where(self.kinds[:, None] == _COS, -np.sqrt(2) * np.sin(theta), np.sqrt(2) * np.cos(theta)),
        )
        # d/dx_j of the scalar mode = dval * 2 pi k_j
        grad = dval[:, None, :] * (TWO_PI * self.wavevectors)[:, :, None]  # (n, dim, P)
        return val, grad

    def fields(self, grid: Grid) -> np.ndarray:
        """Mode fields on a grid, shape ``(n, dim, *grid.shape)``."""
        if grid.dim != self.dim:
            raise ValueError("grid dimension does not match basis")
        if 2 * self.max_wavenumber >= grid.n // 2:
            raise ValueError("grid too coarse to resolve products of basis modes")
        pts = np.stack([c.ravel() for c in grid.coords()])
        val, _ = self._phase_and_amp(pts)
        out = np.zeros((self.n, self.dim, pts.shape[1]))
        out[np.arange(self.n), self.axes] = val
        return out.reshape(self.n, self.dim, *grid.shape)

    def velocity_at(self, coeffs, points) -> np.ndarray:
        """``sum_i c_i omega_i`` at arbitrary points, shape ``(dim, P)``."""
        val, _ = self._phase_and_amp(points)
        out = np.zeros((self.dim, val.shape[1]))
        np.add.at(out, self.axes, np.asarray(coeffs)[:, None] * val)
        return out

    def divergence_at(self, coeffs, points) -> np.ndarray:
        _, grad = self._phase_and_amp(points)
        return np.einsum("i,ip->p", np.asarray(coeffs), grad[np.arange(self.n), self.axes])

    def project(self, grid: Grid, u) -> np.ndarray:
        """L2 coefficients ``c_i = int u . omega_i``."""
        u = grid.check_vector(u)
        modes = self.fields(grid)
        return np.array([grid.integrate(np.sum(m * u, axis=0)) for m in modes])


@dataclass(frozen=True)
class GalerkinState:
    grid: Grid
    coeffs: np.ndarray
    rho: np.ndarray
    time: float = 0.0


class _Context:
    """Grid-level caches shared by every right-hand-side evaluation."""

    def __init__(self, grid: Grid, basis: GalerkinBasis, params: Params, mu: float, terms):
        unknown = set(terms) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown Galerkin terms {sorted(unknown)}")
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.grid, self.basis, self.params, self.mu = grid, basis, params, mu
        self.terms = frozenset(terms)
        self.modes = basis.fields(grid)
        self.flat = self.modes.reshape(basis.n, -1)
        self.mode_grads = np.stack([[grid.gradient(m[j]) for j in range(grid.dim)] for m in self.modes])

    def velocity(self, c):
        return np.tensordot(c, self.modes, axes=1)

    def mass_matrix(self, rho):
        weighted = (self.modes * rho).reshape(self.basis.n, -1)
        return weighted @ self.flat.T / rho.size

    def continuity(self, rho, u):
        return -self.grid.divergence(rho * u) / self.params.epsilon

    def force(self, rho, c, u):
        """Everything except the mass matrix: ``F`` such that ``M dc/dt = F``."""
        g, p, eps, t = self.grid, self.params, self.params.epsilon, self.terms
        body = np.zeros_like(u)
        if "convection" in t:
            grad_u = np.tensordot(c, self.mode_grads, axes=1)  # (dim_i, dim_j, ...) = d_j u_i
            body -= rho * np.einsum("ij...,j...->i...", grad_u, u) / eps
        if "pressure" in t:
            body -= rho * g.gradient(h_prime(rho, p)) / eps
        if "potential" in t and p.b != 0.0:
            body += p.b * rho * solve_poisson(g, rho).grad_phi / eps
        if "korteweg" in t and p.c != 0.0:
            body += p.c * rho * g.gradient(g.laplacian(rho)) / eps
        if "friction" in t:
            body -= rho * u / eps**2
        F = self.flat @ body.reshape(-1) / rho.size
        if "regularization" in t:
            F -= self.mu * self.basis.sobolev_weights * c
        return F


def _solve_mass(M, F):
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MASS_COND_LIMIT:
        raise GalerkinAbort(f"mass matrix condition number {cond:.3e} exceeds {MASS_COND_LIMIT:.0e}")
    return np.linalg.solve(M, F)


def galerkin_rhs(
    state: GalerkinState,
    basis: GalerkinBasis,
    params: Params,
    mu: float,
    terms=TERMS,
    _ctx: _Context | None = None,
) -> np.ndarray:
    """Coefficient derivative ``dc/dt`` for the current density and velocity."""
    ctx = _ctx or _Context(state.grid, basis, params, mu, terms)
    rho = state.grid.check_scalar(state.rho)
    if np.any(rho <= 0):
        raise ValueError("density must be strictly positive")
    c = np.asarray(state.coeffs, dtype=float)
    u = ctx.velocity(c)
    return _solve_mass(ctx.mass_matrix(rho), ctx.force(rho, c, u))


# -- characteristics ---------------------------------------------------------------


class ModalVelocity:
    """Velocity history ``t -> sum_i c_i(t) omega_i`` evaluated exactly off-grid."""

    def __init__(self, basis: GalerkinBasis, coeff_fn):
        self.basis = basis
        self.coeff_fn = coeff_fn

    def __call__(self, t, points):
        return self.basis.velocity_at(self.coeff_fn(t), points)

    def divergence(self, t, points):
        return self.basis.divergence_at(self.coeff_fn(t), points)


class SampledVelocity:
    """Velocity history from grid snapshots.

    Space: trigonometric interpolation.  Time: piecewise-linear between
    snapshots, so accuracy is limited by the snapshot spacing.
    """

    def __init__(self, grid: Grid, times, fields):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.fields = [grid.check_vector(f) for f in fields]
        if len(self.fields) != self.times.size or self.times.size < 1:
            raise ValueError("need one field per sample time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be increasing")
        self.divs = [grid.divergence(f) for f in self.fields]

    def _blend(self, t, seq, points, vector):
        i = int(np.clip(np.searchsorted(self.times, t) - 1, 0, max(self.times.size - 2, 0)))
        if self.times.size == 1:
            w, j = 0.0, 0
        else:
            j = i + 1
            w = (t - self.times[i]) / (self.times[j] - self.times[i])
        interp = self.grid.interpolate
        if vector:
            a = np.stack([interp(f, points) for f in seq[i]])
            b = np.stack([interp(f, points) for f in seq[j]])
        else:
            a, b = interp(seq[i], points), interp(seq[j], points)
        return (1 - w) * a + w * b

    def __call__(self, t, points):
        return self._blend(t, self.fields, points, True)

    def divergence(self, t, points):
        return self._blend(t, self.divs, points, False)


def advect_density_characteristics(
    grid: Grid, rho0, velocity, t: float, epsilon: float, steps: int = 200
) -> np.ndarray:
    """Density at time ``t`` from the Lagrangian representation.

    ``rho(t, x) = rho0(X(0; t, x)) exp(-(1/eps) int_0^t div u(s, X(s; t, x)) ds)``
    where ``dX/ds = u(s, X) / eps`` and ``X(t; t, x) = x``.  Characteristics are
    traced backward with RK4; the divergence integral uses the trapezoid rule
    on the RK4 nodes.  ``velocity`` must provide ``__call__(s, points)`` and
    ``divergence(s, points)``.
    """
    rho0 = grid.check_scalar(rho0)
    if t < 0 or steps < 1:
        raise ValueError("need t >= 0 and at least one step")
    X = np.stack([c.ravel() for c in grid.coords()])
    if t == 0:
        return rho0.copy()
    h = -t / steps
    s = t
    integral = np.zeros(X.shape[1])
    div_prev = velocity.divergence(s, X)
    for _ in range(steps):
        k1 = velocity(s, X) / epsilon
        k2 = velocity(s + h / 2, X + h / 2 * k1) / epsilon
        k3 = velocity(s + h / 2, X + h / 2 * k2) / epsilon
        k4 = velocity(s + h, X + h * k3) / epsilon
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise GalerkinAbort(f"characteristic trace diverged near s={s + h:.6g}")
        s += h
        div_next = velocity.divergence(s, X)
        integral += 0.5 * abs(h) * (div_prev + div_next)
        div_prev = div_next
    foot = grid.interpolate(rho0, np.mod(X, 1.0)).reshape(grid.shape)
    return foot * np.exp(-integral.reshape(grid.shape) / epsilon)


# -- coupled runs ---------------------------------------------------------------------


@dataclass(frozen=True)
class GalerkinConfig:
    params: Params
    mu: float
    n_modes: int
    t_end: float
    sample_interval: float
    max_step: float = 1e-3
    exclude_constant: bool = False
    terms: tuple = TERMS
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if not (self.t_end > 0 and self.sample_interval > 0 and self.max_step > 0):
            raise ValueError("t_end, sample_interval and max_step must be positive")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass
class GalerkinTrajectory:
    grid: Grid
    basis: GalerkinBasis
    config: GalerkinConfig
    times: np.ndarray
    coeffs: np.ndarray  # (samples, n)
    rhos: np.ndarray  # (samples, *grid.shape)
    dissipation_mu: np.ndarray
    dissipation_friction: np.ndarray
    largest_step: float
    error: str | None = None
    coeff_fn: object = field(default=None, repr=False)

    def velocity_history(self) -> ModalVelocity:
        """Continuous-in-time velocity from the integrator's dense output."""
        if self.coeff_fn is None:
            raise ValueError("trajectory has no dense output")
        return ModalVelocity(self.basis, self.coeff_fn)

    def states(self):
        return [GalerkinState(self.grid, c, r, t) for t, c, r in zip(self.times, self.coeffs, self.rhos)]


def run_galerkin(grid: Grid, rho0, u0, config: GalerkinConfig) -> GalerkinTrajectory:
    """Integrate the coupled density/coefficient system and the two dissipation integrals."""
    rho0 = grid.check_scalar(rho0)
    if np.any(rho0 <= 0):
        raise ValueError("initial density must be strictly positive")
    basis = GalerkinBasis(grid.dim, config.n_modes, config.exclude_constant)
    ctx = _Context(grid, basis, config.params, config.mu, config.terms)
    n, size, eps = basis.n, rho0.size, config.params.epsilon
    c0 = basis.project(grid, u0)

    def rhs(_t, y):
        c = y[:n]
        rho = y[n : n + size].reshape(grid.shape)
        u = ctx.velocity(c)
        dc = _solve_mass(ctx.mass_matrix(rho), ctx.force(rho, c, u))
        drho = ctx.continuity(rho, u)
        d_mu = config.mu * float(np.sum(basis.sobolev_weights * c**2)) if "regularization" in ctx.terms else 0.0
        d_fr = grid.integrate(rho * np.sum(u**2, axis=0)) / eps**2 if "friction" in ctx.terms else 0.0
        return np.concatenate([dc, drho.ravel(), [d_mu, d_fr]])

    n_samples = int(round(config.t_end / config.sample_interval))
    t_eval = np.linspace(0.0, n_samples * config.sample_interval, n_samples + 1)
    y0 = np.concatenate([c0, rho0.ravel(), [0.0, 0.0]])
    error, coeff_fn = None, None
    try:
        sol = solve_ivp(
            rhs, (0.0, t_eval[-1]), y0, method="Radau", t_eval=t_eval,
            rtol=config.rtol, atol=config.atol, max_step=config.max_step, dense_output=True,
        )
        if not sol.success:
            error = sol.message
        ys, ts = sol.y.T, sol.t
        steps = np.diff(sol.sol.ts) if sol.sol is not None else np.array([config.max_step])
        if sol.sol is not None:
            dense = sol.sol
            coeff_fn = lambda t: dense(t)[:n]  # noqa: E731
    except GalerkinAbort as exc:
        log.warning("Galerkin run aborted: %s", exc)
        error, ys, ts, steps = str(exc), y0[None, :], t_eval[:1], np.array([config.max_step])
    return GalerkinTrajectory(
        grid=grid, basis=basis, config=config, times=ts,
        coeffs=ys[:, :n], rhos=ys[:, n : n + size].reshape(-1, *grid.shape),
        dissipation_mu=ys[:, -2], dissipation_friction=ys[:, -1],
        largest_step=float(steps.max()), error=error, coeff_fn=coeff_fn,
    )


def galerkin_energy(grid: Grid, rho, u, params: Params) -> float:
    kin = 0.5 * grid.integrate(rho * np.sum(u**2, axis=0))
    total = kin + grid.integrate(entropy_h(rho, params))
    if params.b != 0.0:
        total -= 0.5 * params.b * grid.integrate(np.sum(solve_poisson(grid, rho).grad_phi ** 2, axis=0))
    if params.c != 0.0:
        total += 0.5 * params.c * grid.integrate(np.sum(grid.gradient(rho) ** 2, axis=0))
    return float(total)


@dataclass
class GalerkinEnergyReport:
    energy: np.ndarray
    dissipation_mu: np.ndarray
    dissipation_friction: np.ndarray
    balance_error: float
    tolerance: float
    sup_rho: float
    dt_rho_l2_sq: float
    sup_u_w62: float
    sup_grad_phi_l2: float

    @property
    def balanced(self) -> bool:
        return self.balance_error <= self.tolerance


def galerkin_energy_report(traj: GalerkinTrajectory) -> GalerkinEnergyReport:
    """Energy balance with both dissipations, plus uniform-in-n bound candidates."""
    grid, basis, params = traj.grid, traj.basis, traj.config.params
    ctx = _Context(grid, basis, params, traj.config.mu, traj.config.terms)
    energies, dtrho_sq, grad_phi, w62 = [], [], [], []
    for c, rho in zip(traj.coeffs, traj.rhos):
        u = ctx.velocity(c)
        energies.append(galerkin_energy(grid, rho, u, params))
        dtrho_sq.append(grid.integrate(ctx.continuity(rho, u) ** 2))
        grad_phi.append(np.sqrt(grid.integrate(np.sum(solve_poisson(grid, rho).grad_phi ** 2, axis=0))))
        w62.append(np.sqrt(np.sum(basis.sobolev_weights * c**2)))
    energies = np.array(energies)
    tau = float(traj.times[-1])
    balance = energies[-1] + traj.dissipation_mu[-1] + traj.dissipation_friction[-1] - energies[0]
    tol = 10.0 * traj.largest_step**2 * tau * abs(energies[0])
    return GalerkinEnergyReport(
        energy=energies,
        dissipation_mu=traj.dissipation_mu,
        dissipation_friction=traj.dissipation_friction,
        balance_error=float(abs(balance)),
        tolerance=float(tol),
        sup_rho=float(np.max(traj.rhos)),
        dt_rho_l2_sq=float(trapezoid(dtrho_sq, traj.times)) if len(traj.times) > 1 else 0.0,
        sup_u_w62=float(max(w62)),
        sup_grad_phi_l2=float(max(grad_phi)),
    )
