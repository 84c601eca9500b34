"""Zero-mean periodic Poisson solve ``-lap(phi) = rho - mean(rho)``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class PotentialSolve:
    phi: np.ndarray
    grad_phi: np.ndarray
    source_mean: float


def solve_poisson(grid: Grid, rho) -> PotentialSolve:
    """Solve for the zero-mean potential and its gradient.

    Modes with vanishing symbol (the mean and the Nyquist lines) are set to zero,
    so the source mean never needs to be removed by the caller.
    """
    rho = grid.check_scalar(rho)
    if not np.all(np.isfinite(rho)):
        raise ValueError("density contains non-finite values")
    k2 = grid.k_squared
    rho_h = grid.fft(rho)
    phi_h = np.zeros_like(rho_h)
    nz = k2 > 0
    phi_h[nz] = rho_h[nz] / k2[nz]
    phi = grid.ifft(phi_h)
    grad = grid.gradient_hat(phi_h)
    return PotentialSolve(phi=phi, grad_phi=grad, source_mean=grid.integrate(rho))


def estimate_K(grid: Grid, samples: Iterable, params, denom_floor: float = 1e-14) -> float:
    """Empirical lower bound on the potential-versus-entropy constant.

    Returns the largest ratio ``int |grad phi_rho - grad phi_r|^2 / int h(rho|r)``
    over the ``(rho, r)`` pairs, skipping pairs whose denominator is below
    ``denom_floor``.
    """
    from .models import relative_h

    dim = grid.dim
    if params.gamma <= 2.0 - 2.0 / dim:
        raise ValueError(f"gamma must exceed 2 - 2/d = {2.0 - 2.0 / dim}")
    best = None
    for rho, r in samples:
        rho = grid.check_scalar(rho)
        r = grid.check_scalar(r)
        if np.any(rho < 0):
            raise ValueError("densities must be nonnegative")
        if np.any(r <= 0):
            raise ValueError("reference density must be bounded below by a positive constant")
        denom = grid.integrate(relative_h(rho, r, params))
        if denom < denom_floor:
            continue
        diff = solve_poisson(grid, rho).grad_phi - solve_poisson(grid, r).grad_phi
        ratio = grid.integrate(np.sum(diff**2, axis=0)) / denom
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise ValueError("every sample pair is degenerate (rho == r); K cannot be estimated")
    return float(best)
