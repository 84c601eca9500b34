import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ekplab.ekp import State
from ekplab.grid import Grid
from ekplab.models import (
    Params,
    energy,
    entropy_h,
    error_term_e,
    free_energy,
    h_prime,
    limit_velocity_U,
    relative_entropy,
    relative_h,
    relative_p,
    transport_flux_divergence,
    verify_h_lower_bounds,
    wasserstein_surrogate,
)
from ekplab.poisson import solve_poisson

from conftest import band_limited


def test_params_validation():
    for bad in (dict(a=0), dict(c=-1), dict(gamma=1.0), dict(epsilon=0), dict(friction=0)):
        with pytest.raises(ValueError):
            Params(**bad)
    # attractive case: gamma must exceed 2 - 2/d, which only bites for d >= 3
    with pytest.raises(ValueError):
        Params(b=0.5, gamma=1.2, dim=3)
    Params(b=0.5, gamma=1.5, dim=2)
    assert Params().with_epsilon(0.3).epsilon == 0.3


def test_h_values():
    p = Params()
    assert entropy_h(0.0, p) == 0.0
    assert entropy_h(3.0, p) == pytest.approx(9.0, abs=1e-14)
    with pytest.raises(ValueError):
        entropy_h(-1.0, p)


@pytest.mark.parametrize("gamma", [1.4, 2.0, 3.0])
def test_h_prime_finite_difference(gamma):
    p = Params(gamma=gamma, a=1.3)
    rho = 1.7
    errs = []
    for d in (1e-2, 5e-3, 2.5e-3):
        fd = (entropy_h(rho + d, p) - entropy_h(rho - d, p)) / (2 * d)
        errs.append(abs(fd - h_prime(rho, p)))
    if max(errs) < 1e-12:  # quadratic h: central differences are exact
        return
    slopes = np.diff(np.log(errs)) / np.log(0.5)
    assert np.all(slopes > 1.9)


def test_relative_h_examples():
    p = Params()
    assert relative_h(2.5, 2.5, p) == 0.0
    assert relative_h(3.0, 1.0, p) == pytest.approx(4.0, abs=1e-13)
    with pytest.raises(ValueError):
        relative_h(1.0, 0.0, p)
    rho, r = np.meshgrid(np.linspace(0.01, 10, 200), np.linspace(0.01, 10, 200))
    for g in (1.2, 2.0, 3.5):
        assert np.all(relative_h(rho, r, Params(gamma=g)) >= 0)


def test_relative_h_small_gap_accuracy():
    # series branch keeps relative precision where the naive formula cancels
    p = Params(gamma=1.7)
    r, d = 1.3, 1e-7
    exact = 0.5 * h_prime_derivative(r, p) * d * d
    assert relative_h(r + d, r, p) == pytest.approx(exact, rel=1e-6)


def h_prime_derivative(r, p):
    return p.a * p.gamma * r ** (p.gamma - 2)


def test_relative_p_examples():
    p = Params()
    assert relative_p(1.5, 1.5, p) == 0.0
    assert relative_p(3.0, 1.0, p) == pytest.approx(4.0, abs=1e-13)


def test_relative_p_h_identity_scan():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, g = rng.uniform(0.2, 3), rng.uniform(1.05, 4)
        rho, r = rng.uniform(0, 5, 20), rng.uniform(0.1, 5, 20)
        p = Params(a=a, gamma=g)
        lhs = a * relative_p(rho, r, p) / (g - 1)
        assert np.allclose(lhs, relative_h(rho, r, p), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.0, 20.0),
    st.floats(0.05, 20.0),
    st.floats(1.01, 5.0),
)
def test_relative_h_nonnegative(rho, r, gamma):
    assert relative_h(rho, r, Params(gamma=gamma)) >= -1e-12 * max(1.0, r**gamma)


def _state(grid, rho, m=None):
    m = np.zeros((grid.dim, *grid.shape)) if m is None else m
    return State(grid, rho, m)


def test_energy_constant_density():
    g = Grid(1, 32)
    e = energy(_state(g, np.ones(32)), Params())
    assert e.total == pytest.approx(1.0, abs=1e-14)
    assert e.kinetic == 0 and e.potential == 0 and e.korteweg == 0
    e = energy(_state(g, np.ones(32)), Params(b=-1.0, c=0.3))
    assert abs(e.potential) < 1e-14


def test_energy_korteweg_single_mode():
    g = Grid(1, 64)
    x = g.coords()[0]
    e = energy(_state(g, 1 + 0.1 * np.cos(2 * np.pi * x)), Params(c=1.0))
    assert e.korteweg == pytest.approx(0.01 * np.pi**2, rel=1e-12)
    assert e.total == pytest.approx(e.kinetic + e.internal + e.potential + e.korteweg, abs=1e-12)


def test_energy_potential_sign(grid, rng):
    rho = 1 + band_limited(grid, 4, rng, 0.3)
    rep = energy(_state(grid, rho), Params(b=-1.0))
    att = energy(_state(grid, rho), Params(b=1.0, gamma=2.0, dim=grid.dim))
    assert rep.potential > 0 and att.potential < 0
    assert rep.potential == pytest.approx(-att.potential)


def test_energy_vacuum_convention():
    g = Grid(1, 16)
    rho = np.ones(16)
    rho[3] = 0.0
    m = np.zeros((1, 16))
    m[0, 3] = 1e-9
    energy(_state(g, rho, m), Params())
    m[0, 3] = 1e-3
    with pytest.raises(ValueError):
        energy(_state(g, rho, m), Params())
    with pytest.raises(ValueError):
        energy(_state(g, -np.ones(16)), Params())


def test_free_energy_matches_energy_at_rest(grid, rng):
    rho = 1 + band_limited(grid, 3, rng, 0.2)
    p = Params(b=-1.0, c=0.05)
    assert free_energy(grid, rho, p).total == pytest.approx(energy(_state(grid, rho), p).total, rel=1e-14)


def test_limit_velocity_examples():
    g = Grid(1, 64)
    x = g.coords()[0]
    assert np.abs(limit_velocity_U(g, np.full(64, 2.0), Params())).max() == 0
    r = 1 + 0.1 * np.cos(2 * np.pi * x)
    U = limit_velocity_U(g, r, Params(epsilon=0.01))
    assert np.abs(U[0] - 0.004 * np.pi * np.sin(2 * np.pi * x)).max() < 1e-13
    p = Params(b=-1.0, c=0.02, epsilon=0.05)
    assert np.array_equal(limit_velocity_U(g, r, p.with_epsilon(0.1)), 2 * limit_velocity_U(g, r, p))
    with pytest.raises(ValueError):
        limit_velocity_U(g, r - 1.2, p)


def test_limit_velocity_curl_free(rng):
    g = Grid(2, 32)
    r = 1 + band_limited(g, 5, rng, 0.3)
    U = limit_velocity_U(g, r, Params(b=-1.0, c=0.01, dim=2))
    curl = g.ddx(U[1], 0) - g.ddx(U[0], 1)
    assert np.abs(curl).max() < 1e-10 * max(1.0, np.abs(U).max())


def test_error_term_zero_velocity():
    g = Grid(1, 16)
    rs = [np.ones(16) * (1 + 0.1 * t) for t in range(3)]
    Us = [np.zeros((1, 16))] * 3
    assert np.abs(error_term_e(g, [0, 0.1, 0.2], rs, Us, Params(), 0.1)).max() == 0


def test_error_term_steady_isolates_flux(rng):
    g = Grid(1, 32)
    r = 1 + band_limited(g, 3, rng, 0.3)
    U = 0.2 * band_limited(g, 3, rng, 1.0)[None]
    p = Params(epsilon=0.05)
    e = error_term_e(g, [0.0, 0.1, 0.2], [r] * 3, [U] * 3, p, 0.1)
    ref = g.divergence(r * U[0] * U) / p.epsilon
    assert np.abs(e[0] - ref).max() < 1e-12
    assert np.allclose(transport_flux_divergence(g, r, U)[0], g.divergence(r * U[0] * U))


def test_error_term_time_derivative_second_order():
    g = Grid(1, 16)
    x = g.coords()[0]
    r0 = 1 + 0.2 * np.cos(2 * np.pi * x)
    U = 0.0 * r0[None] + 1.0

    def traj(dt):
        ts = [0.3 - dt, 0.3, 0.3 + dt]
        return ts, [r0 * np.exp(t) for t in ts], [U] * 3

    p = Params(epsilon=1.0)
    flux = transport_flux_divergence(g, r0 * np.exp(0.3), U)
    exact = r0 * np.exp(0.3) * U[0]
    errs = [np.abs(error_term_e(g, *traj(dt), p, 0.3)[0] - flux[0] - exact).max() for dt in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_error_term_guards():
    g = Grid(1, 8)
    rs, Us = [np.ones(8)] * 3, [np.zeros((1, 8))] * 3
    with pytest.raises(ValueError):
        error_term_e(g, [0, 0.1, 0.2], rs, Us, Params(), 0.0)
    with pytest.raises(ValueError):
        error_term_e(g, [0, 0.1, 0.2], rs, Us, Params(), 0.05)
    with pytest.raises(ValueError):
        error_term_e(g, [0, 0.1], rs, Us, Params(), 0.1)


def test_relative_entropy_prepared_state_vanishes(grid, rng):
    r = 1 + band_limited(grid, 4, rng, 0.3)
    p = Params(b=-1.0, c=0.01, epsilon=0.1, dim=grid.dim)
    U = limit_velocity_U(grid, r, p)
    assert abs(relative_entropy(_state(grid, r, r * U), r, p)) < 1e-12


def test_relative_entropy_term_isolation(rng):
    g = Grid(1, 64)
    r = 1 + band_limited(g, 3, rng, 0.2)
    rho = r + band_limited(g, 4, rng, 0.1)
    p = Params(epsilon=0.1)
    U = limit_velocity_U(g, r, p)
    val = relative_entropy(_state(g, rho, rho * U), r, p)
    assert val == pytest.approx(np.mean((rho - r) ** 2), rel=1e-12)


def test_relative_entropy_nonnegative_repulsive(rng):
    g = Grid(1, 64)
    r = 1 + band_limited(g, 3, rng, 0.2)
    for _ in range(10):
        rho = r + band_limited(g, 5, rng, 0.3)
        m = band_limited(g, 5, rng, 0.5)[None]
        p = Params(b=-1.0, c=0.02, epsilon=0.1)
        assert relative_entropy(_state(g, rho, m), r, p) >= 0
        # only gradients of the potential enter, so a gauge shift is irrelevant
        grad = solve_poisson(g, r).grad_phi
        assert relative_entropy(_state(g, rho, m), r, p, grad_phi_r=grad) == pytest.approx(
            relative_entropy(_state(g, rho, m), r, p), rel=1e-14
        )


def test_wasserstein_surrogate():
    g = Grid(1, 32)
    r = 1 + 0.2 * np.sin(2 * np.pi * g.coords()[0])
    p = Params()
    assert wasserstein_surrogate(g, r, r, p) == 0
    assert wasserstein_surrogate(g, r + 0.1, r, p) == pytest.approx(0.01, rel=1e-12)
    pert = np.cos(6 * np.pi * g.coords()[0])
    vals = [wasserstein_surrogate(g, r + s * pert, r, Params(gamma=1.5)) for s in (1.0, 0.5, 0.25)]
    assert vals[0] > vals[1] > vals[2]


def test_bounds_gamma_two():
    rep = verify_h_lower_bounds(Params(gamma=2.0), scan_resolution=400)
    assert rep.ok
    assert rep.c3 == pytest.approx(1.0, abs=1e-6)


def test_bounds_gamma_three_and_subquadratic():
    rep = verify_h_lower_bounds(Params(gamma=3.0), scan_resolution=300)
    assert rep.ok and rep.c3 > 0 and rep.c1 > 0 and rep.c2 > 0
    rep = verify_h_lower_bounds(Params(gamma=1.5), scan_resolution=300)
    assert rep.c3 is None and rep.c1 > 0 and rep.c2 > 0


def test_bounds_delta_clamp():
    rep = verify_h_lower_bounds(
        Params(), scan_resolution=200, rho_range=(0.5, 1.5), r_range=(0.75, 1.25), deltas=(10.0,)
    )
    assert rep.c_delta[10.0] == 0.0


def test_bounds_input_checks():
    with pytest.raises(ValueError):
        verify_h_lower_bounds(Params(), r_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        verify_h_lower_bounds(Params(), rho_range=(2.0, 1.0))
