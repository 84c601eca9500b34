import numpy as np
import pytest

from ekplab.chks import (
    ChksConfig,
    Envelope,
    envelope_applies,
    linear_symbol,
    max_principle_envelope,
    rhs_chks,
    run,
    step,
)
from ekplab.grid import Grid
from ekplab.models import Params, free_energy

from conftest import band_limited

TAU = 2 * np.pi
KS = Params(a=1.0, b=-1.0, c=0.0, gamma=2.0)


def _cos(n, amp, mean=1.0):
    g = Grid(1, n)
    return g, mean + amp * np.cos(TAU * g.coords()[0])


def test_constant_is_fixed_point(grid):
    for p in (Params(), KS, Params(b=-1.0, c=0.05, gamma=3.0)):
        assert np.abs(rhs_chks(grid, np.full(grid.shape, 1.7), p)).max() < 1e-13


def test_porous_medium_reduction(grid, rng):
    rho = 1 + band_limited(grid, 4, rng, 0.3)
    ref = grid.laplacian(rho**2)
    assert np.abs(rhs_chks(grid, rho, Params()) - ref).max() < 1e-9 * np.abs(ref).max()


def test_rhs_has_zero_mean(grid, rng):
    rho = 1 + band_limited(grid, 4, rng, 0.3)
    assert abs(grid.integrate(rhs_chks(grid, rho, Params(b=-1.0, c=0.01, dim=grid.dim)))) < 1e-12


def test_rhs_rejects_nonpositive():
    g = Grid(1, 8)
    with pytest.raises(ValueError):
        rhs_chks(g, np.zeros(8), Params())


def test_linear_decay_rates_korteweg():
    g = Grid(1, 64)
    x = g.coords()[0]
    p = Params(a=1.0, c=0.01, gamma=2.0)
    delta = 1e-7
    for k in (1, 2):
        rho = 1 + delta * np.cos(TAU * k * x)
        rate = g.integrate(rhs_chks(g, rho, p) * np.cos(TAU * k * x)) * 2 / delta
        kap2 = (TAU * k) ** 2
        expected = -(2 * kap2 + p.c * kap2**2)
        assert rate == pytest.approx(expected, rel=0.01)
        assert linear_symbol(g, p, 1.0)[k] == pytest.approx(expected, rel=1e-12)


def test_linear_symbol_potential_shift():
    g = Grid(1, 16)
    sym = linear_symbol(g, KS, 1.0)
    assert sym[0] == 0
    assert sym[1] == pytest.approx(-2 * TAU**2 - 1.0)


def test_config_guards():
    with pytest.raises(ValueError):
        ChksConfig(Params(c=0.1), dt=1e-3, t_end=1.0, scheme="explicit-rk3")
    with pytest.raises(ValueError):
        ChksConfig(Params(), dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        ChksConfig(Params(), dt=1e-3, t_end=1.0, scheme="euler")


def test_equilibrium_run():
    g = Grid(1, 32)
    res = run(g, np.full(32, 1.2), ChksConfig(KS, dt=1e-3, t_end=0.1, sample_interval=0.05))
    assert res.ok
    assert np.abs(res.final - 1.2).max() < 1e-13
    assert res.records[-1].free_energy == pytest.approx(res.records[0].free_energy, abs=1e-13)


def test_repulsive_relaxation_monotone():
    g, rho0 = _cos(64, 0.3)
    res = run(g, rho0, ChksConfig(KS, dt=1e-3, t_end=0.5, sample_interval=0.02))
    assert res.ok
    dev = [np.sqrt(g.integrate((s - 1.0) ** 2)) for s in res.samples]
    # decay reaches roundoff well before t_end
    assert np.all(np.diff(dev) < 1e-15)
    fe = [r.free_energy for r in res.records]
    assert np.all(np.diff(fe) < 1e-15)
    assert dev[-1] < 1e-3 * dev[0]


def test_mass_conservation_per_step():
    g, rho0 = _cos(64, 0.3)
    cfg = ChksConfig(Params(b=-1.0, c=0.01), dt=1e-3, t_end=1.0)
    rho = rho0
    for _ in range(20):
        nxt = step(g, rho, cfg)
        assert abs(g.integrate(nxt) - g.integrate(rho)) <= 1e-12
        rho = nxt


@pytest.mark.parametrize("scheme", ["semi-implicit-spectral", "explicit-rk3"])
def test_self_convergence(scheme):
    g, rho0 = _cos(32, 0.3)
    finals = []
    for dt in (2e-4, 1e-4, 5e-5):
        finals.append(run(g, rho0, ChksConfig(KS, dt=dt, t_end=0.05, scheme=scheme)).final)
    e1 = np.sqrt(g.integrate((finals[0] - finals[1]) ** 2))
    e2 = np.sqrt(g.integrate((finals[1] - finals[2]) ** 2))
    assert np.log2(e1 / e2) >= 1


def test_porous_medium_matches_fine_explicit_reference():
    g, rho0 = _cos(32, 0.3)
    semi = run(g, rho0, ChksConfig(Params(), dt=1e-3, t_end=0.1)).final
    ref = run(g, rho0, ChksConfig(Params(), dt=1e-5, t_end=0.1, scheme="explicit-rk3")).final
    assert np.sqrt(g.integrate((semi - ref) ** 2)) < 1e-6


def test_envelope_constant_collapse():
    g = Grid(1, 16)
    env = max_principle_envelope(g, np.full(16, 2.0), horizon=1.0)
    for t in (0.0, 0.5, 1.0):
        assert env.upper(t) == pytest.approx(2.0 * np.exp(2.0 * t))
        assert env.lower(t) == pytest.approx(2.0 * np.exp(-(2.0 * np.exp(2.0) + 2.0) * t))
    res = run(g, np.full(16, 2.0), ChksConfig(KS, dt=1e-3, t_end=1.0, sample_interval=0.1))
    assert res.ok
    for rec in res.records[1:]:
        assert rec.envelope[0] < rec.min_rho and rec.max_rho < rec.envelope[1]


def test_envelope_monotone_and_anchored():
    g, rho0 = _cos(32, 0.5)
    env = max_principle_envelope(g, rho0, horizon=1.0)
    ts = np.linspace(0, 1, 11)
    up = [env.upper(t) for t in ts]
    lo = [env.lower(t) for t in ts]
    assert up[0] == pytest.approx(1.5) and lo[0] == pytest.approx(0.5)
    assert np.all(np.diff(up) >= 0) and np.all(np.diff(lo) <= 0)
    assert isinstance(env, Envelope)


def test_envelope_run_keller_segel():
    g, rho0 = _cos(64, 0.5)
    res = run(g, rho0, ChksConfig(KS, dt=1e-3, t_end=1.0, sample_interval=0.05))
    assert res.ok
    for t, rec in zip(res.times, res.records):
        assert rec.max_rho <= 1.5 * np.exp(t) * (1 + 1e-6)
        assert rec.min_rho >= rec.envelope[0] * (1 - 1e-6)


def test_envelope_applicability():
    assert envelope_applies(KS)
    assert not envelope_applies(Params(b=-1.0, c=0.01))
    assert not envelope_applies(Params(b=-2.0))
    g, rho0 = _cos(32, 0.3)
    assert run(g, rho0, ChksConfig(Params(), dt=1e-3, t_end=0.01)).envelope is None


def test_free_energy_monotone_with_capillarity():
    g, rho0 = _cos(64, 0.2)
    p = Params(b=-1.0, c=0.01)
    res = run(g, rho0, ChksConfig(p, dt=1e-3, t_end=0.1, sample_interval=0.01))
    assert res.ok
    assert res.records[0].free_energy == pytest.approx(free_energy(g, rho0, p).total)
    assert np.all(np.diff([r.free_energy for r in res.records]) <= 0)
