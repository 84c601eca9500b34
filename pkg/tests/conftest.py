import numpy as np
import pytest

from ekplab.grid import Grid

ACCEPTANCE = {}


def band_limited(grid, kmax, rng, amplitude=1.0):
    """Random real field with modes |k_j| <= kmax on every axis."""
    coef = np.zeros(grid.shape, dtype=complex)
    idx = np.arange(-kmax, kmax + 1) % grid.n
    sel = np.ix_(*([idx] * grid.dim))
    sub = rng.normal(size=coef[sel].shape) + 1j * rng.normal(size=coef[sel].shape)
    coef[sel] = sub
    field = np.real(np.fft.ifftn(coef))
    return amplitude * field / np.max(np.abs(field))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[1, 2], ids=["1d", "2d"])
def grid(request):
    return Grid(request.param, 32)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
