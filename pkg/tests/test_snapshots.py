import numpy as np
import pytest

from ekplab.grid import Grid
from ekplab.snapshots import MAGIC, Snapshot, dumps, loads, read_snapshot, write_snapshot


def test_roundtrip_exact(tmp_path, grid, rng):
    fields = {"rho": 1 + rng.random(grid.shape), "m_x": rng.normal(size=grid.shape)}
    snap = Snapshot(grid, 0.1 + 0.2, fields, {"epsilon": 0.05})
    path = write_snapshot(tmp_path / "s.csv", snap)
    back = read_snapshot(path)
    assert back.grid == grid
    assert back.time == 0.1 + 0.2
    assert back.meta == {"epsilon": "0.05"}
    for k, v in fields.items():
        assert np.array_equal(back.fields[k], v)


def test_layout_header():
    g = Grid(1, 8)
    text = dumps(Snapshot(g, 0.5, {"rho": np.arange(8.0) + 1}))
    lines = text.splitlines()
    assert lines[0] == MAGIC
    assert lines[1] == "# dim=1 n=8 time=0.5"
    assert lines[2] == "rho"
    assert lines[3:] == [f"{k}.0" for k in range(1, 9)]


def test_row_major_order():
    g = Grid(2, 8)
    rho = np.arange(64.0).reshape(8, 8)
    lines = dumps(Snapshot(g, 0.0, {"rho": rho})).splitlines()
    assert [float(v) for v in lines[3:12]] == [float(k) for k in range(9)]


def test_rejects_malformed():
    g = Grid(1, 8)
    with pytest.raises(ValueError):
        dumps(Snapshot(g, 0.0, {"m_x": np.zeros(8)}))
    good = dumps(Snapshot(g, 0.0, {"rho": np.ones(8)}))
    with pytest.raises(ValueError):
        loads(good.replace(MAGIC, "# something else"))
    with pytest.raises(ValueError):
        loads("\n".join(good.splitlines()[:-1]))
    with pytest.raises(ValueError):
        loads(good.replace("dim=1 ", ""))
