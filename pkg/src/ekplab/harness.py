"""High-friction limit experiments: well-prepared data, epsilon sweeps and reports."""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import chks, ekp
from .grid import Grid
from .models import (
    Params,
    error_term_e,
    limit_velocity_U,
    relative_entropy,
    relative_h,
    velocity,
    verify_h_lower_bounds,
    wasserstein_surrogate,
)
from .poisson import solve_poisson
from .snapshots import Snapshot, write_snapshot

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "epsilon",
    "E_rel_0",
    "E_rel_tau",
    "dissipation",
    "wasserstein",
    "err_e_l2",
    "energy_margin",
    "mass_drift",
    "min_rho",
    "max_rho",
)
PROFILES = ("cosine", "random")


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    params: Params
    epsilon_list: tuple
    tau: float = 0.5
    profile: str = "cosine"
    amplitude: float = 0.3
    mean: float = 1.0
    modes: int = 4
    grid_n: int = 128
    cfl: float = 0.05
    sample_interval: float = 0.01
    ref_factor: int = 2
    ref_dt_divisor: int = 4
    output_dir: str = "sweep_out"
    snapshots: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon_list)
        object.__setattr__(self, "epsilon_list", eps)
        if any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon_list must be strictly decreasing")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.profile == "cosine" and not self.mean - abs(self.amplitude) > 0:
            raise ValueError("initial profile must stay bounded below by a positive constant")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def grid(self) -> Grid:
        return Grid(self.params.dim, self.grid_n)

    def echo(self) -> str:
        """Canonical INI rendering of the fully resolved configuration."""
        cp = configparser.ConfigParser()
        p = self.params
        cp["params"] = {k: repr(float(getattr(p, k))) for k in ("a", "b", "c", "gamma", "friction")}
        cp["grid"] = {"dim": str(p.dim), "n": str(self.grid_n)}
        cp["sweep"] = {
            "epsilons": ", ".join(repr(e) for e in self.epsilon_list),
            "tau": repr(self.tau),
            "profile": self.profile,
            "amplitude": repr(self.amplitude),
            "mean": repr(self.mean),
            "modes": str(self.modes),
            "cfl": repr(self.cfl),
            "sample_interval": repr(self.sample_interval),
            "ref_factor": str(self.ref_factor),
            "ref_dt_divisor": str(self.ref_dt_divisor),
            "seed": str(self.seed),
            "workers": str(self.workers),
        }
        cp["output"] = {"dir": self.output_dir, "snapshots": str(self.snapshots).lower()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        """Hash of the physics/numerics; output location and worker count excluded."""
        cfg = replace(self, output_dir="", workers=1)
        return hashlib.sha256(cfg.echo().encode()).hexdigest()[:16]


_SCHEMA = {
    "params": {"a": float, "b": float, "c": float, "gamma": float, "friction": float},
    "grid": {"dim": int, "n": int},
    "sweep": {
        "epsilons": "floats",
        "tau": float,
        "profile": str,
        "amplitude": float,
        "mean": float,
        "modes": int,
        "cfl": float,
        "sample_interval": float,
        "ref_factor": int,
        "ref_dt_divisor": int,
        "seed": int,
        "workers": int,
    },
    "output": {"dir": str, "snapshots": bool},
}


def parse_config(text: str) -> SweepConfig:
    """Build a :class:`SweepConfig` from INI text; unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            kind = _SCHEMA[section].get(key)
            if kind is None:
                raise ValueError(f"unknown config key '{key}' in [{section}]")
            if kind == "floats":
                val = tuple(float(x) for x in raw.replace(",", " ").split())
            elif kind is bool:
                val = cp[section].getboolean(key)
            else:
                val = kind(raw)
            values[(section, key)] = val
    if ("sweep", "epsilons") not in values:
        raise ValueError("config needs [sweep] epsilons")
    pkw = {k: v for (s, k), v in values.items() if s == "params"}
    pkw["dim"] = values.get(("grid", "dim"), 1)
    params = Params(**pkw)
    sweep = {k: v for (s, k), v in values.items() if s == "sweep"}
    sweep["epsilon_list"] = sweep.pop("epsilons")
    kw = dict(params=params, **sweep)
    if ("grid", "n") in values:
        kw["grid_n"] = values[("grid", "n")]
    if ("output", "dir") in values:
        kw["output_dir"] = values[("output", "dir")]
    if ("output", "snapshots") in values:
        kw["snapshots"] = values[("output", "snapshots")]
    return SweepConfig(**kw)


def load_config(path) -> SweepConfig:
    return parse_config(Path(path).read_text())


# -- initial data ---------------------------------------------------------------------


def initial_profile(config: SweepConfig) -> np.ndarray:
    """Limit-equation initial density: a single cosine or a seeded random band-limited field."""
    grid = config.grid
    x = grid.coords()
    if config.profile == "cosine":
        return config.mean + config.amplitude * np.cos(2 * np.pi * x[0])
    rng = np.random.default_rng(config.seed)
    field_ = np.zeros(grid.shape)
    for _ in range(config.modes):
        k = rng.integers(-config.modes, config.modes + 1, size=grid.dim)
        if not np.any(k):
            k[0] = 1
        phase = rng.uniform(0, 2 * np.pi)
        field_ += rng.normal() * np.cos(2 * np.pi * sum(ki * xi for ki, xi in zip(k, x)) + phase)
    peak = np.max(np.abs(field_))
    return config.mean + config.amplitude * field_ / peak


def well_prepared_init(grid: Grid, r0, params: Params) -> ekp.State:
    """EKP state with ``rho = r0`` and ``m = r0 U(r0)``, so the relative entropy vanishes."""
    r0 = grid.check_scalar(r0)
    if np.any(r0 <= 0):
        raise ValueError("r0 must be bounded below by a positive constant")
    return ekp.State(grid, r0.copy(), r0 * limit_velocity_U(grid, r0, params))


# -- sweep ----------------------------------------------------------------------------


@dataclass
class SweepRow:
    epsilon: float
    E_rel_0: float
    E_rel_tau: float
    dissipation: float
    wasserstein: float
    err_e_l2: float
    energy_margin: float
    mass_drift: float
    min_rho: float
    max_rho: float
    config_hash: str
    dt: float = float("nan")
    energy_tol: float = float("nan")
    sup_E_rel: float = float("nan")
    violations: list = field(default_factory=list)
    error: str | None = None
    times: np.ndarray | None = field(default=None, repr=False)
    E_rel_series: np.ndarray | None = field(default=None, repr=False)
    final_state: ekp.State | None = field(default=None, repr=False)
    final_r: np.ndarray | None = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def csv_values(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float


@dataclass
class SweepReport:
    config: SweepConfig
    rows: list
    slopes: dict

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def successful(self):
        return [r for r in self.rows if not r.failed]


def _nan_row(eps, digest, error):
    nan = float("nan")
    return SweepRow(eps, nan, nan, nan, nan, nan, nan, nan, nan, nan, digest, error=error)


def ekp_config(config: SweepConfig, epsilon: float) -> ekp.EkpConfig:
    return ekp.EkpConfig(
        config.params.with_epsilon(epsilon),
        t_end=config.tau,
        cfl=config.cfl,
        sample_interval=config.sample_interval,
    )


def ekp_step_size(config: SweepConfig, epsilon: float) -> float:
    """The step ``ekp.run`` will take for this row (CFL rule fitted to the sampling lattice)."""
    ec = ekp_config(config, epsilon)
    state0 = well_prepared_init(config.grid, initial_profile(config), ec.params)
    dt = ekp.stable_dt(state0, ec.params, ec.cfl)
    return ekp.sampling_plan(ec.t_end, ec.sample_interval, dt)[2]


def run_reference(config: SweepConfig, dt: float) -> chks.ChksResult:
    """Fine limit-equation solution on the ``ref_factor``-times refined grid."""
    grid = config.grid
    ref_grid = Grid(grid.dim, grid.n * config.ref_factor)
    return chks.run(
        ref_grid,
        grid.resample(initial_profile(config), ref_grid),
        chks.ChksConfig(config.params, dt=dt, t_end=config.tau, sample_interval=config.sample_interval),
    )


def run_single(config: SweepConfig, epsilon: float, reference: chks.ChksResult | None = None) -> SweepRow:
    """One sweep row: EKP from well-prepared data against a fine CHKS reference.

    Without ``reference`` a dedicated one is computed with ``dt / ref_dt_divisor``.
    """
    digest = config.digest()
    params = config.params.with_epsilon(epsilon)
    grid = config.grid
    r0 = initial_profile(config)
    try:
        state0 = well_prepared_init(grid, r0, params)
        res = ekp.run(state0, ekp_config(config, epsilon))
        if res.error is not None:
            return _nan_row(epsilon, digest, res.error)
        ref = reference if reference is not None else run_reference(config, res.dt / config.ref_dt_divisor)
        if ref.error is not None:
            return _nan_row(epsilon, digest, f"reference: {ref.error}")
    except (ValueError, ekp.SolverAbort) as exc:
        return _nan_row(epsilon, digest, str(exc))
    ref_grid = Grid(grid.dim, grid.n * config.ref_factor)

    times = res.times
    rs = [ref_grid.resample(s, grid) for s in ref.samples]
    Us = [limit_velocity_U(grid, r, params) for r in rs]
    e_rel, kin_gap = [], []
    for st, r, U in zip(res.samples, rs, Us):
        e_rel.append(relative_entropy(st, r, params, U=U))
        u = velocity(st.rho, st.momentum)
        kin_gap.append(grid.integrate(st.rho * np.sum((u - U) ** 2, axis=0)) / (2 * epsilon**2))
    e_norms = [
        math.sqrt(grid.integrate(np.sum(error_term_e(grid, times, rs, Us, params, t) ** 2, axis=0)))
        for t in times[1:-1]
    ]
    recs = res.records
    row = SweepRow(
        epsilon=epsilon,
        E_rel_0=e_rel[0],
        E_rel_tau=e_rel[-1],
        dissipation=float(trapezoid(kin_gap, times)),
        wasserstein=wasserstein_surrogate(grid, res.final.rho, rs[-1], params),
        err_e_l2=float(np.mean(e_norms)) if e_norms else float("nan"),
        energy_margin=res.energy_margin(),
        mass_drift=recs[-1].mass - recs[0].mass,
        min_rho=min(r.min_rho for r in recs),
        max_rho=max(r.max_rho for r in recs),
        config_hash=digest,
        dt=res.dt,
        energy_tol=res.energy_tol,
        sup_E_rel=max(e_rel),
        violations=list(res.violations) + list(ref.violations),
        times=times,
        E_rel_series=np.array(e_rel),
        final_state=res.final,
        final_r=rs[-1],
    )
    return row


def fit_rate(eps_list, values) -> FitResult:
    """Least-squares line through ``(log eps, log value)``."""
    x = np.log(np.asarray(eps_list, dtype=float))
    v = np.asarray(values, dtype=float)
    if x.size != v.size:
        raise ValueError("eps_list and values differ in length")
    if x.size < 2:
        raise ValueError("a rate fit needs at least two points")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("rate fits need finite positive values")
    y = np.log(v)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [slope, intercept] - y) ** 2)))
    return FitResult(float(slope), float(intercept), resid)


FITTED = ("E_rel_tau", "sup_E_rel", "dissipation", "err_e_l2", "wasserstein")


def _fit_all(rows):
    ok = [r for r in rows if not r.failed]
    slopes = {}
    if len(ok) < 2:
        return slopes
    eps = [r.epsilon for r in ok]
    for name in FITTED:
        try:
            slopes[name] = fit_rate(eps, [getattr(r, name) for r in ok])
        except ValueError as exc:
            log.info("no slope for %s: %s", name, exc)
    return slopes


def run_sweep(config: SweepConfig) -> SweepReport:
    """Run every epsilon (optionally in parallel) and merge rows in list order.

    A single limit-equation reference, stepped at ``min(dt) / ref_dt_divisor``,
    is shared by all rows.
    """
    eps = list(config.epsilon_list)
    reference = None
    if eps:
        # the limit solution is epsilon-independent: one run at the finest step serves all rows
        try:
            dt_ref = min(ekp_step_size(config, e) for e in eps) / config.ref_dt_divisor
            reference = run_reference(config, dt_ref)
        except ValueError as exc:
            log.warning("shared reference unavailable (%s); rows compute their own", exc)
    if config.workers > 1 and len(eps) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(eps))) as pool:
            rows = list(pool.map(run_single, [config] * len(eps), eps, [reference] * len(eps)))
    else:
        rows = [run_single(config, e, reference) for e in eps]
    for row in rows:
        if row.failed:
            log.warning("epsilon=%g failed: %s", row.epsilon, row.error)
    return SweepReport(config, rows, _fit_all(rows))


# -- reporting -----------------------------------------------------------------------


def sweep_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.rows:
        w.writerow([repr(float(v)) for v in row.csv_values()])
    return buf.getvalue()


def slopes_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("quantity", "slope", "intercept", "residual"))
    for name in FITTED:
        if name in report.slopes:
            f = report.slopes[name]
            w.writerow((name, repr(f.slope), repr(f.intercept), repr(f.residual)))
    return buf.getvalue()


def emit_report(report: SweepReport, output_dir) -> dict:
    """Write ``sweep.csv``, ``slopes.csv``, ``config.echo`` and per-epsilon snapshots."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"sweep": out / "sweep.csv", "slopes": out / "slopes.csv", "echo": out / "config.echo"}
    paths["sweep"].write_text(sweep_csv(report))
    paths["slopes"].write_text(slopes_csv(report))
    status = "\n".join(
        f"# epsilon={r.epsilon!r} hash={r.config_hash} "
        + ("failed: " + r.error if r.failed else f"violations={len(r.violations)}")
        for r in report.rows
    )
    paths["echo"].write_text(f"# config_hash={report.config_hash}\n{report.config.echo()}{status}\n")
    if report.config.snapshots:
        for r in report.rows:
            if r.final_state is None:
                continue
            st = r.final_state
            fields = {"rho": st.rho}
            for j, name in enumerate("xy"[: st.grid.dim]):
                fields[f"m_{name}"] = st.momentum[j]
            fields["r"] = r.final_r
            snap = Snapshot(st.grid, st.time, fields, {"epsilon": r.epsilon, "hash": r.config_hash})
            path = out / f"snapshot_eps_{r.epsilon!r}.csv"
            write_snapshot(path, snap)
            paths[f"snapshot_{r.epsilon!r}"] = path
    return paths


# -- acceptance helpers -----------------------------------------------------------------


@dataclass
class GateResult:
    epsilon: float
    grid_sizes: tuple
    values: tuple
    relative_changes: tuple
    tolerance: float
    floor: float

    @property
    def passed(self) -> bool:
        return all(
            ch < self.tolerance or max(abs(a), abs(b)) < self.floor
            for ch, a, b in zip(self.relative_changes, self.values, self.values[1:])
        )


def refinement_gate(
    config: SweepConfig, epsilon: float, levels: int = 2, tolerance: float = 0.05, floor: float = 1e-14
) -> GateResult:
    """Relative change of ``E_rel(tau)`` under successive ``N -> 2N`` refinements.

    The time step follows the CFL rule, so it halves with the mesh.  Values
    below ``floor`` sit at round-off level and count as converged.
    """
    sizes, values = [], []
    for j in range(levels):
        cfg = replace(config, grid_n=config.grid_n * 2**j, snapshots=False)
        row = run_single(cfg, epsilon)
        if row.failed:
            raise RuntimeError(f"refinement run failed at N={cfg.grid_n}: {row.error}")
        sizes.append(cfg.grid_n)
        values.append(row.E_rel_tau)
    changes = tuple(
        abs(b - a) / max(abs(a), abs(b), 1e-300) for a, b in zip(values, values[1:])
    )
    return GateResult(epsilon, tuple(sizes), tuple(values), changes, tolerance, floor)


@dataclass
class ChainCheck:
    delta: float
    surrogate: float
    c_delta: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.surrogate <= self.bound


def wasserstein_chain(grid: Grid, rho, r, params: Params, deltas=(0.1, 0.01), resolution: int = 1000):
    """Check ``int |rho - r|^q <= delta + C(delta) int h(rho|r)`` with ``q = min(gamma, 2)``.

    ``C(delta)`` comes from a brute-force scan covering the observed ranges.
    """
    rho = grid.check_scalar(rho)
    r = grid.check_scalar(r)
    q = min(params.gamma, 2.0)
    scan = verify_h_lower_bounds(
        params,
        scan_resolution=resolution,
        rho_range=(0.0, 1.5 * float(rho.max()) + 1.0),
        r_range=(float(r.min()), float(r.max())),
        deltas=deltas,
        exponent=q,
    )
    lhs = wasserstein_surrogate(grid, rho, r, params)
    h_int = grid.integrate(relative_h(np.maximum(rho, 0.0), r, params))
    return [ChainCheck(d, lhs, scan.c_delta[float(d)], d + scan.c_delta[float(d)] * h_int) for d in deltas]


def potential_gap(grid: Grid, rho, r) -> float:
    diff = solve_poisson(grid, rho).grad_phi - solve_poisson(grid, r).grad_phi
    return grid.integrate(np.sum(diff**2, axis=0))


def row_dict(row: SweepRow) -> dict:
    keep = set(CSV_COLUMNS) | {"config_hash", "dt", "energy_tol", "sup_E_rel", "error"}
    return {k: v for k, v in asdict(row).items() if k in keep}
