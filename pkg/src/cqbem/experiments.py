"""Convergence studies, estimator efficiency and snapshots, with a small command-line front end."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adaptive import AdaptiveConfig, adaptive_loop
from .estimator import energy_error, energy_norm_values, global_estimate, indicators
from .geometry import GeometrySpec, Mesh, build_mesh, graded_mesh
from .solver import (
    OBSERVATION_POINTS,
    DensityHistory,
    IncidentWave,
    ScatteringProblem,
    evaluate_field,
    solve_density,
)
from .cq import CQScheme

__all__ = [
    "ExperimentConfig",
    "ConvergenceTable",
    "load_config",
    "strategy_meshes",
    "reference_mesh",
    "time_study_mesh",
    "run_spatial_study",
    "run_time_study",
    "run_efficiency_study",
    "emit_snapshots",
    "convergence_rates",
    "fitted_slope",
    "main",
]

log = logging.getLogger("cqbem")

STRATEGIES = ("uniform", "adaptive", "graded2", "graded3")


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: str = "flat-screen"
    omega: float = 2.0
    L: float = 2.0
    beta: float = 5.0
    t_lag: float = 4.0
    direction: tuple = (-math.sqrt(3.0) / 2.0, 0.5)
    delay: float = 6.0
    T: float = 10.0
    tau: float = 0.1
    stages: int = 2
    shift_eta: float = 0.0
    strategy: str = "adaptive"
    theta: float = 0.5
    marking: str = "maximum"
    levels: int = 5
    iterations: int = 14
    initial_elements: int = 4
    taus: tuple = (0.4, 0.2, 0.1, 0.05, 0.025)
    benchmark_tau: float = 10.0 / 6400.0
    efficiency_taus: tuple = (0.2, 0.1, 0.05)
    efficiency_iterations: tuple = (2, 4, 6)
    reference_tau: float = 0.00625
    snapshot_times: tuple = (2.0, 4.0, 6.0, 8.0)
    grid_size: int = 101
    grid_extent: float = 3.0
    out: str = "results"

    def __post_init__(self):
        if self.geometry not in ("flat-screen", "wedge", "trapping"):
            raise ValueError(f"geometry: unknown value {self.geometry!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy: expected one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("T", "tau", "benchmark_tau", "reference_tau", "omega", "L", "beta", "grid_extent"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be positive")
        if self.shift_eta < 0:
            raise ValueError("shift_eta: must be non-negative")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta: must lie in (0, 1)")
        for name in ("levels", "iterations", "initial_elements", "grid_size", "stages"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name}: must be a positive integer")
        for name in ("direction", "taus", "efficiency_taus", "efficiency_iterations", "snapshot_times"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        IncidentWave(**self._wave_kw())

    def _wave_kw(self):
        return dict(
            omega=self.omega, L=self.L, beta=self.beta, t_lag=self.t_lag, direction=self.direction, delay=self.delay
        )

    @property
    def spec(self) -> GeometrySpec:
        return GeometrySpec.from_name(self.geometry)

    def problem(self, tau=None, shift_eta=None) -> ScatteringProblem:
        tau = self.tau if tau is None else tau
        N = int(round(self.T / tau))
        if N < 1 or abs(N * tau - self.T) > 1e-9 * self.T:
            raise ValueError(f"tau: {tau} does not divide T = {self.T}")
        eta = self.shift_eta if shift_eta is None else shift_eta
        scheme = CQScheme.radau(self.stages, self.T / N, N)
        return ScatteringProblem(self.spec, IncidentWave(**self._wave_kw()), self.T, scheme, eta)

    def adaptive_config(self, iterations=None) -> AdaptiveConfig:
        return AdaptiveConfig(
            theta=self.theta, max_iterations=self.iterations if iterations is None else iterations, marking=self.marking
        )

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a flat TOML file; keys are :class:`ExperimentConfig` field names."""
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"unknown configuration key(s): {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


@dataclass
class ConvergenceTable:
    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    return str(v)


def convergence_rates(errors, halving=True):
    """``log2(e_prev / e_curr)`` for halving sequences; ``None`` for the first entry."""
    out = [None]
    for prev, cur in zip(errors[:-1], errors[1:]):
        out.append(math.log2(prev / cur) if halving and prev > 0 and cur > 0 else None)
    return out


def fitted_slope(x, e) -> float:
    """Least-squares slope ``q`` of ``e ~ x**(-q)``."""
    x, e = np.asarray(x, dtype=float), np.asarray(e, dtype=float)
    return float(-np.polyfit(np.log(x), np.log(e), 1)[0])


def _field_error(u, ref, tau):
    # root-sum-square over the observation points of the discrete L2(0, T) errors
    return float(np.sqrt(tau * np.sum((u - ref) ** 2)))


# ---------------------------------------------------------------- meshes


def strategy_meshes(cfg: ExperimentConfig, strategy=None, problem=None):
    """Mesh sequence for a strategy; for ``adaptive`` also returns the trace."""
    strategy = cfg.strategy if strategy is None else strategy
    spec = cfg.spec
    n0 = cfg.initial_elements
    if strategy == "uniform":
        return [build_mesh(spec, n0 * 2**k) for k in range(cfg.levels)], None
    if strategy in ("graded2", "graded3"):
        beta = float(strategy[-1])
        return [graded_mesh(spec, max(1, n0 * 2**k // 2), beta) for k in range(cfg.levels)], None
    problem = cfg.problem() if problem is None else problem
    trace = adaptive_loop(problem, build_mesh(spec, n0), cfg.adaptive_config(), keep_history=True)
    return [s.mesh for s in trace.steps], trace


def reference_mesh(cfg: ExperimentConfig) -> Mesh:
    """3-graded mesh one level beyond the finest graded level of the study."""
    return graded_mesh(cfg.spec, max(1, cfg.initial_elements * 2**cfg.levels // 2), 3.0)


# ---------------------------------------------------------------- studies


def run_spatial_study(cfg: ExperimentConfig, strategy=None, reference=None) -> ConvergenceTable:
    """Energy and point errors against a fine 3-graded reference at fixed ``tau``."""
    strategy = cfg.strategy if strategy is None else strategy
    problem = cfg.problem()
    if reference is None:
        reference = solve_density(problem, reference_mesh(cfg))
    ref_u = evaluate_field(reference, OBSERVATION_POINTS)
    meshes, trace = strategy_meshes(cfg, strategy, problem)
    table = ConvergenceTable(("level", "dofs", "energy_error", "point_error", "estimate", "rate_energy"))
    prev = None
    for k, mesh in enumerate(meshes):
        if trace is not None:
            hist, est = trace.steps[k].history, trace.steps[k].estimate
        else:
            hist = solve_density(problem, mesh, with_residual=True)
            est = global_estimate(indicators(hist.residual))
        err = energy_error(hist, reference)
        perr = _field_error(evaluate_field(hist, OBSERVATION_POINTS), ref_u, problem.scheme.tau)
        rate = None
        if prev is not None and err > 0 and prev[1] > 0 and len(mesh) != prev[0]:
            rate = math.log(prev[1] / err) / math.log(len(mesh) / prev[0])
        table.add(level=k, dofs=len(mesh), energy_error=err, point_error=perr, estimate=est, rate_energy=rate)
        log.info("%s level %d: dofs %d energy error %.3e estimate %.3e", strategy, k, len(mesh), err, est)
        prev = (len(mesh), err)
    return table


def time_study_mesh(cfg: ExperimentConfig) -> Mesh:
    """Fixed spatial mesh for temporal studies: the adaptive mesh after ``cfg.iterations`` steps at ``cfg.tau``."""
    trace = adaptive_loop(cfg.problem(shift_eta=0.0), build_mesh(cfg.spec, cfg.initial_elements), cfg.adaptive_config())
    return trace.final_mesh


def run_time_study(cfg: ExperimentConfig, mesh=None, benchmark=None) -> ConvergenceTable:
    """Density and point errors over the ``cfg.taus`` sequence against the benchmark step."""
    mesh = time_study_mesh(cfg) if mesh is None else mesh
    if benchmark is None:
        benchmark = solve_density(cfg.problem(tau=cfg.benchmark_tau), mesh)
    elif benchmark.mesh != mesh:
        raise ValueError("benchmark solution must be computed on the study mesh")
    ref_u = evaluate_field(benchmark, OBSERVATION_POINTS)
    V1 = None
    table = ConvergenceTable(("tau", "density_error", "point_error", "rate_density", "rate_point"))
    dens, pts = [], []
    for tau in cfg.taus:
        ratio = tau / benchmark.scheme.tau
        step = int(round(ratio))
        if abs(step - ratio) > 1e-9 * ratio:
            raise ValueError(f"taus: benchmark step {benchmark.scheme.tau} does not divide {tau}")
        hist = solve_density(cfg.problem(tau=tau), mesh)
        if V1 is None:
            from .assembly import assemble_single_layer

            V1 = assemble_single_layer(mesh, 1.0).real
        diff = hist.last_stage - benchmark.last_stage[::step]
        dens.append(energy_norm_values(mesh, tau, diff, V1))
        pts.append(_field_error(evaluate_field(hist, OBSERVATION_POINTS), ref_u[::step], tau))
        log.info("tau %.5g: density error %.3e point error %.3e", tau, dens[-1], pts[-1])
    for tau, d, p, rd, rp in zip(cfg.taus, dens, pts, convergence_rates(dens), convergence_rates(pts)):
        table.add(tau=tau, density_error=d, point_error=p, rate_density=rd, rate_point=rp)
    return table


def efficiency_ratio(error, estimate, tau, C, p) -> float:
    denom = estimate + C * tau**p
    if error == 0.0 and estimate == 0.0:
        return 0.0
    return error / denom


def run_efficiency_study(cfg: ExperimentConfig, C: float, p: float, reference=None) -> ConvergenceTable:
    """Ratios ``e_M / (eta_M + C tau^p)`` over adaptive meshes and time steps.

    ``e_M`` is the energy error against a reference on the finest 3-graded
    mesh at ``cfg.reference_tau``; ``eta_M`` is the global estimate.
    """
    if not (C > 0 and p > 0):
        raise ValueError("C and p must be positive")
    n_it = max(cfg.efficiency_iterations) + 1
    trace = adaptive_loop(
        cfg.problem(), build_mesh(cfg.spec, cfg.initial_elements), cfg.adaptive_config(iterations=n_it)
    )
    meshes = [trace.steps[i].mesh for i in cfg.efficiency_iterations if i < len(trace.steps)]
    if reference is None:
        reference = solve_density(cfg.problem(tau=cfg.reference_tau), reference_mesh(cfg))
    table = ConvergenceTable(("dofs", "tau", "error", "estimate", "ratio"))
    for mesh in meshes:
        for tau in cfg.efficiency_taus:
            ratio = tau / reference.scheme.tau
            step = int(round(ratio))
            if abs(step - ratio) > 1e-9 * ratio:
                raise ValueError(f"efficiency_taus: reference step does not divide {tau}")
            hist = solve_density(cfg.problem(tau=tau), mesh, with_residual=True)
            est = global_estimate(indicators(hist.residual))
            sub = DensityHistory(
                _subsample(reference.stages, step), reference.mesh, hist.scheme
            )
            err = energy_error(hist, sub)
            table.add(dofs=len(mesh), tau=tau, error=err, estimate=est, ratio=efficiency_ratio(err, est, tau, C, p))
            log.info("dofs %d tau %.4g: error %.3e estimate %.3e", len(mesh), tau, err, est)
    return table


def _subsample(stages, step):
    from .cq import StageSeries

    return StageSeries(stages.values[::step])


def _boundary_distance(mesh, pts):
    d = np.full(len(pts), np.inf)
    for a, b in zip(mesh.a, mesh.b):
        ab = b - a
        t = np.clip((pts - a) @ ab / (ab @ ab), 0.0, 1.0)
        d = np.minimum(d, np.linalg.norm(pts - (a + t[:, None] * ab), axis=1))
    return d


def emit_snapshots(cfg: ExperimentConfig, times, mesh=None, out=None) -> list:
    """Density (``s_arclength,phi``) and field (``x,y,u_scattered,u_total``) CSVs at the given times."""
    times = list(times)
    if not times:
        return []
    bad = [t for t in times if not 0.0 <= t <= cfg.T]
    if bad:
        raise ValueError(f"snapshot times {bad} lie outside [0, {cfg.T}]")
    problem = cfg.problem()
    mesh = time_study_mesh(cfg) if mesh is None else mesh
    hist = solve_density(problem, mesh)
    tau = problem.scheme.tau
    steps = [int(round(t / tau)) for t in times]

    g = np.linspace(-cfg.grid_extent, cfg.grid_extent, cfg.grid_size)
    X, Y = np.meshgrid(g, g, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    keep = _boundary_distance(mesh, pts) > 1e-3
    grid = pts[keep]
    u = evaluate_field(hist, grid)

    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    s = mesh.arclength()
    files = []
    for t, n in zip(times, steps):
        dpath = out / f"density_t{t:g}.csv"
        with open(dpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_arclength", "phi"])
            for si, phi in zip(s.tolist(), hist.last_stage[n].tolist()):
                w.writerow([repr(si), repr(phi)])
        fpath = out / f"field_t{t:g}.csv"
        uinc = problem.wave(grid, n * tau)
        with open(fpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "u_scattered", "u_total"])
            for (x, y), us, ui in zip(grid.tolist(), u[n].tolist(), uinc.tolist()):
                w.writerow([repr(x), repr(y), repr(us), repr(us + ui)])
        files += [dpath, fpath]
    return files


# ---------------------------------------------------------------- CLI


def _parser():
    p = argparse.ArgumentParser(prog="cqbem", description="Time-domain BEM scattering studies.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("spatial", "energy error vs degrees of freedom for one refinement strategy"),
        ("time", "temporal convergence on a fixed adaptive mesh"),
        ("efficiency", "error / (estimate + C tau^p) ratios"),
        ("snapshots", "density and field snapshots"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--geometry", choices=("flat-screen", "wedge", "trapping"))
        sp.add_argument("--strategy", choices=STRATEGIES)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--eta", type=float, dest="shift_eta")
        sp.add_argument("--theta", type=float)
        sp.add_argument("--levels", type=int)
        sp.add_argument("--out", type=str)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "efficiency":
            sp.add_argument("--C", type=float, default=5.0)
            sp.add_argument("--p", type=float, default=2.0)
        if name == "snapshots":
            sp.add_argument("--times", type=float, nargs="*")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(
            args.config,
            geometry=args.geometry,
            strategy=args.strategy,
            tau=args.tau,
            shift_eta=args.shift_eta,
            theta=args.theta,
            levels=args.levels,
            out=args.out,
        )
        out = Path(cfg.out)
        if args.command == "spatial":
            table = run_spatial_study(cfg)
            path = out / f"spatial_{cfg.geometry}_{cfg.strategy}.csv"
        elif args.command == "time":
            table = run_time_study(cfg)
            path = out / f"time_{cfg.geometry}_eta{cfg.shift_eta:g}.csv"
        elif args.command == "efficiency":
            table = run_efficiency_study(cfg, args.C, args.p)
            path = out / f"efficiency_{cfg.geometry}_eta{cfg.shift_eta:g}.csv"
        else:
            times = cfg.snapshot_times if args.times is None else args.times
            files = emit_snapshots(cfg, times)
            print("\n".join(str(f) for f in files))
            return 0
        table.to_csv(path)
        print(path)
        return 0
    except (ValueError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
