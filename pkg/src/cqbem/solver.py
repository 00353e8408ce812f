"""Time-domain scattering by a sound-soft screen: right-hand sides, density solve, field evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, special

from .assembly import (
    SingleLayer,
    lu_solver,
    p1_load,
    p1_mass_matrix,
    p1_solve_mass,
    projection_points,
)
from .cq import CQScheme, StageSeries, frequency_map, shift_multiplier
from .geometry import GeometrySpec, Mesh
from .quadrature import PointRule, WAVE_RESOLUTION, gauss01

__all__ = [
    "IncidentWave",
    "ScatteringProblem",
    "DensityHistory",
    "ResidualHistory",
    "window_profile",
    "smoothed_heaviside",
    "incident_rhs",
    "solve_density",
    "evaluate_field",
    "OBSERVATION_POINTS",
]

OBSERVATION_POINTS = np.array([[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]])
RHS_ORDER = 8


def smoothed_heaviside(t, beta):
    """``1 - 1 / (1 + exp(beta t))``, evaluated without overflow."""
    return special.expit(beta * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class IncidentWave:
    """Windowed plane wave ``u_inc(x, t) = amplitude * f(x . d - t + delay)`` travelling along ``d``.

    ``f(t) = sin(omega (t - t_lag)) H(t) H(L - t)`` with the smoothed step
    ``H``. ``delay`` translates the pulse in time so that it reaches the scatterer after
    ``t = 0`` (the data is then zero to ~1e-7 at the start of the simulation).
    """

    omega: float = 2.0
    L: float = 2.0
    beta: float = 5.0
    t_lag: float = 4.0
    direction: tuple = (-math.sqrt(3.0) / 2.0, 0.5)
    delay: float = 6.0
    amplitude: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError(f"direction must be a unit 2-vector, got {self.direction}")
        if not self.beta > 0:
            raise ValueError("smoothing parameter beta must be positive")
        object.__setattr__(self, "direction", tuple(float(v) for v in d))

    @classmethod
    def zero(cls):
        return cls(amplitude=0.0)

    def profile(self, t):
        return window_profile(self, t)

    def __call__(self, x, t):
        """Incident field at points ``x`` (..., 2) and times ``t`` (broadcast against x[..., 0])."""
        x = np.asarray(x, dtype=float)
        arg = x @ np.asarray(self.direction) - np.asarray(t, dtype=float) + self.delay
        return self.amplitude * window_profile(self, arg)


def window_profile(wave: IncidentWave, t):
    """``sin(omega (t - t_lag)) H(t) H(L - t)``."""
    t = np.asarray(t, dtype=float)
    out = (
        np.sin(wave.omega * (t - wave.t_lag))
        * smoothed_heaviside(t, wave.beta)
        * smoothed_heaviside(wave.L - t, wave.beta)
    )
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class ScatteringProblem:
    geometry: GeometrySpec
    wave: IncidentWave
    T: float
    scheme: CQScheme
    shift_eta: float = 0.0

    def __post_init__(self):
        if abs(self.scheme.N * self.scheme.tau - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"final time {self.T} does not equal N * tau = {self.scheme.T}")
        if self.shift_eta < 0:
            raise ValueError("shift_eta must be non-negative")

    @classmethod
    def default(cls, geometry="flat-screen", tau=0.1, T=10.0, shift_eta=0.0, stages=2, **wave_kw):
        geo = geometry if isinstance(geometry, GeometrySpec) else GeometrySpec.from_name(geometry)
        N = int(round(T / tau))
        if abs(N * tau - T) > 1e-9 * T:
            raise ValueError(f"tau = {tau} does not divide T = {T}")
        return cls(geo, IncidentWave(**wave_kw), T, CQScheme.radau(stages, T / N, N), shift_eta)

    @property
    def extra_steps(self) -> int:
        """Steps appended to the horizon for the shifted formulation."""
        return int(math.ceil(self.shift_eta / self.scheme.tau - 1e-12)) if self.shift_eta > 0 else 0

    @property
    def solve_scheme(self) -> CQScheme:
        return self.scheme.with_steps(self.scheme.N + self.extra_steps)

    def with_scheme(self, scheme):
        return ScatteringProblem(self.geometry, self.wave, scheme.T, scheme, self.shift_eta)


@dataclass
class ResidualHistory:
    """P1 residual ``P_h - f_h`` at every stage; ``nodal`` is the last stage, one row per ``t_i``."""

    stages: np.ndarray  # (N + 1, m, n_vertices)
    mesh: Mesh
    scheme: CQScheme
    p0_tested: Optional[np.ndarray] = None  # (N + 1, m, M): V(d_t) phi - rhs tested against P0

    @property
    def nodal(self) -> np.ndarray:
        return self.stages[:, -1]

    @property
    def tau(self) -> float:
        return self.scheme.tau


@dataclass
class DensityHistory:
    """P0 density coefficients at every stage, ``stages.values`` of shape (N + 1, m, M)."""

    stages: StageSeries
    mesh: Mesh
    scheme: CQScheme
    residual: Optional[ResidualHistory] = field(default=None, repr=False)

    def __post_init__(self):
        v = self.stages.values
        if v.shape[0] != self.scheme.N + 1 or v.shape[2] != len(self.mesh):
            raise ValueError("density history shape does not match scheme and mesh")

    @property
    def last_stage(self) -> np.ndarray:
        """(N + 1, M) coefficients at ``t_n = n tau``."""
        return self.stages.values[:, -1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.scheme.N + 1) * self.scheme.tau

    def at_step(self, n) -> np.ndarray:
        return self.last_stage[n]


def incident_rhs(problem: ScatteringProblem, mesh: Mesh, scheme: CQScheme | None = None) -> np.ndarray:
    """Right-hand side ``-int_{E_j} u_inc(x, t)`` at every stage time, shape (N + 1, m, M).

    In the shifted formulation the samples are taken at ``t + shift_eta``.
    ``scheme`` defaults to the (possibly extended) solve scheme.
    """
    scheme = problem.solve_scheme if scheme is None else scheme
    xi, w = gauss01(RHS_ORDER)
    pts = mesh.points(xi)  # (M, q, 2)
    t = scheme.stage_times() + problem.shift_eta  # (N + 1, m)
    vals = problem.wave(pts[None, None], t[:, :, None, None])  # (N + 1, m, M, q)
    return -np.einsum("nmeq,q,e->nme", vals, w, mesh.h)


def _incident_p1_load(problem, mesh, scheme):
    # P1 load vectors of -u_inc at stage times, on the same Gauss points as the P0 rhs
    pts, xi, w = projection_points(mesh, RHS_ORDER)
    t = scheme.stage_times() + problem.shift_eta
    vals = -problem.wave(pts[None, None], t[:, :, None, None])  # (N + 1, m, M, q)
    flat = np.moveaxis(vals.reshape((-1,) + vals.shape[2:]), 0, -1)  # (M, q, (N + 1) m)
    load = p1_load(mesh, flat, xi, w)  # (nv, (N + 1) m)
    return np.moveaxis(load, -1, 0).reshape(t.shape + (mesh.n_vertices,))


class _TieredSingleLayer:
    """Quadrature sets per frequency band: coarse meshes get virtual splitting at large ``|s|``."""

    def __init__(self, mesh, kmax_cap):
        self.mesh = mesh
        self.cap = kmax_cap
        self._cache = {}

    def tier(self, s):
        k = abs(s)
        if self.cap is None or k * self.mesh.h.max() <= WAVE_RESOLUTION:
            return None
        k = min(k, self.cap)
        tier = 2.0 ** math.ceil(math.log2(k))
        return None if tier * self.mesh.h.max() <= WAVE_RESOLUTION else tier

    def __call__(self, s):
        key = self.tier(s)
        if key not in self._cache:
            self._cache[key] = SingleLayer(self.mesh, kmax=key)
        return self._cache[key]


def solve_density(
    problem: ScatteringProblem,
    mesh: Mesh,
    with_residual: bool = False,
    kmax_cap: float | None = None,
    workers: int | None = None,
) -> DensityHistory:
    """Solve ``V(d_t^tau) phi = rhs`` on ``mesh`` by one Galerkin solve per contour frequency.

    With ``shift_eta > 0`` the data is sampled at ``t + eta`` and multiplied by
    ``exp(-s eta)`` in the frequency domain; the horizon is extended by
    ``ceil(eta / tau)`` steps, which are dropped from the returned history.
    ``with_residual`` also returns the P1 residual (computed in the same
    frequency loop). ``kmax_cap`` turns on virtual splitting of coarse
    elements for ``|s|`` up to that value; by default the same quadrature is
    used at every frequency.
    """
    scheme = problem.solve_scheme
    M = len(mesh)
    rhs = incident_rhs(problem, mesh, scheme)
    eta = problem.shift_eta
    layers = _TieredSingleLayer(mesh, kmax_cap)

    if with_residual:
        nv = mesh.n_vertices
        payload = np.concatenate([rhs, _incident_p1_load(problem, mesh, scheme)], axis=2)
    else:
        payload = rhs

    def action(s, x):
        if eta > 0:
            x = x * shift_multiplier(eta, s)
        b = x[:M]
        if with_residual:
            V, G1 = layers(s).matrices(s, trace=True)
        else:
            V = layers(s).matrices(s)
        lu = lu_solver(V)
        phi = linalg.lu_solve(lu, b, check_finite=False)
        if not with_residual:
            return phi
        return phi, G1 @ phi - x[M:], V @ phi - b

    if not np.any(payload):
        phi = np.zeros((scheme.N + 1, scheme.m, M))
        out = (phi, np.zeros((scheme.N + 1, scheme.m, mesh.n_vertices)), phi.copy()) if with_residual else phi
    else:
        out = frequency_map(scheme, payload, action, real=True, workers=workers)

    keep = problem.scheme.N + 1
    if with_residual:
        phi, rload, p0 = out
        mass = p1_mass_matrix(mesh)
        flat = np.moveaxis(rload[:keep].reshape(-1, nv), 0, -1)
        nodal = np.moveaxis(p1_solve_mass(mesh, flat, mass), -1, 0).reshape(keep, scheme.m, nv)
        residual = ResidualHistory(nodal, mesh, problem.scheme, p0[:keep])
    else:
        phi, residual = out, None
    return DensityHistory(StageSeries(phi[:keep]), mesh, problem.scheme, residual)


def _split_mesh(mesh, kmax):
    # virtual sub-elements of length <= WAVE_RESOLUTION / kmax; returns the mesh and child offsets
    pieces = np.maximum(1, np.ceil(mesh.h * kmax / WAVE_RESOLUTION)).astype(int)
    if np.all(pieces == 1):
        return mesh, np.arange(len(mesh))
    parent = np.repeat(np.arange(len(mesh)), pieces)
    local = np.concatenate([np.arange(n) for n in pieces])
    t0 = (local / pieces[parent])[:, None]
    t1 = ((local + 1) / pieces[parent])[:, None]
    d = mesh.b[parent] - mesh.a[parent]
    fine = Mesh(mesh.a[parent] + t0 * d, mesh.a[parent] + t1 * d, mesh.component[parent])
    return fine, np.r_[0, np.cumsum(pieces)[:-1]]


def evaluate_field(history: DensityHistory, points, workers=None) -> np.ndarray:
    """Scattered field ``(S(d_t^tau) phi)(x_k, t_n)``; returns shape (N + 1, K).

    Elements are split virtually so that the quadrature resolves the largest
    contour frequency.
    """
    from .cq import contour_frequencies
    from .kernels import _k0_unchecked

    points = np.atleast_2d(np.asarray(points, dtype=float))
    PointRule(history.mesh, points)  # rejects points on the boundary
    phi = history.stages.values
    if not np.any(phi):
        return np.zeros((history.scheme.N + 1, len(points)))
    freqs = contour_frequencies(history.scheme, half=True)
    fine, offsets = _split_mesh(history.mesh, float(np.abs(freqs.s).max()))
    rule = PointRule(fine, points)

    def action(s, x):
        P = rule.reduce(_k0_unchecked(s * rule.r) / (2.0 * np.pi))
        return np.add.reduceat(P, offsets, axis=1) @ x

    u = frequency_map(history.scheme, phi, action, real=True, workers=workers, freqs=freqs)
    return u[:, -1]
