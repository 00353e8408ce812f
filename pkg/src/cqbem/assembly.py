"""Galerkin single-layer matrices on piecewise constants, potentials and P1 projections."""

from __future__ import annotations

import warnings

import numpy as np
from scipy import linalg

from .kernels import _k0_unchecked
from .quadrature import PairRule, PointRule, gauss01

__all__ = [
    "assemble_single_layer",
    "test_against_p0",
    "boundary_trace_single_layer",
    "evaluate_potential",
    "p1_l2_projection",
    "p1_mass_matrix",
    "projection_points",
    "SingleLayer",
    "ConditionWarning",
    "PROJECTION_ORDER",
]

PROJECTION_ORDER = 5
CONDITION_LIMIT = 1e12
_INV_2PI = 1.0 / (2.0 * np.pi)


class ConditionWarning(RuntimeWarning):
    """A Galerkin matrix is close to singular in working precision."""


def _check_frequency(s):
    s = complex(s)
    if not s.real > 0.0:
        raise ValueError(f"Laplace frequency must have positive real part, got {s}")
    return s


def _kernel(s, r):
    return _k0_unchecked(s * r) * _INV_2PI


class SingleLayer:
    """Cached quadrature for one mesh, evaluated at any number of frequencies.

    ``matrices(s)`` returns the P0 Galerkin matrix of ``V(s)`` and, if asked,
    the P1-test / P0-trial matrix used for L2 projections of boundary traces.
    """

    def __init__(self, mesh, kmax=None):
        self.mesh = mesh
        self.rule = PairRule(mesh, kmax=kmax)
        M = len(mesh)
        self._iu, self._ju = self.rule.pairs.T
        self._ev = mesh.element_vertices
        self._shape = (M, M)

    def matrices(self, s, trace=False):
        s = _check_frequency(s)
        vals = self.rule.reduce(_kernel(s, self.rule.r))
        iu, ju = self._iu, self._ju
        V = np.empty(self._shape, dtype=complex)
        V[iu, ju] = vals[0]
        V[ju, iu] = vals[0]
        if not trace:
            return V
        # local[e, j, k]: int over E_e of (k-th hat on e) * (V chi_j)
        local = np.empty(self._shape + (2,), dtype=complex)
        local[iu, ju, 0] = vals[1]
        local[iu, ju, 1] = vals[2]
        local[ju, iu, 0] = vals[3]
        local[ju, iu, 1] = vals[4]
        G1 = np.zeros((self.mesh.n_vertices, self._shape[1]), dtype=complex)
        np.add.at(G1, self._ev[:, 0], local[:, :, 0])
        np.add.at(G1, self._ev[:, 1], local[:, :, 1])
        return V, G1


def assemble_single_layer(mesh, s, kmax=None) -> np.ndarray:
    """Dense ``M x M`` matrix ``int_{E_i} int_{E_j} G(s, |x - y|) dy dx``.

    ``kmax`` (optional) keeps the quadrature resolved for ``|s| <= kmax`` on
    coarse meshes; the default is ``|s|``.
    """
    kmax = abs(complex(s)) if kmax is None else kmax
    return SingleLayer(mesh, kmax=kmax).matrices(s)


def lu_solver(V):
    """LU factorisation with a 1-norm condition estimate; warns above ``CONDITION_LIMIT``."""
    lu, piv = linalg.lu_factor(V, check_finite=False)
    anorm = np.abs(V).sum(axis=0).max()
    gecon = linalg.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if rcond > 0 and 1.0 / rcond > CONDITION_LIMIT:
        warnings.warn(
            f"Galerkin matrix condition number ~{1.0 / rcond:.2e} exceeds {CONDITION_LIMIT:.0e}",
            ConditionWarning,
            stacklevel=2,
        )
    return lu, piv


def projection_points(mesh, order=PROJECTION_ORDER):
    """Gauss points (M, order, 2), reference nodes and weights used for P1 projections."""
    xi, w = gauss01(order)
    return mesh.points(xi), xi, w


def test_against_p0(mesh, g, order=8) -> np.ndarray:
    """Integrals ``int_{E_j} g(x) ds(x)``; ``g`` maps an (..., 2) point array to values."""
    pts, xi, w = projection_points(mesh, order)
    vals = np.asarray(g(pts))
    if vals.shape[:2] != pts.shape[:2]:
        vals = np.broadcast_to(vals, pts.shape[:2] + vals.shape[2:])
    return np.einsum("mq...,q,m->m...", vals, w, mesh.h)


def p1_mass_matrix(mesh) -> np.ndarray:
    """Tridiagonal P1 mass matrix in upper banded storage (2, n_vertices)."""
    nv = mesh.n_vertices
    ev = mesh.element_vertices
    ab = np.zeros((2, nv))
    np.add.at(ab[1], ev[:, 0], mesh.h / 3.0)
    np.add.at(ab[1], ev[:, 1], mesh.h / 3.0)
    ab[0, ev[:, 1]] = mesh.h / 6.0
    return ab


def p1_solve_mass(mesh, rhs, mass=None):
    ab = p1_mass_matrix(mesh) if mass is None else mass
    return linalg.solveh_banded(ab, rhs, check_finite=False)


def p1_load(mesh, samples, xi, w):
    """P1 load vector from samples at reference nodes ``xi`` (shape (M, nq, ...))."""
    samples = np.asarray(samples)
    hw = mesh.h[:, None] * w[None, :]
    la = np.einsum("mq,mq...->m...", hw * (1.0 - xi)[None, :], samples)
    lb = np.einsum("mq,mq...->m...", hw * xi[None, :], samples)
    ev = mesh.element_vertices
    out = np.zeros((mesh.n_vertices,) + samples.shape[2:], dtype=np.result_type(samples, float))
    np.add.at(out, ev[:, 0], la)
    np.add.at(out, ev[:, 1], lb)
    return out


def p1_l2_projection(mesh, samples) -> np.ndarray:
    """L2(Gamma)-best P1 approximation from samples at the Gauss points of each element.

    ``samples`` has shape (M, nq, ...) with values at the ``nq``-point Gauss
    nodes of every element; extra trailing axes are projected independently.
    """
    samples = np.asarray(samples)
    if samples.ndim < 2 or samples.shape[0] != len(mesh):
        raise ValueError("samples must have shape (n_elements, n_points, ...)")
    xi, w = gauss01(samples.shape[1])
    return p1_solve_mass(mesh, p1_load(mesh, samples, xi, w))


def p1_evaluate(mesh, nodal, xi):
    """Values of a P1 function at reference points ``xi`` of every element: (M, len(xi), ...)."""
    nodal = np.asarray(nodal)
    ev = mesh.element_vertices
    xi = np.asarray(xi)
    va, vb = nodal[ev[:, 0]], nodal[ev[:, 1]]
    extra = (None,) * (nodal.ndim - 1)
    return va[:, None] * (1.0 - xi)[(None, slice(None)) + extra] + vb[:, None] * xi[(None, slice(None)) + extra]


def potential_matrix(mesh, s, points, on_boundary=False, rule=None):
    """Matrix ``P[k, j] = int_{E_j} G(s, |x_k - y|) dy``."""
    s = _check_frequency(s)
    rule = PointRule(mesh, points, on_boundary_ok=on_boundary) if rule is None else rule
    return rule.reduce(_kernel(s, rule.r))


def evaluate_potential(mesh, s, density, points) -> np.ndarray:
    """Single-layer potential ``S(s) density`` at points off the boundary."""
    density = np.asarray(density)
    if density.shape[0] != len(mesh):
        raise ValueError("density length must match the number of elements")
    return potential_matrix(mesh, s, points) @ density


def boundary_trace_single_layer(mesh, s, density, order=PROJECTION_ORDER) -> np.ndarray:
    """P1 nodal values of the L2 projection of ``V(s) density``.

    ``V(s) density`` is sampled at the ``order``-point Gauss nodes of every
    element (log-singular self-contributions handled by splitting at the
    sample point) and projected with the P1 mass matrix.
    """
    density = np.asarray(density)
    if density.shape[0] != len(mesh):
        raise ValueError("density length must match the number of elements")
    pts, xi, w = projection_points(mesh, order)
    P = potential_matrix(mesh, s, pts.reshape(-1, 2), on_boundary=True)
    samples = (P @ density).reshape((len(mesh), order) + density.shape[1:])
    return p1_solve_mass(mesh, p1_load(mesh, samples, xi, w))
