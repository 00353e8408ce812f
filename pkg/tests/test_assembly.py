import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cqbem.assembly as asm
from cqbem.geometry import GeometrySpec, Mesh, build_mesh, graded_mesh, refine
from cqbem.kernels import green2d
from oracles import gauss01, segment_potential

UNIT = Mesh([[0.0, 0.0]], [[1.0, 0.0]], [0])

# mpmath values of 2 int_0^1 (1 - r) K0(s r) dr / (2 pi)
SELF_UNIT = [
    (1.0, 0.2687863042511656),
    (1 + 1j, 0.21134162754765265 - 0.1065757493892511j),
    (5 + 20j, 0.006542802276500868 - 0.023175648531283045j),
]


@pytest.mark.parametrize("s, expected", SELF_UNIT)
def test_self_entry_against_oracle(s, expected):
    V = asm.assemble_single_layer(UNIT, s)
    assert abs(V[0, 0] - expected) <= 1e-8 * abs(expected)


@pytest.mark.parametrize(
    "s, expected",
    # mpmath double integral, E0 = [0,1] x {0}, E1 = [3,4] x {0.5}
    [(1.0, 0.0058871209565328556), (2 + 3j, -6.533263123290941e-05 - 8.69445766741279e-05j)],
)
def test_separated_entry_against_oracle(s, expected):
    m = Mesh([[0, 0], [3, 0.5]], [[1, 0], [4, 0.5]], [0, 1])
    V = asm.assemble_single_layer(m, s)
    assert abs(V[0, 1] - expected) <= 1e-10 * abs(expected)


def test_separated_entry_against_tensor_gauss():
    m = Mesh([[0, 0], [3, 0.5]], [[1, 0], [4, 0.5]], [0, 1])
    x, w = gauss01(30)
    X = np.stack([x, 0 * x], 1)
    Y = np.stack([3 + x, 0.5 + 0 * x], 1)
    r = np.linalg.norm(X[:, None] - Y[None], axis=2)
    ref = np.sum(w[:, None] * w[None] * green2d(1.0, r))
    assert abs(asm.assemble_single_layer(m, 1.0)[0, 1] - ref) <= 1e-10 * abs(ref)


def test_corner_entry_against_oracle():
    # elements meeting at a right angle; mpmath value of int int K0(sqrt(u^2 + v^2)) / (2 pi)
    m = Mesh([[1, 0], [0, 0]], [[0, 0], [0, 1]], [0, 0])
    assert abs(asm.assemble_single_layer(m, 1.0)[0, 1] - 0.11169012456163871) <= 1e-8 * 0.1117


@st.composite
def meshes(draw):
    kind = draw(st.sampled_from(["flat-screen", "wedge", "trapping"]))
    m = build_mesh(GeometrySpec(kind), draw(st.integers(1, 5)))
    for _ in range(draw(st.integers(0, 3))):
        m = refine(m, draw(st.sets(st.integers(0, len(m) - 1), min_size=1, max_size=len(m))))
    return m


@settings(max_examples=25, deadline=None)
@given(meshes())
def test_real_frequency_matrix_is_symmetric_positive_definite(m):
    V = asm.assemble_single_layer(m, 1.0)
    assert np.max(np.abs(V.imag)) == 0.0
    assert np.array_equal(V, V.T)
    assert np.linalg.eigvalsh(V.real).min() > 0.0


@settings(max_examples=25, deadline=None)
@given(meshes(), st.floats(0.1, 5.0), st.floats(-20.0, 20.0))
def test_conjugate_frequency_gives_conjugate_matrix(m, re, im):
    s = complex(re, im)
    assert np.allclose(asm.assemble_single_layer(m, np.conj(s)), np.conj(asm.assemble_single_layer(m, s)), rtol=0, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(meshes(), st.floats(0.2, 4.0), st.floats(-10.0, 10.0))
def test_galerkin_residual_vanishes_against_p0(m, re, im):
    s = complex(re, im)
    f = lambda x: np.cos(x[..., 0]) + x[..., 1] ** 2
    b = asm.test_against_p0(m, f)
    V = asm.assemble_single_layer(m, s)
    phi = np.linalg.solve(V, b)
    residual = b - asm.SingleLayer(m, kmax=abs(s)).matrices(s) @ phi
    assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(b)


def test_refinement_decreases_energy_error():
    spec = GeometrySpec.flat_screen()
    f = lambda x: np.exp(x[..., 0])
    fine = graded_mesh(spec, 32, 3.0)
    phi_ref = np.linalg.solve(asm.assemble_single_layer(fine, 1.0).real, asm.test_against_p0(fine, f))
    from cqbem.geometry import common_refinement

    errors = []
    for n in (2, 4, 8, 16):
        m = build_mesh(spec, n)
        phi = np.linalg.solve(asm.assemble_single_layer(m, 1.0).real, asm.test_against_p0(m, f))
        merged, p1, p2 = common_refinement(m, fine)
        e = phi[p1] - phi_ref[p2]
        errors.append(e @ asm.assemble_single_layer(merged, 1.0).real @ e)
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_p0_testing_examples():
    m = build_mesh(GeometrySpec.trapping(), 3)
    assert np.allclose(asm.test_against_p0(m, lambda x: np.ones(x.shape[:-1])), m.h, rtol=1e-14)
    assert np.array_equal(asm.test_against_p0(m, lambda x: np.zeros(x.shape[:-1])), np.zeros(len(m)))
    h = 0.37
    single = Mesh([[0.2, 0.0]], [[0.2 + h, 0.0]], [0])
    assert asm.test_against_p0(single, lambda x: (x[..., 0] - 0.2) / h)[0] == pytest.approx(h / 2, rel=1e-14)


def test_trace_of_zero_density_is_zero():
    m = build_mesh(GeometrySpec.wedge(), 3)
    assert np.array_equal(asm.boundary_trace_single_layer(m, 1.0, np.zeros(len(m))), np.zeros(m.n_vertices))


def test_trace_pointwise_at_midpoint():
    # 1D log-singular oracle: 2 int_0^{1/2} K0(r) dr / (2 pi), mpmath
    P = asm.potential_matrix(UNIT, 1.0, np.array([[0.5, 0.0]]), on_boundary=True)
    assert abs(P[0, 0] - 0.2951058979182995) <= 1e-8 * 0.2951


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_trace_is_linear(alpha, phi, psi):
    m = build_mesh(GeometrySpec.wedge(), 3)
    phi, psi = np.array(phi), np.array(psi)
    lhs = asm.boundary_trace_single_layer(m, 1 + 1j, alpha * phi + psi)
    rhs = alpha * asm.boundary_trace_single_layer(m, 1 + 1j, phi) + asm.boundary_trace_single_layer(m, 1 + 1j, psi)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_potential_examples():
    m = build_mesh(GeometrySpec.flat_screen(), 4)
    pts = np.array([[2.0, 2.0], [-2.0, 2.0]])
    assert np.array_equal(asm.evaluate_potential(m, 1.0, np.zeros(4), pts), np.zeros(2))
    density = np.array([1.0, -0.5, 2.0, 0.25])
    far = np.array([[100.0 * 0.6, 100.0 * 0.8]])  # |x| = 50 diam
    val = asm.evaluate_potential(m, 0.05, density, far)[0]
    approx = green2d(0.05, 100.0) * np.dot(density, m.h)
    assert abs(val - approx) < 0.05 * abs(approx)


def test_potential_against_brute_force_quadrature():
    m = build_mesh(GeometrySpec.flat_screen(), 4)
    density = np.array([1.0, -0.5, 2.0, 0.25])
    x = np.array([2.0, 2.0])
    for s in (1.0, 0.5 + 2.0j):
        ref = sum(d * segment_potential(a, b, x, s) for d, a, b in zip(density, m.a, m.b))
        val = asm.evaluate_potential(m, s, density, x[None])[0]
        assert abs(val - ref) <= 1e-8 * abs(ref)


def test_potential_rejects_points_on_boundary():
    with pytest.raises(ValueError):
        asm.evaluate_potential(UNIT, 1.0, np.ones(1), np.array([[0.5, 0.0]]))


def test_p1_projection_reproduces_p1_and_constants():
    m = refine(graded_mesh(GeometrySpec.trapping(), 2, 2.0), {1, 4})
    pts, xi, w = asm.projection_points(m)
    nodal = np.sin(np.arange(m.n_vertices))
    samples = asm.p1_evaluate(m, nodal, xi)
    assert np.allclose(asm.p1_l2_projection(m, samples), nodal, rtol=0, atol=1e-12)
    assert np.allclose(asm.p1_l2_projection(m, np.full(pts.shape[:2], 2.5)), 2.5, rtol=0, atol=1e-12)


def test_p1_projection_of_quadratic_bump_matches_normal_equations():
    m = build_mesh(GeometrySpec.flat_screen(), 3)
    xi, w = gauss01(5)
    bump = np.zeros((3, 5))
    bump[1] = xi * (1 - xi)
    got = asm.p1_l2_projection(m, bump)
    # dense normal equations with hat functions sampled on a fine grid
    xf, wf = gauss01(40)
    nv = m.n_vertices
    G = np.zeros((nv, nv))
    rhs = np.zeros(nv)
    ev = m.element_vertices
    for e in range(3):
        hats = np.zeros((nv, len(xf)))
        hats[ev[e, 0]] = 1 - xf
        hats[ev[e, 1]] = xf
        G += (hats * wf * m.h[e]) @ hats.T
        if e == 1:
            rhs += (hats * wf * m.h[e]) @ (xf * (1 - xf))
    assert np.allclose(got, np.linalg.solve(G, rhs), rtol=0, atol=1e-10)


def test_condition_warning_threshold():
    V = np.diag([1.0, 1e-13])
    with pytest.warns(asm.ConditionWarning):
        asm.lu_solver(V)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        asm.lu_solver(np.eye(3))


def test_rejects_left_half_plane_frequency():
    with pytest.raises(ValueError):
        asm.assemble_single_layer(UNIT, -1.0)
