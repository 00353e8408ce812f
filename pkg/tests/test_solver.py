import math

import numpy as np
import pytest

from cqbem.cq import CQScheme
from cqbem.geometry import GeometrySpec, Mesh, build_mesh, graded_mesh
from cqbem.solver import (
    OBSERVATION_POINTS,
    IncidentWave,
    ScatteringProblem,
    evaluate_field,
    incident_rhs,
    smoothed_heaviside,
    solve_density,
    window_profile,
)

FLAT = GeometrySpec.flat_screen()


@pytest.fixture(scope="module")
def coarse_solution():
    problem = ScatteringProblem.default(tau=0.1)
    mesh = graded_mesh(FLAT, 4, 2.0)
    return problem, mesh, solve_density(problem, mesh, with_residual=True)


def test_window_profile_values():
    w = IncidentWave()
    assert window_profile(w, 4.0) == 0.0
    assert smoothed_heaviside(0.0, 5.0) == 0.5
    H1 = 1 - 1 / (1 + math.exp(5))
    assert window_profile(w, 1.0) == pytest.approx(math.sin(-6) * H1 * H1, rel=1e-14)
    assert abs(window_profile(w, 1.0) - 0.27569) < 1e-5


def test_incident_wave_validation_and_travel_direction():
    with pytest.raises(ValueError):
        IncidentWave(direction=(1.0, 1.0))
    with pytest.raises(ValueError):
        IncidentWave(beta=0.0)
    w = IncidentWave()
    d = np.array(w.direction)
    x = np.array([0.3, -0.2])
    # moving the point along d by dt delays the signal by dt
    assert w(x + 0.7 * d, 5.0 + 0.7) == pytest.approx(w(x, 5.0), abs=1e-15)


def test_rhs_vanishes_before_arrival():
    problem = ScatteringProblem.default(tau=0.1)
    rhs = incident_rhs(problem, build_mesh(FLAT, 8))
    assert np.abs(rhs[:2]).max() < 1e-6
    assert np.abs(rhs).max() > 0.1


def test_rhs_without_shift_is_plain_sampling():
    problem = ScatteringProblem.default(tau=0.2)
    mesh = Mesh([[0.0, 0.0]], [[0.5 * 0.3, math.sqrt(3) / 2 * 0.3]], [0])  # perpendicular to d
    rhs = incident_rhs(problem, mesh)
    t = problem.scheme.stage_times()
    expected = -window_profile(problem.wave, -t + problem.wave.delay) * 0.3
    assert np.allclose(rhs[:, :, 0], expected, rtol=1e-13, atol=1e-16)


def test_shifted_rhs_samples_ahead():
    plain = ScatteringProblem.default(tau=0.2)
    shifted = ScatteringProblem.default(tau=0.2, shift_eta=0.4)
    mesh = build_mesh(FLAT, 3)
    assert shifted.extra_steps == 2 and shifted.solve_scheme.N == plain.scheme.N + 2
    a = incident_rhs(plain, mesh, plain.scheme.with_steps(plain.scheme.N + 2))
    b = incident_rhs(shifted, mesh)
    assert np.allclose(b[:-2], a[2:], rtol=1e-12, atol=1e-15)


def test_zero_wave_gives_zero_density():
    problem = ScatteringProblem(FLAT, IncidentWave.zero(), 2.0, CQScheme.radau(2, 0.1, 20))
    hist = solve_density(problem, build_mesh(FLAT, 4), with_residual=True)
    assert not np.any(hist.last_stage)
    assert not np.any(hist.residual.stages)
    assert not np.any(evaluate_field(hist, OBSERVATION_POINTS))


def test_zero_shift_is_the_same_code_path():
    mesh = build_mesh(FLAT, 3)
    a = solve_density(ScatteringProblem.default(tau=0.2), mesh)
    b = solve_density(ScatteringProblem.default(tau=0.2, shift_eta=0.2 * 0.0), mesh)
    assert np.array_equal(a.stages.values, b.stages.values)


def test_problem_validation():
    with pytest.raises(ValueError):
        ScatteringProblem(FLAT, IncidentWave(), 5.0, CQScheme.radau(2, 0.1, 20))
    with pytest.raises(ValueError):
        ScatteringProblem.default(tau=0.3)
    with pytest.raises(ValueError):
        ScatteringProblem.default(shift_eta=-0.1)


def test_galerkin_orthogonality_in_time(coarse_solution):
    problem, mesh, hist = coarse_solution
    scale = np.abs(incident_rhs(problem, mesh)).max()
    assert np.abs(hist.residual.p0_tested).max() <= 1e-8 * scale


def test_residual_flag_does_not_change_density(coarse_solution):
    problem, mesh, hist = coarse_solution
    plain = solve_density(problem, mesh)
    assert np.array_equal(plain.stages.values, hist.stages.values)


def test_shift_consistency(coarse_solution):
    problem, mesh, hist = coarse_solution
    diffs = []
    for frac in (0.2, 0.1, 0.05):
        shifted = solve_density(ScatteringProblem.default(tau=0.1, shift_eta=frac * 0.1), mesh)
        diffs.append(np.abs(shifted.last_stage - hist.last_stage).max())
    assert diffs[0] > diffs[1] > diffs[2]
    assert all(a / b <= 2.0 for a, b in zip(diffs, diffs[1:]))


def test_field_causality(coarse_solution):
    problem, mesh, hist = coarse_solution
    u = evaluate_field(hist, OBSERVATION_POINTS)
    assert u.shape == (problem.scheme.N + 1, 4)
    rhs = np.abs(incident_rhs(problem, mesh)).max(axis=(1, 2))
    t_first = np.argmax(rhs > 1e-6) * problem.scheme.tau
    t = hist.times
    for k, x in enumerate(OBSERVATION_POINTS):
        rho = np.linalg.norm(x - np.clip(x, [-1.0, 0.0], [1.0, 0.0]))
        early = t < t_first + rho
        assert np.abs(u[early, k]).max() < 1e-4 * np.abs(u[:, k]).max()


def test_field_rejects_points_on_screen(coarse_solution):
    _, _, hist = coarse_solution
    with pytest.raises(ValueError):
        evaluate_field(hist, [[0.25, 0.0]])


def test_total_field_small_near_screen(coarse_solution):
    # the scattered field cancels the incident one on the screen; just off the
    # screen the total field is much smaller than the incident amplitude
    problem, mesh, hist = coarse_solution
    x = np.array([[0.1, 0.02], [-0.3, -0.02]])
    u = evaluate_field(hist, x)
    total = u + problem.wave(x[None], hist.times[:, None, None]).reshape(u.shape)
    assert np.abs(total).max() < 0.3 * np.abs(u).max()


def test_frequency_band_splitting_barely_moves_the_density(coarse_solution):
    problem, mesh, hist = coarse_solution
    split = solve_density(problem, mesh, kmax_cap=64.0)
    scale = np.abs(hist.last_stage).max()
    # high contour frequencies carry almost no data, so resolving them finer changes little
    assert np.abs(split.last_stage - hist.last_stage).max() <= 1e-6 * scale
