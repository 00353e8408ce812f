"""Residual error indicators, the global estimate and the discrete energy norm."""

from __future__ import annotations

import csv
import io

import numpy as np

from .assembly import assemble_single_layer
from .cq import forward_cq_apply, scalar_action
from .geometry import common_refinement
from .solver import DensityHistory, ResidualHistory, ScatteringProblem, solve_density

__all__ = [
    "compute_residual",
    "indicators",
    "global_estimate",
    "energy_norm",
    "energy_norm_values",
    "energy_error",
    "indicators_to_csv",
]


def compute_residual(history: DensityHistory, problem: ScatteringProblem) -> ResidualHistory:
    """P1 residual ``P_h(t_i) - f_h(t_i)`` of a computed density.

    Uses the residual produced alongside the solve when available;
    otherwise the problem is re-solved on the same mesh with the residual
    switched on (the density is reproduced bit for bit).
    """
    if history.residual is not None:
        return history.residual
    if problem.scheme != history.scheme:
        raise ValueError("history was computed with a different time discretization")
    return solve_density(problem, history.mesh, with_residual=True).residual


def indicators(residual: ResidualHistory, k_set=(0,)) -> np.ndarray:
    """Element indicators ``eta_j`` from the time-summed surface gradient of the residual.

    ``eta_j^2 = tau h_j sum_k sum_i int_{E_j} |grad_G (d_t^k R)(t_i)|^2``
    over ``k`` in ``k_set`` (a subset of {0, 2}); ``k = 2`` applies the
    scheme's CQ second derivative to the residual series.
    """
    k_set = set(k_set)
    if not k_set or not k_set <= {0, 2}:
        raise ValueError("k_set must be a non-empty subset of {0, 2}")
    mesh = residual.mesh
    ev = mesh.element_vertices
    total = np.zeros(len(mesh))
    for k in sorted(k_set):
        if k == 0:
            R = residual.nodal
        else:
            R = forward_cq_apply(residual.scheme, scalar_action(lambda s: s * s), residual.stages).last_stage
        jump = R[:, ev[:, 1]] - R[:, ev[:, 0]]  # (steps, M)
        # the surface gradient of a P1 function is jump / h on each element, so
        # int_E |grad R|^2 = jump^2 / h
        total += np.sum(jump * jump, axis=0) / mesh.h
    return np.sqrt(residual.tau * mesh.h * total)


def global_estimate(ind) -> float:
    ind = np.asarray(ind, dtype=float)
    return float(np.sqrt(np.sum(ind * ind)))


def energy_norm_values(mesh, tau, values, V1=None) -> float:
    """``sqrt(tau sum_i <phi_i, V(1) phi_i>)`` for coefficient rows ``values`` (steps, M)."""
    values = np.asarray(values, dtype=float)
    if not np.any(values):
        return 0.0
    if V1 is None:
        V1 = assemble_single_layer(mesh, 1.0).real
    q = np.einsum("ij,jk,ik->", values, V1, values)
    return float(np.sqrt(max(tau * q, 0.0)))


def energy_norm(history: DensityHistory) -> float:
    return energy_norm_values(history.mesh, history.scheme.tau, history.last_stage)


def energy_error(first: DensityHistory, second: DensityHistory) -> float:
    """Energy norm of the difference of two densities on the same time grid.

    The meshes may differ; the difference is formed on their common refinement.
    """
    if first.scheme.N != second.scheme.N or abs(first.scheme.tau - second.scheme.tau) > 1e-14:
        raise ValueError("densities must share the time grid")
    if first.mesh == second.mesh:
        return energy_norm_values(first.mesh, first.scheme.tau, first.last_stage - second.last_stage)
    merged, p1, p2 = common_refinement(first.mesh, second.mesh)
    diff = first.last_stage[:, p1] - second.last_stage[:, p2]
    return energy_norm_values(merged, first.scheme.tau, diff)


def indicators_to_csv(ind, path=None) -> str:
    """CSV with columns ``element_index,eta``; written to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["element_index", "eta"])
    for j, e in enumerate(np.asarray(ind, dtype=float).tolist()):
        w.writerow([j, repr(e)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
