"""Solve, estimate, mark, refine."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .estimator import compute_residual, energy_norm, global_estimate, indicators
from .geometry import Mesh, refine
from .solver import DensityHistory, ScatteringProblem, solve_density

__all__ = ["AdaptiveConfig", "AdaptiveStep", "AdaptiveTrace", "AdaptiveError", "mark", "doerfler_mark", "adaptive_loop"]


@dataclass(frozen=True)
class AdaptiveConfig:
    theta: float = 0.5
    max_iterations: int = 10
    target_estimate: float = 0.0
    k_set: tuple = (0,)
    marking: str = "maximum"  # or "doerfler"

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.target_estimate >= 0.0:
            raise ValueError("target_estimate must be non-negative")
        if self.marking not in ("maximum", "doerfler"):
            raise ValueError(f"unknown marking strategy {self.marking!r}")


@dataclass
class AdaptiveStep:
    mesh: Mesh
    dofs: int
    estimate: float
    norm: float
    marked: int
    indicators: np.ndarray = field(repr=False)
    history: DensityHistory | None = field(default=None, repr=False)


@dataclass
class AdaptiveTrace:
    steps: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def final_mesh(self) -> Mesh:
        return self.steps[-1].mesh

    @property
    def dofs(self):
        return [s.dofs for s in self.steps]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "dofs", "estimate", "marked"])
        for i, s in enumerate(self.steps):
            w.writerow([i, s.dofs, repr(float(s.estimate)), s.marked])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


class AdaptiveError(RuntimeError):
    """A solve failed inside the loop; ``trace`` holds the iterations completed so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def mark(ind, theta: float) -> set:
    """``{j : eta_j > theta * max(eta)}``; empty when every indicator is zero."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    ind = np.asarray(ind, dtype=float)
    if ind.size == 0:
        return set()
    top = ind.max()
    if not top > 0.0:
        return set()
    return set(np.flatnonzero(ind > theta * top).tolist())


def doerfler_mark(ind, theta: float) -> set:
    """Smallest set (largest indicators first) with ``sum_marked eta^2 >= theta^2 sum eta^2``."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    ind = np.asarray(ind, dtype=float)
    sq = ind * ind
    total = sq.sum()
    if not total > 0.0:
        return set()
    order = np.argsort(-sq, kind="stable")
    cum = np.cumsum(sq[order])
    k = int(np.searchsorted(cum, theta * theta * total * (1.0 - 1e-14))) + 1
    return set(order[:k].tolist())


def adaptive_loop(problem: ScatteringProblem, initial: Mesh, cfg: AdaptiveConfig = AdaptiveConfig(), keep_history=False, **solve_kw) -> AdaptiveTrace:
    """Repeat solve, estimate, mark and refine until the estimate reaches the target,
    nothing is marked, or ``cfg.max_iterations`` solves have been done."""
    trace = AdaptiveTrace()
    mesh = initial
    chooser = mark if cfg.marking == "maximum" else doerfler_mark
    for it in range(cfg.max_iterations):
        try:
            hist = solve_density(problem, mesh, with_residual=True, **solve_kw)
        except Exception as exc:
            raise AdaptiveError(f"solve failed at iteration {it} ({len(mesh)} elements): {exc}", trace) from exc
        ind = indicators(compute_residual(hist, problem), cfg.k_set)
        est = global_estimate(ind)
        done = est <= cfg.target_estimate
        marked = set() if done else chooser(ind, cfg.theta)
        trace.steps.append(
            AdaptiveStep(mesh, len(mesh), est, energy_norm(hist), len(marked), ind, hist if keep_history else None)
        )
        if done:
            trace.stop_reason = "target"
            break
        if not marked:
            trace.stop_reason = "nothing marked"
            break
        if it == cfg.max_iterations - 1:
            trace.stop_reason = "max iterations"
            break
        mesh = refine(mesh, marked)
    return trace
