"""Polygonal boundary meshes in the plane: open screens, wedges and custom polylines.

A :class:`Mesh` is an ordered list of straight segments grouped into
components (disjoint screen pieces). Consecutive elements of a component
share an endpoint, which is what the piecewise-linear space relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GeometrySpec",
    "Mesh",
    "build_mesh",
    "refine",
    "graded_mesh",
    "mesh_to_text",
    "mesh_from_text",
    "common_refinement",
]

_SQRT3_2 = np.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class GeometrySpec:
    """Named scatterer geometry.

    ``kind`` is one of ``"flat-screen"``, ``"wedge"``, ``"trapping"`` or
    ``"custom"``; custom geometries carry one polyline (sequence of points)
    per component.
    """

    kind: str
    polylines: tuple = field(default=(), compare=False)

    KINDS = ("flat-screen", "wedge", "trapping", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "custom":
            if not self.polylines:
                raise ValueError("custom geometry needs at least one polyline")
            cleaned = []
            for c, line in enumerate(self.polylines):
                pts = np.asarray(line, dtype=float)
                if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
                    raise ValueError(f"polyline {c} must have at least 2 points of shape (2,)")
                if not np.all(np.isfinite(pts)):
                    raise ValueError(f"polyline {c} has non-finite coordinates")
                if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0.0):
                    raise ValueError(f"polyline {c} has repeated consecutive points (degenerate segment)")
                cleaned.append(tuple(map(tuple, pts)))
            object.__setattr__(self, "polylines", tuple(cleaned))

    @classmethod
    def flat_screen(cls):
        return cls("flat-screen")

    @classmethod
    def wedge(cls):
        return cls("wedge")

    @classmethod
    def trapping(cls):
        return cls("trapping")

    @classmethod
    def custom(cls, polylines: Iterable[Sequence[Sequence[float]]]):
        return cls("custom", tuple(tuple(map(tuple, p)) for p in polylines))

    @classmethod
    def from_name(cls, name: str):
        if name not in ("flat-screen", "wedge", "trapping"):
            raise ValueError(f"unknown geometry {name!r}; expected flat-screen, wedge or trapping")
        return cls(name)

    def components(self) -> list[np.ndarray]:
        """Polyline vertices of every component, each an array of shape (k, 2)."""
        if self.kind == "flat-screen":
            lines = [[(-1.0, 0.0), (1.0, 0.0)]]
        elif self.kind == "wedge":
            lines = [[(0.0, 0.0), (1.0, 0.0)], [(0.0, 0.0), (0.0, 1.0)]]
        elif self.kind == "trapping":
            lines = [
                [(0.0, -1.0), (0.0, 1.0)],
                [(0.0, 1.0), (_SQRT3_2, 0.5)],
                [(0.0, -1.0), (_SQRT3_2, -0.5)],
            ]
        else:
            lines = self.polylines
        return [np.asarray(line, dtype=float) for line in lines]

    def pieces(self) -> list[tuple[int, np.ndarray, np.ndarray]]:
        """Straight pieces as ``(component, start, end)``."""
        out = []
        for c, pts in enumerate(self.components()):
            for p, q in zip(pts[:-1], pts[1:]):
                out.append((c, p, q))
        return out


class Mesh:
    """Immutable partition of a polygonal boundary into straight elements.

    Parameters
    ----------
    a, b : array_like, shape (M, 2)
        Oriented endpoints of each element.
    component : array_like of int, shape (M,)
        Component index of each element; elements of a component are
        contiguous and ordered so that ``b[i] == a[i + 1]``.
    """

    def __init__(self, a, b, component):
        a = np.array(a, dtype=float).reshape(-1, 2)
        b = np.array(b, dtype=float).reshape(-1, 2)
        component = np.array(component, dtype=int).reshape(-1)
        if not (len(a) == len(b) == len(component)) or len(a) == 0:
            raise ValueError("a, b and component must be non-empty and of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("element endpoints must be finite")
        h = np.linalg.norm(b - a, axis=1)
        if np.any(h <= 0.0):
            raise ValueError(f"zero-length element(s) at {np.flatnonzero(h <= 0.0).tolist()}")
        if np.any(np.diff(component) < 0):
            raise ValueError("components must be contiguous and in increasing order")
        same = component[1:] == component[:-1]
        gap = np.linalg.norm(b[:-1] - a[1:], axis=1)
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.any(gap[same] > 1e-12 * scale):
            raise ValueError("consecutive elements of a component must share an endpoint")
        for arr in (a, b, component, h):
            arr.setflags(write=False)
        self.a, self.b, self.component, self.h = a, b, component, h

    def __len__(self):
        return len(self.h)

    def __repr__(self):
        return f"Mesh(elements={len(self)}, components={self.n_components})"

    def __eq__(self, other):
        if not isinstance(other, Mesh) or len(self) != len(other):
            return NotImplemented if not isinstance(other, Mesh) else False
        return (
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.component, other.component)
        )

    __hash__ = None

    @property
    def n_elements(self) -> int:
        return len(self.h)

    @property
    def n_components(self) -> int:
        return int(self.component[-1]) + 1

    @property
    def component_breaks(self) -> tuple[int, ...]:
        """Element indices where a new component starts (always begins with 0)."""
        return tuple(int(i) for i in np.flatnonzero(np.r_[True, np.diff(self.component) != 0]))

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)

    @property
    def tangents(self) -> np.ndarray:
        return (self.b - self.a) / self.h[:, None]

    def points(self, xi) -> np.ndarray:
        """Points ``a + xi (b - a)`` for reference coordinates ``xi``; shape (M, len(xi), 2)."""
        xi = np.asarray(xi, dtype=float)
        return self.a[:, None, :] + xi[None, :, None] * (self.b - self.a)[:, None, :]

    # piecewise-linear space, one chain of vertices per component
    @property
    def n_vertices(self) -> int:
        return self.n_elements + self.n_components

    @property
    def element_vertices(self) -> np.ndarray:
        """(M, 2) global P1 vertex indices of the start and end of each element."""
        left = np.arange(self.n_elements) + self.component
        return np.stack([left, left + 1], axis=1)

    @property
    def vertices(self) -> np.ndarray:
        out = np.empty((self.n_vertices, 2))
        ev = self.element_vertices
        out[ev[:, 0]] = self.a
        out[ev[:, 1]] = self.b
        return out

    def arclength(self) -> np.ndarray:
        """Arclength of each element midpoint, measured from the start of its component."""
        s = np.empty(self.n_elements)
        for start, stop in self._component_slices():
            h = self.h[start:stop]
            s[start:stop] = np.cumsum(h) - 0.5 * h
        return s

    def _component_slices(self):
        br = list(self.component_breaks) + [self.n_elements]
        return list(zip(br[:-1], br[1:]))


def build_mesh(spec: GeometrySpec, n_per_component: int) -> Mesh:
    """Uniform mesh with ``n_per_component`` elements on every straight piece."""
    n = int(n_per_component)
    if n < 1:
        raise ValueError("n_per_component must be >= 1")
    a, b, comp = [], [], []
    t = np.linspace(0.0, 1.0, n + 1)
    for c, p, q in spec.pieces():
        nodes = p[None, :] + t[:, None] * (q - p)[None, :]
        a.append(nodes[:-1])
        b.append(nodes[1:])
        comp.append(np.full(n, c))
    return Mesh(np.concatenate(a), np.concatenate(b), np.concatenate(comp))


def graded_mesh(spec: GeometrySpec, n_per_half: int, beta: float) -> Mesh:
    """Algebraically graded mesh clustering toward the endpoints of every piece.

    Each straight piece is split at its midpoint; on a half of length ``l``
    with endpoint ``p`` the nodes sit at distance ``l * (j / n)**beta`` from ``p``.
    """
    n = int(n_per_half)
    if n < 1:
        raise ValueError("n_per_half must be >= 1")
    if not beta >= 1.0:
        raise ValueError(f"grading exponent beta must be >= 1, got {beta}")
    frac = (np.arange(n + 1) / n) ** beta
    # reference coordinates on [0, 1]: graded toward 0 on the first half, toward 1 on the second
    t = np.concatenate([0.5 * frac, 1.0 - 0.5 * frac[::-1][1:]])
    a, b, comp = [], [], []
    for c, p, q in spec.pieces():
        nodes = p[None, :] + t[:, None] * (q - p)[None, :]
        a.append(nodes[:-1])
        b.append(nodes[1:])
        comp.append(np.full(2 * n, c))
    return Mesh(np.concatenate(a), np.concatenate(b), np.concatenate(comp))


def refine(mesh: Mesh, marked) -> Mesh:
    """Bisect every marked element; unmarked elements and ordering are preserved."""
    marked = np.unique(np.asarray(list(marked), dtype=int))
    if marked.size == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_elements:
        raise IndexError(f"marked indices must lie in [0, {mesh.n_elements})")
    flag = np.zeros(mesh.n_elements, dtype=bool)
    flag[marked] = True
    reps = np.where(flag, 2, 1)
    idx = np.repeat(np.arange(mesh.n_elements), reps)
    a = mesh.a[idx].copy()
    b = mesh.b[idx].copy()
    mid = mesh.midpoints
    # position of the first child of each element in the new arrays
    first = np.cumsum(reps) - reps
    b[first[flag]] = mid[flag]
    a[first[flag] + 1] = mid[flag]
    return Mesh(a, b, mesh.component[idx])


def mesh_to_text(mesh: Mesh) -> str:
    """Plain-text listing: vertices as ``x y``, then elements as ``i j component``."""
    verts = mesh.vertices
    ev = mesh.element_vertices
    lines = [f"# vertices {len(verts)}"]
    lines += [f"{x!r} {y!r}" for x, y in verts.tolist()]
    lines.append(f"# elements {mesh.n_elements}")
    lines += [f"{i} {j} {k}" for (i, j), k in zip(ev.tolist(), mesh.component.tolist())]
    return "\n".join(lines) + "\n"


def mesh_from_text(text: str) -> Mesh:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or rows[0][:2] != ["#", "vertices"]:
        raise ValueError("mesh text must start with '# vertices <n>'")
    nv = int(rows[0][2])
    verts = np.array([[float(x), float(y)] for x, y in rows[1 : 1 + nv]])
    head = rows[1 + nv]
    if head[:2] != ["#", "elements"]:
        raise ValueError("expected '# elements <n>' after the vertex block")
    ne = int(head[2])
    el = np.array([[int(v) for v in r] for r in rows[2 + nv : 2 + nv + ne]])
    return Mesh(verts[el[:, 0]], verts[el[:, 1]], el[:, 2])


def common_refinement(first: Mesh, second: Mesh):
    """Coarsest mesh refining both inputs (same boundary, same components).

    Returns ``(merged, parent_first, parent_second)`` where ``parent_*[k]`` is
    the element of the respective input containing merged element ``k``.
    """
    if first.n_components != second.n_components:
        raise ValueError("meshes have different numbers of components")
    a, b, comp, pa, pb = [], [], [], [], []
    for (s0, e0), (s1, e1) in zip(first._component_slices(), second._component_slices()):
        x0 = np.r_[0.0, np.cumsum(first.h[s0:e0])]
        x1 = np.r_[0.0, np.cumsum(second.h[s1:e1])]
        length = x0[-1]
        if abs(length - x1[-1]) > 1e-9 * length or np.linalg.norm(first.a[s0] - second.a[s1]) > 1e-9 * length:
            raise ValueError("meshes do not describe the same boundary component")
        x = np.unique(np.r_[x0, x1])
        x = x[np.r_[True, np.diff(x) > 1e-12 * length]]
        x[-1] = length
        mid = 0.5 * (x[:-1] + x[1:])
        i0 = np.clip(np.searchsorted(x0, mid) - 1, 0, e0 - s0 - 1)
        i1 = np.clip(np.searchsorted(x1, mid) - 1, 0, e1 - s1 - 1)
        el = s0 + i0
        t_lo = ((x[:-1] - x0[i0]) / first.h[el])[:, None]
        t_hi = ((x[1:] - x0[i0]) / first.h[el])[:, None]
        d = first.b[el] - first.a[el]
        a.append(first.a[el] + t_lo * d)
        b.append(first.a[el] + t_hi * d)
        # exact shared endpoints between consecutive merged elements
        b[-1][:-1] = a[-1][1:]
        comp.append(first.component[el])
        pa.append(el)
        pb.append(s1 + i1)
    merged = Mesh(np.concatenate(a), np.concatenate(b), np.concatenate(comp))
    return merged, np.concatenate(pa), np.concatenate(pb)
