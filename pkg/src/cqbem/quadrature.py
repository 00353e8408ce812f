"""Frequency-independent quadrature point sets for the weakly singular 2D kernel.

Every rule here produces plain arrays of distances and weights. The kernel
``K0(s r)`` is evaluated on them once per frequency, so the geometric work is
paid only once per mesh.

Element pairs are sorted into four cases:

* identical elements: the double integral collapses to a 1D integral in the
  distance ``u``, integrated on a geometrically graded grid toward ``u = 0``;
* elements sharing a vertex with size ratio <= 2: Duffy transformation
  toward the shared vertex, graded in the radial variable;
* admissible pairs (``dist >= max(h)``): tensor Gauss-Legendre, order by
  separation ratio;
* anything else: the larger element is bisected and the pieces re-classified.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

GRADING_RATIO = 0.15
SELF_LEVELS = 14
DUFFY_LEVELS = 8
NEAR_ORDER = 10
SELF_ORDER = 16
DUFFY_ANGULAR_ORDER = 12
MAX_DEPTH = 40
# elements longer than WAVE_RESOLUTION / kmax are split virtually
WAVE_RESOLUTION = 3.0


@lru_cache(maxsize=None)
def gauss01(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def graded01(levels: int = DUFFY_LEVELS, ratio: float = GRADING_RATIO, n: int = NEAR_ORDER):
    """Composite Gauss rule on [0, 1] geometrically graded toward 0."""
    x, w = gauss01(n)
    edges = ratio ** np.arange(levels + 1)  # 1, r, r^2, ...
    edges = np.r_[edges, 0.0][::-1]
    lo, hi = edges[:-1], edges[1:]
    nodes = (lo[:, None] + (hi - lo)[:, None] * x[None, :]).ravel()
    weights = ((hi - lo)[:, None] * w[None, :]).ravel()
    return nodes, weights


def far_order(q):
    """Tensor Gauss order for separation ratio ``q = dist / max(h)`` (q >= 1)."""
    q = np.asarray(q)
    return np.select([q < 2.0, q < 4.0, q < 10.0], [8, 6, 6], default=4)


def segment_distance(p0, p1, q0, q1):
    """Vectorised distance between segments [p0, p1] and [q0, q1] (non-crossing)."""

    def point_seg(x, a, b):
        d = b - a
        t = np.einsum("...i,...i->...", x - a, d) / np.einsum("...i,...i->...", d, d)
        t = np.clip(t, 0.0, 1.0)
        return np.linalg.norm(x - (a + t[..., None] * d), axis=-1)

    return np.minimum(
        np.minimum(point_seg(p0, q0, q1), point_seg(p1, q0, q1)),
        np.minimum(point_seg(q0, p0, p1), point_seg(q1, p0, p1)),
    )


class PairRule:
    """Quadrature points for all element pairs ``i <= j`` of a mesh.

    With ``kmax`` set, elements longer than ``WAVE_RESOLUTION / kmax`` are
    split into virtual sub-elements first, so that kernels oscillating like
    ``exp(-s r)`` with ``|s| <= kmax`` stay resolved.

    Attributes
    ----------
    pairs : (P, 2) int array of element index pairs, ``i <= j``
    starts : (P,) offsets of each pair's points (points are grouped by pair)
    r : distances ``|x - y|`` at the points
    w : weights (Jacobians included, kernel factor ``1/(2 pi)`` excluded)
    xi_x, xi_y : reference coordinates of ``x`` on element ``i`` and ``y`` on ``j``
    """

    def __init__(self, mesh, kmax=None):
        M = len(mesh)
        self.n_elements = M
        iu, ju = np.triu_indices(M)
        self.pairs = np.stack([iu, ju], axis=1)

        if kmax is None or kmax <= 0:
            k, r, w, xx, yy = _pair_points(mesh)
        else:
            pieces = np.maximum(1, np.ceil(mesh.h * kmax / WAVE_RESOLUTION)).astype(int)
            if np.all(pieces == 1):
                k, r, w, xx, yy = _pair_points(mesh)
            else:
                k, r, w, xx, yy = _virtual_pair_points(mesh, pieces)

        order = np.argsort(k, kind="stable")
        self.pair_of_point = k[order]
        self.r = r[order]
        self.w = w[order]
        self.xi_x = xx[order]
        self.xi_y = yy[order]
        counts = np.bincount(self.pair_of_point, minlength=len(iu))
        self.starts = np.r_[0, np.cumsum(counts)[:-1]]
        # weight rows: plain, x-shape (1 - xi, xi), y-shape (1 - xi, xi)
        self.weights = np.stack(
            [
                self.w,
                self.w * (1.0 - self.xi_x),
                self.w * self.xi_x,
                self.w * (1.0 - self.xi_y),
                self.w * self.xi_y,
            ]
        )

    @property
    def n_points(self) -> int:
        return len(self.r)

    def reduce(self, values: np.ndarray) -> np.ndarray:
        """Weighted sums per pair; returns shape (5, P)."""
        return np.add.reduceat(self.weights * values[None, :], self.starts, axis=1)


def _pair_index(i, j, M):
    # position of (i, j), i <= j, in np.triu_indices(M) ordering
    return i * M - (i * (i - 1)) // 2 + (j - i)


def _virtual_pair_points(mesh, pieces):
    from .geometry import Mesh

    M = len(mesh)
    parent = np.repeat(np.arange(M), pieces)
    local = np.concatenate([np.arange(n) for n in pieces])
    t0 = local / pieces[parent]
    t1 = (local + 1) / pieces[parent]
    d = mesh.b - mesh.a
    vmesh = Mesh(
        mesh.a[parent] + t0[:, None] * d[parent],
        mesh.a[parent] + t1[:, None] * d[parent],
        mesh.component[parent],
    )
    kv, r, w, xx, yy = _pair_points(vmesh)
    ivu, jvu = np.triu_indices(len(vmesh))
    iv, jv = ivu[kv], jvu[kv]
    xx = t0[iv] + xx * (t1[iv] - t0[iv])
    yy = t0[jv] + yy * (t1[jv] - t0[jv])
    i, j = parent[iv], parent[jv]
    # both orderings are needed when two virtual pieces share a parent
    dup = (i == j) & (iv != jv)
    k = _pair_index(i, j, M)
    return (
        np.concatenate([k, k[dup]]),
        np.concatenate([r, r[dup]]),
        np.concatenate([w, w[dup]]),
        np.concatenate([xx, yy[dup]]),
        np.concatenate([yy, xx[dup]]),
    )


def _pair_points(mesh):
    chunks = []  # (pair ids, r, w, xi_x, xi_y)
    M = len(mesh)
    iu, ju = np.triu_indices(M)
    a, b, h = mesh.a, mesh.b, mesh.h

    diag = iu == ju
    off = ~diag
    d = np.zeros(len(iu))
    d[off] = segment_distance(a[iu[off]], b[iu[off]], a[ju[off]], b[ju[off]])
    hmax = np.maximum(h[iu], h[ju])
    q = np.where(diag, 0.0, d / hmax)
    admissible = off & (q >= 1.0)
    pid = np.arange(len(iu))

    # identical elements: 2 * int_0^h (h - u) G(u) du
    u, wu = graded01(SELF_LEVELS, GRADING_RATIO, SELF_ORDER)
    hd = h[iu[diag]]
    r = hd[:, None] * u[None, :]
    w = 2.0 * (hd[:, None] - r) * hd[:, None] * wu[None, :]
    half = np.full(r.size, 0.5)
    chunks.append((np.repeat(pid[diag], len(u)), r.ravel(), w.ravel(), half, half))

    # admissible pairs, vectorised per order class
    orders = far_order(q)
    for n in np.unique(orders[admissible]):
        sel = pid[admissible & (orders == n)]
        x, wg = gauss01(int(n))
        X, Y = np.meshgrid(x, x, indexing="ij")
        WX = np.outer(wg, wg).ravel()
        X, Y = X.ravel(), Y.ravel()
        i, j = iu[sel], ju[sel]
        px = a[i][:, None, :] + X[None, :, None] * (b[i] - a[i])[:, None, :]
        py = a[j][:, None, :] + Y[None, :, None] * (b[j] - a[j])[:, None, :]
        r = np.linalg.norm(px - py, axis=2)
        w = (h[i] * h[j])[:, None] * WX[None, :]
        chunks.append(
            (np.repeat(sel, len(X)), r.ravel(), w.ravel(), np.tile(X, len(sel)), np.tile(Y, len(sel)))
        )

    # near pairs: recursive subdivision
    for k in pid[off & ~admissible]:
        pts = _near_pair(mesh, iu[k], 0.0, 1.0, ju[k], 0.0, 1.0, 0)
        r, w, xx, yy = (np.concatenate(c) for c in zip(*pts))
        chunks.append((np.full(r.shape, k), r, w, xx, yy))

    return tuple(np.concatenate(c) for c in zip(*chunks))


def _sub(mesh, e, t0, t1):
    a, b = mesh.a[e], mesh.b[e]
    return a + t0 * (b - a), a + t1 * (b - a), (t1 - t0) * mesh.h[e]


def _near_pair(mesh, i, s0, s1, j, t0, t1, depth):
    """Recursive near-field rule for sub-segments ``i[s0, s1]`` and ``j[t0, t1]``."""
    p0, p1, hx = _sub(mesh, i, s0, s1)
    q0, q1, hy = _sub(mesh, j, t0, t1)
    scale = max(hx, hy)
    ends = [(p0, q0, 0, 0), (p0, q1, 0, 1), (p1, q0, 1, 0), (p1, q1, 1, 1)]
    touch = [(ex, ey) for px, qy, ex, ey in ends if np.linalg.norm(px - qy) <= 1e-12 * scale]
    if touch:
        if max(hx, hy) <= 2.0 * min(hx, hy) or depth >= MAX_DEPTH:
            ex, ey = touch[0]
            return [_duffy(mesh, i, s0, s1, ex, j, t0, t1, ey)]
    else:
        dist = float(segment_distance(p0, p1, q0, q1))
        if dist >= scale or depth >= MAX_DEPTH:
            return [_tensor(mesh, i, s0, s1, j, t0, t1, int(far_order(dist / scale)) if dist >= scale else 12)]
    out = []
    if hx >= hy:
        m = 0.5 * (s0 + s1)
        out += _near_pair(mesh, i, s0, m, j, t0, t1, depth + 1)
        out += _near_pair(mesh, i, m, s1, j, t0, t1, depth + 1)
    else:
        m = 0.5 * (t0 + t1)
        out += _near_pair(mesh, i, s0, s1, j, t0, m, depth + 1)
        out += _near_pair(mesh, i, s0, s1, j, m, t1, depth + 1)
    return out


def _tensor(mesh, i, s0, s1, j, t0, t1, n):
    x, wg = gauss01(n)
    X, Y = np.meshgrid(s0 + (s1 - s0) * x, t0 + (t1 - t0) * x, indexing="ij")
    W = np.outer(wg, wg) * (s1 - s0) * (t1 - t0) * mesh.h[i] * mesh.h[j]
    X, Y = X.ravel(), Y.ravel()
    px = mesh.a[i] + X[:, None] * (mesh.b[i] - mesh.a[i])
    py = mesh.a[j] + Y[:, None] * (mesh.b[j] - mesh.a[j])
    return np.linalg.norm(px - py, axis=1), W.ravel(), X, Y


def _duffy(mesh, i, s0, s1, ex, j, t0, t1, ey):
    """Duffy rule for two sub-segments touching at endpoint ``ex`` of i and ``ey`` of j."""
    rho, wr = graded01()
    om, wo = gauss01(DUFFY_ANGULAR_ORDER)
    R, O = np.meshgrid(rho, om, indexing="ij")
    WR = np.outer(wr, wo) * R
    R, O, WR = R.ravel(), O.ravel(), WR.ravel()
    # u, v measured from the shared vertex; reference coordinate in each element
    xs = (s0, s1) if ex == 0 else (s1, s0)
    ys = (t0, t1) if ey == 0 else (t1, t0)
    out_r, out_w, out_x, out_y = [], [], [], []
    lx = abs(s1 - s0) * mesh.h[i]
    ly = abs(t1 - t0) * mesh.h[j]
    for u, v in ((R, R * O), (R * O, R)):
        X = xs[0] + u * (xs[1] - xs[0])
        Y = ys[0] + v * (ys[1] - ys[0])
        px = mesh.a[i] + X[:, None] * (mesh.b[i] - mesh.a[i])
        py = mesh.a[j] + Y[:, None] * (mesh.b[j] - mesh.a[j])
        out_r.append(np.linalg.norm(px - py, axis=1))
        out_w.append(WR * lx * ly)
        out_x.append(X)
        out_y.append(Y)
    return np.concatenate(out_r), np.concatenate(out_w), np.concatenate(out_x), np.concatenate(out_y)


class PointRule:
    """Quadrature for ``int_{E_j} G(s, |x_k - y|) dy`` over all (point, element) pairs.

    Points may lie on the boundary (boundary traces); the element carrying
    the point is split at it and graded toward it from both sides.
    """

    def __init__(self, mesh, points, on_boundary_ok=False):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        K, M = len(points), len(mesh)
        self.shape = (K, M)
        kk, jj = np.meshgrid(np.arange(K), np.arange(M), indexing="ij")
        kk, jj = kk.ravel(), jj.ravel()
        a, b, h = mesh.a, mesh.b, mesh.h
        d = _point_segment_distance(points[kk], a[jj], b[jj])
        if not on_boundary_ok and np.any(d <= 1e-10):
            bad = sorted(set(kk[d <= 1e-10].tolist()))
            raise ValueError(f"evaluation point(s) {bad} lie on the boundary")
        q = d / h[jj]
        admissible = q >= 1.0
        pid = np.arange(len(kk))
        chunks = []
        orders = far_order(q)
        for n in np.unique(orders[admissible]):
            sel = pid[admissible & (orders == n)]
            y, wg = gauss01(int(n))
            pj = a[jj[sel]][:, None, :] + y[None, :, None] * (b[jj[sel]] - a[jj[sel]])[:, None, :]
            r = np.linalg.norm(points[kk[sel]][:, None, :] - pj, axis=2)
            w = h[jj[sel]][:, None] * wg[None, :]
            chunks.append((np.repeat(sel, n), r.ravel(), w.ravel()))
        for p in pid[~admissible]:
            parts = _near_point(mesh, points[kk[p]], jj[p], 0.0, 1.0, 0)
            r, w = (np.concatenate(c) for c in zip(*parts))
            chunks.append((np.full(r.shape, p), r, w))
        k, r, w = (np.concatenate(c) for c in zip(*chunks))
        order = np.argsort(k, kind="stable")
        self.r = r[order]
        self.w = w[order]
        counts = np.bincount(k[order], minlength=len(kk))
        self.starts = np.r_[0, np.cumsum(counts)[:-1]]

    def reduce(self, values):
        return np.add.reduceat(self.w * values, self.starts).reshape(self.shape)


def _point_segment_distance(x, a, b):
    d = b - a
    t = np.clip(np.einsum("...i,...i->...", x - a, d) / np.einsum("...i,...i->...", d, d), 0.0, 1.0)
    return np.linalg.norm(x - (a + t[..., None] * d), axis=-1)


def _near_point(mesh, x, j, t0, t1, depth):
    a, b = mesh.a[j], mesh.b[j]
    p0, p1 = a + t0 * (b - a), a + t1 * (b - a)
    hy = (t1 - t0) * mesh.h[j]
    d = float(_point_segment_distance(x, p0, p1))
    if d <= 1e-12 * hy:
        # point on the sub-segment: split there and grade toward it
        tx = float(np.dot(x - a, b - a) / np.dot(b - a, b - a))
        g, wg = graded01(SELF_LEVELS, GRADING_RATIO, SELF_ORDER)
        out = []
        for lo, hi in ((t0, tx), (tx, t1)):
            length = hi - lo
            if length <= 1e-15:
                continue
            # graded toward tx
            t = tx + (lo - tx if lo < tx else hi - tx) * g
            y = a + t[:, None] * (b - a)
            out.append((np.linalg.norm(x - y, axis=1), wg * length * mesh.h[j]))
        return out
    if d >= hy or depth >= MAX_DEPTH:
        n = int(far_order(d / hy)) if d >= hy else 16
        y, wg = gauss01(n)
        t = t0 + (t1 - t0) * y
        pts = a + t[:, None] * (b - a)
        return [(np.linalg.norm(x - pts, axis=1), wg * hy)]
    m = 0.5 * (t0 + t1)
    return _near_point(mesh, x, j, t0, m, depth + 1) + _near_point(mesh, x, j, m, t1, depth + 1)
