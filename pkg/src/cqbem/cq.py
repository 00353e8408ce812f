"""Convolution quadrature on a scaled circle of roots of unity.

A discrete convolution ``K(d_t) g`` is evaluated as: scaled transform of the
time samples, application of ``K`` at each contour frequency, inverse
transform. Runge-Kutta schemes act on stage vectors through the matrix
symbol ``Delta(zeta) / tau``, which is diagonalised at every contour point so
that ``K`` is only ever evaluated at scalar frequencies.

Time-sample convention: a series has ``N + 1`` steps ``n = 0..N``; step ``n``
holds the ``m`` stage values at times ``t_n + (c_i - 1) tau``, so the last
stage sits at ``t_n = n tau``. For ``m = 1`` this is the usual BDF grid.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ButcherTableau",
    "radau_iia",
    "CQScheme",
    "StageSeries",
    "CQError",
    "Frequencies",
    "bdf_symbol",
    "rk_delta",
    "contour_frequencies",
    "forward_cq_apply",
    "solve_cq",
    "frequency_map",
    "scalar_cq_weights",
    "shift_multiplier",
    "scalar_action",
    "stage_sample",
    "direct_convolution",
]

EIGVEC_COND_LIMIT = 1e8
_EPS = np.finfo(float).eps


class CQError(RuntimeError):
    """Failure inside the frequency loop; ``index`` names the contour point."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        m = len(b)
        if A.shape != (m, m) or c.shape != (m,):
            raise ValueError("tableau shapes do not match")
        if abs(b.sum() - 1.0) > 1e-13 or np.max(np.abs(A.sum(axis=1) - c)) > 1e-13:
            raise ValueError("inconsistent tableau: need sum(b) = 1 and row sums of A equal to c")
        if np.max(np.abs(A[-1] - b)) > 1e-13 or abs(c[-1] - 1.0) > 1e-13:
            raise ValueError("tableau is not stiffly accurate (b must equal the last row of A, c_m = 1)")
        if abs(np.linalg.det(A)) < 1e-14:
            raise ValueError("tableau matrix A is singular")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    @property
    def stability_at_infinity(self) -> float:
        """``R(inf) = 1 - b^T A^{-1} 1``."""
        return float(1.0 - self.b @ self.A_inv @ np.ones(self.m))


def radau_iia(m: int) -> ButcherTableau:
    """Radau IIA tableau with ``m`` in {1, 2, 3} stages (order ``2m - 1``)."""
    if m == 1:
        return ButcherTableau([[1.0]], [1.0], [1.0], "radau1")
    if m == 2:
        return ButcherTableau([[5 / 12, -1 / 12], [3 / 4, 1 / 4]], [3 / 4, 1 / 4], [1 / 3, 1.0], "radau2")
    if m == 3:
        r6 = np.sqrt(6.0)
        A = [
            [(88 - 7 * r6) / 360, (296 - 169 * r6) / 1800, (-2 + 3 * r6) / 225],
            [(296 + 169 * r6) / 1800, (88 + 7 * r6) / 360, (-2 - 3 * r6) / 225],
            [(16 - r6) / 36, (16 + r6) / 36, 1 / 9],
        ]
        return ButcherTableau(A, A[2], [(4 - r6) / 10, (4 + r6) / 10, 1.0], "radau3")
    raise ValueError(f"Radau IIA is available for m in (1, 2, 3), got {m}")


def bdf_symbol(p: int, zeta):
    """``delta(zeta) = sum_{l=1}^{p} (1 - zeta)^l / l`` for BDF order ``p`` in {1, 2}."""
    if p not in (1, 2):
        raise ValueError(f"BDF order must be 1 or 2 (A-stable), got {p}")
    w = 1.0 - np.asarray(zeta, dtype=complex)
    out = w if p == 1 else w + 0.5 * w * w
    return out[()] if out.ndim == 0 else out


def rk_delta(tab: ButcherTableau, zeta) -> np.ndarray:
    """Differentiation symbol ``Delta(zeta)`` (shape (..., m, m) for array ``zeta``)."""
    zeta = np.asarray(zeta, dtype=complex)
    Ai = tab.A_inv
    rank1 = np.outer(Ai @ np.ones(tab.m), tab.b @ Ai)
    factor = zeta / (1.0 - tab.stability_at_infinity * zeta)
    return Ai - factor[..., None, None] * rank1


def shift_multiplier(eta: float, s):
    """Laplace-domain time shift ``exp(-s eta)``."""
    if eta < 0:
        raise ValueError("shift eta must be non-negative")
    out = np.exp(-np.asarray(s, dtype=complex) * eta)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class CQScheme:
    """Time discretization: ``method`` is ``("radau", m)`` or ``("bdf", p)``.

    ``oversampling`` is the ratio between the number of contour points and
    ``N + 1``; ``lam`` is the contour radius (default balances aliasing
    against round-off, see :meth:`radius`).
    """

    method: tuple
    tau: float
    N: int
    lam: float | None = None
    oversampling: int = 3

    def __post_init__(self):
        kind, order = self.method
        if kind == "radau":
            radau_iia(order)
        elif kind == "bdf":
            if order not in (1, 2):
                raise ValueError(f"BDF order must be 1 or 2 (A-stable), got {order}")
        else:
            raise ValueError(f"unknown CQ method {kind!r}")
        if not self.tau > 0:
            raise ValueError("time step tau must be positive")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError("step count N must be a non-negative integer")
        if int(self.oversampling) != self.oversampling or self.oversampling < 1:
            raise ValueError("oversampling must be a positive integer")
        if self.lam is not None and not 0.0 < self.lam < 1.0:
            raise ValueError("contour radius must lie in (0, 1)")

    @classmethod
    def radau(cls, m, tau, N, **kw):
        return cls(("radau", int(m)), float(tau), int(N), **kw)

    @classmethod
    def bdf(cls, p, tau, N, **kw):
        return cls(("bdf", int(p)), float(tau), int(N), **kw)

    @classmethod
    def from_final_time(cls, method, T, N, **kw):
        return cls(tuple(method), T / N, int(N), **kw)

    @property
    def T(self) -> float:
        return self.N * self.tau

    @property
    def tableau(self) -> ButcherTableau | None:
        return radau_iia(self.method[1]) if self.method[0] == "radau" else None

    @property
    def m(self) -> int:
        return self.method[1] if self.method[0] == "radau" else 1

    @property
    def c(self) -> np.ndarray:
        return self.tableau.c if self.method[0] == "radau" else np.ones(1)

    @property
    def n_points(self) -> int:
        """Number of contour points ``L = oversampling (N + 1)``."""
        return self.oversampling * (self.N + 1)

    @property
    def radius(self) -> float:
        """Contour radius; default ``lam**L = eps**(p / (p + 1))`` for oversampling ``p``."""
        if self.lam is not None:
            return self.lam
        p = self.oversampling
        return float(_EPS ** (p / ((p + 1.0) * self.n_points)))

    def stage_times(self) -> np.ndarray:
        """(N + 1, m) array of stage times ``t_n + (c_i - 1) tau``."""
        n = np.arange(self.N + 1)
        return (n[:, None] + self.c[None, :] - 1.0) * self.tau

    def with_steps(self, N):
        return CQScheme(self.method, self.tau, int(N), self.lam, self.oversampling)

    def describe(self) -> str:
        kind, order = self.method
        return f"{kind}{order}(tau={self.tau:g}, N={self.N})"


@dataclass(frozen=True)
class StageSeries:
    """Stage values ``values[n, i, ...]`` for steps ``n = 0..N`` and stages ``i < m``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim < 2:
            raise ValueError("stage series needs shape (steps, stages, ...)")
        object.__setattr__(self, "values", v)

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def last_stage(self) -> np.ndarray:
        return self.values[:, -1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass
class Frequencies:
    """Contour data: points ``zeta`` (L,), scalar frequencies ``s`` (L, m), eigenbases."""

    zeta: np.ndarray
    s: np.ndarray
    Q: np.ndarray
    Q_inv: np.ndarray
    radius: float
    cond: np.ndarray = field(repr=False)


def contour_frequencies(scheme: CQScheme, half=False, _retry=True) -> Frequencies:
    """Contour points ``zeta_l = lam exp(2 pi i l / L)`` and the frequencies at each.

    BDF: ``s_l = delta(zeta_l) / tau``. Runge-Kutta: eigen-decomposition
    ``Delta(zeta_l) / tau = Q_l diag(s_l) Q_l^{-1}``. With ``half`` only
    ``l = 0..L // 2`` is returned (enough for conjugate-symmetric problems).
    """
    L = scheme.n_points
    lam = scheme.radius
    count = L // 2 + 1 if half else L
    zeta = lam * np.exp(2j * np.pi * np.arange(count) / L)
    m = scheme.m
    if scheme.method[0] == "bdf":
        s = (bdf_symbol(scheme.method[1], zeta) / scheme.tau)[:, None]
        Q = np.ones((count, 1, 1), dtype=complex)
        return Frequencies(zeta, s, Q, Q.copy(), lam, np.ones(count))
    D = rk_delta(scheme.tableau, zeta) / scheme.tau
    if m == 1:
        Q = np.ones((count, 1, 1), dtype=complex)
        return Frequencies(zeta, D[:, :, 0], Q, Q.copy(), lam, np.ones(count))
    s, Q = np.linalg.eig(D)
    cond = np.linalg.cond(Q)
    bad = np.flatnonzero(~(cond <= EIGVEC_COND_LIMIT))
    if bad.size:
        if _retry and scheme.lam is None:
            nudged = CQScheme(scheme.method, scheme.tau, scheme.N, 0.99 * lam, scheme.oversampling)
            return contour_frequencies(nudged, half=half, _retry=False)
        l = int(bad[0])
        raise CQError(
            f"eigenvector basis of Delta(zeta_{l}) is ill-conditioned (cond {cond[l]:.2e} > {EIGVEC_COND_LIMIT:.0e})",
            index=l,
        )
    if np.any(s.real <= 0.0):
        l = int(np.flatnonzero(np.any(s.real <= 0.0, axis=1))[0])
        raise CQError(f"frequency with non-positive real part at contour point {l}", index=l)
    return Frequencies(zeta, s, Q, np.linalg.inv(Q), lam, cond)


def scalar_action(symbol: Callable) -> Callable:
    """Wrap a scalar symbol ``K(s)`` as the action ``(s, x) -> K(s) x``."""
    return lambda s, x: symbol(s) * x


def _as_values(g, scheme):
    v = g.values if isinstance(g, StageSeries) else np.asarray(g)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != scheme.N + 1:
        raise ValueError(f"series has {v.shape[0]} steps, scheme expects N + 1 = {scheme.N + 1}")
    if v.shape[1] != scheme.m:
        raise ValueError(f"series has {v.shape[1]} stages, scheme has m = {scheme.m}")
    return v


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("CQBEM_THREADS", "1") or 1)
    return max(1, int(workers))


def frequency_map(
    scheme: CQScheme,
    g,
    action: Callable,
    real: bool | None = None,
    workers: int | None = None,
    freqs: Frequencies | None = None,
):
    """Apply a frequency-domain map ``action(s, x)`` to a stage series.

    ``action`` receives a scalar frequency ``s`` and a payload slice ``x``
    (shape ``g.shape[2:]``) and returns either one array or a tuple of
    arrays; each output is transformed back to the time domain and returned
    as an array of shape ``(N + 1, m, ...)`` (a tuple if ``action`` returns one).

    With ``real`` (default: ``g`` is real) the map is assumed to commute with
    complex conjugation, ``action(conj s, conj x) = conj action(s, x)``,
    which holds for every transfer function of a real kernel; only half of
    the contour is then visited and real outputs are returned.
    """
    v = _as_values(g, scheme)
    if real is None:
        real = not np.iscomplexobj(v)
    L = scheme.n_points
    N1 = scheme.N + 1
    fr = freqs if freqs is not None else contour_frequencies(scheme, half=real)
    lam = fr.radius
    scale = lam ** np.arange(N1)
    x = v * scale.reshape((N1,) + (1,) * (v.ndim - 1))
    pad = np.zeros((L,) + v.shape[1:], dtype=complex if not real else float)
    pad[:N1] = x
    # ghat_l = sum_n g^n zeta_l^n with zeta_l = lam exp(2 pi i l / L)
    if real:
        ghat = np.conj(np.fft.rfft(pad, axis=0))
    else:
        ghat = np.fft.ifft(pad, axis=0) * L
    count = ghat.shape[0]
    if fr.s.shape[0] < count:
        raise ValueError("frequency data does not cover the contour")

    def one(l):
        try:
            y = np.tensordot(fr.Q_inv[l], ghat[l], axes=(1, 0))  # eigen-coordinates
            outs = [action(fr.s[l, k], y[k]) for k in range(scheme.m)]
        except CQError:
            raise
        except Exception as exc:  # attach the contour index
            raise CQError(f"frequency solve failed at contour point {l} (s = {fr.s[l]}): {exc}", index=l) from exc
        single = not isinstance(outs[0], tuple)
        if single:
            outs = [(o,) for o in outs]
        res = []
        for j in range(len(outs[0])):
            stacked = np.stack([np.asarray(o[j]) for o in outs])
            res.append(np.tensordot(fr.Q[l], stacked, axes=(1, 0)))
        return single, res

    nw = _workers(workers)
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            results = list(ex.map(one, range(count)))
    else:
        results = [one(l) for l in range(count)]

    single = results[0][0]
    outputs = []
    inv_scale = lam ** -np.arange(N1, dtype=float)
    for j in range(len(results[0][1])):
        hat = np.stack([r[1][j] for r in results])
        if real:
            # conj of the half spectrum is the numpy-ordered rfft of the result
            t = np.fft.irfft(np.conj(hat), n=L, axis=0)[:N1]
        else:
            t = np.fft.fft(hat, axis=0)[:N1] / L
        outputs.append(t * inv_scale.reshape((N1,) + (1,) * (t.ndim - 1)))
    return outputs[0] if single else tuple(outputs)


def forward_cq_apply(scheme: CQScheme, symbol: Callable, g, real=None, workers=None) -> StageSeries:
    """Discrete convolution ``(K(d_t^tau) g)^n = sum_j W_{n-j}(K) g^j``.

    ``symbol(s, x)`` returns ``K(s) x``; use :func:`scalar_action` for a
    scalar transfer function.
    """
    return StageSeries(frequency_map(scheme, g, symbol, real=real, workers=workers))


def solve_cq(scheme: CQScheme, resolvent: Callable, rhs, real=None, workers=None) -> StageSeries:
    """Solve ``K(d_t^tau) phi = rhs`` given ``resolvent(s, x) = K(s)^{-1} x``."""
    return StageSeries(frequency_map(scheme, rhs, resolvent, real=real, workers=workers))


def scalar_cq_weights(scheme: CQScheme, symbol: Callable, count: int | None = None) -> np.ndarray:
    """First ``count`` convolution weights of a scalar symbol ``K(s)``.

    Returns shape (count,) for BDF and (count, m, m) for Runge-Kutta schemes,
    i.e. the coefficients of ``K(Delta(zeta) / tau) = sum_n W_n zeta^n``.
    """
    N1 = scheme.N + 1
    count = N1 if count is None else int(count)
    if not 0 <= count <= N1:
        raise ValueError(f"count must lie in [0, N + 1 = {N1}]")
    fr = contour_frequencies(scheme)
    L = scheme.n_points
    Ks = np.asarray(symbol(fr.s), dtype=complex).reshape(fr.s.shape)
    # K(Delta/tau) at every contour point
    KD = np.einsum("lik,lk,lkj->lij", fr.Q, Ks, fr.Q_inv)
    W = np.fft.fft(KD, axis=0)[:count] / L
    W = W * (fr.radius ** -np.arange(count, dtype=float))[:, None, None]
    if np.allclose(W.imag, 0.0, atol=1e-12 * max(1.0, np.abs(W).max())):
        W = W.real
    return W[:, 0, 0] if scheme.method[0] == "bdf" else W


def direct_convolution(weights: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``sum_{j <= n} W_{n-j} g^j`` by explicit summation (reference route)."""
    g = np.asarray(g)
    W = np.asarray(weights)
    N1 = g.shape[0]
    out = np.zeros(g.shape, dtype=np.result_type(W, g))
    for n in range(N1):
        for j in range(n + 1):
            if W.ndim == 1:
                out[n] += W[n - j] * g[j]
            else:
                out[n] += np.tensordot(W[n - j], g[j], axes=(1, 0))
    return out


def stage_sample(scheme: CQScheme, func: Callable, shift: float = 0.0) -> np.ndarray:
    """Samples ``func(t + shift)`` at all stage times; ``func`` must broadcast over ``t``."""
    return np.asarray(func(scheme.stage_times() + shift))
