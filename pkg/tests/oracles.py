"""Independent reference computations used by the tests.

Nothing here imports the package under test.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np


def k0_oracle(z, dps=30) -> complex:
    """K_0(z) from int_0^inf exp(-z cosh t) dt, truncated where the integrand is below e^-120."""
    with mp.workdps(dps):
        z = mp.mpc(complex(z))
        tmax = mp.acosh(120 / z.real)
        n = int(mp.ceil(tmax))
        nodes = [mp.mpf(0)] + [tmax * k / n for k in range(1, n + 1)]
        return complex(mp.quad(lambda t: mp.exp(-z * mp.cosh(t)), nodes))


def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def bdf1_ode_solution(N, tau, lam, g):
    """Backward Euler for y' = -lam y + g(t), y(0) = 0."""
    y = np.zeros(N + 1)
    for n in range(1, N + 1):
        y[n] = (y[n - 1] + tau * g(n * tau)) / (1.0 + tau * lam)
    return y


def radau2_ode_solution(N, tau, lam, g):
    """Two-stage Radau IIA for y' = -lam y + g(t), y(0) = 0, returning y at t_n."""
    A = np.array([[5 / 12, -1 / 12], [3 / 4, 1 / 4]])
    c = np.array([1 / 3, 1.0])
    y = np.zeros(N + 1)
    lhs = np.eye(2) + tau * lam * A
    for n in range(N):
        t = n * tau + c * tau
        Y = np.linalg.solve(lhs, y[n] * np.ones(2) + tau * A @ g(t))
        y[n + 1] = Y[-1]
    return y


def backward_difference_sq(values, tau):
    """``((1 - zeta) / tau)^2`` applied along axis 0: explicit second backward difference."""
    v = np.asarray(values, dtype=float)
    pad = np.concatenate([np.zeros((2,) + v.shape[1:]), v])
    return (pad[2:] - 2.0 * pad[1:-1] + pad[:-2]) / tau**2


def p1_gradient_energy(vertices_a, vertices_b, nodal_a, nodal_b, n=50):
    """int_E |d/ds R|^2 ds for R linear on E between end values, by n-point Gauss on the
    explicit derivative of the interpolant sampled at two nearby points (no closed form)."""
    xi, w = gauss01(n)
    h = np.linalg.norm(np.asarray(vertices_b) - np.asarray(vertices_a))
    eps = 1e-3
    r = lambda t: nodal_a * (1 - t) + nodal_b * t
    grad = (r(xi + eps) - r(xi - eps)) / (2 * eps * h)
    return float(np.sum(w * h * grad * grad))


def segment_potential(a, b, x, s, n=1000):
    """int over segment [a, b] of K_0(s |x - y|) / (2 pi) by brute-force n-point Gauss (mpmath K_0)."""
    xi, w = gauss01(n)
    a, b, x = map(lambda v: np.asarray(v, dtype=float), (a, b, x))
    y = a[None, :] + xi[:, None] * (b - a)[None, :]
    r = np.linalg.norm(x[None, :] - y, axis=1)
    vals = np.array([complex(mp.besselk(0, mp.mpc(complex(s * rk)))) for rk in r])
    return complex(np.sum(w * vals) * np.linalg.norm(b - a) / (2 * math.pi))
