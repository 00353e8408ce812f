"""Laplace-domain fundamental solution of the 2D wave equation."""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["bessel_k0", "green2d"]


def bessel_k0(z):
    """Modified Bessel function of the second kind, order zero, for ``Re z > 0``.

    Accepts scalars or arrays. Large arguments underflow gracefully to zero.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.real <= 0.0):
        raise ValueError("bessel_k0 requires Re z > 0")
    out = _scaled_k0(z)
    out = np.where(np.isfinite(out), out, 0.0)
    return out[()] if out.ndim == 0 else out


def _scaled_k0(z):
    # kv(0, z) itself returns garbage close to underflow (e.g. z = 666 + 704j);
    # the exponentially scaled kve does not
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        return special.kve(0, z) * np.exp(-z)


def _k0_unchecked(z):
    # hot path for assembly: arguments are s*r with Re s > 0 and r > 0 by construction
    out = _scaled_k0(z)
    out[~np.isfinite(out)] = 0.0
    return out


def green2d(s, r):
    """``K0(s r) / (2 pi)``, i.e. ``(i/4) H0^(1)(i s r)`` for ``Re s > 0``, ``r > 0``."""
    s = complex(s)
    if s.real <= 0.0:
        raise ValueError("frequency must have positive real part")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("green2d requires r > 0")
    out = bessel_k0(s * r) / (2.0 * np.pi)
    return out
