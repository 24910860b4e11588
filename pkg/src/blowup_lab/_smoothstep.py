"""C-infinity transition and bump profiles.

Everything here is built from the classical ``exp(-1/t)`` mollifier, so the
resulting cutoffs are genuinely smooth (not just C^k like polynomial
smoothsteps).  All functions are vectorized over numpy arrays.
"""

import numpy as np

__all__ = ["step", "step_d1", "step_d2", "radial_bump"]


def _f(t):
    """exp(-1/t) for t > 0, identically 0 for t <= 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def _parts(t):
    """u = f(t), v = f(1-t) and the derivatives needed below.

    Derivatives are only valid on 0 < t < 1; callers mask the rest.
    """
    t = np.asarray(t, dtype=float)
    u = _f(t)
    v = _f(1.0 - t)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        it = 1.0 / t
        is_ = 1.0 / (1.0 - t)
        u1 = u * it**2
        v1 = -v * is_**2
        u2 = u * (it**4 - 2.0 * it**3)
        v2 = v * (is_**4 - 2.0 * is_**3)
    return u, v, u1, v1, u2, v2


def step(t):
    """Smooth step s with s = 0 for t <= 0, s = 1 for t >= 1, increasing."""
    t = np.asarray(t, dtype=float)
    u = _f(t)
    v = _f(1.0 - t)
    with np.errstate(invalid="ignore"):
        s = np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0, u / (u + v)))
    return s


def step_d1(t):
    """First derivative of :func:`step` (zero outside (0, 1))."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    out = np.zeros_like(t)
    if np.any(inside):
        u, v, u1, v1, _, _ = _parts(t[inside])
        P = u + v
        out[inside] = (u1 * P - u * (u1 + v1)) / P**2
    return out


def step_d2(t):
    """Second derivative of :func:`step` (zero outside (0, 1))."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    out = np.zeros_like(t)
    if np.any(inside):
        u, v, u1, v1, u2, v2 = _parts(t[inside])
        P = u + v
        P1 = u1 + v1
        P2 = u2 + v2
        out[inside] = (u2 * P - u * P2) / P**2 - 2.0 * P1 * (u1 * P - u * P1) / P**3
    return out


def radial_bump(s):
    """Radial mollifier with value 1 at the origin.

    exp(1 - 1/(1 - s^2)) for |s| < 1, 0 otherwise.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    if np.any(inside):
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si**2))
    return out
