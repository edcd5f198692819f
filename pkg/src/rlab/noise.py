"""Improved Perlin gradient noise, evaluated on the z = 0 slice.

The scalar and vectorised paths perform the same floating-point operations
in the same order, so they agree bit for bit.
"""

import math

import numpy as np


def permutation(seed):
    perm = np.random.default_rng(seed).permutation(256).astype(np.int64)
    return np.concatenate([perm, perm])


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _grad(h, x, y):
    # Perlin's 12-edge gradient set restricted to z = 0.
    h = h & 15
    u = x if h < 8 else y
    if h < 4:
        v = y
    elif h == 12 or h == 14:
        v = x
    else:
        v = 0.0
    return (u if h & 1 == 0 else -u) + (v if h & 2 == 0 else -v)


def noise2(perm, x, y):
    """Scalar noise value at (x, y); zero on every integer lattice point."""
    fx, fy = math.floor(x), math.floor(y)
    xi, yi = int(fx) & 255, int(fy) & 255
    x -= fx
    y -= fy
    u, v = _fade(x), _fade(y)
    p = perm
    a = p[xi] + yi
    aa, ab = p[a], p[a + 1]
    b = p[xi + 1] + yi
    ba, bb = p[b], p[b + 1]
    # z = 0 so only the near z-layer of the lattice contributes.
    g_aa = _grad(int(p[aa]), x, y)
    g_ba = _grad(int(p[ba]), x - 1.0, y)
    g_ab = _grad(int(p[ab]), x, y - 1.0)
    g_bb = _grad(int(p[bb]), x - 1.0, y - 1.0)
    x1 = g_aa + u * (g_ba - g_aa)
    x2 = g_ab + u * (g_bb - g_ab)
    return x1 + v * (x2 - x1)


def _grad_vec(h, x, y):
    h = h & 15
    u = np.where(h < 8, x, y)
    v = np.where(h < 4, y, np.where((h == 12) | (h == 14), x, 0.0))
    return np.where(h & 1 == 0, u, -u) + np.where(h & 2 == 0, v, -v)


def noise2_grid(perm, x, y):
    """Vectorised :func:`noise2` over arrays ``x`` and ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fx, fy = np.floor(x), np.floor(y)
    xi = fx.astype(np.int64) & 255
    yi = fy.astype(np.int64) & 255
    x = x - fx
    y = y - fy
    u, v = _fade(x), _fade(y)
    p = perm
    a = p[xi] + yi
    aa, ab = p[a], p[a + 1]
    b = p[xi + 1] + yi
    ba, bb = p[b], p[b + 1]
    g_aa = _grad_vec(p[aa], x, y)
    g_ba = _grad_vec(p[ba], x - 1.0, y)
    g_ab = _grad_vec(p[ab], x, y - 1.0)
    g_bb = _grad_vec(p[bb], x - 1.0, y - 1.0)
    x1 = g_aa + u * (g_ba - g_aa)
    x2 = g_ab + u * (g_bb - g_ab)
    return x1 + v * (x2 - x1)
