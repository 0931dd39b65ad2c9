"""Gauss-Legendre rules on knot-span elements."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_on_intervals(breaks, n_points: int):
    """Tensor-free rule on consecutive intervals of ``breaks``.

    Returns ``(points, weights)`` of shape ``(n_intervals, n_points)``.
    """
    b = np.asarray(breaks, dtype=float)
    x, w = _leggauss(n_points)
    a, c = b[:-1, None], b[1:, None]
    half = 0.5 * (c - a)
    return half * x[None, :] + 0.5 * (a + c), half * w[None, :]


def element_rule(kv, n_points: int | None = None):
    """Default rule for one parametric direction: p+1 points per non-empty span."""
    if n_points is None:
        n_points = kv.degree + 1
    return gauss_on_intervals(kv.breakpoints, n_points)
