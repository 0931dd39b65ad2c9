"""Univariate B-spline and NURBS bases on open knot vectors.

Basis evaluation follows the triangular Cox-de Boor scheme and is
vectorised over arrays of parameters: the ``*_many`` functions return
``(spans, values, derivatives)`` with ``values[k, r]`` the value of basis
function ``spans[k] - p + r`` at ``u[k]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError

_KNOT_TOL = 1e-14


@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) knot vector on [0, 1]."""

    degree: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        kn = np.asarray(self.knots, dtype=float).copy()
        kn.setflags(write=False)
        object.__setattr__(self, "knots", kn)
        p = self.degree
        if p < 0 or int(p) != p:
            raise ValidationError(f"degree must be a non-negative integer, got {p}")
        if kn.ndim != 1 or kn.size < 2 * (p + 1):
            raise ValidationError("knot vector too short for its degree")
        if np.any(np.diff(kn) < 0):
            raise ValidationError("knots must be non-decreasing")
        if kn[0] != 0.0 or kn[-1] != 1.0:
            raise ValidationError("knots must span [0, 1]")
        if np.any(kn[: p + 1] != 0.0) or np.any(kn[-(p + 1):] != 1.0):
            raise ValidationError("end knots must be repeated degree+1 times")
        if kn[p + 1] == 0.0 or kn[-(p + 2)] == 1.0:
            raise ValidationError("end knots repeated more than degree+1 times")
        _, counts = np.unique(kn[p + 1: -(p + 1)], return_counts=True)
        if counts.size and counts.max() > p:
            raise ValidationError("interior knot multiplicity exceeds degree")

    @classmethod
    def uniform(cls, degree: int, n_elements: int) -> "KnotVector":
        interior = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
        kn = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
        return cls(degree, kn)

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    def greville(self) -> np.ndarray:
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        return np.array([self.knots[i + 1: i + p + 1].mean() for i in range(self.n)])

    def multiplicity(self, u: float) -> int:
        return int(np.sum(np.abs(self.knots - u) <= _KNOT_TOL))

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))


@dataclass(frozen=True)
class BasisEvaluation:
    first_index: int
    values: np.ndarray
    derivatives: np.ndarray


# Same layout; values are the rational functions N_i.
WeightedBasisEvaluation = BasisEvaluation


def _check_param(u):
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise DomainError("parameter outside [0, 1]")
    return u


def find_span(kv: KnotVector, u: float) -> int:
    """Index i with knots[i] <= u < knots[i+1]; u = 1 maps to the last non-empty span."""
    return int(find_spans(kv, np.atleast_1d(u))[0])


def find_spans(kv: KnotVector, u) -> np.ndarray:
    u = _check_param(u)
    span = np.searchsorted(kv.knots, u, side="right") - 1
    return np.clip(span, kv.degree, kv.n - 1)


def bspline_many(kv: KnotVector, u):
    """Non-vanishing B-splines and first derivatives at every entry of ``u``."""
    u = np.atleast_1d(_check_param(u))
    p = kv.degree
    t = kv.knots
    span = find_spans(kv, u)
    m = u.size
    # after step j, vals[:, :j+1] holds the degree-j functions
    vals = np.zeros((m, p + 1))
    vals[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    lower = None
    for j in range(1, p + 1):
        left[:, j] = u - t[span + 1 - j]
        right[:, j] = t[span + j] - u
        if j == p:
            lower = vals[:, :p].copy()
        saved = np.zeros(m)
        new = np.zeros((m, p + 1))
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            new[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        new[:, j] = saved
        vals = new
    ders = np.zeros((m, p + 1))
    if p > 0:
        # d/du B_{i,p} = p (B_{i,p-1}/(t_{i+p}-t_i) - B_{i+1,p-1}/(t_{i+p+1}-t_{i+1}))
        for r in range(p + 1):
            i = span - p + r
            if r > 0:
                d = t[i + p] - t[i]
                ders[:, r] += p * lower[:, r - 1] / d
            if r < p:
                d = t[i + p + 1] - t[i + 1]
                ders[:, r] -= p * lower[:, r] / d
    return span, vals, ders


def nurbs_many(kv: KnotVector, weights, u):
    """Rational basis ``N_i = w_i B_i / sum_j w_j B_j`` and its derivative."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (kv.n,):
        raise ValidationError(f"expected {kv.n} weights, got shape {w.shape}")
    if np.any(w <= 0.0):
        raise ValidationError("weights must be positive")
    span, b, db = bspline_many(kv, u)
    idx = span[:, None] - kv.degree + np.arange(kv.degree + 1)
    wl = w[idx]
    W = np.sum(wl * b, axis=1, keepdims=True)
    dW = np.sum(wl * db, axis=1, keepdims=True)
    vals = wl * b / W
    ders = wl * (db * W - b * dW) / W**2
    return span, vals, ders


def eval_bspline(kv: KnotVector, u: float) -> BasisEvaluation:
    span, v, d = bspline_many(kv, [u])
    return BasisEvaluation(int(span[0]) - kv.degree, v[0], d[0])


def eval_nurbs(kv: KnotVector, weights, u: float) -> WeightedBasisEvaluation:
    span, v, d = nurbs_many(kv, weights, [u])
    return BasisEvaluation(int(span[0]) - kv.degree, v[0], d[0])


def insert_knot(kv: KnotVector, net_row, u_new: float):
    """Insert ``u_new`` once into ``kv``.

    ``net_row`` has shape ``(n, ..., d + 1)``: Cartesian coordinates followed
    by the weight in the last slot.  The insertion is carried out in
    homogeneous coordinates, so rational curves keep their shape exactly.
    Returns the new knot vector and the refined net in the same layout.
    """
    net = np.asarray(net_row, dtype=float)
    if net.shape[0] != kv.n:
        raise ValidationError(f"net has {net.shape[0]} rows, knot vector needs {kv.n}")
    if not 0.0 < u_new < 1.0:
        raise DomainError("inserted knot must lie strictly inside (0, 1)")
    p = kv.degree
    t = kv.knots
    s = kv.multiplicity(u_new)
    if s + 1 > p:
        raise ValidationError(f"inserting {u_new} would exceed multiplicity {p}")
    k = int(np.searchsorted(t, u_new, side="right") - 1)

    hom = net.copy()
    hom[..., :-1] *= hom[..., -1:]
    new = np.empty((net.shape[0] + 1,) + net.shape[1:])
    new[: k - p + 1] = hom[: k - p + 1]
    new[k - s + 1:] = hom[k - s:]
    for i in range(k - p + 1, k - s + 1):
        a = (u_new - t[i]) / (t[i + p] - t[i])
        new[i] = a * hom[i] + (1.0 - a) * hom[i - 1]
    new[..., :-1] /= new[..., -1:]
    new_kv = KnotVector(p, np.insert(t, k + 1, u_new))
    return new_kv, new


def midpoints(kv: KnotVector) -> np.ndarray:
    """Midpoints of all non-empty knot spans (one uniform refinement pass)."""
    b = kv.breakpoints
    return 0.5 * (b[:-1] + b[1:])
