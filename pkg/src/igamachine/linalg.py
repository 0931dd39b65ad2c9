"""Compressed-row sparse matrices and a Jacobi-preconditioned CG solver."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError, ValidationError


@dataclass(frozen=True)
class SparseMatrix:
    """Row-compressed storage with sorted, duplicate-free column indices."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple
    _rows: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._rows is None:
            counts = np.diff(self.indptr)
            object.__setattr__(self, "_rows", np.repeat(np.arange(self.shape[0]), counts))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        n, m = shape
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
            raise ValidationError("COO index out of range")
        key = rows * m + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        vals = vals[order]
        if key.size:
            start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
            summed = np.add.reduceat(vals, start)
            ukey = key[start]
        else:
            summed = vals
            ukey = key
        r = ukey // m
        c = ukey % m
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(indptr, c, summed, (n, m), r)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        i = np.arange(n)
        return cls.from_coo(i, i, np.ones(n), (n, n))

    @property
    def nnz(self) -> int:
        return self.data.size

    @property
    def row_indices(self) -> np.ndarray:
        return self._rows

    def __matmul__(self, x):
        return spmv(self, x)

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        on = self._rows == self.indices
        d[self._rows[on]] = self.data[on]
        return d

    def to_dense(self) -> np.ndarray:
        a = np.zeros(self.shape)
        a[self._rows, self.indices] = self.data
        return a

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_coo(self.indices, self._rows, self.data, self.shape[::-1])

    def scale(self, c) -> "SparseMatrix":
        return SparseMatrix(self.indptr, self.indices, c * self.data, self.shape, self._rows)

    def submatrix(self, row_ids, col_ids) -> "SparseMatrix":
        """Rows ``row_ids`` and columns ``col_ids`` (in the given order)."""
        row_ids = np.asarray(row_ids, dtype=np.int64)
        col_ids = np.asarray(col_ids, dtype=np.int64)
        rmap = np.full(self.shape[0], -1, dtype=np.int64)
        cmap = np.full(self.shape[1], -1, dtype=np.int64)
        rmap[row_ids] = np.arange(row_ids.size)
        cmap[col_ids] = np.arange(col_ids.size)
        r = rmap[self._rows]
        c = cmap[self.indices]
        keep = (r >= 0) & (c >= 0)
        return SparseMatrix.from_coo(r[keep], c[keep], self.data[keep], (row_ids.size, col_ids.size))

    def max_abs(self) -> float:
        return float(np.abs(self.data).max()) if self.nnz else 0.0

    def asymmetry(self) -> float:
        """``max|A - A^T| / max|A|``."""
        if self.shape[0] != self.shape[1]:
            raise ValidationError("asymmetry of a non-square matrix")
        at = self.transpose()
        diff = SparseMatrix.from_coo(np.r_[self._rows, at._rows], np.r_[self.indices, at.indices],
                                     np.r_[self.data, -at.data], self.shape)
        m = self.max_abs()
        return diff.max_abs() / m if m else 0.0

    def write_coo(self, path) -> None:
        """Debug dump: one ``row col value`` triple per line."""
        with open(path, "w") as fh:
            for r, c, v in zip(self._rows, self.indices, self.data):
                fh.write(f"{r} {c} {v:.17g}\n")


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """``y = A x`` with a fixed summation order inside each row."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.shape[1],):
        raise ValidationError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return np.bincount(A.row_indices, weights=A.data * x[A.indices], minlength=A.shape[0])


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool


def solve_spd(A: SparseMatrix, b, rtol: float = 1e-12, max_iter: int | None = None,
              x0=None) -> SolveResult:
    """Jacobi-preconditioned conjugate gradients.

    ``residual`` is ``||b - A x|| / ||b||`` recomputed with an independent
    ``spmv`` after the iteration, never the recurrence value.  Failure to
    converge returns ``converged=False`` with the best iterate seen.
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise ValidationError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if max_iter is None:
        max_iter = max(10 * n, 100)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a zero or negative diagonal entry; not SPD")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), 0.0, 0, True)
    inv_d = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    target = rtol * bnorm
    best_x, best_res = x.copy(), np.inf
    it = 0
    # restarts guard against drift between recurrence and true residual
    for restart in range(5):
        r = b - spmv(A, x)
        rn = np.linalg.norm(r)
        if rn < best_res:
            best_x, best_res = x.copy(), rn
        if rn <= target or it >= max_iter or restart == 4:
            break
        z = inv_d * r
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            Ap = spmv(A, p)
            pAp = p @ Ap
            if pAp <= 0:
                raise SolverError("non-positive curvature encountered; matrix not SPD")
            alpha = rz / pAp
            x = x + alpha * p
            r = r - alpha * Ap
            it += 1
            if np.linalg.norm(r) <= 0.5 * target:
                break
            z = inv_d * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
    true = np.linalg.norm(b - spmv(A, best_x)) / bnorm
    return SolveResult(best_x, float(true), it, bool(true <= rtol))
