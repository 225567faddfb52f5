"""Sparse LDL^T factorization for symmetric quasi-definite KKT systems.

Up-looking factorization over a fixed sparsity pattern: the elimination tree
and column counts are computed once, numeric refactorization reuses them.
Only the upper triangle (row <= col) is stored; a reverse Cuthill-McKee
ordering keeps fill low for the banded KKT matrices produced by the
transcription. D's signs expose the matrix inertia, which the interior-point
method needs for its regularization loop.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
from numba import njit
from scipy.sparse.csgraph import reverse_cuthill_mckee


@njit(cache=True)
def _etree_and_counts(n, Ap, Ai):
    """Elimination tree and per-column fill counts of L (Liu's algorithm)."""
    parent = np.full(n, -1, np.int64)
    flag = np.full(n, -1, np.int64)
    l_counts = np.zeros(n, np.int64)
    for j in range(n):
        flag[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            node = Ai[p]
            if node >= j:
                continue
            while flag[node] != j:
                if parent[node] == -1:
                    parent[node] = j
                l_counts[node] += 1
                flag[node] = j
                node = parent[node]
    return parent, l_counts


@njit(cache=True)
def _factor_numeric(n, Ap, Ai, Ax, parent, Lp, Li, Lx, D, Dinv, zero_tol):
    """Numeric LDL^T with the QDLDL up-looking scheme. Returns the inertia
    (n_pos, n_neg, n_zero); a zero pivot poisons Dinv (marked 0.0)."""
    y = np.zeros(n)
    y_marker = np.full(n, -1, np.int64)
    y_stack = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    fill = Lp[:n].copy()
    n_pos = 0
    n_neg = 0
    n_zero = 0
    for i in range(n):
        nnz_y = 0
        D[i] = 0.0
        for p in range(Ap[i], Ap[i + 1]):
            r = Ai[p]
            if r == i:
                D[i] = Ax[p]
                continue
            y[r] = Ax[p]
            if y_marker[r] != i:
                y_marker[r] = i
                path[0] = r
                n_path = 1
                node = parent[r]
                while node != -1 and node < i:
                    if y_marker[node] == i:
                        break
                    y_marker[node] = i
                    path[n_path] = node
                    n_path += 1
                    node = parent[node]
                while n_path > 0:
                    n_path -= 1
                    y_stack[nnz_y] = path[n_path]
                    nnz_y += 1
        for k in range(nnz_y - 1, -1, -1):
            c = y_stack[k]
            yc = y[c]
            for p in range(Lp[c], fill[c]):
                y[Li[p]] -= Lx[p] * yc
            l_ic = yc * Dinv[c]
            pos = fill[c]
            Li[pos] = i
            Lx[pos] = l_ic
            D[i] -= yc * l_ic
            fill[c] += 1
            y[c] = 0.0
        if abs(D[i]) <= zero_tol:
            n_zero += 1
            Dinv[i] = 0.0
        elif D[i] > 0.0:
            n_pos += 1
            Dinv[i] = 1.0 / D[i]
        else:
            n_neg += 1
            Dinv[i] = 1.0 / D[i]
    return n_pos, n_neg, n_zero


@njit(cache=True)
def _solve_inplace(n, Lp, Li, Lx, Dinv, x):
    for j in range(n):
        xj = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    for j in range(n):
        x[j] *= Dinv[j]
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc


class LdlFactorization:
    """Reusable LDL^T factorization of a fixed symmetric sparsity pattern.

    The pattern is given as the upper triangle in COO form (row <= col, no
    duplicates, every diagonal entry present). factor(data) accepts values
    aligned with that pattern and returns the inertia; solve(b) uses the most
    recent factorization.
    """

    def __init__(self, n: int, rows: np.ndarray, cols: np.ndarray,
                 zero_pivot_tol: float = 0.0):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if np.any(rows > cols):
            raise ValueError("pattern must be the upper triangle (row <= col)")
        diag = rows[rows == cols]
        if np.unique(diag).size != n:
            raise ValueError("every diagonal entry must be structurally present")
        self.n = n
        self.nnz = rows.size
        self.zero_pivot_tol = zero_pivot_tol

        sym = sps.csr_matrix(
            (np.ones(2 * rows.size),
             (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(n, n))
        perm = np.asarray(reverse_cuthill_mckee(sym, symmetric_mode=True),
                          dtype=np.int64)
        self._perm = perm
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        pr = inv[rows]
        pc = inv[cols]
        lo = np.minimum(pr, pc)
        hi = np.maximum(pr, pc)
        order = np.lexsort((lo, hi))
        if np.unique(hi[order] * n + lo[order]).size != rows.size:
            raise ValueError("duplicate entries in the pattern")
        self._data_perm = order
        self._Ai = lo[order]
        counts = np.bincount(hi, minlength=n)
        self._Ap = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

        parent, l_counts = _etree_and_counts(n, self._Ap, self._Ai)
        self._parent = parent
        self._Lp = np.concatenate([[0], np.cumsum(l_counts)]).astype(np.int64)
        l_nnz = int(self._Lp[-1])
        self._Li = np.zeros(l_nnz, dtype=np.int64)
        self._Lx = np.zeros(l_nnz)
        self._D = np.zeros(n)
        self._Dinv = np.zeros(n)
        self._ok = False

    def factor(self, data: np.ndarray) -> tuple[int, int, int]:
        """Refactorize with new values; returns (n_pos, n_neg, n_zero)."""
        data = np.asarray(data, dtype=float)
        if data.shape != (self.nnz,):
            raise ValueError("data length does not match the pattern")
        ax = data[self._data_perm]
        inertia = _factor_numeric(
            self.n, self._Ap, self._Ai, ax, self._parent,
            self._Lp, self._Li, self._Lx, self._D, self._Dinv,
            self.zero_pivot_tol)
        self._ok = inertia[2] == 0 and np.all(np.isfinite(self._Lx))
        return inertia

    @property
    def factor_ok(self) -> bool:
        return self._ok

    def solve(self, b: np.ndarray) -> np.ndarray:
        if not self._ok:
            raise RuntimeError("no valid factorization available")
        x = np.asarray(b, dtype=float)[self._perm].copy()
        _solve_inplace(self.n, self._Lp, self._Li, self._Lx, self._Dinv, x)
        out = np.empty(self.n)
        out[self._perm] = x
        return out
