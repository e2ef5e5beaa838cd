"""Symmetric-matrix parameterization used by every regression in the toolkit.

A complex symmetric N x N matrix has (N^2+N)/2 free entries.  This module
provides the bijection between such a matrix and the vector of its
lower-triangular entries (stacked column by column), the binary duplication
matrix Q satisfying vec(A) = Q @ f_vec(A), and matrix-free application of the
Ohm's-law design operator A = (V^T kron I) Q together with its adjoint.  The
dense construction of the operator is kept only as a small-problem oracle.
"""

import numpy as np


def tril_size(n: int) -> int:
    """Number of lower-triangular entries of an n x n matrix."""
    return n * (n + 1) // 2


def dim_from_tril_size(size: int) -> int:
    """Invert ``tril_size``; raises if ``size`` is not triangular."""
    n = int((np.sqrt(8 * size + 1) - 1) / 2)
    if tril_size(n) != size:
        raise ValueError(f"{size} is not a triangular number")
    return n


class SymIndex:
    """Index map between matrix coordinates (i, j), i >= j, and positions in
    the stacked lower triangle.

    The ordering is column-major: [a11, a21, ..., aN1, a22, a32, ..., aNN].
    """

    def __init__(self, n: int):
        if n < 0:
            raise ValueError("dimension must be non-negative")
        self.n = n
        self.size = tril_size(n)
        # rows/cols of each stacked position, column-major lower triangle
        self.rows = np.concatenate([np.arange(j, n) for j in range(n)]) if n else np.empty(0, int)
        self.cols = np.repeat(np.arange(n), np.arange(n, 0, -1)) if n else np.empty(0, int)
        self._col_offset = np.array([j * n - (j * (j - 1)) // 2 for j in range(n)], dtype=int)

    def position(self, i: int, j: int) -> int:
        """Stacked position of entry (i, j); arguments may be given in either order."""
        if i < j:
            i, j = j, i
        if not 0 <= j <= i < self.n:
            raise IndexError(f"({i}, {j}) outside {self.n} x {self.n} lower triangle")
        return int(self._col_offset[j] + (i - j))

    def coords(self, position: int) -> tuple[int, int]:
        """Matrix coordinates (i, j), i >= j, of a stacked position."""
        if not 0 <= position < self.size:
            raise IndexError(f"position {position} out of range")
        return int(self.rows[position]), int(self.cols[position])


def f_vec(A: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Stack the lower triangle of a symmetric matrix into a vector.

    Rejects matrices whose asymmetry exceeds ``atol`` element-wise.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > atol:
        raise ValueError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    idx = SymIndex(A.shape[0])
    return A[idx.rows, idx.cols]


def f_unvec(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`f_vec`: rebuild the symmetric matrix from its stacked
    lower triangle."""
    x = np.asarray(x)
    n = dim_from_tril_size(x.shape[0])
    idx = SymIndex(n)
    A = np.zeros((n, n), dtype=np.result_type(x.dtype, np.complex128))
    A[idx.rows, idx.cols] = x
    A[idx.cols, idx.rows] = x
    return A


def duplication_matrix(n: int) -> np.ndarray:
    """Binary matrix Q of shape (n^2, (n^2+n)/2) with vec(A) = Q @ f_vec(A)
    for every symmetric A.  Each row has exactly one 1."""
    if n < 0:
        raise ValueError("dimension must be non-negative")
    idx = SymIndex(n)
    Q = np.zeros((n * n, idx.size))
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i = i.ravel(order="F")
    j = j.ravel(order="F")
    positions = [idx.position(a, b) for a, b in zip(i, j)]
    Q[np.arange(n * n), positions] = 1.0
    return Q


def fold_vec(S: np.ndarray) -> np.ndarray:
    """Q^T @ vec(S) for an arbitrary square S: fold a matrix onto the stacked
    lower triangle, summing each off-diagonal entry with its mirror."""
    S = np.asarray(S)
    n = S.shape[0]
    idx = SymIndex(n)
    out = S[idx.rows, idx.cols] + S[idx.cols, idx.rows]
    diag = idx.rows == idx.cols
    out[diag] = S[idx.rows[diag], idx.cols[diag]]
    return out


def design_apply(V: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply the design operator A = (V^T kron I) Q to a coefficient vector
    without forming either factor: A x = vec(f_unvec(x) @ V)."""
    V = np.asarray(V)
    n = V.shape[0]
    if x.shape[0] != tril_size(n):
        raise ValueError(f"coefficient length {x.shape[0]} does not match dim {n}")
    Y = f_unvec(x)
    return (Y @ V).ravel(order="F")


def design_adjoint(V: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Adjoint A^H r of the design operator, again matrix-free.

    With R = unvec(r), A^H r = Q^T vec(R V^H), i.e. ``fold_vec(R @ V.conj().T)``.
    """
    V = np.asarray(V)
    n, k = V.shape
    if r.shape[0] != n * k:
        raise ValueError(f"residual length {r.shape[0]} does not match {n}x{k} data")
    R = r.reshape((n, k), order="F")
    return fold_vec(R @ V.conj().T)


def design_dense(V: np.ndarray) -> np.ndarray:
    """Dense materialization (V^T kron I) Q.

    Test oracle for small dimensions only: the result has
    dim*K rows and (dim^2+dim)/2 columns and explodes quickly.
    """
    V = np.asarray(V)
    n = V.shape[0]
    return np.kron(V.T, np.eye(n)) @ duplication_matrix(n)
