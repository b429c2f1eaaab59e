"""Sparse matrix construction, block composition and linear solvers.

COO triplet builders feed a canonical CSR form (duplicates summed, exact
zeros pruned, per-row indices sorted); solves wrap SciPy's sparse LU and
Krylov routines. Real and complex systems are both first-class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinearSolveError(Exception):
    """A linear solve could not produce a trustworthy solution."""


class SingularMatrixError(LinearSolveError):
    """Matrix singular to working precision (pivot failure)."""


class CsrMatrix:
    """Immutable CSR matrix in canonical form.

    Canonical means: duplicates summed, entries with value exactly 0.0
    removed, column indices strictly increasing within each row.
    """

    __slots__ = ("sp",)

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        self.sp = m

    @property
    def shape(self):
        return self.sp.shape

    @property
    def nnz(self) -> int:
        return self.sp.nnz

    @property
    def indptr(self) -> np.ndarray:
        return self.sp.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.sp.indices

    @property
    def values(self) -> np.ndarray:
        return self.sp.data

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.sp.data)

    def to_dense(self) -> np.ndarray:
        return self.sp.toarray()

    def diagonal(self) -> np.ndarray:
        return self.sp.diagonal()

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix(self.sp.T)

    def conjugate_transpose(self) -> "CsrMatrix":
        return CsrMatrix(self.sp.conj().T)

    def frobenius_norm(self) -> float:
        return float(np.sqrt((np.abs(self.sp.data) ** 2).sum()))

    def __matmul__(self, other):
        if isinstance(other, CsrMatrix):
            return CsrMatrix(self.sp @ other.sp)
        return self.sp @ np.asarray(other)

    def __add__(self, other: "CsrMatrix") -> "CsrMatrix":
        return CsrMatrix(self.sp + other.sp)

    def __sub__(self, other: "CsrMatrix") -> "CsrMatrix":
        return CsrMatrix(self.sp - other.sp)

    def __mul__(self, scalar) -> "CsrMatrix":
        return CsrMatrix(self.sp * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


class CooBuilder:
    """Accumulates (row, col, value) triplets for one matrix."""

    def __init__(self, shape):
        self.shape = (int(shape[0]), int(shape[1]))
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, row: int, col: int, value) -> None:
        if not (0 <= row < self.shape[0] and 0 <= col < self.shape[1]):
            raise IndexError(f"triplet ({row}, {col}) outside shape {self.shape}")
        self._rows.append(int(row))
        self._cols.append(int(col))
        self._vals.append(value)

    def add_many(self, rows, cols, values) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values).ravel()
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("triplet arrays must have equal length")
        if len(rows) and (
            rows.min() < 0 or rows.max() >= self.shape[0]
            or cols.min() < 0 or cols.max() >= self.shape[1]
        ):
            raise IndexError(f"triplet block outside shape {self.shape}")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(values)

    def _flat(self):
        rows = np.concatenate([np.atleast_1d(r) for r in self._rows]) \
            if self._rows else np.empty(0, dtype=np.int64)
        cols = np.concatenate([np.atleast_1d(c) for c in self._cols]) \
            if self._cols else np.empty(0, dtype=np.int64)
        vals = np.concatenate([np.atleast_1d(np.asarray(v)) for v in self._vals]) \
            if self._vals else np.empty(0, dtype=np.float64)
        return rows, cols, vals


def to_csr(builder: CooBuilder) -> CsrMatrix:
    """Convert a triplet builder to canonical CSR (duplicates summed)."""
    rows, cols, vals = builder._flat()
    dtype = np.complex128 if np.iscomplexobj(vals) else np.float64
    coo = sp.coo_matrix((vals.astype(dtype), (rows, cols)), shape=builder.shape)
    return CsrMatrix(coo)


def _as_sparse(block):
    if block is None:
        return None
    if isinstance(block, CsrMatrix):
        return block.sp
    return sp.csr_matrix(np.atleast_2d(np.asarray(block)))


def block_compose(blocks) -> CsrMatrix:
    """Compose a 2D grid of optional blocks into one matrix.

    Missing (None) blocks are zero; block shapes must be conformal per
    row and column.
    """
    grid = [[_as_sparse(b) for b in row] for row in blocks]
    try:
        return CsrMatrix(sp.bmat(grid, format="csr"))
    except ValueError as exc:
        raise ValueError(f"nonconformal block shapes: {exc}") from exc


def stack_vectors(vectors) -> np.ndarray:
    """Concatenate vectors, promoting dtype as needed."""
    parts = [np.atleast_1d(np.asarray(v)) for v in vectors]
    return np.concatenate(parts) if parts else np.empty(0)


def _residual_bound(A: CsrMatrix, x: np.ndarray, b: np.ndarray) -> float:
    return 1e-10 * (A.frobenius_norm() * np.linalg.norm(x) + np.linalg.norm(b))


def solve_direct(A: CsrMatrix, b) -> np.ndarray:
    """Sparse LU solve with minimum-degree ordering.

    The residual ||Ax - b|| is recomputed and checked against the
    contract 1e-10 * (||A||_F ||x|| + ||b||); a violation (or an exact
    pivot failure) raises SingularMatrixError.
    """
    b = np.asarray(b)
    n, m = A.shape
    if n != m:
        raise LinearSolveError(f"matrix is not square: {A.shape}")
    if b.shape != (n,):
        raise LinearSolveError(f"rhs length {b.shape} does not match {n}")
    dtype = np.complex128 if (A.is_complex or np.iscomplexobj(b)) else np.float64
    if n == 0:
        return np.zeros(0, dtype=dtype)
    matrix = sp.csc_matrix(A.sp.astype(dtype))
    try:
        lu = spla.splu(matrix, permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(b.astype(dtype))
    except RuntimeError as exc:  # scipy reports exact singularity this way
        raise SingularMatrixError(
            f"matrix is singular to working precision (pivot failure: {exc})"
        ) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError(
            "matrix is singular to working precision (non-finite solution)")
    residual = np.linalg.norm(A @ x - b)
    if residual > _residual_bound(A, x, b):
        raise SingularMatrixError(
            f"direct solve residual {residual:.3e} violates the accuracy contract")
    return x


@dataclass
class IterativeResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float


def _jacobi(A: CsrMatrix):
    d = A.diagonal().copy()
    d[d == 0] = 1.0
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda v: inv * v, dtype=inv.dtype)


def solve_iterative(A: CsrMatrix, b, tol: float = 1e-10, maxit: int = 1000,
                    method: str = "cg") -> IterativeResult:
    """Krylov solve (cg or bicgstab) with Jacobi preconditioning.

    cg requires a symmetric (Hermitian) matrix and checks it up front.
    On non-convergence the best iterate is returned with converged=False;
    a solver breakdown raises LinearSolveError. The final residual is
    recomputed independently of the solver's internal bookkeeping.
    """
    b = np.asarray(b)
    if method not in ("cg", "bicgstab"):
        raise ValueError(f"unknown iterative method '{method}'")
    if method == "cg":
        asym = abs(A.sp - A.sp.conj().T)
        scale = max(abs(A.sp).max(), 1e-300)
        if asym.nnz and asym.max() > 1e-12 * scale:
            raise LinearSolveError("cg requires a symmetric (Hermitian) matrix")

    count = {"n": 0}

    def callback(_):
        count["n"] += 1

    solver = spla.cg if method == "cg" else spla.bicgstab
    x, info = solver(A.sp, b, rtol=tol, atol=0.0, maxiter=maxit,
                     M=_jacobi(A), callback=callback)
    if info < 0:
        raise LinearSolveError(f"{method} breakdown (info={info})")
    bnorm = np.linalg.norm(b)
    residual = float(np.linalg.norm(A @ x - b))
    converged = info == 0 and residual <= tol * max(bnorm, 1e-300)
    return IterativeResult(x=x, iterations=count["n"],
                           converged=converged, residual=residual)
