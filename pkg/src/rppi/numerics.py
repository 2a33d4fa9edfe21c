"""Seeded random streams and the small linear-algebra kernels shared by the package.

Random substreams are derived with :class:`numpy.random.SeedSequence` using the
``(master_seed, stream_id)`` pair as ``entropy`` and ``spawn_key`` respectively,
and fed to the counter-based Philox bit generator.  Two streams with different
ids therefore never overlap, and a given pair always replays the same numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_JITTER = (0.0, 1e-12, 1e-10, 1e-8)


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized even after jitter."""


class SeededRng:
    """Reproducible random stream identified by ``(master_seed, stream_id)``.

    Not safe to share between workers; derive a separate stream per worker
    with :meth:`substream`.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.master_seed & (2**64 - 1),
                                    spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def substream(self, stream_id: int) -> "SeededRng":
        return SeededRng(self.master_seed, stream_id)

    def standard_normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self.gen.uniform(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.gen.choice(n, size=size, replace=replace)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def __repr__(self) -> str:
        return f"SeededRng(master_seed={self.master_seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class SparseMatrix:
    """Coordinate-format sparse matrix with unique (row, col) entries."""

    shape: tuple[int, int]
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise ValueError("rows, cols and values must be 1-D arrays of equal length")
        n_rows, n_cols = self.shape
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("entry index out of range")
        if rows.size and np.unique(rows * n_cols + cols).size != rows.size:
            raise ValueError("duplicate (row, col) entries")
        object.__setattr__(self, "shape", (int(n_rows), int(n_cols)))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SparseMatrix":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls(a.shape, r, c, a[r, c])

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "SparseMatrix":
        z = np.zeros(0)
        return cls((n_rows, n_cols), z.astype(np.int64), z.astype(np.int64), z)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def density(self) -> float:
        n = self.shape[0] * self.shape[1]
        return self.nnz / n if n else 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def scaled(self, c: float) -> "SparseMatrix":
        return SparseMatrix(self.shape, self.rows, self.cols, self.values * c)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return sparse_matvec(self, x)


def sample_gaussian(rng: SeededRng, mean, chol) -> np.ndarray:
    """Draw ``mean + chol @ xi`` with ``xi`` standard normal."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = np.atleast_2d(np.asarray(chol, dtype=float))
    if chol.shape != (mean.size, mean.size):
        raise ValueError(f"chol shape {chol.shape} does not match mean of length {mean.size}")
    xi = rng.standard_normal(mean.size)
    return mean + chol @ xi


def cholesky_psd(a, jitter_schedule: Sequence[float] | None = None) -> tuple[np.ndarray, float]:
    """Cholesky factor of a symmetric PSD matrix, adding diagonal jitter if needed.

    The default schedule is ``DEFAULT_JITTER`` scaled by ``trace(a)/dim``.
    Jitters are tried in order and the first one that factorizes wins.

    Returns:
        ``(L, eps)`` with ``L @ L.T == a + eps*I``.

    Raises:
        ValueError: ``a`` is not square or not symmetric within 1e-10 relative.
        SingularMatrixError: every jitter in the schedule fails.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > 1e-10 * max(scale, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    if jitter_schedule is None:
        base = np.trace(a) / n
        jitter_schedule = [j * base for j in DEFAULT_JITTER]
    eye = np.eye(n)
    for eps in jitter_schedule:
        try:
            return np.linalg.cholesky(a + eps * eye), float(eps)
        except np.linalg.LinAlgError:
            continue
    raise SingularMatrixError(f"Cholesky failed for all jitters {list(jitter_schedule)}")


@dataclass
class SpectralRadiusResult:
    value: float
    converged: bool
    iterations: int

    def __float__(self) -> float:
        return self.value


def _start_block(n: int, width: int) -> np.ndarray:
    # column 0 is all-ones; the rest are fixed cosine patterns so the start is deterministic
    i = np.arange(n)[:, None]
    j = np.arange(1, width)[None, :]
    return np.hstack([np.ones((n, 1)), np.cos((i + 1) * (j + 0.5) * 1.618033988749895)])


def spectral_radius(a, tol: float = 1e-6, max_iters: int = 1000,
                    block: int = 16) -> SpectralRadiusResult:
    """Estimate the largest eigenvalue modulus by block power iteration.

    A plain single-vector power iteration cannot settle when the dominant
    eigenvalues form a complex-conjugate pair (the usual case for random
    non-symmetric matrices), so a small orthonormal block is iterated and the
    Ritz values of the projected matrix are used instead.  The first start
    column is the all-ones vector.

    Accepts a :class:`SparseMatrix` or a dense array.
    """
    dense = a.to_dense() if isinstance(a, SparseMatrix) else np.asarray(a, dtype=float)
    n = dense.shape[0]
    if dense.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {dense.shape}")
    if n == 0 or not np.any(dense):
        return SpectralRadiusResult(0.0, True, 0)
    width = min(block, n)
    q, _ = np.linalg.qr(_start_block(n, width))
    est = 0.0
    for it in range(1, max_iters + 1):
        z = dense @ q
        ritz, vecs = np.linalg.eig(q.T @ z)
        top = int(np.argmax(np.abs(ritz)))
        est = float(abs(ritz[top]))
        if est == 0.0:
            return SpectralRadiusResult(0.0, True, it)
        # residual of the dominant Ritz pair, relative to its modulus
        resid = np.linalg.norm(z @ vecs[:, top] - ritz[top] * (q @ vecs[:, top]))
        if resid <= tol * est:
            return SpectralRadiusResult(est, True, it)
        q, _ = np.linalg.qr(z)
    return SpectralRadiusResult(est, False, max_iters)


def sparse_matvec(a: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (a.shape[1],):
        raise ValueError(f"vector of shape {x.shape} incompatible with matrix {a.shape}")
    return np.bincount(a.rows, weights=a.values * x[a.cols], minlength=a.shape[0])
