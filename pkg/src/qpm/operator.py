"""Block operators over truncated mode sets.

The index set is ``Omega_N`` minus the origin (zero-mean fields); vectors are laid
out as ``site * n + k``.  A block ``A[b, a]`` maps site ``a`` to site ``b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .membrane import eval_Df_batch
from .params import ModelParams
from .spectra import SpectralField, resize_coeffs

__all__ = [
    "Sites",
    "sites",
    "BlockOperator",
    "SplitOperator",
    "assemble_diagonal",
    "assemble_T",
    "apply",
    "localized_norm",
    "identity",
    "field_to_vector",
    "vector_to_field",
    "write_operator_csv",
]

DENSE_LIMIT = 3000
BLOCK_DROP = 1e-15  # blocks below this Frobenius norm are treated as structural zeros


@dataclass(frozen=True)
class Sites:
    N: int
    lj: np.ndarray  # (m, 2) integer mode indices, origin excluded

    @property
    def m(self) -> int:
        return self.lj.shape[0]

    def index(self, l: int, j: int) -> int:
        if (l, j) == (0, 0) or max(abs(l), abs(j)) > self.N:
            raise KeyError((l, j))
        flat = (l + self.N) * (2 * self.N + 1) + (j + self.N)
        origin = self.N * (2 * self.N + 1) + self.N
        return flat - (flat > origin)

    def conj_permutation(self) -> np.ndarray:
        """Site index of ``-a`` for every site ``a``."""
        return self.m - 1 - np.arange(self.m)

    def magnitude(self) -> np.ndarray:
        return np.max(np.abs(self.lj), axis=1)


@lru_cache(maxsize=32)
def sites(N: int) -> Sites:
    k = np.arange(-N, N + 1)
    L, J = np.meshgrid(k, k, indexing="ij")
    lj = np.stack([L.ravel(), J.ravel()], axis=1)
    lj = lj[np.any(lj != 0, axis=1)]
    lj.setflags(write=False)
    return Sites(N, lj)


def _flat_positions(N: int) -> tuple[np.ndarray, np.ndarray]:
    s = sites(N)
    return s.lj[:, 0] + N, s.lj[:, 1] + N


def field_to_vector(u: SpectralField | np.ndarray, N: int) -> np.ndarray:
    """Coefficients on ``Omega_N`` minus the origin, flattened as ``site * n + k``.

    Accepts a field or a raw coefficient array with leading batch dimensions.
    """
    c = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    Nu = (c.shape[-1] - 1) // 2
    if Nu > N:
        tail = c.copy()
        s = slice(Nu - N, Nu + N + 1)
        tail[..., s, s] = 0
        if np.any(tail != 0):
            raise ValueError(f"field has modes beyond the operator cutoff {N}")
    c = resize_coeffs(c, N)
    il, ij = _flat_positions(N)
    v = c[..., il, ij]  # (..., n, m)
    v = np.swapaxes(v, -1, -2)
    return v.reshape(v.shape[:-2] + (-1,))


def vector_to_field(x: np.ndarray, n: int, N: int) -> SpectralField:
    return SpectralField(vector_to_coeffs(x, n, N))


def vector_to_coeffs(x: np.ndarray, n: int, N: int) -> np.ndarray:
    x = np.asarray(x)
    m = sites(N).m
    v = np.swapaxes(x.reshape(x.shape[:-1] + (m, n)), -1, -2)
    c = np.zeros(x.shape[:-1] + (n, 2 * N + 1, 2 * N + 1), dtype=complex)
    il, ij = _flat_positions(N)
    c[..., il, ij] = v
    return c


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """Square operator on ``Omega_N \\ {0}`` with ``n x n`` blocks.

    ``tag`` is ``"diagonal"`` (``diag`` holds one scalar per site), or
    ``"toeplitz"``/``"general"`` with either a dense ``matrix`` or a matrix-free
    ``matvec`` acting on stacks of vectors (last axis).
    """

    N: int
    n: int
    tag: str
    diag: np.ndarray | None = None
    matrix: np.ndarray | None = None
    matvec: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.tag not in ("diagonal", "toeplitz", "general"):
            raise ValueError(f"unknown tag {self.tag!r}")
        if self.tag == "diagonal" and self.diag is None:
            raise ValueError("diagonal operator needs per-site values")
        if self.tag != "diagonal" and self.matrix is None and self.matvec is None:
            raise ValueError("operator needs a matrix or a matvec")

    @property
    def sites(self) -> Sites:
        return sites(self.N)

    @property
    def size(self) -> int:
        return self.n * self.sites.m

    @property
    def is_dense(self) -> bool:
        return self.tag == "diagonal" or self.matrix is not None

    def diag_vector(self) -> np.ndarray:
        return np.repeat(self.diag, self.n)

    def dot(self, x: np.ndarray) -> np.ndarray:
        """Product with a vector or a stack of vectors (last axis)."""
        if self.tag == "diagonal":
            return self.diag_vector() * x
        if self.matrix is not None:
            return x @ self.matrix.T
        return self.matvec(x)

    def to_dense(self) -> np.ndarray:
        if self.tag == "diagonal":
            return np.diag(self.diag_vector().astype(complex))
        if self.matrix is not None:
            return self.matrix
        return self.matvec(np.eye(self.size, dtype=complex)).T

    def blocks(self) -> np.ndarray:
        """Dense block view ``B[b, a, :, :]`` of shape ``(m, m, n, n)``."""
        A = self.to_dense()
        m, n = self.sites.m, self.n
        return A.reshape(m, n, m, n).transpose(0, 2, 1, 3)

    def __matmul__(self, other: BlockOperator) -> BlockOperator:
        self._check(other)
        if self.tag == other.tag == "diagonal":
            return BlockOperator(self.N, self.n, "diagonal", diag=self.diag * other.diag)
        return BlockOperator(self.N, self.n, "general", matrix=self.to_dense() @ other.to_dense())

    def __add__(self, other: BlockOperator) -> BlockOperator:
        self._check(other)
        if self.tag == other.tag == "diagonal":
            return BlockOperator(self.N, self.n, "diagonal", diag=self.diag + other.diag)
        return BlockOperator(self.N, self.n, "general", matrix=self.to_dense() + other.to_dense())

    def scale(self, c: complex) -> BlockOperator:
        if self.tag == "diagonal":
            return BlockOperator(self.N, self.n, "diagonal", diag=c * self.diag)
        if self.matrix is not None:
            return BlockOperator(self.N, self.n, self.tag, matrix=c * self.matrix)
        f = self.matvec
        return BlockOperator(self.N, self.n, self.tag, matvec=lambda x: c * f(x))

    def _check(self, other: BlockOperator):
        if (self.N, self.n) != (other.N, other.n):
            raise ValueError("operators live on different index sets")

    def is_real(self, tol: float = 1e-12) -> bool:
        """Blocks satisfy ``A[-b, -a] = conj(A[b, a])``."""
        if self.tag == "diagonal":
            return bool(np.all(np.abs(np.imag(self.diag)) <= tol))
        B = self.blocks()
        p = self.sites.conj_permutation()
        return bool(np.max(np.abs(B[np.ix_(p, p)] - np.conj(B))) <= tol * max(1.0, np.abs(B).max()))


def identity(N: int, n: int) -> BlockOperator:
    return BlockOperator(N, n, "diagonal", diag=np.ones(sites(N).m))


@dataclass(frozen=True, eq=False)
class SplitOperator:
    """``D + coupling * T`` kept in factored form for the structured solver."""

    D: BlockOperator
    T: BlockOperator
    coupling: float

    @property
    def N(self) -> int:
        return self.D.N

    @property
    def n(self) -> int:
        return self.D.n

    @property
    def size(self) -> int:
        return self.D.size

    def dot(self, x: np.ndarray) -> np.ndarray:
        out = self.D.dot(x)
        if self.coupling != 0:
            out = out + self.coupling * self.T.dot(x)
        return out

    def to_dense(self) -> np.ndarray:
        A = self.D.to_dense()
        if self.coupling != 0:
            A = A + self.coupling * self.T.to_dense()
        return A

    def as_block(self) -> BlockOperator:
        return BlockOperator(self.N, self.n, "general", matrix=self.to_dense())


def assemble_diagonal(params: ModelParams, N: int) -> BlockOperator:
    """``d(l, j) = n omega^2 l^2 - j^2`` times the identity at each site."""
    if N < 1:
        raise ValueError("cutoff must be >= 1")
    s = sites(N)
    l, j = s.lj[:, 0].astype(float), s.lj[:, 1].astype(float)
    d = params.n * params.omega**2 * l**2 - j**2
    return BlockOperator(N, params.n, "diagonal", diag=d)


def _probe_batch(n: int, N: int, cols: np.ndarray) -> np.ndarray:
    """Unit coefficient arrays for the given flat column indices."""
    H = np.zeros((len(cols), n, 2 * N + 1, 2 * N + 1), dtype=complex)
    s = sites(N)
    site, k = np.divmod(cols, n)
    H[np.arange(len(cols)), k, s.lj[site, 0] + N, s.lj[site, 1] + N] = 1.0
    return H


def _batch_size(n: int, N: int, Nw: int) -> int:
    M = 2 * Nw + 2 * N + 1
    per_probe = 16 * M * M * (6 * n + 4)
    return int(max(1, min(512, 2e8 // per_probe)))


def assemble_T(
    w: SpectralField, params: ModelParams, N: int, dense: bool | None = None
) -> BlockOperator:
    """Operator with ``apply(T, h) = Psi_N Df(w) h`` on zero-mean ``h`` (origin row dropped).

    Dense assembly probes every basis column with a batched ``eval_Df``.  Large
    systems (more than ``DENSE_LIMIT`` unknowns) default to a matrix-free form.
    """
    if w.N > N:
        w = w.resize(N)
    n = params.n
    size = n * sites(N).m
    if dense is None:
        dense = size <= DENSE_LIMIT

    def matvec(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        flat = x.reshape(-1, size)
        out = np.empty_like(flat)
        bs = _batch_size(n, N, w.N)
        for i in range(0, flat.shape[0], bs):
            H = vector_to_coeffs(flat[i : i + bs], n, N)
            out[i : i + bs] = field_to_vector(eval_Df_batch(w, H, params, N), N)
        return out.reshape(x.shape)

    if not dense:
        return BlockOperator(N, n, "toeplitz", matvec=matvec)
    A = np.empty((size, size), dtype=complex)
    bs = _batch_size(n, N, w.N)
    for i in range(0, size, bs):
        cols = np.arange(i, min(size, i + bs))
        A[:, cols] = field_to_vector(eval_Df_batch(w, _probe_batch(n, N, cols), params, N), N).T
    _drop_small_blocks(A, n, BLOCK_DROP)
    return BlockOperator(N, n, "toeplitz", matrix=A)


def _drop_small_blocks(A: np.ndarray, n: int, thresh: float) -> None:
    m = A.shape[0] // n
    view = A.reshape(m, n, m, n)
    small = np.sqrt(np.sum(np.abs(view) ** 2, axis=(1, 3))) < thresh
    view[np.nonzero(small)[0], :, np.nonzero(small)[1], :] = 0


def apply(A: BlockOperator | SplitOperator, u: SpectralField) -> SpectralField:
    """Operator-vector product; the result has zero mean and cutoff ``A.N``."""
    if u.n != A.n:
        raise ValueError(f"component mismatch: operator n={A.n}, field n={u.n}")
    x = field_to_vector(u, A.N)
    return vector_to_field(A.dot(x), A.n, A.N)


def _distances(s: Sites) -> np.ndarray:
    diff = np.abs(s.lj[:, None, :] - s.lj[None, :, :])
    return np.max(diff, axis=-1)


def block_norms(A: BlockOperator) -> np.ndarray:
    """Spectral norms ``||A[b, a]||`` as an ``(m, m)`` array."""
    if A.tag == "diagonal":
        return np.diag(np.abs(A.diag).astype(float))
    B = A.blocks()
    if A.n == 1:
        return np.abs(B[..., 0, 0])
    return np.linalg.svd(B, compute_uv=False)[..., 0]


def localized_norm(A: BlockOperator, s: float) -> float:
    """``sup_b (sum_a exp(2 s |b - a|) ||A[b, a]||^2)^(1/2)`` with the max-norm distance."""
    if A.tag == "diagonal":
        return float(np.max(np.abs(A.diag), initial=0.0))
    nb = block_norms(A)
    w = np.exp(2 * s * _distances(A.sites))
    return float(np.sqrt(np.max(np.sum(w * nb**2, axis=1))))


def write_operator_csv(A: BlockOperator, path, threshold: float = 1e-15) -> None:
    """Sparsity dump: one row per block with Frobenius norm above ``threshold``."""
    s = A.sites
    if A.tag == "diagonal":
        fro = np.diag(np.abs(A.diag) * np.sqrt(A.n))
    else:
        fro = np.sqrt(np.sum(np.abs(A.blocks()) ** 2, axis=(2, 3)))
    b_idx, a_idx = np.nonzero(fro > threshold)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["l_a", "j_a", "l_b", "j_b", "frobenius"])
        for b, a in zip(b_idx, a_idx):
            wr.writerow([*s.lj[a], *s.lj[b], repr(float(fro[b, a]))])
