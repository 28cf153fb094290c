"""Kronecker-structured matrix algebra.

A matrix ``X`` of shape ``(m1*m2, n1*n2)`` is viewed as an ``m1 x n1`` grid of
``m2 x n2`` blocks.  The reshuffle operator rearranges the entries so that row
``i + j*m1`` holds ``vec(X_ij)`` (column-stacking), which turns a sum of
Kronecker products into a low-rank matrix.  All vectorisations in the package
are column-major (``order="F"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, SingularFactorError

__all__ = [
    "BlockPartition",
    "KronSum",
    "AlphaDecomposable",
    "vec",
    "ivec",
    "reshuffle",
    "inverse_reshuffle",
    "kron_decompose",
    "kron_rank",
    "kron_matvec",
    "kron_matmat",
    "kron_inverse_rank1",
    "compress",
]

DEFAULT_TOL = 1e-10


def vec(X):
    """Column-stacking vectorisation."""
    return np.asarray(X).reshape(-1, order="F")


def ivec(x, shape):
    """Inverse of :func:`vec` for a matrix of the given shape."""
    return np.asarray(x).reshape(shape, order="F")


@dataclass(frozen=True)
class BlockPartition:
    """Block grid ``m1 x n1`` of blocks of size ``m2 x n2``."""

    m1: int
    n1: int
    m2: int
    n2: int

    def __post_init__(self):
        for name in ("m1", "n1", "m2", "n2"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ConfigError(f"BlockPartition.{name} must be a positive integer, got {value!r}")

    @classmethod
    def square(cls, n: int) -> "BlockPartition":
        """Partition of an ``n^2 x n^2`` matrix into ``n x n`` blocks of size ``n x n``."""
        return cls(n, n, n, n)

    @property
    def shape(self):
        return (self.m1 * self.m2, self.n1 * self.n2)

    @property
    def reshuffled_shape(self):
        return (self.m1 * self.n1, self.m2 * self.n2)

    def check(self, X, what="matrix"):
        if X.ndim != 2 or X.shape != self.shape:
            raise ConfigError(f"{what} of shape {X.shape} does not conform to partition {self}")


def reshuffle(X, part: BlockPartition):
    """Rearrange ``X`` so that each row is ``vec`` of one block.

    Blocks are enumerated column-major over the block grid, i.e. row
    ``i + j*m1`` of the result is ``vec(X_ij)^T``.
    """
    X = np.asarray(X)
    part.check(X)
    m1, n1, m2, n2 = part.m1, part.n1, part.m2, part.n2
    X4 = X.reshape(m1, m2, n1, n2)
    # axes (j, i, b, a): row index i + j*m1, column index a + b*m2
    return X4.transpose(2, 0, 3, 1).reshape(n1 * m1, n2 * m2)


def inverse_reshuffle(Y, part: BlockPartition):
    """Inverse permutation of :func:`reshuffle`."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape != part.reshuffled_shape:
        raise ConfigError(f"matrix of shape {Y.shape} does not conform to reshuffled partition {part}")
    m1, n1, m2, n2 = part.m1, part.n1, part.m2, part.n2
    Y4 = Y.reshape(n1, m1, n2, m2)
    return Y4.transpose(1, 3, 0, 2).reshape(m1 * m2, n1 * n2)


class KronSum:
    """A matrix held implicitly as ``sum_j U_j (x) V_j``.

    Parameters
    ----------
    left : array_like, shape (r, m1, n1)
        Left factors ``U_j``.
    right : array_like, shape (r, m2, n2)
        Right factors ``V_j``.

    Terms are kept as given: no deduplication or re-orthogonalisation.
    """

    __slots__ = ("left", "right", "partition")

    def __init__(self, left, right):
        left = np.array(left, dtype=float, ndmin=3)
        right = np.array(right, dtype=float, ndmin=3)
        if left.ndim != 3 or right.ndim != 3:
            raise ConfigError("factors must be stacks of matrices")
        if left.shape[0] == 0 or left.shape[0] != right.shape[0]:
            raise ConfigError(
                f"need a non-empty, equal number of left and right factors, got {left.shape[0]} and {right.shape[0]}"
            )
        left.setflags(write=False)
        right.setflags(write=False)
        self.left = left
        self.right = right
        self.partition = BlockPartition(left.shape[1], left.shape[2], right.shape[1], right.shape[2])

    @classmethod
    def from_terms(cls, terms: Sequence[tuple]):
        terms = list(terms)
        if not terms:
            raise ConfigError("a KronSum needs at least one term")
        return cls([u for u, _ in terms], [v for _, v in terms])

    @property
    def terms(self):
        return list(zip(self.left, self.right))

    @property
    def n_terms(self):
        return self.left.shape[0]

    @property
    def shape(self):
        return self.partition.shape

    def dense(self):
        p = self.partition
        out = np.zeros(p.shape)
        for U, V in zip(self.left, self.right):
            out += np.kron(U, V)
        return out

    def __add__(self, other):
        if not isinstance(other, KronSum):
            return NotImplemented
        if other.partition != self.partition:
            raise ConfigError(f"partitions differ: {self.partition} vs {other.partition}")
        return KronSum(np.concatenate([self.left, other.left]), np.concatenate([self.right, other.right]))

    def __matmul__(self, other):
        if isinstance(other, KronSum):
            return kron_matmat(self, other)
        return kron_matvec(self, other)

    def __neg__(self):
        return KronSum(-self.left, self.right)

    def __repr__(self):
        return f"KronSum(n_terms={self.n_terms}, partition={self.partition})"


def kron_decompose(X, part: BlockPartition, rank: Union[int, str] = "auto", tol: float = DEFAULT_TOL) -> KronSum:
    """Truncated Kronecker decomposition via the SVD of the reshuffled matrix.

    Each singular value is split symmetrically, ``sqrt(sigma)`` going into each
    factor.  With ``rank="auto"`` every singular value above ``tol * sigma_1``
    is kept.  The Frobenius reconstruction error equals the root-sum-square of
    the discarded singular values.
    """
    R = reshuffle(X, part)
    max_rank = min(R.shape)
    u, s, vt = np.linalg.svd(R, full_matrices=False)
    if rank == "auto":
        if not tol > 0:
            raise ConfigError("rank='auto' requires tol > 0")
        keep = int(np.count_nonzero(s > tol * s[0])) if s[0] > 0 else 0
        keep = max(keep, 1)
    else:
        keep = int(rank)
        if keep < 1 or keep > max_rank:
            raise ConfigError(f"rank {rank} outside [1, {max_rank}] for partition {part}")
    root = np.sqrt(s[:keep])
    left = np.stack([ivec(root[l] * u[:, l], (part.m1, part.n1)) for l in range(keep)])
    right = np.stack([ivec(root[l] * vt[l], (part.m2, part.n2)) for l in range(keep)])
    return KronSum(left, right)


def kron_rank(X, part: BlockPartition, tol: float = DEFAULT_TOL) -> int:
    """Numerical rank of ``reshuffle(X)`` with threshold ``tol * sigma_1``."""
    s = np.linalg.svd(reshuffle(X, part), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def kron_matvec(M: KronSum, x):
    """Compute ``dense(M) @ x`` via ``(U (x) V) vec(Y) = vec(V Y U^T)``.

    ``x`` may be a vector of length ``n1*n2`` or a matrix whose columns are such
    vectors.
    """
    p = M.partition
    x = np.asarray(x, dtype=float)
    vector = x.ndim == 1
    X = x[:, None] if vector else x
    if X.ndim != 2 or X.shape[0] != p.n1 * p.n2:
        raise ConfigError(f"operand of shape {x.shape} does not match {p.n1 * p.n2} columns")
    k = X.shape[1]
    # Yc[c] = ivec(X[:, c]) with shape (n2, n1)
    Yc = X.T.reshape(k, p.n1, p.n2).transpose(0, 2, 1)
    out = np.zeros((k, p.m2, p.m1))
    for U, V in zip(M.left, M.right):
        out += V @ Yc @ U.T
    res = out.transpose(0, 2, 1).reshape(k, p.m1 * p.m2).T
    return res[:, 0] if vector else res


def kron_matmat(A: KronSum, B: KronSum) -> KronSum:
    """Product of two Kronecker sums by the mixed-product rule.

    The result has ``A.n_terms * B.n_terms`` terms ``(U_a U_b) (x) (V_a V_b)``.
    """
    pa, pb = A.partition, B.partition
    if pa.n1 != pb.m1 or pa.n2 != pb.m2:
        raise ConfigError(f"inner dimensions do not conform: {pa} times {pb}")
    left = np.einsum("iab,jbc->ijac", A.left, B.left).reshape(-1, pa.m1, pb.n1)
    right = np.einsum("iab,jbc->ijac", A.right, B.right).reshape(-1, pa.m2, pb.n2)
    return KronSum(left, right)


def kron_inverse_rank1(M: KronSum, max_cond: float = 1e12) -> KronSum:
    """Invert a single Kronecker product, ``(U (x) V)^-1 = U^-1 (x) V^-1``.

    Inversion of sums with more than one term is refused.
    """
    if M.n_terms != 1:
        raise ConfigError(f"only single-term Kronecker products can be inverted, got {M.n_terms} terms")
    U, V = M.left[0], M.right[0]
    out = []
    for name, F in (("left", U), ("right", V)):
        if F.shape[0] != F.shape[1]:
            raise ConfigError(f"{name} factor of shape {F.shape} is not square")
        cond = np.linalg.cond(F)
        if not np.isfinite(cond) or cond > max_cond:
            raise SingularFactorError(f"{name} factor is singular (condition number {cond:.3g})", factor=name)
        out.append(np.linalg.inv(F))
    return KronSum(out[0][None], out[1][None])


def compress(M: KronSum, tol: float = DEFAULT_TOL, max_size: int = 4096) -> KronSum:
    """Re-express ``M`` with the minimal number of terms via a dense SVD.

    Only for small matrices, since the dense form is materialised.
    """
    rows, cols = M.shape
    if max(rows, cols) > max_size:
        raise ConfigError(f"compress materialises a {rows}x{cols} matrix; refusing above {max_size}")
    return kron_decompose(M.dense(), M.partition, "auto", tol)


@dataclass(frozen=True)
class AlphaDecomposable:
    """Pattern-plus-local-dynamics matrix ``sum_i I_i (x) L_i + I_i P (x) N_i``.

    ``I_i`` selects the ``class_sizes[i]`` consecutive subsystems of class ``i``.
    """

    pattern: np.ndarray
    class_sizes: tuple
    local: tuple
    neighbor: tuple

    def __post_init__(self):
        P = np.asarray(self.pattern)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ConfigError("pattern matrix must be square")
        if sum(self.class_sizes) != n:
            raise ConfigError(f"class sizes sum to {sum(self.class_sizes)}, expected {n}")
        if not (len(self.class_sizes) == len(self.local) == len(self.neighbor)):
            raise ConfigError("one local and one neighbor matrix per class")
        shapes = {np.shape(L) for L in self.local} | {np.shape(Nb) for Nb in self.neighbor}
        if len(shapes) != 1:
            raise ConfigError("local and neighbor matrices must share one shape")

    def _selectors(self):
        n = len(self.pattern)
        start = 0
        for size in self.class_sizes:
            sel = np.zeros((n, n))
            sel[start:start + size, start:start + size] = np.eye(size)
            start += size
            yield sel

    def to_kron_sum(self) -> KronSum:
        P = np.asarray(self.pattern, dtype=float)
        left, right = [], []
        for sel, L, Nb in zip(self._selectors(), self.local, self.neighbor):
            left += [sel, sel @ P]
            right += [np.asarray(L, float), np.asarray(Nb, float)]
        return KronSum(left, right)

    def dense(self):
        return self.to_kron_sum().dense()
