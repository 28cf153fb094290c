"""Temporal (DC-kernel) and spatial (diagonal-decay) penalties.

Both penalties act on pairs of factor matrices ``(Ma, Mb)`` and are bilinear.
With one side fixed they become quadratic forms in the other side's entries,
which is the form consumed by the alternating least-squares updates:

* the temporal penalty couples the lags of one rank term through
  ``P_t^{-1}`` and is returned as a square linear map acting on one column of
  the stacked free factors;
* the spatial penalty is diagonal in the free entries, because
  ``||u v^T||_F^2 = ||u||^2 ||v||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "TemporalKernelConfig",
    "SpatialWeightConfig",
    "RegularizationConfig",
    "dc_kernel",
    "dc_kernel_sqrt_inverse",
    "diag_reshape",
    "inverse_diag_reshape",
    "spatial_weights",
    "offset_weights",
    "spatial_penalty_weights_for_factor",
    "spatial_penalty",
    "temporal_penalty_block",
    "temporal_penalty",
    "random_search_space",
]


@dataclass(frozen=True)
class TemporalKernelConfig:
    """Hyperparameters of the DC kernel ``xi^((i+j)/2) * eta^|i-j|``."""

    p: int
    xi: float = 0.8
    eta: float = 0.5
    mu: float = 0.0

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ConfigError(f"temporal order must be a positive integer, got {self.p!r}")
        if not 0.0 <= self.xi < 1.0:
            raise ConfigError(f"xi must lie in [0, 1), got {self.xi}")
        if not -1.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [-1, 1], got {self.eta}")
        if self.mu < 0:
            raise ConfigError(f"mu must be nonnegative, got {self.mu}")
        if self.mu > 0:
            # surfaces a non-PD kernel at construction time
            dc_kernel(self)


@dataclass(frozen=True)
class SpatialWeightConfig:
    """Diagonal weights ``k_i = exp(zeta * i)`` on an ``N x N`` factor."""

    N: int
    zeta: float = 0.1
    lam: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N!r}")
        if self.zeta < 0:
            raise ConfigError(f"zeta must be nonnegative, got {self.zeta}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class RegularizationConfig:
    """All penalty hyperparameters of the regularised cost.

    ``lam`` weights the spatial penalty, ``mu`` the temporal one; ``beta`` is the
    ridge weight used when imputing missing channels.
    """

    xi: float = 0.8
    eta: float = 0.5
    mu: float = 0.0
    zeta: float = 0.1
    lam: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        TemporalKernelConfig(1, self.xi, self.eta, 0.0)
        SpatialWeightConfig(2, self.zeta, self.lam)

    @property
    def active(self):
        return self.mu > 0 or self.lam > 0

    def temporal(self, p) -> TemporalKernelConfig:
        return TemporalKernelConfig(p, self.xi, self.eta, self.mu)

    def spatial(self, N) -> SpatialWeightConfig:
        return SpatialWeightConfig(N, self.zeta, self.lam)

    def to_dict(self):
        return {k: float(getattr(self, k)) for k in ("xi", "eta", "mu", "zeta", "lam", "beta")}


def dc_kernel(cfg: TemporalKernelConfig):
    """The ``p x p`` DC kernel matrix, checked to be positive definite."""
    idx = np.arange(1, cfg.p + 1, dtype=float)
    P = cfg.xi ** ((idx[:, None] + idx[None, :]) / 2.0) * cfg.eta ** np.abs(idx[:, None] - idx[None, :])
    min_eig = np.linalg.eigvalsh(P).min()
    if not min_eig > 0:
        raise NumericalError(
            f"DC kernel with xi={cfg.xi}, eta={cfg.eta}, p={cfg.p} is not positive definite "
            f"(smallest eigenvalue {min_eig:.3g})"
        )
    return P


def dc_kernel_sqrt_inverse(P, max_cond: float = 1e12):
    """Upper-triangular ``W`` with ``W^T W = P^{-1}``."""
    P = np.asarray(P, dtype=float)
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > max_cond:
        raise NumericalError(f"kernel matrix is near-singular (condition number {cond:.3g})")
    Pinv = np.linalg.inv(P)
    Pinv = 0.5 * (Pinv + Pinv.T)
    return np.linalg.cholesky(Pinv).T


@lru_cache(maxsize=64)
def _diag_order(N):
    rows, cols = [], []
    rows += list(range(N))
    cols += list(range(N))
    for i in range(1, N):
        rows += list(range(N - i))
        cols += list(range(i, N))
        rows += list(range(i, N))
        cols += list(range(N - i))
    order = np.ravel_multi_index((np.array(rows), np.array(cols)), (N, N))
    order.setflags(write=False)
    return order


def diag_reshape(X):
    """Stack the diagonals of a square matrix: main, then (+1, -1), (+2, -2), ..."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ConfigError(f"diag_reshape needs a square matrix, got shape {X.shape}")
    return X.reshape(-1)[_diag_order(X.shape[0])]


def inverse_diag_reshape(d, N=None):
    d = np.asarray(d)
    if N is None:
        N = int(round(np.sqrt(d.size)))
    if d.shape != (N * N,):
        raise ConfigError(f"expected a vector of length {N * N}, got shape {d.shape}")
    out = np.empty(N * N, dtype=d.dtype)
    out[_diag_order(N)] = d
    return out.reshape(N, N)


def spatial_weights(cfg: SpatialWeightConfig):
    """Diagonal of ``K_s`` aligned with :func:`diag_reshape`.

    The block for offset ``i`` (sizes ``N, 2(N-1), ..., 2``) carries
    ``exp(zeta * (i + 1))``.
    """
    N = cfg.N
    sizes = [N] + [2 * (N - i) for i in range(1, N)]
    k = np.exp(cfg.zeta * np.arange(1, N + 1))
    return np.repeat(k, sizes)


def offset_weights(cfg: SpatialWeightConfig):
    """``K_s`` weight of each entry of an ``N x N`` matrix, laid out as the matrix."""
    idx = np.arange(cfg.N)
    return np.exp(cfg.zeta * (np.abs(idx[:, None] - idx[None, :]) + 1))


def _weighted_diag_energy(F, cfg):
    Kd = offset_weights(SpatialWeightConfig(F.shape[0], cfg.zeta, cfg.lam))
    return float(np.sum((Kd * F) ** 2))


def spatial_penalty_weights_for_factor(other_factors, cfg: SpatialWeightConfig):
    """Per-entry quadratic weights on the free factors.

    For each fixed factor ``F`` with ``c = ||K_s D(F)||^2`` the weight of entry
    ``(a, b)`` of the paired free factor is ``lam * c * k(|a-b|)^2``, so the
    spatial penalty equals ``sum(weights * free**2)``.  ``cfg.N`` is the size of
    the free factors; the fixed factors may have a different size.

    Returns an array of shape ``(len(other_factors), N, N)``.
    """
    fixed = [np.asarray(F, dtype=float) for F in other_factors]
    K2 = offset_weights(cfg) ** 2
    c = np.array([_weighted_diag_energy(F, cfg) for F in fixed])
    return cfg.lam * c[:, None, None] * K2[None]


def spatial_penalty(left, right, cfg: SpatialWeightConfig):
    """``lam * sum_ij ||K_s D(Ma_ij)||^2 ||K_s D(Mb_ij)||^2`` over paired factor stacks."""
    left = np.asarray(left, dtype=float).reshape((-1,) + np.shape(left)[-2:])
    right = np.asarray(right, dtype=float).reshape((-1,) + np.shape(right)[-2:])
    total = 0.0
    for A, B in zip(left, right):
        total += _weighted_diag_energy(A, cfg) * _weighted_diag_energy(B, cfg)
    return cfg.lam * total


def _temporal_factor(fixed, W):
    """``p x p`` matrix ``C_j`` per rank term with ``C_j^T C_j = P^-1 o <F_ij, F_i'j>``."""
    p, r = fixed.shape[:2]
    flat = fixed.reshape(p, r, -1)
    out = np.empty((r, p, p))
    for j in range(r):
        # column i of the stacked map: block m equals W[m, i] * vec(F_ij)
        M = (W[:, :, None] * flat[None, :, j, :]).transpose(0, 2, 1).reshape(p * flat.shape[2], p)
        out[j] = np.linalg.qr(M, mode="r")
    return out


def temporal_penalty_block(fixed_factors, cfg: TemporalKernelConfig, free_size=None):
    """Square-root map of the temporal penalty with one factor side fixed.

    Parameters
    ----------
    fixed_factors : array_like, shape (p, r, n, n)
        Fixed factors of every lag and rank term.
    cfg : TemporalKernelConfig
    free_size : int, optional
        Row count ``m`` of the free factors; defaults to ``n``.

    Returns
    -------
    F : ndarray, shape (p*r*m, p*r*m)
        Acts on one column of the stacked free factors, indexed
        ``(lag, rank, row)`` in row-major order.  If column ``c`` of ``X``
        stacks column ``c`` of every free factor, ``||F @ X||_F^2`` equals
        ``mu * r_t``.

    Notes
    -----
    For rank term ``j`` the map is ``sqrt(mu) (W_t (x) I) BDiag(vec(F_1j), ...,
    vec(F_pj))``, compressed to ``p x p`` with a QR factorisation (same Gram
    matrix) and repeated over the ``m`` rows of the free column.
    """
    fixed = np.asarray(fixed_factors, dtype=float)
    if fixed.ndim != 4 or fixed.shape[0] != cfg.p:
        raise ConfigError(f"expected fixed factors of shape (p={cfg.p}, r, n, n), got {fixed.shape}")
    p, r = fixed.shape[:2]
    m = fixed.shape[2] if free_size is None else int(free_size)
    size = p * r * m
    if cfg.mu == 0:
        return np.zeros((size, size))
    W = dc_kernel_sqrt_inverse(dc_kernel(cfg))
    C = np.sqrt(cfg.mu) * _temporal_factor(fixed, W)
    # F[(a, j, s), (i, j, s)] = C_j[a, i]
    F = np.zeros((p, r, m, p, r, m))
    eye = np.eye(m)
    for j in range(r):
        F[:, j, :, :, j, :] = C[j][:, None, :, None] * eye[None, :, None, :]
    return F.reshape(size, size)


def temporal_penalty(left, right, cfg: TemporalKernelConfig):
    """``mu * sum_j ||(W_t (x) I) [vec(Ma_ij) vec(Mb_ij)^T]_i||_F^2``, dense evaluation."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if cfg.mu == 0:
        return 0.0
    W = dc_kernel_sqrt_inverse(dc_kernel(cfg))
    p, r = left.shape[:2]
    total = 0.0
    for j in range(r):
        U = left[:, j].reshape(p, -1)
        V = right[:, j].reshape(p, -1)
        for m in range(p):
            block = np.einsum("i,ia,ib->ab", W[m], U, V)
            total += np.sum(block**2)
    return cfg.mu * total


def random_search_space(rng, n_samples, max_weight=5.0):
    """Uniform draws of ``(lam, mu, xi, eta, zeta)`` within their allowed ranges.

    ``lam`` and ``mu`` are drawn in ``[0, max_weight]``.  ``xi`` and ``eta`` stay
    0.05 inside their open bounds so the kernel remains well conditioned;
    ``zeta`` is drawn in ``[0.01, 1]``.
    """
    out = []
    for _ in range(n_samples):
        out.append(
            RegularizationConfig(
                xi=float(rng.uniform(0.05, 0.95)),
                eta=float(rng.uniform(-0.95, 0.95)),
                mu=float(rng.uniform(0.0, max_weight)),
                zeta=float(rng.uniform(0.01, 1.0)),
                lam=float(rng.uniform(0.0, max_weight)),
            )
        )
    return out
