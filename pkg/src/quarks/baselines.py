"""Unstructured reference estimators: least-squares VAR and l1-regularised sparse VAR.

Both work on lifted (column-major) frames and solve

    min sum_k ||s_k - sum_i A_i s_{k-i}||^2  (+ tau * sum_i ||vec(A_i)||_1)

through the Gram matrix of the stacked regressors, which is all the sparse
solver needs as well: the smooth part is a quadratic in ``[A_1 ... A_p]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, RankDeficientError

__all__ = [
    "DenseVarModel",
    "lifted_regression",
    "fit_dense_var",
    "fit_sparse_var",
    "tau_max",
    "DEFAULT_TAU_GRID",
]

DEFAULT_TAU_GRID = np.logspace(0, 4, 8)


@dataclass
class DenseVarModel:
    """Lifted VAR coefficients ``A_i``, array of shape ``(p, n, n)``.

    ``frame_shape`` records how a lifted vector of length ``n`` folds back into
    a frame.  ``info`` carries solver diagnostics.
    """

    coefficients: np.ndarray
    frame_shape: tuple
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.array(self.coefficients, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ConfigError(f"coefficients must have shape (p, n, n), got {A.shape}")
        self.frame_shape = tuple(int(s) for s in self.frame_shape)
        if self.frame_shape[0] * self.frame_shape[1] != A.shape[1]:
            raise ConfigError(f"frame shape {self.frame_shape} does not hold {A.shape[1]} channels")
        if not np.all(np.isfinite(A)):
            raise ConfigError("coefficients must be finite")
        A.setflags(write=False)
        self.coefficients = A

    @property
    def p(self):
        return self.coefficients.shape[0]

    @property
    def n_channels(self):
        return self.coefficients.shape[1]

    def coefficient_matrices(self):
        return self.coefficients

    def predict(self, regressors):
        """One-step predictions of frames ``p .. Nt-1``, shape ``(Nt - p, n1, n2)``."""
        U = _frames(regressors)
        if U.shape[1:] != self.frame_shape:
            raise ConfigError(f"frames of shape {U.shape[1:]} do not match model {self.frame_shape}")
        Z, _ = _stack(_lift(U), _lift(U), self.p)
        B = np.concatenate(list(self.coefficients), axis=1)
        pred = Z @ B.T
        n1, n2 = self.frame_shape
        return pred.reshape(-1, n2, n1).transpose(0, 2, 1)


def _frames(data):
    frames = getattr(data, "frames", data)
    arr = np.asarray(frames, dtype=float)
    if arr.ndim != 3:
        raise ConfigError(f"expected frames of shape (Nt, n1, n2), got {arr.shape}")
    return arr


def _lift(frames):
    return frames.transpose(0, 2, 1).reshape(frames.shape[0], -1)


def _stack(outputs, inputs, p):
    Nt = outputs.shape[0]
    if Nt <= p:
        raise ConfigError(f"need Nt > p, got Nt={Nt}, p={p}")
    T = Nt - p
    Z = np.concatenate([inputs[p - i : p - i + T] for i in range(1, p + 1)], axis=1)
    return Z, outputs[p:]


def lifted_regression(batch, p, inputs=None):
    """Stacked regressors ``Z`` (rows ``[s_{k-1}; ...; s_{k-p}]^T``) and targets ``Y`` (rows ``s_k^T``)."""
    S = _frames(batch)
    U = S if inputs is None else _frames(inputs)
    if U.shape != S.shape:
        raise ConfigError(f"inputs of shape {U.shape} do not match outputs {S.shape}")
    return _stack(_lift(S), _lift(U), p)


def _split(B, p, n):
    return B.T.reshape(n, p, n).transpose(1, 0, 2)


def fit_dense_var(batch, p, inputs=None):
    """Unstructured least-squares VAR ``[A_1 ... A_p] = Y^T Z (Z^T Z)^{-1}``.

    Raises :class:`RankDeficientError` with the numerical rank when the stacked
    regressors do not have full column rank.
    """
    if int(p) != p or p < 1:
        raise ConfigError(f"p must be a positive integer, got {p}")
    S = _frames(batch)
    Z, Y = lifted_regression(S, p, inputs)
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
        raise ConfigError("data contain non-finite values")
    G = Z.T @ Z
    C = Z.T @ Y
    try:
        cf = scipy.linalg.cho_factor(G)
        d = np.abs(np.diag(cf[0]))
        if d.min() <= 1e-7 * d.max():
            raise np.linalg.LinAlgError
        B = scipy.linalg.cho_solve(cf, C)
    except np.linalg.LinAlgError:
        rank = int(np.linalg.matrix_rank(Z))
        raise RankDeficientError(
            f"stacked regressors have rank {rank} < {Z.shape[1]}; need Nt >= n*p and exciting data",
            rank=rank,
        ) from None
    n = Y.shape[1]
    return DenseVarModel(_split(B, p, n), S.shape[1:], info={"method": "dense"})


def tau_max(batch, p, inputs=None):
    """Smallest ``tau`` for which the all-zero model is optimal."""
    Z, Y = lifted_regression(batch, p, inputs)
    return float(np.max(np.abs(2.0 * Z.T @ Y)))


def _soft(X, t):
    return np.sign(X) * np.maximum(np.abs(X) - t, 0.0)


def _kkt(B, g, tau):
    viol = np.where(B != 0, np.abs(g + tau * np.sign(B)), np.maximum(np.abs(g) - tau, 0.0))
    return float(viol.max()) if viol.size else 0.0


def fit_sparse_var(batch, p, tau, inputs=None, max_iters=5000, rtol=1e-8, kkt_tol=1e-6, warm_start=True):
    """l1-regularised VAR by monotone accelerated proximal gradient.

    The smooth part ``||Y - Z B||^2`` is evaluated through ``G = Z^T Z`` and
    ``C = Z^T Y``.  Steps use backtracking on the local Lipschitz estimate; the
    iterate sequence is made monotone by keeping the better of the proximal
    point and the previous iterate.  Stops when the relative objective change
    falls below ``rtol`` and the largest subgradient-condition violation,
    relative to :func:`tau_max`, is below ``kkt_tol``.

    ``info`` of the returned model records the objective trace, iteration
    count, convergence flag and the relative KKT violation.
    """
    if tau < 0:
        raise ConfigError(f"tau must be nonnegative, got {tau}")
    S = _frames(batch)
    Z, Y = lifted_regression(S, p, inputs)
    n = Y.shape[1]
    G = Z.T @ Z
    C = Z.T @ Y
    y2 = float(np.sum(Y**2))

    def smooth(B):
        return float(np.sum(B * (G @ B)) - 2.0 * np.sum(B * C) + y2)

    def objective(B):
        return smooth(B) + tau * float(np.sum(np.abs(B)))

    def grad(B):
        return 2.0 * (G @ B - C)

    if warm_start:
        try:
            B = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), C)
            if not np.all(np.isfinite(B)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            B = np.zeros_like(C)
    else:
        B = np.zeros_like(C)
    if objective(np.zeros_like(C)) < objective(B):
        B = np.zeros_like(C)
    scale = max(float(np.max(np.abs(2.0 * C))), 1e-300)
    L = max(2.0 * np.trace(G) / G.shape[0], 1e-12)
    X = B.copy()
    Yk = B.copy()
    t = 1.0
    fX = objective(X)
    trace = [fX]
    converged = _kkt(X, grad(X), tau) <= kkt_tol * scale
    it = 0
    while not converged and it < max_iters:
        it += 1
        gy = grad(Yk)
        fy = smooth(Yk)
        while True:
            Zk = _soft(Yk - gy / L, tau / L)
            D = Zk - Yk
            if smooth(Zk) <= fy + np.sum(gy * D) + 0.5 * L * np.sum(D * D) * (1 + 1e-12) + 1e-12 * abs(fy):
                break
            L *= 2.0
        fZ = objective(Zk)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        X_prev = X
        if fZ <= fX:
            X, f_new = Zk, fZ
        else:
            f_new = fX
        Yk = X + (t / t_next) * (Zk - X) + ((t - 1.0) / t_next) * (X - X_prev)
        t = t_next
        change = abs(fX - f_new)
        fX = f_new
        trace.append(fX)
        if change <= rtol * max(abs(fX), 1e-300) and _kkt(X, grad(X), tau) <= kkt_tol * scale:
            converged = True
            break
        L = max(L / 1.5, 1e-12)

    kkt = _kkt(X, grad(X), tau) / scale
    if not converged:
        warnings.warn(f"sparse VAR did not converge in {max_iters} iterations", RuntimeWarning, stacklevel=2)
    info = {
        "method": "sparse",
        "tau": float(tau),
        "iterations": it,
        "converged": converged,
        "objective_trace": trace,
        "kkt_violation": kkt,
    }
    return DenseVarModel(_split(X, p, n), S.shape[1:], info=info)
