"""QUARKS models and their identification by alternating least squares.

A QUARKS model of temporal order ``p`` and Kronecker rank ``r`` predicts an
``n1 x n2`` sensor frame as::

    S_k = sum_{i=1..p} sum_{j=1..r} Ma[i, j] @ S_{k-i} @ Mb[i, j]

which is the VAR model ``vec(S_k) = sum_i A_i vec(S_{k-i})`` with
``A_i = sum_j Mb[i, j].T (x) Ma[i, j]``.  Frames are square (``n1 == n2 == N``)
for single-output nodes; nodes with two outputs (x and y slopes) are stored as
``N x 2N`` frames ``[S_x, S_y]`` so that ``vec`` lists all x channels first.

With the left factors fixed the cost is an ordinary least-squares problem in
the right factors, separable over the columns of the stacked right factors, and
vice versa on the transposed data.  :func:`als_fit` alternates the two.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, RankDeficientError
from .kron import KronSum
from .regularizers import (
    RegularizationConfig,
    spatial_penalty,
    spatial_penalty_weights_for_factor,
    temporal_penalty,
    temporal_penalty_block,
)

__all__ = [
    "SensorBatch",
    "QuarksModel",
    "AlsOptions",
    "AlsReport",
    "predict_one",
    "predict",
    "cost",
    "build_data_blocks",
    "excitation_ranks",
    "als_fit",
    "simulate",
    "sign_fix",
]

RANK_RTOL = 1e-10
GRAM_MAX_COND = 1e8


@dataclass(frozen=True)
class SensorBatch:
    """Time-ordered sensor frames, array of shape ``(Nt, N, width)``.

    ``width`` is ``N`` times the number of outputs per node.  Missing readings
    may be stored as NaN; fitting routines reject them unless told otherwise.
    """

    frames: np.ndarray

    def __post_init__(self):
        frames = np.array(self.frames, dtype=float)
        if frames.ndim != 3:
            raise ConfigError(f"frames must have shape (Nt, N, width), got {frames.shape}")
        Nt, N, width = frames.shape
        if N < 2:
            raise ConfigError(f"grid size N must exceed 1, got {N}")
        if width % N:
            raise ConfigError(f"frame width {width} is not a multiple of N={N}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_lifted(cls, data, N):
        """Build from rows of column-major lifted frames, shape ``(Nt, N*width)``."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] % N:
            raise ConfigError(f"cannot reshape lifted data of shape {data.shape} into frames with N={N}")
        width = data.shape[1] // N
        return cls(data.reshape(data.shape[0], width, N).transpose(0, 2, 1))

    @property
    def N(self):
        return self.frames.shape[1]

    @property
    def Nt(self):
        return self.frames.shape[0]

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def outputs_per_node(self):
        return self.width // self.N

    @property
    def n_channels(self):
        return self.N * self.width

    def lifted(self):
        """Column-major vectorised frames, shape ``(Nt, n_channels)``."""
        return self.frames.transpose(0, 2, 1).reshape(self.Nt, -1)

    def __len__(self):
        return self.Nt

    def __getitem__(self, item):
        if isinstance(item, slice):
            return SensorBatch(self.frames[item])
        return self.frames[item]


def _frames(data):
    if isinstance(data, SensorBatch):
        return data.frames
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3:
        raise ConfigError(f"expected frames of shape (Nt, n1, n2), got {arr.shape}")
    return arr


class QuarksModel:
    """Factor matrices of a QUARKS model.

    Parameters
    ----------
    left : array_like, shape (p, r, n1, n1)
        ``Ma[i, j]``, acting on the rows of a frame.
    right : array_like, shape (p, r, n2, n2)
        ``Mb[i, j]``, acting on the columns of a frame.
    """

    __slots__ = ("left", "right")

    def __init__(self, left, right):
        left = np.array(left, dtype=float)
        right = np.array(right, dtype=float)
        if left.ndim != 4 or right.ndim != 4 or left.shape[:2] != right.shape[:2]:
            raise ConfigError(f"factor stacks must be (p, r, n, n) with matching (p, r); got {left.shape}, {right.shape}")
        if left.shape[2] != left.shape[3] or right.shape[2] != right.shape[3]:
            raise ConfigError("factor matrices must be square")
        if left.shape[2] < 2:
            raise ConfigError(f"grid size N must exceed 1, got {left.shape[2]}")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise ConfigError("factor matrices must be finite")
        left.setflags(write=False)
        right.setflags(write=False)
        self.left = left
        self.right = right

    @classmethod
    def zeros(cls, p, r, n1, n2=None):
        n2 = n1 if n2 is None else n2
        return cls(np.zeros((p, r, n1, n1)), np.zeros((p, r, n2, n2)))

    @property
    def p(self):
        return self.left.shape[0]

    @property
    def r(self):
        return self.left.shape[1]

    @property
    def frame_shape(self):
        return (self.left.shape[2], self.right.shape[2])

    @property
    def n_parameters(self):
        return self.left[0, 0].size * self.p * self.r + self.right[0, 0].size * self.p * self.r

    def kron_sums(self):
        """``A_i`` as :class:`KronSum` objects ``sum_j Mb[i, j].T (x) Ma[i, j]``."""
        return [KronSum(self.right[i].transpose(0, 2, 1), self.left[i]) for i in range(self.p)]

    def coefficient_matrices(self):
        """Dense lifted VAR coefficients, shape ``(p, n1*n2, n1*n2)``."""
        return np.stack([K.dense() for K in self.kron_sums()])

    def scaled(self, factor):
        return QuarksModel(self.left * factor, self.right)

    def __repr__(self):
        n1, n2 = self.frame_shape
        return f"QuarksModel(p={self.p}, r={self.r}, frame_shape=({n1}, {n2}))"


def predict_one(model: QuarksModel, history):
    """One-step prediction from the last ``p`` frames (most recent last)."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 3 or history.shape[0] != model.p:
        raise ConfigError(f"history must hold exactly p={model.p} frames, got shape {history.shape}")
    if history.shape[1:] != model.frame_shape:
        raise ConfigError(f"frames of shape {history.shape[1:]} do not match model {model.frame_shape}")
    out = np.zeros(model.frame_shape)
    for i in range(model.p):
        S = history[-1 - i]
        for j in range(model.r):
            out += model.left[i, j] @ S @ model.right[i, j]
    return out


def _lagged(inputs, p):
    """Stack of lagged regressor frames, shape ``(p, Nt - p, n1, n2)``; lag ``i+1`` first."""
    Nt = inputs.shape[0]
    T = Nt - p
    return np.stack([inputs[p - 1 - i : p - 1 - i + T] for i in range(p)])


def predict(model: QuarksModel, regressors):
    """One-step predictions of frames ``p .. Nt-1`` from a frame sequence.

    Returns an array of shape ``(Nt - p, n1, n2)``.
    """
    U = _frames(regressors)
    if U.shape[1:] != model.frame_shape:
        raise ConfigError(f"frames of shape {U.shape[1:]} do not match model {model.frame_shape}")
    if U.shape[0] <= model.p:
        raise ConfigError(f"need more than p={model.p} frames, got {U.shape[0]}")
    lag = _lagged(U, model.p)
    out = np.zeros(lag.shape[1:])
    for i in range(model.p):
        for j in range(model.r):
            out += model.left[i, j] @ lag[i] @ model.right[i, j]
    return out


def _reg(reg):
    return RegularizationConfig() if reg is None else reg


def regularization_value(model: QuarksModel, reg: RegularizationConfig):
    """``mu * r_t + lam * r_s`` for the given model."""
    reg = _reg(reg)
    value = 0.0
    if reg.mu > 0:
        value += temporal_penalty(model.left, model.right, reg.temporal(model.p))
    if reg.lam > 0:
        value += spatial_penalty(model.left, model.right, reg.spatial(model.frame_shape[0]))
    return value


def cost(model: QuarksModel, batch, reg: Optional[RegularizationConfig] = None, inputs=None):
    """Regularised least-squares cost of ``model`` on ``batch``.

    The data term sums squared prediction errors of frames ``p+1 .. Nt``; the
    regressors are the batch itself unless ``inputs`` is given.
    """
    S = _frames(batch)
    U = S if inputs is None else _frames(inputs)
    if S.shape[0] <= model.p:
        raise ConfigError(f"need more than p={model.p} frames, got {S.shape[0]}")
    resid = S[model.p :] - predict(model, U)
    return float(np.sum(resid**2)) + regularization_value(model, reg)


def build_data_blocks(batch, p, inputs=None):
    """Stacked targets and per-lag regressors.

    Returns
    -------
    targets : ndarray, shape (N*(Nt-p), width)
        Block row ``a`` holds the time series of frame row ``a``:
        ``targets[a*(Nt-p) + t, b] = S_{p+t}[a, b]`` (zero-based times).
    regressors : list of ndarray, each of shape (Nt-p, N*width)
        ``regressors[i][t]`` concatenates the rows of frame ``p+t-(i+1)``.
    """
    S = _frames(batch)
    U = S if inputs is None else _frames(inputs)
    if S.shape[0] <= p:
        raise ConfigError(f"need more than p={p} frames, got {S.shape[0]}")
    if U.shape != S.shape:
        raise ConfigError(f"inputs of shape {U.shape} do not match outputs {S.shape}")
    n1, n2 = S.shape[1:]
    T = S.shape[0] - p
    targets = S[p:].transpose(1, 0, 2).reshape(n1 * T, n2)
    lag = _lagged(U, p)
    return targets, [lag[i].reshape(T, n1 * n2) for i in range(p)]


def excitation_ranks(batch, p, inputs=None):
    """Numerical column rank of every per-lag regressor block."""
    _, blocks = build_data_blocks(batch, p, inputs)
    return [int(np.linalg.matrix_rank(B)) for B in blocks]


@dataclass
class AlsOptions:
    """Stopping rule, normalisation and initialisation of :func:`als_fit`.

    ``normalize`` holds one target norm per column of the stacked right factors
    (``width`` values); ``None`` disables normalisation.  ``init`` optionally
    fixes the initial left factors, shape ``(p, r, N, N)``.  ``solver`` is
    ``"qr"`` (orthogonal factorisation) or ``"gram"`` (cached normal matrix,
    falling back to QR above condition number 1e8).
    """

    max_iters: int = 100
    tol: float = 1e-5
    patience: int = 3
    normalize: Optional[Sequence[float]] = None
    seed: int = 0
    init: Optional[np.ndarray] = None
    solver: str = "qr"
    max_redraws: int = 5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        if self.solver not in ("qr", "gram"):
            raise ConfigError(f"unknown solver {self.solver!r}")


@dataclass
class AlsReport:
    cost_trace: list
    iterations: int
    termination: str
    wall_time: float
    model: QuarksModel
    initial_cost: float
    redraws: int = 0
    min_singular_value: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def final_cost(self):
        return self.cost_trace[-1] if self.cost_trace else float("nan")

    def to_dict(self):
        return {
            "cost_trace": [float(c) for c in self.cost_trace],
            "iterations": int(self.iterations),
            "termination": self.termination,
            "wall_time": float(self.wall_time),
            "initial_cost": float(self.initial_cost),
            "final_cost": float(self.final_cost),
            "redraws": int(self.redraws),
            "min_singular_value": float(self.min_singular_value),
            "p": self.model.p,
            "r": self.model.r,
            **self.extra,
        }


def _tall_r(M, block=2048):
    """Square upper-triangular ``R`` with ``M^T M = R^T R``, by blocked (TSQR) Householder QR."""
    rows, cols = M.shape
    if rows > 2 * block:
        parts = [scipy.linalg.qr(M[i : i + block], mode="r", check_finite=False)[0][: min(block, cols)]
                 for i in range(0, rows, block)]
        M = np.vstack(parts)
    R = scipy.linalg.qr(M, mode="r", check_finite=False)[0]
    out = np.zeros((cols, cols))
    k = min(R.shape[0], cols)
    out[:k] = R[:k]
    return out


class _HalfProblem:
    """Least squares for the right factors of ``S_k = sum L S_{k-i} R`` with ``L`` fixed."""

    def __init__(self, targets, inputs, p):
        self.p = p
        T = targets.shape[0] - p
        self.n1, self.n2 = targets.shape[1:]
        self.T = T
        self.Y = np.ascontiguousarray(targets[p:].transpose(1, 0, 2).reshape(self.n1 * T, self.n2))
        self.lag = np.ascontiguousarray(_lagged(inputs, p))
        self.energy = float(np.sum(self.Y**2))

    def regressor(self, left):
        p, r = left.shape[:2]
        Z = np.matmul(left[:, :, None], self.lag[:, None])  # (p, r, T, n1, n2)
        return Z.transpose(3, 2, 0, 1, 4).reshape(self.n1 * self.T, p * r * self.n2)

    def solve(self, left, reg: RegularizationConfig, solver="qr"):
        """Minimise over the right factors; returns ``(right, cost, sigma_min_rel, rank_ok)``."""
        p, r = left.shape[:2]
        m = p * r * self.n2
        A = self.regressor(left)
        F = temporal_penalty_block(left, reg.temporal(p), free_size=self.n2) if reg.mu > 0 else None
        if reg.lam > 0:
            D = spatial_penalty_weights_for_factor(left.reshape(p * r, self.n1, self.n1), reg.spatial(self.n2))
            D = D.reshape(m, self.n2)
        else:
            D = None

        X = None
        sig = None
        if solver == "gram":
            X, sig = self._solve_gram(A, F, D)
        if X is None:
            X, sig = self._solve_qr(A, F, D)

        resid = self.Y - A @ X
        value = float(np.sum(resid**2))
        if F is not None:
            value += float(np.sum((F @ X) ** 2))
        if D is not None:
            value += float(np.sum(D * X**2))
        return X.reshape(p, r, self.n2, self.n2), value, sig

    def _solve_gram(self, A, F, D):
        G = A.T @ A
        if F is not None:
            G += F.T @ F
        B = A.T @ self.Y
        ev = np.linalg.eigvalsh(G)
        lo, hi = ev[0], ev[-1]
        if D is None:
            if not lo > 0 or hi / lo > GRAM_MAX_COND:
                return None, None
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), B), float(np.sqrt(lo / hi))
        d_lo, d_hi = D.min(axis=0), D.max(axis=0)
        if not np.all(lo + d_lo > 0) or np.any((hi + d_hi) / (lo + d_lo) > GRAM_MAX_COND):
            return None, None
        X = np.empty((G.shape[0], self.n2))
        for c in range(self.n2):
            Gc = G.copy()
            Gc[np.diag_indices_from(Gc)] += D[:, c]
            X[:, c] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Gc), B[:, c])
        return X, float(np.sqrt(max(lo, 0.0) / hi)) if hi > 0 else 0.0

    def _solve_qr(self, A, F, D):
        m = A.shape[1]
        aug = np.hstack([A, self.Y])
        if F is not None:
            aug = np.vstack([aug, np.hstack([F, np.zeros((F.shape[0], self.n2))])])
        Rf = _tall_r(aug)
        R0 = Rf[:m, :m]
        QtY = Rf[:m, m:]
        s = np.linalg.svd(R0, compute_uv=False)
        sig = s[-1] / s[0] if s[0] > 0 else 0.0
        full = sig > RANK_RTOL
        if D is None:
            if full:
                X = scipy.linalg.solve_triangular(R0, QtY)
            else:
                X = np.linalg.lstsq(R0, QtY, rcond=RANK_RTOL)[0]
            return X, sig
        X = np.empty((m, self.n2))
        zeros = np.zeros(m)
        for c in range(self.n2):
            Mc = np.vstack([R0, np.diag(np.sqrt(D[:, c]))])
            X[:, c] = np.linalg.lstsq(Mc, np.concatenate([QtY[:, c], zeros]), rcond=RANK_RTOL)[0]
        return X, sig

    def rank_diagnosis(self, left):
        """Name the first lag/term block whose regressor columns are rank deficient."""
        A = self.regressor(left)
        p, r = left.shape[:2]
        R0 = _tall_r(A)
        for i in range(p):
            for j in range(r):
                start = (i * r + j) * self.n2
                blk = R0[:, start : start + self.n2]
                rank = np.linalg.matrix_rank(blk, tol=RANK_RTOL * max(np.abs(blk).max(), 1e-300))
                if rank < self.n2:
                    return (i + 1, j + 1), rank
        return None, int(np.linalg.matrix_rank(R0))


class _Alternation:
    """Both half-problems of one data set, re-buildable after imputation."""

    def __init__(self, targets, inputs, p, r, reg, solver):
        self.p, self.r = p, r
        self.reg = reg
        self.solver = solver
        self.set_data(targets, inputs)

    def set_data(self, targets, inputs):
        self.targets = targets
        self.inputs = inputs
        self.fwd = _HalfProblem(targets, inputs, self.p)
        self.bwd = _HalfProblem(targets.transpose(0, 2, 1), inputs.transpose(0, 2, 1), self.p)

    def update_right(self, left):
        return self.fwd.solve(left, self.reg, self.solver)

    def update_left(self, right):
        Xt, value, sig = self.bwd.solve(right.transpose(0, 1, 3, 2), self.reg, self.solver)
        return Xt.transpose(0, 1, 3, 2), value, sig


def sign_fix(left, right):
    """Flip each ``(Ma[i, j], Mb[i, j])`` pair so that ``Mb[i, j][0, 0] >= 0``."""
    left = np.array(left, dtype=float)
    right = np.array(right, dtype=float)
    s = np.where(right[:, :, 0, 0] < 0, -1.0, 1.0)
    return left * s[:, :, None, None], right * s[:, :, None, None]


def _normalize_columns(right, targets):
    p, r, n2, _ = right.shape
    X = right.reshape(p * r * n2, n2).copy()
    norms = np.linalg.norm(X, axis=0)
    scale = np.where(norms > 0, np.asarray(targets, dtype=float) / np.where(norms > 0, norms, 1.0), 1.0)
    return (X * scale).reshape(p, r, n2, n2)


def _check_fit_inputs(S, U, p, r):
    if int(p) != p or p < 1 or int(r) != r or r < 1:
        raise ConfigError(f"p and r must be positive integers, got p={p}, r={r}")
    if U.shape != S.shape:
        raise ConfigError(f"inputs of shape {U.shape} do not match outputs {S.shape}")
    if S.shape[0] <= p:
        raise ConfigError(f"need Nt > p, got Nt={S.shape[0]}, p={p}")
    if S.shape[1] < 2:
        raise ConfigError("grid size N must exceed 1")
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(U))):
        raise ConfigError("data contain non-finite values; use fit_with_missing for gaps")


def _initial_left(rng, p, r, n1):
    return rng.standard_normal((p, r, n1, n1))


class AlsRun:
    """Stateful Algorithm-1 iteration, shared by :func:`als_fit` and the missing-data fit."""

    def __init__(self, targets, inputs, p, r, options: AlsOptions, reg: RegularizationConfig):
        self.options = options
        self.reg = reg
        self.problem = _Alternation(targets, inputs, p, r, reg, options.solver)
        self.p, self.r = p, r
        self.rng = np.random.default_rng(options.seed)
        self.redraws = 0
        self.sigma = float("nan")
        n1 = targets.shape[1]
        if options.init is not None:
            init = np.asarray(options.init, dtype=float)
            if init.shape != (p, r, n1, n1):
                raise ConfigError(f"init must have shape {(p, r, n1, n1)}, got {init.shape}")
            self.left = init.copy()
            self.random_init = False
        else:
            self.left = _initial_left(self.rng, p, r, n1)
            self.random_init = True
        self.right = None
        if options.normalize is not None:
            if len(options.normalize) != targets.shape[2]:
                raise ConfigError(f"need {targets.shape[2]} normalisation targets, got {len(options.normalize)}")

    def iterate(self):
        """One pass: right update, optional normalisation, left update.  Returns the cost."""
        right, _, sig = self.problem.update_right(self.left)
        if sig <= RANK_RTOL and self.random_init and self.reg.lam == 0 and self.right is None:
            right, sig = self._redraw(right, sig)
        if self.options.normalize is not None:
            right = _normalize_columns(right, self.options.normalize)
        left, value, sig_left = self.problem.update_left(right)
        self.left, self.right = left, right
        self.sigma = float(min(sig, sig_left))
        return value

    def _redraw(self, right, sig):
        n1 = self.left.shape[2]
        while sig <= RANK_RTOL and self.redraws < self.options.max_redraws:
            self.redraws += 1
            self.left = _initial_left(self.rng, self.p, self.r, n1)
            right, _, sig = self.problem.update_right(self.left)
        if sig <= RANK_RTOL:
            block, rank = self.problem.fwd.rank_diagnosis(self.left)
            where = f"lag {block[0]}, term {block[1]}" if block else "the combined lag/term blocks"
            raise RankDeficientError(
                f"regressor is rank deficient in {where} after {self.redraws} redraws "
                f"(rank {rank}); the data are not persistently exciting",
                rank=rank,
                block=block,
            )
        return right, sig

    def model(self):
        left, right = sign_fix(self.left, self.right)
        return QuarksModel(left, right)


def run_stopping_loop(run: AlsRun, options: AlsOptions, after_iteration=None):
    """Drive ``run`` until the cost changes by at most ``tol`` for ``patience`` passes."""
    trace = []
    prev = np.inf
    still = 0
    ell = 0
    while ell < options.max_iters and still < options.patience:
        value = run.iterate()
        if after_iteration is not None:
            value = after_iteration(run)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite cost at iteration {ell}")
        trace.append(value)
        still = still + 1 if abs(value - prev) <= options.tol else 0
        prev = value
        ell += 1
    termination = "converged" if still >= options.patience else "max_iters"
    return trace, ell, termination


def als_fit(batch, p, r, options: Optional[AlsOptions] = None, reg: Optional[RegularizationConfig] = None, inputs=None):
    """Identify a QUARKS model with (regularised) alternating least squares.

    Parameters
    ----------
    batch : SensorBatch or array of shape (Nt, N, width)
        Output frames.
    p, r : int
        Temporal order and Kronecker rank.
    options : AlsOptions, optional
    reg : RegularizationConfig, optional
        Penalty weights; defaults to no regularisation.
    inputs : SensorBatch or array, optional
        Regressor frames of the same shape as ``batch``.  When omitted the
        model is autoregressive and the lagged outputs are the regressors.

    Returns
    -------
    model : QuarksModel
        Sign-fixed so that every ``Mb[i, j][0, 0]`` is nonnegative.
    report : AlsReport
    """
    options = AlsOptions() if options is None else options
    reg = _reg(reg)
    S = _frames(batch)
    U = S if inputs is None else _frames(inputs)
    _check_fit_inputs(S, U, p, r)

    start = time.perf_counter()
    run = AlsRun(S, U, p, r, options, reg)
    trace, iterations, termination = run_stopping_loop(run, options)
    model = run.model()
    report = AlsReport(
        cost_trace=trace,
        iterations=iterations,
        termination=termination,
        wall_time=time.perf_counter() - start,
        model=model,
        initial_cost=run.problem.fwd.energy,
        redraws=run.redraws,
        min_singular_value=run.sigma,
    )
    return model, report


def simulate(model: QuarksModel, initial, horizon, noise_std=1.0, seed=None):
    """Run the VAR recursion with i.i.d. Gaussian innovations.

    Returns a :class:`SensorBatch` holding the ``p`` initial frames followed by
    ``horizon`` simulated frames.  If the state blows up the batch is truncated
    at the last finite frame and a warning is issued.
    """
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (model.p,) + model.frame_shape:
        raise ConfigError(f"initial frames must have shape {(model.p,) + model.frame_shape}, got {initial.shape}")
    rng = np.random.default_rng(seed)
    out = np.empty((model.p + horizon,) + model.frame_shape)
    out[: model.p] = initial
    for k in range(model.p, model.p + horizon):
        with np.errstate(over="ignore", invalid="ignore"):
            S = predict_one(model, out[k - model.p : k])
        if noise_std:
            S = S + noise_std * rng.standard_normal(model.frame_shape)
        if not np.all(np.isfinite(S)):
            warnings.warn(f"simulation diverged at step {k}; truncating", RuntimeWarning, stacklevel=2)
            return SensorBatch(out[:k])
        out[k] = S
    return SensorBatch(out)
