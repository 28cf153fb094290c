"""Joint estimation of QUARKS factors and sensor channels that are missing.

The missing channels are the same at every time step.  Each missing
(channel, time) value is one unknown.  With the model fixed, the prediction
residual ``r_k = s_k - sum_i A_i s_{k-i}`` is affine in the unknowns:

    r_k = c_k + sum_{l=0..p} B_l E z_{k-l},   B_0 = I,  B_l = -A_l,

where ``E`` selects the missing channels and ``c_k`` is the residual with the
unknowns set to zero.  Minimising ``sum_k ||r_k||^2`` plus a ridge term gives a
symmetric, block-banded normal matrix (unknowns couple across at most ``p``
lags), which is factorised with a banded Cholesky solver.

The ridge weight ``beta`` is applied once per prediction window in which an
unknown appears, matching a per-window penalty on the stacked unknowns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .als import (
    AlsOptions,
    AlsReport,
    AlsRun,
    QuarksModel,
    _check_fit_inputs,
    _frames,
    als_fit,
    regularization_value,
    run_stopping_loop,
)
from .errors import ConfigError, NumericalError, RankDeficientError
from .regularizers import RegularizationConfig

__all__ = [
    "MissingMask",
    "impute_given_model",
    "imputation_cost",
    "fit_with_missing",
    "DEFAULT_BETA_GRID",
]

DEFAULT_BETA_GRID = np.concatenate([[0.0], np.logspace(-2, 2, 5)])


@dataclass(frozen=True)
class MissingMask:
    """Lifted channel indices (zero-based, column-major) that are missing at every time."""

    missing: tuple
    n_channels: int

    def __post_init__(self):
        idx = np.asarray(self.missing, dtype=int).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_channels):
            raise ConfigError(f"missing indices must lie in [0, {self.n_channels})")
        if np.unique(idx).size != idx.size:
            raise ConfigError("missing indices must be unique")
        if idx.size >= self.n_channels:
            raise ConfigError("at least one channel must be known")
        object.__setattr__(self, "missing", tuple(int(i) for i in np.sort(idx)))

    @classmethod
    def random(cls, n_channels, ratio, seed=None):
        """Missing set of ``round(ratio * n_channels)`` channels drawn without replacement."""
        if not 0.0 <= ratio < 1.0:
            raise ConfigError(f"missing ratio must lie in [0, 1), got {ratio}")
        rng = np.random.default_rng(seed)
        count = int(round(ratio * n_channels))
        return cls(tuple(rng.choice(n_channels, size=count, replace=False)), n_channels)

    @property
    def missing_array(self):
        return np.array(self.missing, dtype=int)

    @property
    def known(self):
        return np.setdiff1d(np.arange(self.n_channels), self.missing_array)

    @property
    def ratio(self):
        return len(self.missing) / self.n_channels

    @property
    def empty(self):
        return len(self.missing) == 0

    def frame_positions(self, n1):
        """``(rows, cols)`` of the missing channels in an ``n1``-row frame."""
        idx = self.missing_array
        return idx % n1, idx // n1

    def unobserved_lines(self, n1):
        """Frame rows and columns whose channels are all missing, as ``(rows, cols)``."""
        n2 = self.n_channels // n1
        hit = np.zeros((n1, n2), dtype=bool)
        rows, cols = self.frame_positions(n1)
        hit[rows, cols] = True
        return np.nonzero(hit.all(axis=1))[0], np.nonzero(hit.all(axis=0))[0]

    def apply(self, frames, fill=np.nan):
        """Copy of ``frames`` with the missing channels replaced by ``fill``."""
        out = np.array(_frames(frames), dtype=float)
        rows, cols = self.frame_positions(out.shape[1])
        out[:, rows, cols] = fill
        return out


def _lift(frames):
    return frames.transpose(0, 2, 1).reshape(frames.shape[0], -1)


def _unlift(lifted, shape):
    n1, n2 = shape
    return lifted.reshape(lifted.shape[0], n2, n1).transpose(0, 2, 1)


def _window_weights(Nt, p):
    """``W[t, l] = 1`` when frame ``t`` enters window ``k = t + l`` (``p <= k < Nt``)."""
    t = np.arange(Nt)[:, None]
    k = t + np.arange(p + 1)[None, :]
    return ((k >= p) & (k < Nt)).astype(float)


def _coefficients(model):
    return model.coefficient_matrices() if isinstance(model, QuarksModel) else np.asarray(model.coefficient_matrices())


def _residuals(lifted, A):
    p = A.shape[0]
    Nt = lifted.shape[0]
    T = Nt - p
    r = lifted[p:].copy()
    for i in range(p):
        r -= lifted[p - 1 - i : p - 1 - i + T] @ A[i].T
    return r


def imputation_cost(model, frames, mask: MissingMask, beta):
    """Prediction-error energy on completed frames plus the window-weighted ridge."""
    S = _lift(_frames(frames))
    A = _coefficients(model)
    value = float(np.sum(_residuals(S, A) ** 2))
    if beta > 0 and not mask.empty:
        mult = _window_weights(S.shape[0], A.shape[0]).sum(axis=1)
        value += beta * float(np.sum(mult[:, None] * S[:, mask.missing_array] ** 2))
    return value


def impute_given_model(model, frames, mask: MissingMask, beta):
    """Least-squares estimate of the missing channels for a fixed model.

    Parameters
    ----------
    model : QuarksModel or DenseVarModel
    frames : SensorBatch or array of shape (Nt, n1, n2)
        Values at missing positions are ignored (may be NaN).
    mask : MissingMask
    beta : float
        Ridge weight, nonnegative.

    Returns
    -------
    ndarray of shape (Nt, n1, n2)
        The frames with missing channels filled in.
    """
    if beta < 0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    F = np.array(_frames(frames), dtype=float)
    Nt, n1, n2 = F.shape
    if mask.n_channels != n1 * n2:
        raise ConfigError(f"mask covers {mask.n_channels} channels, frames have {n1 * n2}")
    if mask.empty:
        return F
    A = _coefficients(model)
    p = A.shape[0]
    if Nt <= p:
        raise ConfigError(f"need Nt > p, got Nt={Nt}, p={p}")
    miss = mask.missing_array
    q = miss.size

    S = _lift(F)
    S[:, miss] = 0.0
    if not np.all(np.isfinite(S)):
        raise ConfigError("known channels contain non-finite values")
    c = _residuals(S, A)  # residual with unknowns at zero, rows k = p..Nt-1

    # B_l restricted to missing columns, l = 0..p
    Bm = np.empty((p + 1, A.shape[1], q))
    Bm[0] = np.eye(A.shape[1])[:, miss]
    Bm[1:] = -A[:, :, miss]
    P = np.einsum("lab,mac->lmbc", Bm, Bm)  # P[l, l'] = B_l^T B_l'

    W = _window_weights(Nt, p)
    # right-hand side g_t = -sum_l W[t, l] B_l^T c_{t+l}
    g = np.zeros((Nt, q))
    for l in range(p + 1):
        rows = np.nonzero(W[:, l])[0]
        g[rows] -= c[rows + l - p] @ Bm[l]

    u = (p + 1) * q - 1
    n = Nt * q
    ab = np.zeros((u + 1, n))
    mult = W.sum(axis=1)
    for d in range(p + 1):
        # H[t, t + d] = sum_{l >= d} W[t, l] P[l, l - d]
        tt = np.arange(Nt - d)
        Hd = np.einsum("tl,lbc->tbc", W[: Nt - d, d:], P[np.arange(d, p + 1), np.arange(0, p + 1 - d)])
        if d == 0:
            Hd = Hd + beta * mult[:, None, None] * np.eye(q)[None]
        for a in range(q):
            b = np.arange(q) if d else np.arange(a, q)
            rows = u - (d * q + b - a)
            cols = (tt[:, None] + d) * q + b[None, :]
            ab[np.broadcast_to(rows, cols.shape), cols] = Hd[:, a, b]
    try:
        z = scipy.linalg.solveh_banded(ab, g.reshape(-1), lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        advice = " ; use beta > 0" if beta == 0 else ""
        raise NumericalError(
            f"imputation system with {q} missing channels over {Nt} samples is singular{advice}"
        ) from None
    if not np.all(np.isfinite(z)):
        raise NumericalError("imputation produced non-finite values; use beta > 0")
    S[:, miss] = z.reshape(Nt, q)
    return _unlift(S, (n1, n2))


def fit_with_missing(
    batch,
    mask: MissingMask,
    p,
    r,
    options: Optional[AlsOptions] = None,
    reg: Optional[RegularizationConfig] = None,
    beta: Optional[float] = None,
    init_fill=0.0,
):
    """Alternate the two factor updates with re-imputation of the missing channels.

    Missing values start at ``init_fill``.  Each pass updates the right factors,
    the left factors and then the missing data, and the stopping rule of
    :func:`quarks.als.als_fit` is applied to the full cost (prediction error on
    the completed data, ridge on the imputed values, factor penalties).  An
    empty mask runs :func:`quarks.als.als_fit` unchanged.

    Returns
    -------
    model : QuarksModel
    completed : ndarray of shape (Nt, n1, n2)
    report : AlsReport

    Raises
    ------
    RankDeficientError
        When a whole frame row or column is missing, or the zero-filled data
        leave a factor update rank deficient.

    Notes
    -----
    The joint cost has no minimiser along the rescaling ``s -> D s``,
    ``A_i -> D A_i D^-1`` with ``D`` equal to ``c < 1`` on the missing channels:
    the residual rows of the missing channels and the ridge both shrink with
    ``c``.  The Kronecker structure only approximately admits this map, so
    with ``beta > 0`` and no factor penalties the iterates drift slowly towards
    small imputations and large coefficients on the missing channels.  The
    iteration budget then acts as a regulariser.
    """
    options = AlsOptions() if options is None else options
    reg = RegularizationConfig() if reg is None else reg
    beta = reg.beta if beta is None else float(beta)
    if beta < 0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    S = np.array(_frames(batch), dtype=float)
    if mask.n_channels != S.shape[1] * S.shape[2]:
        raise ConfigError(f"mask covers {mask.n_channels} channels, frames have {S.shape[1] * S.shape[2]}")
    if mask.empty:
        model, report = als_fit(S, p, r, options, reg)
        return model, S, report

    rows, cols = mask.unobserved_lines(S.shape[1])
    if rows.size or cols.size:
        # a fully unobserved frame line carries no information about the factor
        # entries that act on it, whatever the ridge weight
        raise RankDeficientError(
            f"every channel of frame rows {rows.tolist()} and columns {cols.tolist()} is missing; "
            "the factors acting on them are not identifiable"
        )
    S = mask.apply(S, init_fill)
    _check_fit_inputs(S, S, p, r)
    start = time.perf_counter()
    run = AlsRun(S, S, p, r, options, reg)
    initial_cost = run.problem.fwd.energy

    def impute(run):
        current = QuarksModel(run.left, run.right)
        completed = impute_given_model(current, run.problem.targets, mask, beta)
        run.problem.set_data(completed, completed)
        return imputation_cost(current, completed, mask, beta) + regularization_value(current, reg)

    trace, iterations, termination = run_stopping_loop(run, options, after_iteration=impute)
    model = run.model()
    report = AlsReport(
        cost_trace=trace,
        iterations=iterations,
        termination=termination,
        wall_time=time.perf_counter() - start,
        model=model,
        initial_cost=initial_cost,
        redraws=run.redraws,
        min_singular_value=run.sigma,
        extra={"missing_ratio": mask.ratio, "beta": beta},
    )
    return model, run.problem.targets.copy(), report
