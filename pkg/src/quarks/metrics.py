"""Prediction quality, model complexity and wall-clock scaling benchmarks."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .als import AlsOptions, QuarksModel, als_fit, predict
from .baselines import DenseVarModel, fit_dense_var
from .errors import ConfigError

__all__ = [
    "vaf",
    "validation_vaf",
    "model_complexity",
    "truncate_model",
    "BenchRecord",
    "LogLogFit",
    "fit_loglog",
    "time_call",
    "scaling_bench",
    "write_bench_csv",
    "read_bench_csv",
    "default_bench_methods",
]


def vaf(actual, predicted):
    """Variance accounted for, in percent, clamped at 0."""
    s = np.asarray(actual, dtype=float)
    s_hat = np.asarray(predicted, dtype=float)
    if s.shape != s_hat.shape:
        raise ConfigError(f"signal shapes differ: {s.shape} vs {s_hat.shape}")
    power = float(np.sum(s**2))
    if power == 0:
        raise ConfigError("actual signal is identically zero; VAF is undefined")
    return max(0.0, (1.0 - float(np.sum((s - s_hat) ** 2)) / power) * 100.0)


def _predict_any(model, frames):
    if isinstance(model, QuarksModel):
        return predict(model, frames)
    return model.predict(frames)


def validation_vaf(model, batch):
    """VAF of one-step predictions of frames ``p .. Nt-1`` of ``batch``."""
    frames = np.asarray(getattr(batch, "frames", batch), dtype=float)
    return vaf(frames[model.p :], _predict_any(model, frames))


def model_complexity(model, threshold=0.01):
    """Number of parameters needed to build the coefficient matrices.

    QUARKS models count every factor entry.  Dense models count entries whose
    magnitude exceeds ``threshold`` times the largest magnitude of their own
    coefficient matrix.
    """
    if isinstance(model, QuarksModel):
        n1, n2 = model.frame_shape
        return model.p * model.r * (n1 * n1 + n2 * n2)
    A = np.abs(np.asarray(model.coefficient_matrices()))
    peak = A.reshape(A.shape[0], -1).max(axis=1)
    return int(sum(np.count_nonzero(A[i] > threshold * peak[i]) for i in range(A.shape[0]) if peak[i] > 0))


def truncate_model(model: DenseVarModel, threshold=0.01):
    """Copy of a dense model with entries at or below ``threshold`` of each matrix's max set to 0."""
    A = np.array(model.coefficient_matrices())
    peak = np.abs(A).reshape(A.shape[0], -1).max(axis=1)
    A[np.abs(A) <= threshold * peak[:, None, None]] = 0.0
    return DenseVarModel(A, model.frame_shape, info=dict(model.info, truncated=threshold))


@dataclass
class BenchRecord:
    method: str
    N: int
    Nt: int
    p: int
    r: int
    wall_time: float
    vaf: float
    nonzeros: int
    repetitions: int = 1
    threads: int = 1

    def __post_init__(self):
        if not self.wall_time > 0:
            raise ConfigError(f"wall time must be positive, got {self.wall_time}")
        if not (0.0 <= self.vaf <= 100.0 or np.isnan(self.vaf)):
            raise ConfigError(f"VAF must lie in [0, 100], got {self.vaf}")


@dataclass
class LogLogFit:
    """``log10(time) = slope * log10(N) + intercept``; ``sigma`` is the residual std."""

    slope: float
    intercept: float
    sigma: float
    slope_std: float

    def to_dict(self):
        return asdict(self)


def fit_loglog(N, times):
    """Ordinary least-squares line through ``(log10 N, log10 time)``."""
    x = np.log10(np.asarray(N, dtype=float))
    y = np.log10(np.asarray(times, dtype=float))
    if x.size < 2:
        raise ConfigError("need at least two sizes to fit a slope")
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(x.size - 2, 1)
    sigma = float(np.sqrt(resid @ resid / dof))
    cov = sigma**2 * np.linalg.inv(X.T @ X)
    return LogLogFit(float(coef[0]), float(coef[1]), sigma if x.size > 2 else 0.0, float(np.sqrt(cov[0, 0])))


def time_call(fn: Callable, repetitions=3, min_time=1e-3, clock=time.perf_counter):
    """Median wall time of ``fn()`` after one discarded warm-up call.

    When a single call is shorter than ``min_time`` each measurement loops the
    call enough times to exceed it and reports the per-call average.

    Returns ``(median_time, last_result, inner_loops)``.
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions must be at least 1, got {repetitions}")
    t0 = clock()
    result = fn()
    first = clock() - t0
    inner = 1
    if first < min_time:
        inner = int(np.ceil(min_time / max(first, 1e-9)))
    samples = []
    for _ in range(repetitions):
        t0 = clock()
        for _ in range(inner):
            result = fn()
        samples.append((clock() - t0) / inner)
    return float(np.median(samples)), result, inner


def _thread_limit(threads):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=threads)


def scaling_bench(methods: dict, N_values: Sequence[int], repetitions=3, threads=1):
    """Time each method over a range of grid sizes.

    Parameters
    ----------
    methods : dict
        ``name -> setup(N)``; ``setup`` returns ``(fit, meta)`` where ``fit()``
        is timed and ``meta`` holds ``Nt``, ``p``, ``r`` and optionally a
        ``score(result) -> (vaf, nonzeros)`` callable.
    N_values : sequence of int
        Sorted grid sizes.
    threads : int or None
        BLAS thread limit during timing; ``None`` leaves the pool untouched.

    Returns
    -------
    records : list of BenchRecord
    fits : dict of LogLogFit, one per method
    """
    N_values = list(N_values)
    if not N_values:
        raise ConfigError("empty N range")
    if N_values != sorted(N_values):
        raise ConfigError("N range must be sorted")
    records = []
    fits = {}
    limiter = _thread_limit(threads) if threads else None
    try:
        for name, setup in methods.items():
            times = []
            for N in N_values:
                fit, meta = setup(N)
                elapsed, result, _ = time_call(fit, repetitions)
                score = meta.get("score")
                v, nz = score(result) if score else (float("nan"), 0)
                records.append(
                    BenchRecord(name, int(N), int(meta.get("Nt", 0)), int(meta.get("p", 0)), int(meta.get("r", 0)),
                                elapsed, v, int(nz), repetitions, threads or os.cpu_count() or 1)
                )
                times.append(elapsed)
            fits[name] = fit_loglog(N_values, times)
    finally:
        if limiter is not None:
            limiter.unregister()
    return records, fits


def write_bench_csv(path, records, fits=None):
    """One record per row after a header line; slope summaries go in trailing comment lines."""
    names = [f.name for f in fields(BenchRecord)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for rec in records:
            w.writerow([getattr(rec, n) for n in names])
        for method, fit in (fits or {}).items():
            fh.write(f"# fit {method} slope={fit.slope:.6g} intercept={fit.intercept:.6g} "
                     f"sigma={fit.sigma:.6g} slope_std={fit.slope_std:.6g}\n")


def read_bench_csv(path):
    types = {f.name: f.type for f in fields(BenchRecord)}
    cast = {"str": str, "int": int, "float": float}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    for row in csv.DictReader(rows):
        out.append(BenchRecord(**{k: cast[types[k]](v) for k, v in row.items()}))
    return out


def default_bench_methods(p=4, r=2, iterations=10, snr_db=15.0, seed=0, vaf_samples=0):
    """QUARKS and dense-LS setups on AO slope data with the sample-size rules of the scaling study.

    QUARKS uses ``Nt = 10 p r N`` and a fixed number of ALS passes so the
    timing reflects per-iteration cost; dense LS uses ``Nt = 50 N^2``.
    """
    from .datagen import TurbulenceConfig, ao_dataset

    def data(N, Nt):
        cfg = TurbulenceConfig(N=N, snr_db=snr_db, seed=seed)
        return ao_dataset(cfg, Nt + vaf_samples, seed=seed)[1].frames

    def scorer(frames):
        if not vaf_samples:
            return None
        val = frames[-vaf_samples:]

        def score(result):
            model = result[0] if isinstance(result, tuple) else result
            return validation_vaf(model, val), model_complexity(model)

        return score

    def quarks(N):
        Nt = 10 * p * r * N
        frames = data(N, Nt)
        train = frames[:Nt]
        opts = AlsOptions(max_iters=iterations, patience=iterations + 1, seed=seed)
        return (lambda: als_fit(train, p, r, opts)), {"Nt": Nt, "p": p, "r": r, "score": scorer(frames)}

    def dense(N):
        Nt = 50 * N * N
        frames = data(N, Nt)
        train = frames[:Nt]
        return (lambda: fit_dense_var(train, p)), {"Nt": Nt, "p": p, "r": 0, "score": scorer(frames)}

    return {"quarks": quarks, "dense": dense}
