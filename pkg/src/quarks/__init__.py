"""Identification of vector autoregressive models with sum-of-Kronecker coefficients."""

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, RankDeficientError, SingularFactorError
from .kron import (
    AlphaDecomposable,
    BlockPartition,
    KronSum,
    compress,
    inverse_reshuffle,
    ivec,
    kron_decompose,
    kron_inverse_rank1,
    kron_matmat,
    kron_matvec,
    kron_rank,
    reshuffle,
    vec,
)
from .regularizers import RegularizationConfig, SpatialWeightConfig, TemporalKernelConfig
from .als import AlsOptions, AlsReport, QuarksModel, SensorBatch, als_fit, cost, predict, simulate
from .baselines import DenseVarModel, fit_dense_var, fit_sparse_var
from .missing import MissingMask, fit_with_missing, impute_given_model
from .metrics import BenchRecord, model_complexity, scaling_bench, validation_vaf, vaf
