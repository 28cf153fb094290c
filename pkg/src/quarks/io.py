"""File formats: sensor batches, model containers, masks and JSON reports.

Sensor batch (UTF-8 CSV)::

    # quarks-batch v1 N=<n> channels=<c> Nt=<t>
    <c comma-separated values of lifted frame 0>
    ...

Each row is one time sample in lifted (column-major) order, which for ``N x 2N``
slope frames means all x slopes then all y slopes.  Values are printed with 17
significant digits so doubles round-trip exactly; missing readings are ``nan``.

Model container (binary, little endian)::

    offset  size  field
    0       4     magic b"QRKS"
    4       2     format version (uint16, currently 1)
    6       2     kind (uint16): 0 = QUARKS factors, 1 = dense VAR
    8       4     n1 (uint32), frame rows
    12      4     n2 (uint32), frame columns
    16      4     p  (uint32)
    20      4     r  (uint32), 0 for dense models
    24      ...   float64 payload in row-major order

The QUARKS payload is the left factors, shape ``(p, r, n1, n1)``, followed by
the right factors, shape ``(p, r, n2, n2)``.  The dense payload is the
coefficients, shape ``(p, n1*n2, n1*n2)``.
"""

from __future__ import annotations

import json
import re
import struct

import numpy as np

from .als import QuarksModel, SensorBatch
from .baselines import DenseVarModel
from .errors import ConfigError
from .missing import MissingMask

__all__ = [
    "write_batch_csv",
    "read_batch_csv",
    "save_model",
    "load_model",
    "export_coefficients_csv",
    "write_mask_csv",
    "read_mask_csv",
    "write_json",
    "REPORT_SCHEMA",
]

MAGIC = b"QRKS"
VERSION = 1
KIND_QUARKS, KIND_DENSE = 0, 1
_HEADER = struct.Struct("<4sHHIIII")
REPORT_SCHEMA = "quarks-report/1"
_BATCH_HEADER = re.compile(r"#\s*quarks-batch\s+v1\s+N=(\d+)\s+channels=(\d+)\s+Nt=(\d+)\s*$")


def write_batch_csv(path, batch):
    """Write frames in the documented lifted CSV layout."""
    frames = np.asarray(getattr(batch, "frames", batch), dtype=float)
    Nt, N, width = frames.shape
    lifted = frames.transpose(0, 2, 1).reshape(Nt, -1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# quarks-batch v1 N={N} channels={N * width} Nt={Nt}\n")
        for row in lifted:
            fh.write(",".join(format(v, ".17g") for v in row))
            fh.write("\n")


def read_batch_csv(path):
    """Read a batch written by :func:`write_batch_csv`; returns a :class:`SensorBatch`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        m = _BATCH_HEADER.match(header.strip())
        if not m:
            raise ConfigError(f"{path}: missing or malformed quarks-batch header")
        N, channels, Nt = (int(g) for g in m.groups())
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if Nt else np.empty((0, channels))
    if data.shape != (Nt, channels):
        raise ConfigError(f"{path}: header announces {Nt}x{channels} values, found {data.shape}")
    if channels % (N * N):
        raise ConfigError(f"{path}: {channels} channels is not a multiple of N^2={N * N}")
    return SensorBatch.from_lifted(data, N)


def save_model(path, model):
    """Write a QUARKS or dense model to the binary container."""
    if isinstance(model, QuarksModel):
        n1, n2 = model.frame_shape
        head = _HEADER.pack(MAGIC, VERSION, KIND_QUARKS, n1, n2, model.p, model.r)
        payload = np.concatenate([model.left.ravel(), model.right.ravel()])
    elif isinstance(model, DenseVarModel):
        n1, n2 = model.frame_shape
        head = _HEADER.pack(MAGIC, VERSION, KIND_DENSE, n1, n2, model.p, 0)
        payload = np.asarray(model.coefficients).ravel()
    else:
        raise ConfigError(f"cannot serialise {type(model).__name__}")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: file too short for a model header")
    magic, version, kind, n1, n2, p, r = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ConfigError(f"{path}: not a model container (bad magic)")
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported container version {version}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    if kind == KIND_QUARKS:
        nl, nr = p * r * n1 * n1, p * r * n2 * n2
        if values.size != nl + nr:
            raise ConfigError(f"{path}: expected {nl + nr} values, found {values.size}")
        return QuarksModel(values[:nl].reshape(p, r, n1, n1), values[nl:].reshape(p, r, n2, n2))
    if kind == KIND_DENSE:
        n = n1 * n2
        if values.size != p * n * n:
            raise ConfigError(f"{path}: expected {p * n * n} values, found {values.size}")
        return DenseVarModel(values.reshape(p, n, n), (n1, n2))
    raise ConfigError(f"{path}: unknown model kind {kind}")


def export_coefficients_csv(path, model, max_channels=2048):
    """Dense ``A_i`` as CSV, one block of rows per lag preceded by ``# lag i``."""
    A = np.asarray(model.coefficient_matrices())
    if A.shape[1] > max_channels:
        raise ConfigError(f"{A.shape[1]} channels exceeds the debug export limit of {max_channels}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, Ai in enumerate(A, start=1):
            fh.write(f"# lag {i}\n")
            for row in Ai:
                fh.write(",".join(format(v, ".17g") for v in row))
                fh.write("\n")


def write_mask_csv(path, mask: MissingMask):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(str(i) for i in mask.missing))
        fh.write("\n")


def read_mask_csv(path, n_channels):
    """Zero-based lifted channel indices separated by commas and/or newlines; ``#`` starts a comment."""
    idx = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            for tok in line.split(","):
                tok = tok.strip()
                if tok:
                    try:
                        idx.append(int(tok))
                    except ValueError:
                        raise ConfigError(f"{path}: invalid channel index {tok!r}") from None
    return MissingMask(tuple(idx), n_channels)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path, payload):
    """Write a report with a ``schema`` tag; non-finite floats become ``null``."""
    body = {"schema": REPORT_SCHEMA, **_jsonable(payload)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
