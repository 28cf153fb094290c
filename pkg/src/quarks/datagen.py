"""Synthetic data: random QUARKS models, turbulence screens and wavefront slopes.

Phase arrays are indexed ``phi[x, y]``: axis 0 is the horizontal direction,
along which the layers are blown by the wind.  Lenslet ``(i, j)`` covers phase
points ``i*P .. i*P + P`` along x and ``j*P .. j*P + P`` along y with pitch
``P = n_phi + 1``; neighbouring lenslets share their boundary row/column.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .als import QuarksModel, SensorBatch, predict, simulate
from .errors import ConfigError
from .kron import BlockPartition, reshuffle

__all__ = [
    "random_quarks_model",
    "companion_spectral_radius",
    "quarks_input_output",
    "quarks_var_data",
    "TurbulenceLayer",
    "TurbulenceConfig",
    "phase_spectrum",
    "von_karman_screens",
    "structure_function",
    "shack_hartmann",
    "add_noise",
    "ao_dataset",
    "circular_mask",
    "hexagon_nodes",
    "hexagon_to_grid",
    "grid_embed",
    "grid_extract",
    "sample_grid",
    "kernel_matrix",
    "separability_spectrum",
]


def companion_spectral_radius(coefficients):
    """Largest eigenvalue modulus of the block companion matrix of ``A_1 .. A_p``."""
    A = np.asarray(coefficients, dtype=float)
    p, n, _ = A.shape
    C = np.zeros((p * n, p * n))
    C[:n] = np.concatenate(list(A), axis=1)
    if p > 1:
        C[n:, : (p - 1) * n] = np.eye((p - 1) * n)
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def _toeplitz_factor(rng, n, gamma):
    off = np.arange(n)
    col = rng.standard_normal(n) * np.exp(-gamma * off)
    row = rng.standard_normal(n) * np.exp(-gamma * off)
    row[0] = col[0]
    return scipy.linalg.toeplitz(col, row)


def random_quarks_model(N, p, r, seed=None, gamma=0.5, radius=0.95, outputs=1):
    """Random model with Toeplitz factors whose entries decay away from the diagonal.

    Entries on offset ``d`` are standard normal times ``exp(-gamma * d)``.  The
    lag-``i`` factors are then scaled by ``c^(i/2)`` each, which scales the
    companion eigenvalues by exactly ``c``; ``c`` is chosen so that the
    spectral radius equals ``radius``.  ``outputs`` widens the right factors to
    ``outputs * N`` for multi-output nodes.
    """
    if N < 2 or p < 1 or r < 1:
        raise ConfigError(f"need N > 1, p >= 1, r >= 1; got N={N}, p={p}, r={r}")
    if not 0 < radius < 1:
        raise ConfigError(f"radius must lie in (0, 1), got {radius}")
    rng = np.random.default_rng(seed)
    n2 = outputs * N
    left = np.stack([[_toeplitz_factor(rng, N, gamma) for _ in range(r)] for _ in range(p)])
    right = np.stack([[_toeplitz_factor(rng, n2, gamma) for _ in range(r)] for _ in range(p)])
    rho = companion_spectral_radius(QuarksModel(left, right).coefficient_matrices())
    if rho > 0:
        scale = np.sqrt(radius / rho) ** np.arange(1, p + 1)
        left = left * scale[:, None, None, None]
        right = right * scale[:, None, None, None]
    return QuarksModel(left, right)


def quarks_input_output(model: QuarksModel, Nt, seed=None, snr_db=None):
    """White input frames and the model's (optionally noisy) output frames.

    ``outputs[k] = sum_i sum_j Ma U_{k-i} Mb`` for ``k >= p``; the first ``p``
    outputs, which lack a full input history, are zero.
    """
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((Nt,) + model.frame_shape)
    Y = np.zeros_like(U)
    Y[model.p :] = predict(model, U)
    if snr_db is not None:
        Y = add_noise(Y, snr_db, rng)
    return Y, U


def quarks_var_data(model: QuarksModel, Nt, noise_std=1.0, seed=None, burn_in=200):
    """Autoregressive frames driven by white innovations, after a burn-in."""
    rng = np.random.default_rng(seed)
    init = rng.standard_normal((model.p,) + model.frame_shape) * noise_std
    batch = simulate(model, init, burn_in + Nt, noise_std, seed=rng)
    return SensorBatch(batch.frames[-Nt:])


@dataclass(frozen=True)
class TurbulenceLayer:
    """One frozen-flow layer: Fried parameter and outer scale in m, speed in points/sample."""

    r0: float
    L0: float
    speed: int

    def __post_init__(self):
        if not (self.r0 > 0 and self.L0 > 0):
            raise ConfigError(f"r0 and L0 must be positive, got r0={self.r0}, L0={self.L0}")
        if int(self.speed) != self.speed or self.speed < 0:
            raise ConfigError(f"wind speed must be a nonnegative integer number of points, got {self.speed}")


def _default_layers():
    return (TurbulenceLayer(0.2, 10.0, 1), TurbulenceLayer(0.4, 10.0, 2))


@dataclass(frozen=True)
class TurbulenceConfig:
    """Atmosphere, telescope and sensor parameters of the AO simulation."""

    layers: tuple = field(default_factory=_default_layers)
    D: float = 1.0
    N: int = 10
    n_phi: int = 3
    frequency: float = 500.0
    snr_db: float = 15.0
    seed: int = 0
    subharmonics: bool = True
    min_width: int = 256

    def __post_init__(self):
        layers = tuple(l if isinstance(l, TurbulenceLayer) else TurbulenceLayer(**l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ConfigError("need at least one turbulence layer")
        if not self.D > 0:
            raise ConfigError(f"aperture D must be positive, got {self.D}")
        if int(self.N) != self.N or self.N < 2:
            raise ConfigError(f"lenslet count N must exceed 1, got {self.N}")
        if int(self.n_phi) != self.n_phi or self.n_phi < 1:
            raise ConfigError(f"n_phi must be a positive integer, got {self.n_phi}")

    @property
    def N_phi(self):
        return self.N * (self.n_phi + 1) + 1

    @property
    def dx(self):
        return self.D / (self.N_phi - 1)

    def to_dict(self):
        return {
            "layers": [{"r0": l.r0, "L0": l.L0, "speed": l.speed} for l in self.layers],
            "D": self.D,
            "N": self.N,
            "n_phi": self.n_phi,
            "frequency": self.frequency,
            "snr_db": self.snr_db,
            "seed": self.seed,
            "subharmonics": self.subharmonics,
            "min_width": self.min_width,
        }


def phase_spectrum(f, r0, L0):
    """von Karman phase power spectral density at spatial frequency ``f`` (cycles/m)."""
    return 0.023 * r0 ** (-5.0 / 3.0) * (f**2 + 1.0 / L0**2) ** (-11.0 / 6.0)


def _next_pow2(n):
    return 1 << int(np.ceil(np.log2(max(n, 2))))


def _screen(rng, shape, dx, r0, L0, subharmonics):
    """One periodic FFT screen of the given shape, with optional low-frequency subharmonics."""
    Mx, My = shape
    dfx, dfy = 1.0 / (Mx * dx), 1.0 / (My * dx)
    fx = np.fft.fftfreq(Mx, dx)[:, None]
    fy = np.fft.fftfreq(My, dx)[None, :]
    psd = phase_spectrum(np.sqrt(fx**2 + fy**2), r0, L0)
    psd[0, 0] = 0.0
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    screen = np.real(np.fft.ifft2(c * np.sqrt(psd * dfx * dfy))) * Mx * My
    if subharmonics:
        x = np.arange(Mx) * dx
        y = np.arange(My) * dx
        low = np.zeros(shape)
        for level in range(1, 4):
            sx, sy = dfx / 3**level, dfy / 3**level
            for a in (-1, 0, 1):
                for b in (-1, 0, 1):
                    if a == 0 and b == 0:
                        continue
                    fa, fb = a * sx, b * sy
                    amp = np.sqrt(phase_spectrum(np.hypot(fa, fb), r0, L0) * sx * sy)
                    cc = rng.standard_normal() + 1j * rng.standard_normal()
                    low += np.real(cc * amp * np.outer(np.exp(2j * np.pi * fa * x), np.exp(2j * np.pi * fb * y)))
        screen = screen + low - low.mean()
    return screen


def von_karman_screens(cfg: TurbulenceConfig, Nt, seed=None):
    """Frozen-flow phase screens of every layer, shape ``(n_layers, Nt, N_phi, N_phi)``.

    Each layer is drawn once on an oversized periodic grid whose long axis (x)
    holds the whole wind translation, then windowed at offset ``speed * k``.
    If the grid would exceed ``2**16`` points along x the window wraps
    periodically and a warning is issued.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    Nphi = cfg.N_phi
    out = np.empty((len(cfg.layers), Nt, Nphi, Nphi))
    for li, layer in enumerate(cfg.layers):
        need = Nphi + layer.speed * (Nt - 1)
        Mx = _next_pow2(max(need, cfg.min_width))
        if Mx > 2**16:
            Mx = 2**16
            warnings.warn(f"layer {li}: translation of {need} points exceeds the grid; wrapping", RuntimeWarning)
        My = _next_pow2(max(Nphi, cfg.min_width))
        scr = _screen(rng, (Mx, My), cfg.dx, layer.r0, layer.L0, cfg.subharmonics)
        rows = (layer.speed * np.arange(Nt)[:, None] + np.arange(Nphi)[None, :]) % Mx
        out[li] = scr[rows][:, :, :Nphi]
    return out


def structure_function(screen, max_sep):
    """Mean squared phase difference at separations ``1..max_sep`` grid points, both axes."""
    screen = np.asarray(screen, dtype=float)
    out = np.empty(max_sep)
    for d in range(1, max_sep + 1):
        dx2 = np.mean((screen[d:, :] - screen[:-d, :]) ** 2)
        dy2 = np.mean((screen[:, d:] - screen[:, :-d]) ** 2)
        out[d - 1] = 0.5 * (dx2 + dy2)
    return out


def shack_hartmann(phase, N, n_phi):
    """Noise-free boundary-difference slopes of an ``N x N`` lenslet array.

    Parameters
    ----------
    phase : array_like, shape (Nt, N_phi, N_phi) or (N_phi, N_phi)
        ``N_phi`` must equal ``N * (n_phi + 1) + 1``.

    Returns
    -------
    ndarray, shape (Nt, N, 2N)
        ``[S_x, S_y]`` per time step.  ``S_x[i, j]`` is the sum over the
        lenslet's y points of (last minus first x row); ``S_y`` likewise with
        the roles of the axes exchanged.
    """
    phi = np.asarray(phase, dtype=float)
    single = phi.ndim == 2
    if single:
        phi = phi[None]
    P = n_phi + 1
    Nphi = N * P + 1
    if phi.shape[1:] != (Nphi, Nphi):
        raise ConfigError(f"phase grid {phi.shape[1:]} inconsistent with N={N}, n_phi={n_phi} (need {Nphi})")
    edges = np.arange(0, Nphi, P)
    dx = phi[:, edges[1:], :] - phi[:, edges[:-1], :]  # (Nt, N, Nphi)
    dy = phi[:, :, edges[1:]] - phi[:, :, edges[:-1]]  # (Nt, Nphi, N)
    cx = np.concatenate([np.zeros(dx.shape[:2] + (1,)), np.cumsum(dx, axis=2)], axis=2)
    cy = np.concatenate([np.zeros((dy.shape[0], 1, dy.shape[2])), np.cumsum(dy, axis=1)], axis=1)
    sx = cx[:, :, edges[1:] + 1] - cx[:, :, edges[:-1]]
    sy = (cy[:, edges[1:] + 1, :] - cy[:, edges[:-1], :])
    out = np.concatenate([sx, sy], axis=2)
    return out[0] if single else out


def add_noise(signal, snr_db, rng=None):
    """Add white Gaussian noise with power ``mean(signal**2) / 10**(snr_db / 10)``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    signal = np.asarray(signal, dtype=float)
    power = float(np.mean(signal**2))
    sigma = np.sqrt(power / 10 ** (snr_db / 10.0))
    return signal + sigma * rng.standard_normal(signal.shape)


def ao_dataset(cfg: TurbulenceConfig, Nt, seed=None):
    """Clean and noisy Shack-Hartmann batches of ``Nt`` samples.

    The layers are summed into one wavefront before sensing.  Frames are
    ``N x 2N``, so the lifted channel order is all x slopes (column-major over
    lenslets) followed by all y slopes.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    screens = von_karman_screens(cfg, Nt, seed=rng)
    clean = shack_hartmann(screens.sum(axis=0), cfg.N, cfg.n_phi)
    noisy = add_noise(clean, cfg.snr_db, rng)
    return SensorBatch(clean), SensorBatch(noisy)


def circular_mask(N, radius=None):
    """Boolean ``N x N`` mask of nodes whose centres lie within ``radius`` (default ``N/2``)."""
    radius = N / 2.0 if radius is None else radius
    c = np.arange(N) + 0.5 - N / 2.0
    return c[:, None] ** 2 + c[None, :] ** 2 <= radius**2


def hexagon_nodes(rings):
    """Axial coordinates ``(q, r)`` of a hexagon with the given number of rings.

    Nodes are listed row by row in ``r`` and then ``q``; the count is
    ``3 R (R + 1) + 1``.
    """
    R = int(rings)
    if R < 0:
        raise ConfigError(f"ring count must be nonnegative, got {rings}")
    return [(q, r) for r in range(-R, R + 1) for q in range(-R, R + 1) if abs(q + r) <= R]


def hexagon_to_grid(nodes, rings):
    """Map axial coordinates onto a ``(2R+1) x (2R+1)`` grid along the two lattice directions."""
    R = int(rings)
    out = []
    for q, r in nodes:
        if max(abs(q), abs(r), abs(q + r)) > R:
            raise ConfigError(f"node {(q, r)} lies outside a hexagon of {R} rings")
        out.append((q + R, r + R))
    return out


def grid_embed(values, positions, shape):
    """Place node values at integer ``(row, col)`` positions of a zero frame.

    ``values`` may carry a leading time axis, shape ``(Nt, n_nodes)``.
    """
    values = np.asarray(values, dtype=float)
    pos = np.asarray(positions, dtype=int).reshape(-1, 2)
    n1, n2 = shape
    if pos.size and (pos.min() < 0 or pos[:, 0].max() >= n1 or pos[:, 1].max() >= n2):
        raise ConfigError(f"node positions fall outside the {shape} embedding")
    if len({tuple(p) for p in pos}) != len(pos):
        raise ConfigError("node positions must be distinct")
    if values.shape[-1] != len(pos):
        raise ConfigError(f"{values.shape[-1]} values for {len(pos)} nodes")
    out = np.zeros(values.shape[:-1] + (n1, n2))
    out[..., pos[:, 0], pos[:, 1]] = values
    return out


def grid_extract(frames, positions):
    """Inverse of :func:`grid_embed`: node values in the given order."""
    pos = np.asarray(positions, dtype=int).reshape(-1, 2)
    frames = np.asarray(frames)
    return frames[..., pos[:, 0], pos[:, 1]]


def sample_grid(kind, N, seed=None):
    """``N^2`` sampling points, shape ``(N^2, 2)``.

    ``"rect"`` is the unit lattice enumerated column-major (index ``i + j N``
    is point ``(i, j)``); ``"hex"`` shifts every other lattice column by half a
    step along the first axis and compresses the columns to a triangular
    lattice; ``"random"`` draws points uniformly in ``[0, N)^2``.
    """
    i, j = np.meshgrid(np.arange(N, dtype=float), np.arange(N, dtype=float), indexing="ij")
    i, j = i.reshape(-1, order="F"), j.reshape(-1, order="F")
    if kind == "rect":
        return np.column_stack([i, j])
    if kind == "hex":
        return np.column_stack([i + 0.5 * (j % 2), j * np.sqrt(3) / 2])
    if kind == "random":
        rng = np.random.default_rng(seed)
        return rng.uniform(0, N, size=(N * N, 2))
    raise ConfigError(f"unknown grid kind {kind!r}")


def _kernel(name, sigma):
    if name == "gaussian":
        return lambda d2: np.exp(-d2 / sigma**2)
    if name == "exponential":
        return lambda d2: np.exp(-np.sqrt(d2) / sigma**2)
    raise ConfigError(f"unknown kernel {name!r}")


def kernel_matrix(kernel, inputs, outputs, sigma=1.0):
    """``M[a, b] = f(outputs[a], inputs[b])`` for a distance kernel ``f``.

    ``kernel`` is ``"gaussian"`` (``exp(-d^2 / sigma^2)``), ``"exponential"``
    (``exp(-d / sigma^2)``) or a callable of the two point arrays.
    """
    inputs = np.asarray(inputs, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if callable(kernel):
        return kernel(outputs[:, None, :], inputs[None, :, :])
    d2 = np.sum((outputs[:, None, :] - inputs[None, :, :]) ** 2, axis=2)
    return _kernel(kernel, sigma)(d2)


def separability_spectrum(kernel, inputs, outputs, sigma=1.0, max_N=32):
    """Singular values of the reshuffled input-output map sampled from ``kernel``.

    ``inputs`` and ``outputs`` hold ``N^2`` points each, in lifted order.  The
    map is reshuffled with ``N x N`` blocks of size ``N x N``.
    """
    inputs = np.asarray(inputs, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    n = inputs.shape[0]
    N = int(round(np.sqrt(n)))
    if N * N != n or outputs.shape[0] != n:
        raise ConfigError("input and output grids must both hold N^2 points")
    if N > max_N:
        raise ConfigError(f"N={N} materialises an N^2 x N^2 map; refusing above N={max_N}")
    M = kernel_matrix(kernel, inputs, outputs, sigma)
    return np.linalg.svd(reshuffle(M, BlockPartition.square(N)), compute_uv=False)
