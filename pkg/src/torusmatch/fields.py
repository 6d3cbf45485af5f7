"""Periodic scalar fields on a uniform N x N grid of the unit torus.

Entry ``(i, j)`` of a field holds its value at the node ``(i/N, j/N)``; axis 0
is the ``x1`` direction.  Spectral coefficients use the mean-normalised
convention ``F = fft2(f) / N**2`` so a constant field 1 has coefficient 1 at
frequency zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _check_resolution(N: int) -> int:
    N = int(N)
    if N < 8 or N & (N - 1):
        raise ValueError(f"grid resolution must be a power of two >= 8, got {N}")
    return N


@dataclass(frozen=True)
class GridField:
    """Real field sampled at the nodes of an N x N periodic grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"field values must be square, got shape {v.shape}")
        _check_resolution(v.shape[0])
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, func, N: int) -> "GridField":
        """Sample ``func(x1, x2)`` (vectorised) at the grid nodes."""
        x1, x2 = grid_nodes(N)
        return cls(np.broadcast_to(func(x1, x2), (N, N)))

    @classmethod
    def constant(cls, value: float, N: int) -> "GridField":
        return cls(np.full((N, N), float(value)))

    def __add__(self, other):
        return GridField(self.values + _vals(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return GridField(self.values - _vals(other))

    def __rsub__(self, other):
        return GridField(_vals(other) - self.values)

    def __mul__(self, other):
        return GridField(self.values * _vals(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return GridField(-self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _vals(x):
    return x.values if isinstance(x, GridField) else x


def as_array(f) -> np.ndarray:
    """Values of a GridField, or the array itself."""
    return f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)


@dataclass(frozen=True)
class SpectralField:
    """Mean-normalised discrete Fourier coefficients of a real grid field.

    ``coefficients`` is stored in numpy FFT order; ``frequencies(N)`` gives the
    matching integer wavenumbers in ``{-N/2, ..., N/2 - 1}``.
    """

    coefficients: np.ndarray

    @property
    def resolution(self) -> int:
        return self.coefficients.shape[0]

    def coefficient(self, k1: int, k2: int) -> complex:
        N = self.resolution
        return complex(self.coefficients[k1 % N, k2 % N])


def grid_nodes(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinate arrays ``(x1, x2)`` with ``indexing='ij'``."""
    g = np.arange(N) / N
    return np.meshgrid(g, g, indexing="ij")


def node_points(N: int) -> np.ndarray:
    """Grid nodes as an ``(N*N, 2)`` array in row-major order."""
    x1, x2 = grid_nodes(N)
    return np.column_stack([x1.ravel(), x2.ravel()])


def frequencies(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer wavenumber arrays ``(k1, k2)`` in FFT order."""
    k = np.fft.fftfreq(N, d=1.0 / N)
    return np.meshgrid(k, k, indexing="ij")


def _derivative_wavenumbers(N: int) -> tuple[np.ndarray, np.ndarray]:
    # the Nyquist mode has no real derivative; zero it
    k = np.fft.fftfreq(N, d=1.0 / N)
    k[N // 2] = 0.0
    return np.meshgrid(k, k, indexing="ij")


def to_spectral(f) -> SpectralField:
    v = as_array(f)
    return SpectralField(np.fft.fft2(v) / v.size)


def from_spectral(F: SpectralField) -> GridField:
    c = F.coefficients
    return GridField(np.real(np.fft.ifft2(c * c.size)))


def spectral_gradient(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spectral partial derivatives of a real array (Nyquist content dropped)."""
    N = v.shape[0]
    k1, k2 = _derivative_wavenumbers(N)
    V = np.fft.fft2(v)
    g1 = np.real(np.fft.ifft2(2j * np.pi * k1 * V))
    g2 = np.real(np.fft.ifft2(2j * np.pi * k2 * V))
    return g1, g2


def spectral_divergence(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Spectral divergence; the negative adjoint of `spectral_gradient`."""
    N = w1.shape[0]
    k1, k2 = _derivative_wavenumbers(N)
    W = 2j * np.pi * (k1 * np.fft.fft2(w1) + k2 * np.fft.fft2(w2))
    return np.real(np.fft.ifft2(W))


def centered_gradient(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second-order centred periodic differences with step ``1/N``."""
    N = v.shape[0]
    g1 = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) * (N / 2.0)
    g2 = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) * (N / 2.0)
    return g1, g2


def gradient(f, scheme: str = "spectral") -> tuple[GridField, GridField]:
    """Gradient of a field as a pair of fields.

    Parameters
    ----------
    f : GridField
    scheme : {"spectral", "centered2"}
        ``spectral`` multiplies coefficients by ``2 pi i k``; ``centered2``
        uses centred differences, kept as an independent cross-check.
    """
    v = as_array(f)
    if scheme == "spectral":
        g1, g2 = spectral_gradient(v)
    elif scheme == "centered2":
        g1, g2 = centered_gradient(v)
    else:
        raise ValueError(f"unknown gradient scheme {scheme!r}")
    return GridField(g1), GridField(g2)


def integrate(f) -> float:
    """Integral over the unit-area torus (mean of the node values)."""
    return float(np.mean(as_array(f)))


def q_energy(f, q: float, scheme: str = "spectral") -> float:
    """Integral of ``|grad f|**q``."""
    if not q > 1:
        raise ValueError(f"q_energy needs q > 1, got {q}")
    v = as_array(f)
    if scheme == "spectral":
        g1, g2 = spectral_gradient(v)
    elif scheme == "centered2":
        g1, g2 = centered_gradient(v)
    else:
        raise ValueError(f"unknown gradient scheme {scheme!r}")
    s2 = g1 * g1 + g2 * g2
    return float(np.mean(s2 ** (q / 2.0)))


def resample(f, N: int) -> GridField:
    """Trigonometric interpolation of a field onto an ``N x N`` grid.

    Fourier coefficients are zero-padded or truncated; the Nyquist row and
    column are dropped in both directions so the result stays real.
    """
    v = as_array(f)
    M = v.shape[0]
    N = _check_resolution(N)
    if N == M:
        return GridField(v)
    F = np.fft.fft2(v) / v.size
    k = np.fft.fftfreq(M, d=1.0 / M).astype(int)
    keep = np.abs(k) < min(M, N) // 2
    G = np.zeros((N, N), dtype=complex)
    idx = k[keep] % N
    G[np.ix_(idx, idx)] = F[np.ix_(keep, keep)]
    return GridField(np.real(np.fft.ifft2(G * N * N)))


# --- serialisation -----------------------------------------------------------
#
# CSV: first line is N, then N lines of N comma-separated values (row-major).
# Binary: little-endian int64 N followed by N*N little-endian float64 values.


def save_field(path, f) -> None:
    path = Path(path)
    v = as_array(f)
    N = v.shape[0]
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            fh.write(f"{N}\n")
            for row in v:
                fh.write(",".join(f"{x:.17g}" for x in row))
                fh.write("\n")
    else:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<q", N))
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_field(path) -> GridField:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path) as fh:
            N = int(fh.readline().strip().split(",")[0])
            v = np.loadtxt(fh, delimiter=",", ndmin=2)
        if v.shape != (N, N):
            raise ValueError(f"{path}: header says N={N}, found shape {v.shape}")
        return GridField(v)
    raw = path.read_bytes()
    (N,) = struct.unpack("<q", raw[:8])
    v = np.frombuffer(raw[8:], dtype="<f8")
    if v.size != N * N:
        raise ValueError(f"{path}: expected {N * N} values, found {v.size}")
    return GridField(v.reshape(N, N).copy())
