"""Heat kernel on the unit torus and heat smoothing of clouds and fields.

The torus kernel is the periodised Euclidean kernel
``p_t(x) = sum_n exp(-|x + n|^2 / 4t) / (4 pi t)``.  Because the Euclidean
kernel factorises over coordinates, the image sum truncated to the square of
shifts ``{-M..M}^2`` equals ``theta_t(x1) * theta_t(x2)`` with ``theta_t`` the
1-d image sum truncated to ``{-M..M}``; both kernel paths below use that.

Truncation bound: with ``M = ceil(1 + 4 sqrt(t) sqrt(14 ln 10))`` every
discarded 1-d term is below ``exp(-(M - 1/2)^2 / 4t) / sqrt(4 pi t)``, which is
smaller than ``1e-56 / sqrt(4 pi t)`` for the argument ranges used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as _quad
from scipy.special import gamma

from .fields import GridField, as_array, frequencies
from .sampling import PointCloud
from .torus import TorusPoint

_TAIL_DIGITS = 14


def truncation_radius(t: float) -> int:
    """Image-sum cutoff ``M`` for diffusion time ``t`` (see module docstring)."""
    if not t > 0:
        raise ValueError(f"diffusion time must be positive, got {t}")
    return max(1, math.ceil(1.0 + 4.0 * math.sqrt(t) * math.sqrt(_TAIL_DIGITS * math.log(10.0))))


@dataclass(frozen=True)
class HeatParams:
    t: float
    truncation_radius: int

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"diffusion time must be positive, got {self.t}")
        if self.truncation_radius < 1:
            raise ValueError("truncation radius must be >= 1")

    @classmethod
    def for_time(cls, t: float) -> "HeatParams":
        return cls(float(t), truncation_radius(t))


def theta(x, t: float, M: int | None = None) -> np.ndarray:
    """1-d periodised heat kernel, image sum over shifts ``-M..M``."""
    if not t > 0:
        raise ValueError(f"diffusion time must be positive, got {t}")
    if M is None:
        M = truncation_radius(t)
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    inv = 1.0 / (4.0 * t)
    for m in range(-M, M + 1):
        y = x + m
        acc += np.exp(-(y * y) * inv)
    return acc / math.sqrt(4.0 * math.pi * t)


def heat_kernel_value(x, t: float, M: int | None = None):
    """Torus heat kernel ``p_t`` at ``x`` (a TorusPoint or an ``(..., 2)`` array)."""
    if isinstance(x, TorusPoint):
        return float(theta(x.x1, t, M) * theta(x.x2, t, M))
    x = np.asarray(x, dtype=float)
    return theta(x[..., 0], t, M) * theta(x[..., 1], t, M)


def _kernel_rows(coords: np.ndarray, N: int, t: float, M: int) -> np.ndarray:
    # rows[i, a] = theta_t(a/N - coords[i]), arguments folded into [-1/2, 1/2)
    g = np.arange(N) / N
    x = g[None, :] - coords[:, None]
    x = np.mod(x + 0.5, 1.0) - 0.5
    return theta(x, t, M)


def smooth_cloud(cloud, t: float, N: int, method: str = "direct", M: int | None = None) -> GridField:
    """Density of ``P_t`` applied to the empirical measure of ``cloud``, at grid nodes.

    Parameters
    ----------
    cloud : PointCloud or (n, 2) array
    t : float
        Diffusion time, ``t > 0``.
    N : int
        Grid resolution.
    method : {"direct", "binned"}
        ``direct`` evaluates the truncated image sum for every point and node
        (exact to truncation precision, O(n N^2)).  ``binned`` assigns points to
        their nearest node and then smooths spectrally; it is approximate,
        with an error of order one grid cell in the point positions.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("cannot smooth an empty cloud")
    if not t > 0:
        raise ValueError(f"diffusion time must be positive, got {t}")
    n = pts.shape[0]
    if method == "direct":
        if M is None:
            M = truncation_radius(t)
        A = _kernel_rows(pts[:, 0], N, t, M)
        B = _kernel_rows(pts[:, 1], N, t, M)
        return GridField(A.T @ B / n)
    if method == "binned":
        return smooth_field(bin_cloud(pts, N), t)
    raise ValueError(f"unknown smoothing method {method!r}")


def bin_cloud(cloud, N: int) -> GridField:
    """Density (mean 1) of the cloud with every point moved to its nearest node."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    idx = np.rint(pts * N).astype(np.int64) % N
    counts = np.zeros((N, N))
    np.add.at(counts, (idx[:, 0], idx[:, 1]), 1.0)
    return GridField(counts * (N * N / pts.shape[0]))


def heat_multiplier(N: int, t: float) -> np.ndarray:
    k1, k2 = frequencies(N)
    return np.exp(-4.0 * math.pi**2 * (k1 * k1 + k2 * k2) * t)


def smooth_field(f, t: float) -> GridField:
    """Apply ``P_t`` to a grid density by the spectral multiplier ``exp(-4 pi^2 |k|^2 t)``."""
    if t < 0:
        raise ValueError(f"diffusion time must be >= 0, got {t}")
    v = as_array(f)
    if t == 0:
        return GridField(v)
    F = np.fft.fft2(v) * heat_multiplier(v.shape[0], t)
    return GridField(np.real(np.fft.ifft2(F)))


def dispersion_constant(p: float, kernel: str = "euclidean", N: int = 256) -> float:
    """Constant ``C0(p) = (integral |z|^p k(z) dz)^(1/p)`` of the dispersion bound.

    Parameters
    ----------
    p : float
        Exponent, ``p >= 1``.
    kernel : {"euclidean", "torus", "uniform"}
        Weight ``k``.  ``euclidean`` integrates against the time-1 Euclidean
        heat kernel over the plane (radial quadrature); this is the value for
        which ``W_p(mu, P_t mu) <= C0 sqrt(t)`` holds for every ``t``.
        ``torus`` uses the time-1 torus kernel over the fundamental square and
        ``uniform`` replaces the kernel by 1; both use a Gauss-Legendre product
        grid with ``N`` nodes per axis, split at the origin.
    """
    if not p >= 1:
        raise ValueError(f"dispersion constant needs p >= 1, got {p}")
    if kernel == "euclidean":
        val, _ = _quad.quad(lambda r: 0.5 * r ** (p + 1) * math.exp(-r * r / 4.0), 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-13, limit=200)
        return val ** (1.0 / p)
    if kernel not in ("torus", "uniform"):
        raise ValueError(f"unknown kernel {kernel!r}")
    if N < 256:
        raise ValueError("dispersion quadrature needs N >= 256")
    x, w = np.polynomial.legendre.leggauss(N // 2)
    # map [-1, 1] to [0, 1/2] and mirror
    x = 0.25 * (x + 1.0)
    w = 0.25 * w
    z = np.concatenate([-x[::-1], x])
    wz = np.concatenate([w[::-1], w])
    Z1, Z2 = np.meshgrid(z, z, indexing="ij")
    integrand = (Z1 * Z1 + Z2 * Z2) ** (p / 2.0)
    if kernel == "torus":
        integrand = integrand * theta(Z1, 1.0) * theta(Z2, 1.0)
    return float(wz @ integrand @ wz) ** (1.0 / p)


def euclidean_dispersion_closed_form(p: float) -> float:
    """``(E|Z|^p)^(1/p)`` for ``Z ~ N(0, 2 I_2)``, i.e. ``2 Gamma(1 + p/2)^(1/p)``."""
    return 2.0 * gamma(1.0 + p / 2.0) ** (1.0 / p)


def sup_deviation(rho) -> float:
    """``||rho - 1||_inf`` over the grid nodes."""
    return float(np.max(np.abs(as_array(rho) - 1.0)))

