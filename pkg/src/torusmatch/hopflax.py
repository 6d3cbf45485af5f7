"""Hopf-Lax semigroup ``Q_t f(x) = min_y f(y) + d(x, y)^p / (p t^(p-1))`` on grid fields.

The minimum runs over grid nodes ``y`` with ``d`` the torus distance.  The
cost depends only on the node offset ``x - y``, so it is tabulated once per
``(N, t, p)`` and the inner loop is an add-and-compare over offsets, compiled
with numba.

Search radius
-------------
A minimiser ``y`` of the discrete problem must satisfy ``f(y) + cost <= f(x)``,
hence ``cost(x - y) <= f(x) - f(y)``.  Two bounds follow:

* ``cost <= osc f`` gives ``d <= (p t^(p-1) osc f)^(1/p)``;
* ``f(x) - f(y) <= L d`` with ``L = sqrt(2) N max|neighbour difference|``
  (the grid path from ``x`` to ``y`` has at most ``sqrt(2) N d`` unit steps)
  gives ``d <= (p L)^(1/(p-1)) t``.

Restricting to offsets within the smaller radius (plus one cell) is therefore
exact, not a heuristic; `validate_restriction` re-checks it against the full
search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .fields import GridField, as_array, centered_gradient, q_energy


@numba.njit(cache=True)
def _inf_convolve(f, cost, oi, oj):
    N = f.shape[0]
    mask = N - 1
    out = np.empty_like(f)
    K = oi.shape[0]
    for i in range(N):
        for j in range(N):
            best = np.inf
            for k in range(K):
                a = (i - oi[k]) & mask
                b = (j - oj[k]) & mask
                v = f[a, b] + cost[k]
                if v < best:
                    best = v
            out[i, j] = best
    return out


def _offsets(N: int, radius: float | None):
    # all node offsets (di, dj) in [-N/2, N/2)^2 with torus length <= radius
    r = np.arange(-N // 2, N // 2)
    di, dj = np.meshgrid(r, r, indexing="ij")
    dist = np.hypot(di, dj) / N
    keep = np.ones_like(dist, dtype=bool) if radius is None else dist <= radius
    return di[keep].astype(np.int64), dj[keep].astype(np.int64), dist[keep]


def lipschitz_bound(f) -> float:
    """Upper bound on the torus Lipschitz constant of a grid function."""
    v = as_array(f)
    N = v.shape[0]
    step = max(np.max(np.abs(np.roll(v, -1, 0) - v)), np.max(np.abs(np.roll(v, -1, 1) - v)))
    return math.sqrt(2.0) * N * float(step)


def search_radius(f, t: float, p: float) -> float:
    """Radius beyond which no node can attain the minimum (module docstring)."""
    v = as_array(f)
    N = v.shape[0]
    osc = float(np.max(v) - np.min(v))
    r_osc = (p * t ** (p - 1.0) * osc) ** (1.0 / p)
    L = lipschitz_bound(v)
    r_lip = (p * L) ** (1.0 / (p - 1.0)) * t
    return min(r_osc, r_lip) + 1.0 / N


def hopf_lax(f, t: float, p: float, restrict: bool = True) -> GridField:
    """Discrete Hopf-Lax semigroup at time ``t``.

    Parameters
    ----------
    f : GridField
    t : float
        Time, ``t >= 0`` (``t = 0`` returns ``f``).
    p : float
        Cost exponent, ``p > 1``.
    restrict : bool
        Search only the offsets that can attain the minimum (exact); with
        ``False`` every node is scanned.
    """
    if not p > 1:
        raise ValueError(f"Hopf-Lax needs p > 1, got {p}")
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    v = np.ascontiguousarray(as_array(f), dtype=float)
    if t == 0:
        return GridField(v)
    radius = search_radius(v, t, p) if restrict else None
    oi, oj, dist = _offsets(v.shape[0], radius)
    cost = dist**p / (p * t ** (p - 1.0))
    return GridField(_inf_convolve(v, cost, oi, oj))


def validate_restriction(f, t: float, p: float) -> float:
    """Max difference between restricted and full searches (expected 0)."""
    a = hopf_lax(f, t, p, restrict=True).values
    b = hopf_lax(f, t, p, restrict=False).values
    return float(np.max(np.abs(a - b)))


@dataclass(frozen=True)
class HopfLaxCurve:
    times: np.ndarray
    lambda_values: np.ndarray
    c: float
    q: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        lam = np.asarray(self.lambda_values, dtype=float)
        if t.ndim != 1 or t.size != lam.size or t.size < 1:
            raise ValueError("times and lambda_values must be 1-d of equal length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if np.any(lam < 0):
            raise ValueError("lambda values must be nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "lambda_values", lam)

    @property
    def bound(self) -> np.ndarray:
        """``exp(c t) * Lambda(0)`` at every sampled time."""
        return np.exp(self.c * self.times) * self.lambda_values[0]

    def ratios(self) -> np.ndarray:
        b = self.bound
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(b > 0, self.lambda_values / np.where(b > 0, b, 1.0), 0.0)

    def lipschitz_estimate(self) -> float:
        if self.times.size < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.lambda_values)) / np.diff(self.times)))


def centered_q_energy(f, q: float) -> float:
    g1, g2 = centered_gradient(as_array(f))
    return float(np.mean((g1 * g1 + g2 * g2) ** (q / 2.0)))


def lambda_curve(phi, p: float, c: float, n_times: int = 21, restrict: bool = True,
                 t_max: float = 1.0) -> HopfLaxCurve:
    """``Lambda(t) = integral |grad Q_t phi|^q`` at ``n_times`` equispaced times in ``[0, t_max]``.

    ``Lambda(0)`` is the spectral energy of ``phi``; for ``t > 0`` the gradient
    of the (merely Lipschitz) field ``Q_t phi`` is taken by centred differences.
    """
    if not p > 1:
        raise ValueError(f"need p > 1, got {p}")
    if c < 0:
        raise ValueError(f"c must be >= 0, got {c}")
    if n_times < 2:
        raise ValueError("need at least two times")
    q = p / (p - 1.0)
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    times = np.linspace(0.0, t_max, n_times)
    lam = [q_energy(phi, q)]
    for t in times[1:]:
        lam.append(centered_q_energy(hopf_lax(phi, float(t), p, restrict), q))
    return HopfLaxCurve(times, np.array(lam), float(c), q)


def duality_value(f, rho0, rho1, p: float) -> float:
    """``p * (-mean(f rho0) + mean(Q_1 f rho1))``, a lower bound on ``W_p^p``."""
    r0 = as_array(rho0)
    r1 = as_array(rho1)
    if np.any(r0 < 0) or np.any(r1 < 0):
        raise ValueError("densities must be nonnegative")
    v = as_array(f)
    Q1 = hopf_lax(v, 1.0, p).values
    return float(p * (-np.mean(v * r0) + np.mean(Q1 * r1)))
