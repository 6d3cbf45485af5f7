"""Points, wrapping and the flat distance on the unit torus R^2 / Z^2."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

_SHIFTS = tuple(itertools.product((-1, 0, 1), repeat=2))


@dataclass(frozen=True)
class TorusPoint:
    """A point of the unit torus in canonical coordinates ``[0, 1)^2``."""

    x1: float
    x2: float

    def __post_init__(self):
        for v in (self.x1, self.x2):
            if not (0.0 <= v < 1.0):
                raise ValueError(f"coordinate {v!r} outside [0, 1); use wrap()")

    def __iter__(self):
        yield self.x1
        yield self.x2

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


def _mod1(v: float) -> float:
    r = v % 1.0
    # tiny negatives round up to exactly 1.0
    return 0.0 if r >= 1.0 else r


def wrap(v) -> TorusPoint:
    """Reduce a real pair modulo 1 into ``[0, 1)^2``."""
    a, b = (float(c) for c in v)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"cannot wrap non-finite pair {v!r}")
    return TorusPoint(_mod1(a), _mod1(b))


def wrap_array(xy) -> np.ndarray:
    """Vectorised `wrap` for an ``(n, 2)`` array; returns a new array."""
    xy = np.asarray(xy, dtype=float)
    if not np.all(np.isfinite(xy)):
        raise ValueError("cannot wrap non-finite coordinates")
    out = np.mod(xy, 1.0)
    out[out >= 1.0] = 0.0
    return out


def _best_shift(a: TorusPoint, b: TorusPoint) -> tuple[float, float]:
    # 9-shift enumeration; ties resolved towards the [-1/2, 1/2) representative
    d1, d2 = b.x1 - a.x1, b.x2 - a.x2
    best = None
    for k1, k2 in _SHIFTS:
        v1, v2 = d1 + k1, d2 + k2
        n2 = v1 * v1 + v2 * v2
        key = (n2, v1 >= 0.5, v2 >= 0.5)
        if best is None or key < best[0]:
            best = (key, v1, v2)
    return best[1], best[2]


def torus_displacement(a: TorusPoint, b: TorusPoint) -> tuple[float, float]:
    """Minimal-norm representative of ``b - a``, lying in ``[-1/2, 1/2)^2``."""
    return _best_shift(a, b)


def torus_distance(a: TorusPoint, b: TorusPoint) -> float:
    """Quotient (flat) distance between two torus points."""
    v1, v2 = _best_shift(a, b)
    return math.sqrt(v1 * v1 + v2 * v2)


def displacement_array(a, b) -> np.ndarray:
    """Elementwise minimal displacements ``b - a`` for broadcastable ``(..., 2)`` arrays."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return np.mod(d + 0.5, 1.0) - 0.5


def pairwise_distance(X, Y, power: float = 1.0) -> np.ndarray:
    """Matrix of ``d(X_i, Y_j) ** power`` for point arrays ``X (n, 2)``, ``Y (m, 2)``.

    Uses per-coordinate folding ``min(|t|, 1 - |t|)``, which for the Euclidean
    norm gives the same minimum as enumerating the 9 integer shifts.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    out = None
    for c in range(2):
        t = np.subtract.outer(X[:, c], Y[:, c])
        np.abs(t, out=t)
        np.minimum(t, 1.0 - t, out=t)
        t *= t
        if out is None:
            out = t
        else:
            out += t
    if power == 2.0:
        return out
    if power == 1.0:
        return np.sqrt(out, out=out)
    return np.power(out, power / 2.0, out=out)
