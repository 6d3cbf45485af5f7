"""Exact p-Wasserstein costs on the torus.

* `wp_assignment`: uniform clouds of equal size, exact optimal permutation
  (scipy's shortest augmenting path solver, Jonker-Volgenant family).
* `brute_force_wp`: enumeration oracle for tiny clouds.
* `wp_masses` / `wp_grid`: transport between weighted node sets, by the
  network simplex (``exact_lp``) or by log-domain Sinkhorn followed by a
  feasibility rounding step (``entropic``).  The rounded plan satisfies the
  marginals exactly, so its cost is an upper bound on the exact value.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .fields import as_array, node_points
from .sampling import PointCloud
from .torus import pairwise_distance

# keep POT from importing deep-learning backends it does not need here
for _b in ("TENSORFLOW", "TORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_b}", "1")
import ot  # noqa: E402

MASS_TOL = 1e-8
PLAN_TOL = 1e-9
EXACT_LP_MAX_N = 64


@dataclass(frozen=True)
class TransportResult:
    """Value ``W_p^p`` and the coupling that attains it.

    For ``assignment``/``bruteforce`` the plan is a permutation array
    (``X[i]`` matched to ``Y[plan[i]]``); for grid methods it is an ``(m, 3)``
    array of ``(source index, target index, mass)`` rows.
    """

    cost_p: float
    plan: np.ndarray
    method: str
    p: float
    approximate: bool = False

    @property
    def w_p(self) -> float:
        return max(self.cost_p, 0.0) ** (1.0 / self.p)


def _points(c) -> np.ndarray:
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=float).reshape(-1, 2)


def _check_p(p: float):
    if not p >= 1:
        raise ValueError(f"need p >= 1, got {p}")


def permutation_cost(X, Y, perm, p: float) -> float:
    """``(1/n) sum_i d(X_i, Y_perm(i))^p`` with compensated summation."""
    X, Y = _points(X), _points(Y)
    d = pairwise_distance(X, Y[np.asarray(perm)], 1.0)
    return math.fsum(np.diagonal(d) ** p) / X.shape[0]


def wp_assignment(X, Y, p: float) -> TransportResult:
    """Exact ``W_p^p`` between two uniform empirical measures of equal size."""
    _check_p(p)
    A, B = _points(X), _points(Y)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"cloud sizes differ: {A.shape[0]} vs {B.shape[0]}")
    C = pairwise_distance(A, B, p)
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(A.shape[0], dtype=np.int64)
    perm[rows] = cols
    return TransportResult(permutation_cost(A, B, perm, p), perm, "assignment", float(p))


def brute_force_wp(X, Y, p: float) -> TransportResult:
    """Minimum over all ``n!`` permutations; ``n <= 9``."""
    _check_p(p)
    A, B = _points(X), _points(Y)
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError(f"cloud sizes differ: {n} vs {B.shape[0]}")
    if n > 9:
        raise ValueError(f"brute force is limited to n <= 9, got {n}")
    C = pairwise_distance(A, B, 1.0) ** p
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    totals = C[np.arange(n), perms].sum(axis=1)
    # float sums can misorder near-ties; rank those exactly
    near = np.flatnonzero(totals <= totals.min() * (1 + 1e-12) + 1e-300)
    exact = [math.fsum(C[np.arange(n), perms[k]]) for k in near]
    perm = perms[near[int(np.argmin(exact))]]
    return TransportResult(permutation_cost(A, B, perm, p), perm, "bruteforce", float(p))


def _normalise(a, name):
    a = np.asarray(a, dtype=float).ravel()
    if np.any(a < 0):
        raise ValueError(f"{name} has negative entries")
    s = a.sum()
    if not s > 0:
        raise ValueError(f"{name} has no mass")
    return a / s


def _sparse_plan(P):
    i, j = np.nonzero(P > 0)
    return np.column_stack([i, j, P[i, j]])


def plan_cost(plan, C) -> float:
    i = plan[:, 0].astype(np.int64)
    j = plan[:, 1].astype(np.int64)
    return math.fsum(plan[:, 2] * C[i, j])


def round_to_feasible(P, a, b):
    """Round a nonnegative plan onto the transport polytope ``U(a, b)``.

    Scale down overfull rows and columns, then distribute the remaining
    deficit as a rank-one correction; all entries stay nonnegative.
    """
    P = P * np.minimum(1.0, a / np.maximum(P.sum(axis=1), 1e-300))[:, None]
    P = P * np.minimum(1.0, b / np.maximum(P.sum(axis=0), 1e-300))[None, :]
    ea = a - P.sum(axis=1)
    eb = b - P.sum(axis=0)
    tot = ea.sum()
    if tot > 0:
        P = P + np.outer(np.maximum(ea, 0.0), np.maximum(eb, 0.0)) / tot
    return P


def sinkhorn_log(a, b, C, epsilon: float, max_iter: int = 2000, tol: float = 1e-7):
    """Log-domain Sinkhorn; slower, used when the scaling form overflows."""
    la = np.log(np.where(a > 0, a, 1e-300))
    lb = np.log(np.where(b > 0, b, 1e-300))
    K = -C / epsilon
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    for it in range(max_iter):
        f = epsilon * (la - logsumexp(K + g[None, :] / epsilon, axis=1))
        g = epsilon * (lb - logsumexp(K + f[:, None] / epsilon, axis=0))
        if it % 10 == 9:
            P = np.exp(K + (f[:, None] + g[None, :]) / epsilon)
            if np.sum(np.abs(P.sum(axis=1) - a)) < tol:
                return P
    return np.exp(K + (f[:, None] + g[None, :]) / epsilon)


def sinkhorn(a, b, C, epsilon: float, max_iter: int = 2000, tol: float = 1e-7):
    """Entropic plan by alternating scaling; stops on L1 marginal error ``tol``."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        K = np.exp(-C / epsilon)
        u = np.ones_like(a)
        v = np.ones_like(b)
        for it in range(max_iter):
            u = a / (K @ v)
            v = b / (K.T @ u)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                return sinkhorn_log(a, b, C, epsilon, max_iter, tol)
            if it % 10 == 9 and np.sum(np.abs(u * (K @ v) - a)) < tol:
                break
    return u[:, None] * K * v[None, :]


def wp_masses(a, b, C, p: float, mode: str = "exact_lp", epsilon: float | None = None) -> TransportResult:
    """Transport between mass vectors ``a``, ``b`` with a given cost matrix ``C = d^p``.

    Masses are renormalised to total 1 (after checking they agree within
    ``MASS_TOL``).  ``entropic`` uses regularisation ``epsilon`` with no
    debiasing: the returned cost is the transport cost of the rounded feasible
    plan, hence an upper bound on ``exact_lp``.  The default ``epsilon`` is the
    cost of a one-cell step, ``(1/sqrt(len(a)))^p``, for grid-sized inputs.
    """
    _check_p(p)
    a_raw = np.asarray(a, dtype=float).ravel()
    b_raw = np.asarray(b, dtype=float).ravel()
    if abs(a_raw.sum() - b_raw.sum()) > MASS_TOL * max(1.0, abs(a_raw.sum())):
        raise ValueError(f"total masses differ: {a_raw.sum()!r} vs {b_raw.sum()!r}")
    a = _normalise(a_raw, "source mass")
    b = _normalise(b_raw, "target mass")
    C = np.ascontiguousarray(C, dtype=float)
    if mode == "exact_lp":
        P = ot.emd(a, b, C, numItermax=100_000_000)
        plan = _sparse_plan(P)
        approx = False
    elif mode == "entropic":
        eps = (1.0 / math.sqrt(a.size)) ** p if epsilon is None else float(epsilon)
        if not eps > 0:
            raise ValueError("epsilon must be positive")
        P = round_to_feasible(sinkhorn(a, b, C, eps), a, b)
        plan = _sparse_plan(P)
        approx = True
    else:
        raise ValueError(f"unknown transport mode {mode!r}")
    method = "grid_lp" if mode == "exact_lp" else "entropic"
    return TransportResult(plan_cost(plan, C), plan, method, float(p), approx)


def grid_cost_matrix(N: int, p: float) -> np.ndarray:
    X = node_points(N)
    return pairwise_distance(X, X, p)


def wp_grid(rho0, rho1, p: float, mode: str = "exact_lp", epsilon: float | None = None,
            cost: np.ndarray | None = None) -> TransportResult:
    """``W_p^p(rho0 m, rho1 m)`` between grid densities, node masses ``rho / N^2``.

    ``cost`` may pass a precomputed `grid_cost_matrix` for repeated solves.
    """
    r0, r1 = as_array(rho0), as_array(rho1)
    if r0.shape != r1.shape:
        raise ValueError("densities must share a grid")
    N = r0.shape[0]
    if np.any(r0 < 0) or np.any(r1 < 0):
        raise ValueError("densities must be nonnegative")
    if mode == "exact_lp" and N > EXACT_LP_MAX_N:
        raise ValueError(f"exact_lp is limited to N <= {EXACT_LP_MAX_N}, got {N}")
    if mode == "entropic" and N > EXACT_LP_MAX_N:
        raise ValueError(f"dense entropic transport is limited to N <= {EXACT_LP_MAX_N}")
    m0, m1 = r0.mean(), r1.mean()
    if abs(m0 - m1) > MASS_TOL:
        raise ValueError(f"densities carry different mass: {m0!r} vs {m1!r}")
    if cost is None:
        cost = grid_cost_matrix(N, p)
    return wp_masses(r0.ravel() / r0.size, r1.ravel() / r1.size, cost, p, mode, epsilon)


def wp_cloud_to_grid(cloud, rho, p: float) -> TransportResult:
    """Exact ``W_p^p`` between an empirical measure and a grid density."""
    P = _points(cloud)
    r = as_array(rho)
    N = r.shape[0]
    if np.any(r < 0):
        raise ValueError("density must be nonnegative")
    C = pairwise_distance(P, node_points(N), p)
    a = np.full(P.shape[0], 1.0 / P.shape[0])
    b = r.ravel() / r.sum()
    return wp_masses(a, b, C, p, "exact_lp")


# --- sandwich certificate -----------------------------------------------------


def delta_upper(c: float, p: float) -> float:
    """``(1 - c/2)^(-1/(q-1)) - 1`` with ``q = p/(p-1)``, i.e. exponent ``-(p-1)``."""
    if not 0 <= c < 2:
        raise ValueError(f"need 0 <= c < 2, got {c}")
    q = p / (p - 1.0)
    return (1.0 - c / 2.0) ** (-1.0 / (q - 1.0)) - 1.0


def delta_lower(c: float, p: float) -> float:
    """``(p - 1)(c e^c / 2 + e^c - 1)``."""
    if c < 0:
        raise ValueError(f"need c >= 0, got {c}")
    return (p - 1.0) * (c * math.exp(c) / 2.0 + math.exp(c) - 1.0)


def sandwich_c(rho0, rho1) -> float:
    """``2 max_i ||rho_i - 1||_inf``."""
    return 2.0 * max(float(np.max(np.abs(as_array(rho0) - 1.0))),
                     float(np.max(np.abs(as_array(rho1) - 1.0))))


@dataclass(frozen=True)
class SandwichReport:
    p: float
    c: float
    c_diff: float
    energy: float
    w_p_p: float
    delta_upper: float
    delta_lower: float
    lower: float
    upper: float
    slack: float
    residual: float

    @property
    def holds(self) -> bool:
        return self.lower <= self.w_p_p <= self.upper

    @property
    def ratio(self) -> float:
        return self.w_p_p / self.energy if self.energy > 0 else float("nan")


def certify_sandwich(rho0, rho1, p: float, slack: float = 0.02, cost: np.ndarray | None = None,
                     solver_options=None) -> SandwichReport:
    """Solve the q-Poisson equation, the exact grid transport, and compare.

    The bracket is ``[(1 - delta - slack) E, (1 + delta_bar + slack) E]`` with
    ``E = integral |grad phi|^q``.  ``c_diff = ||rho1 - rho0||_inf`` is
    recorded alongside ``c``.
    """
    from .qpoisson import QPoissonProblem, solve_qpoisson

    c = sandwich_c(rho0, rho1)
    if c >= 2:
        raise ValueError(f"sandwich needs c < 2, got c = {c}")
    r0, r1 = as_array(rho0), as_array(rho1)
    du, dl = delta_upper(c, p), delta_lower(c, p)
    rhs = r1 - r0
    if np.max(np.abs(rhs)) == 0:
        E, res = 0.0, 0.0
    else:
        sol = solve_qpoisson(QPoissonProblem.from_densities(r0, r1, p), solver_options)
        E, res = sol.energy, sol.residual_norm
    W = wp_grid(r0, r1, p, cost=cost).cost_p
    return SandwichReport(float(p), c, float(np.max(np.abs(rhs))), E, W, du, dl,
                          (1.0 - dl - slack) * E, (1.0 + du + slack) * E, slack, res)
