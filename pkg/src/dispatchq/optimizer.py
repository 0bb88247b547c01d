"""Choosing routing fractions: minimize the limiting mean wait over the stable simplex."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .analytic import InfeasibleError, objective, type_cost
from .distributions import DistributionSpec
from .errors import ConfigurationError


@dataclass(frozen=True)
class FeasibleSet:
    """``{x : sum(x) = 1, 0 <= x_r, lam*x_r <= (1-slack)*mu_r}``."""

    R: int
    lam: float
    mu: tuple[float, ...]
    slack: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        if len(self.mu) != self.R:
            raise ConfigurationError("need one service rate per type")
        if not 0 < self.slack < 1:
            raise ConfigurationError("slack must lie in (0, 1)")

    @classmethod
    def for_services(cls, lam: float, services: Sequence[DistributionSpec], slack: float = 1e-3):
        return cls(len(services), lam, tuple(1.0 / s.mean() for s in services), slack)

    @property
    def upper(self) -> np.ndarray:
        return np.minimum(1.0, (1.0 - self.slack) * np.asarray(self.mu) / self.lam)

    def is_empty(self) -> bool:
        return bool(self.upper.sum() < 1.0)

    def contains(self, x, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            abs(x.sum() - 1) <= 1e-9 and np.all(x >= -atol) and np.all(x <= self.upper + atol)
        )

    def project(self, y) -> np.ndarray:
        return project_capped_simplex(y, self.upper)


def project_capped_simplex(y, upper) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{x : sum x = 1, 0 <= x <= upper}``."""
    y = np.asarray(y, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def excess(tau):
        return np.clip(y - tau, 0.0, upper).sum() - 1.0

    lo, hi = float(np.min(y - upper)) - 1.0, float(np.max(y))
    tau = optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    x = np.clip(y - tau, 0.0, upper)
    # absorb the last rounding error in the coordinate with the most room
    free = np.flatnonzero((x > 0) & (x < upper))
    if free.size:
        x[free[0]] += 1.0 - x.sum()
    return x


@dataclass(frozen=True)
class OptimizationResult:
    x_opt: np.ndarray
    value: float
    iterations: int
    certificate: float
    trajectory: list = field(default_factory=list, repr=False)


def fd_gradient(x: np.ndarray, lam: float, services, rel_step: float = 1e-5) -> np.ndarray:
    """Coordinate-wise central differences of the (separable) objective; forward at ``x_r = 0``."""
    g = np.empty_like(x)
    for r, (xr, svc) in enumerate(zip(x, services)):
        h = rel_step * max(xr, 0.1)
        if xr - h < 0:
            g[r] = (type_cost(xr + h, lam, svc) - type_cost(xr, lam, svc)) / h
        else:
            g[r] = (type_cost(xr + h, lam, svc) - type_cost(xr - h, lam, svc)) / (2 * h)
    return g


def _certificate(x: np.ndarray, g: np.ndarray, upper: np.ndarray) -> float:
    # steepest feasible exchange of mass from a type that has some to one with room
    worst = 0.0
    for i in np.flatnonzero(x > 1e-12):
        for j in np.flatnonzero(x < upper - 1e-12):
            if i != j:
                worst = max(worst, (g[i] - g[j]) / math.sqrt(2))
    return worst


def minimize(
    feasible: FeasibleSet,
    services: Sequence[DistributionSpec],
    tol: float = 1e-7,
    x0: Optional[Sequence[float]] = None,
    max_iter: int = 5000,
) -> OptimizationResult:
    """Projected gradient descent with Armijo backtracking along the projection arc.

    Stops when ``|x - P(x - grad)|`` drops below ``tol``, with the gradient
    taken of the objective divided by its value at the start point, so the
    rule does not depend on the units (at light load waits are ~1e-18).
    The objective is convex, so the stopping point is a global minimizer
    up to ``tol``.
    """
    if feasible.is_empty():
        raise InfeasibleError(
            f"no stable routing: lambda={feasible.lam} exceeds the slack-shrunk capacity"
        )
    lam = feasible.lam
    upper = feasible.upper

    x = feasible.project(np.full(feasible.R, 1.0 / feasible.R) if x0 is None else x0)
    f0 = objective(x, lam, services)
    scale = f0 if f0 > 0 else 1.0

    def f(x):
        return objective(x, lam, services) / scale

    fx = f0 / scale
    step = 1.0
    trajectory = [(x.copy(), f0)]
    it = 0
    for it in range(1, max_iter + 1):
        g = fd_gradient(x, lam, services) / scale
        if np.linalg.norm(x - feasible.project(x - g)) < tol:
            break
        step *= 2.0
        while True:
            x_new = feasible.project(x - step * g)
            d = x_new - x
            f_new = f(x_new)
            if f_new <= fx + g @ d + (d @ d) / (2 * step) or step < 1e-14:
                break
            step /= 2.0
        if np.allclose(x_new, x, rtol=0, atol=1e-16):
            break
        x, fx = x_new, f_new
        trajectory.append((x.copy(), fx * scale))
    g = fd_gradient(x, lam, services)
    return OptimizationResult(x, fx * scale, it, _certificate(x, g, upper), trajectory)


def _round_to_norm(x: np.ndarray, D: int) -> np.ndarray:
    # largest-remainder rounding of x*D to integers >= 1 summing to D (needs D >= len(x))
    raw = x * D
    p = np.maximum(np.floor(raw).astype(int), 1)
    while p.sum() > D:
        room = np.flatnonzero(p > 1)
        p[room[np.argmin(raw[room] - p[room])]] -= 1
    short = D - p.sum()
    order = np.argsort(-(raw - p), kind="stable")
    p[order[:short]] += 1
    return p


def rationalize(
    x: Sequence[float],
    max_norm: int,
    lam: float,
    services: Sequence[DistributionSpec],
) -> tuple[int, ...]:
    """Integer type counts ``p`` with ``|p| <= max_norm`` approximating the fractions ``x``.

    For every denominator ``D`` in ``R..max_norm`` the fractions are rounded
    to ``p/D`` (largest remainders, every ``p_r >= 1``); the candidate with the smallest
    objective wins, ties going to the smaller ``|p|``.  When some candidate
    reproduces ``x`` exactly, the smallest such one is returned.
    """
    x = np.asarray(x, dtype=float)
    mu = np.array([1.0 / s.mean() for s in services])
    best, exact = None, None
    for D in range(x.size, max_norm + 1):
        p = _round_to_norm(x, D)
        if np.any(lam * p / D >= mu):
            continue
        if exact is None and np.all(np.abs(p / D - x) <= 1e-12):
            exact = tuple(int(v) for v in p)
        val = objective(p / D, lam, services)
        if best is None or val < best[0] - 1e-15:
            best = (val, tuple(int(v) for v in p))
    if exact is not None:
        return exact
    if best is None:
        raise InfeasibleError(f"no stable integer vector with |p| <= {max_norm} approximates {x}")
    return best[1]


def convexity_probe(
    services: Sequence[DistributionSpec],
    lam: float,
    pairs: Sequence[tuple[Sequence[float], Sequence[float]]],
    m: int = 9,
) -> float:
    """Largest ``f(t*x + (1-t)*y) - t*f(x) - (1-t)*f(y)`` over the pairs and ``m`` interior ``t``."""
    worst = -math.inf
    thetas = np.arange(1, m + 1) / (m + 1)
    for x, y in pairs:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if np.array_equal(x, y):
            worst = max(worst, 0.0)
            continue
        fx, fy = objective(x, lam, services), objective(y, lam, services)
        for t in thetas:
            z = t * x + (1 - t) * y
            worst = max(worst, objective(z, lam, services) - (t * fx + (1 - t) * fy))
    return worst
