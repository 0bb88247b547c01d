"""Stationary waits of D/GI/1 queues and the limiting mixture over queue types.

Three routes compute the stationary wait of a D/GI/1 queue with
deterministic inter-arrival time ``T``:

* :func:`dm1_wait` -- exponential service, closed form up to the root
  ``sigma`` of ``sigma = exp(-mu*T*(1-sigma))``;
* :func:`ph_dgi1_wait` -- phase-type service (exponential, Erlang,
  hyperexponential); the wait is itself phase-type with an atom at 0;
* :func:`dgi1_wait` -- any service kind, by iterating the distributional
  Lindley map on a uniform grid until the law stops moving.

:func:`wait_moments` picks the cheapest exact route for the kind.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import fft, linalg, optimize

from .distributions import DistributionSpec
from .errors import ConfigurationError, InstabilityError, NumericError

DEFAULT_CELLS_PER_T = 2048
DEFAULT_TAIL = 1e-10
GRID_TOL = 1e-10
GRID_MAX_ITER = 200_000
SERVICE_TAIL = 1e-14


class InfeasibleError(InstabilityError):
    """Routing fractions that overload some queue type or leave the simplex."""


@dataclass(frozen=True)
class WaitMoments:
    mean: float
    variance: float


@dataclass(frozen=True)
class DM1Result:
    mean: float
    variance: float
    sigma: float


def dm1_sigma(T: float, mu: float) -> float:
    """Root in (0, 1) of ``sigma = exp(-mu*T*(1 - sigma))``."""
    a = mu * T
    if not a > 1:
        raise InstabilityError(f"D/M/1 needs mu*T > 1, got {a}")
    s = 0.0
    # plain iteration converges monotonically from 0; it is slow only near a = 1
    for _ in range(5000):
        s_new = math.exp(-a * (1.0 - s))
        if abs(s_new - s) < 1e-16:
            return s_new
        s = s_new

    def f(x):
        return x - math.exp(-a * (1.0 - x))

    eps = (a - 1.0) / (a * a)
    while f(1.0 - eps) <= 0:
        eps /= 2
        if eps < 1e-300:
            raise NumericError(f"cannot bracket the sigma root for mu*T={a}")
    lo, hi = 0.0, 1.0 - eps
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-17:
            break
    return 0.5 * (lo + hi)


def dm1_wait(T: float, mu: float) -> DM1Result:
    """Stationary wait of D/M/1: atom ``1-sigma`` at 0, exponential tail of rate ``mu*(1-sigma)``."""
    sigma = dm1_sigma(T, mu)
    tail_rate = mu * (1.0 - sigma)
    return DM1Result(
        mean=sigma / tail_rate,
        variance=sigma * (2.0 - sigma) / tail_rate**2,
        sigma=sigma,
    )


@dataclass(frozen=True)
class PHWait:
    mean: float
    variance: float
    alpha: np.ndarray  # defective initial vector; 1 - alpha.sum() is the atom at 0
    generator: np.ndarray


def ph_dgi1_wait(T: float, service: DistributionSpec, tol: float = 1e-14) -> PHWait:
    """Stationary wait of D/PH/1.

    With service ``PH(a, S)`` and exit vector ``s = -S 1`` the ladder-height
    vector solves ``b = a expm((S + s b) T)`` and the wait is ``PH(b, S + s b)``.
    """
    rep = service.phase_type()
    if rep is None:
        raise ConfigurationError(f"{service.kind} service has no phase-type representation")
    if not service.mean() < T:
        raise InstabilityError(f"D/GI/1 unstable: mean service {service.mean()} >= T={T}")
    a, S = rep
    s = -S.sum(axis=1)

    def step(b):
        return a @ linalg.expm((S + np.outer(s, b)) * T)

    b = np.zeros_like(a)
    converged = False
    for _ in range(200):
        b_new = step(b)
        if np.max(np.abs(b_new - b)) < tol:
            b, converged = b_new, True
            break
        b = b_new
    if not converged:
        sol = optimize.root(lambda x: x - step(x), b, method="hybr", tol=1e-15)
        if sol.success and np.all(sol.x >= -1e-12) and sol.x.sum() < 1 - 1e-12:
            b = np.clip(sol.x, 0.0, None)
        for _ in range(1_000_000):
            b_new = step(b)
            if np.max(np.abs(b_new - b)) < tol:
                b, converged = b_new, True
                break
            b = b_new
    if not converged:
        raise NumericError(f"phase-type ladder iteration did not converge (T={T})")
    M = S + np.outer(s, b)
    ones = np.ones_like(b)
    x1 = linalg.solve(-M, ones)
    x2 = linalg.solve(-M, x1)
    m1 = float(b @ x1)
    m2 = float(2.0 * b @ x2)
    return PHWait(m1, max(m2 - m1 * m1, 0.0), b, M)


@dataclass(frozen=True)
class Dgi1Instance:
    """D/GI/1 queue with constant inter-arrival ``T`` and i.i.d. service ``service``."""

    T: float
    service: DistributionSpec

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError("inter-arrival time must be positive")
        if not self.service.mean() < self.T:
            raise InstabilityError(
                f"D/GI/1 unstable: mean service {self.service.mean():g} >= T={self.T:g}"
            )


@dataclass(frozen=True)
class GridWait:
    mean: float
    variance: float
    grid: np.ndarray
    mass: np.ndarray
    iterations: int

    def cdf(self, t):
        idx = np.searchsorted(self.grid, np.asarray(t, dtype=float), side="right")
        c = np.concatenate([[0.0], np.cumsum(self.mass)])
        return c[idx]


def kingman_decay_rate(T: float, service: DistributionSpec) -> float:
    """Positive root ``theta`` of ``log E exp(theta*S) = theta*T`` (inf when ``S <= T`` a.s.)."""
    if service.upper_support() <= T:
        return math.inf

    def h(theta):
        return service.log_mgf(theta) - theta * T

    lim = service.mgf_limit()
    if math.isfinite(lim):
        hi = lim * 0.5
        while h(hi) <= 0:
            hi = lim - (lim - hi) / 2
            if lim - hi < 1e-14 * lim:
                raise NumericError("cannot bracket the Kingman exponent")
    else:
        hi = 1.0 / T
        while h(hi) <= 0:
            hi *= 2
    lo = hi
    while h(lo) >= 0:
        lo /= 2
        if lo < 1e-300:
            raise NumericError("cannot bracket the Kingman exponent")
    return optimize.brentq(h, lo, hi, xtol=1e-15, rtol=1e-14)


def discretize_service(service: DistributionSpec, step: float) -> np.ndarray:
    """Mean-preserving lattice law of ``service`` on ``0, step, 2*step, ...``.

    Mass inside each cell is split linearly between its two end points, so
    the lattice law has the exact mean and a variance larger by at most
    ``step**2 / 4``.
    """
    top = service.quantile_upper(SERVICE_TAIL)
    L = int(math.ceil(top / step)) + 1
    edges = step * np.arange(L + 1)
    sf = service.sf(edges)
    tm = service.tail_mean(edges)
    dF = sf[:-1] - sf[1:]
    dM = tm[:-1] - tm[1:]
    upper = np.clip((dM - edges[:-1] * dF) / step, 0.0, None)
    lower = np.clip(dF - upper, 0.0, None)
    mass = np.zeros(L + 1)
    mass[:-1] += lower
    mass[1:] += upper
    mass[-1] += sf[-1]
    return mass / mass.sum()


def dgi1_wait(
    inst: Dgi1Instance,
    grid_step: Optional[float] = None,
    tail_quantile: float = DEFAULT_TAIL,
    tol: float = GRID_TOL,
    max_iter: int = GRID_MAX_ITER,
) -> GridWait:
    """Stationary D/GI/1 wait by fixed-point iteration of the Lindley map on a grid.

    The grid step is ``T/2048`` unless given (it is shrunk so that ``T`` is
    a whole number of cells).  The grid stops where the exponential tail
    bound ``exp(-theta*x)`` falls below ``tail_quantile``; mass pushed past
    the end stays in the last cell.  Iteration starts from the point mass at
    0 and stops when successive CDFs differ by less than ``tol`` in sup norm.
    """
    T, service = inst.T, inst.service
    theta = kingman_decay_rate(T, service)
    if math.isinf(theta):
        return GridWait(0.0, 0.0, np.array([0.0]), np.array([1.0]), 0)

    if grid_step is None:
        cells = DEFAULT_CELLS_PER_T
    else:
        cells = int(math.ceil(T / grid_step - 1e-9))
    h = T / cells
    x_max = -math.log(tail_quantile) / theta
    M = int(math.ceil(x_max / h)) + 1
    s = discretize_service(service, h)
    L = s.size
    nfft = fft.next_fast_len(M + L, real=True)
    s_hat = fft.rfft(s, nfft)

    w = np.zeros(M)
    w[0] = 1.0
    cw = np.cumsum(w)
    for it in range(1, max_iter + 1):
        z = fft.irfft(fft.rfft(w, nfft) * s_hat, nfft)[: M + L - 1]
        np.clip(z, 0.0, None, out=z)
        new = np.empty(M)
        new[0] = z[: cells + 1].sum()
        body = z[cells + 1 : cells + M]
        new[1 : 1 + body.size] = body
        new[1 + body.size :] = 0.0
        new[-1] += z[cells + M :].sum()
        new /= new.sum()
        c_new = np.cumsum(new)
        delta = np.max(np.abs(c_new - cw))
        w, cw = new, c_new
        if delta < tol:
            break
    else:
        raise NumericError(
            f"Lindley grid iteration not converged after {max_iter} steps "
            f"(T={T}, step={h:g}, last sup-change={delta:.3g})"
        )
    t = h * np.arange(M)
    mean = float(t @ w)
    var = float(((t - mean) ** 2) @ w)
    return GridWait(mean, var, t, w, it)


def wait_moments(T: float, service: DistributionSpec, method: str = "auto") -> WaitMoments:
    """Mean and variance of the D/GI/1 stationary wait.

    ``method="auto"`` uses the closed form for exponential service, the
    phase-type solution for Erlang/hyperexponential, and the grid otherwise;
    ``"grid"`` forces the grid.
    """
    return _wait_moments(float(T), service, method)


@lru_cache(maxsize=8192)
def _wait_moments(T: float, service: DistributionSpec, method: str) -> WaitMoments:
    inst = Dgi1Instance(T, service)
    if method == "grid":
        g = dgi1_wait(inst)
        return WaitMoments(g.mean, g.variance)
    if method != "auto":
        raise ConfigurationError(f"unknown method {method!r}")
    if service.kind == "exponential":
        r = dm1_wait(T, service.params["rate"])
        return WaitMoments(r.mean, r.variance)
    if service.phase_type() is not None:
        r = ph_dgi1_wait(T, service)
        return WaitMoments(r.mean, r.variance)
    g = dgi1_wait(inst)
    return WaitMoments(g.mean, g.variance)


@dataclass(frozen=True)
class LimitSummary:
    p: tuple[int, ...]
    lam: float
    weights: tuple[float, ...]
    T: tuple[float, ...]
    per_type: tuple[WaitMoments, ...]
    mixture_mean: float
    mixture_variance: float

    @property
    def within_variance(self) -> float:
        return sum(w * m.variance for w, m in zip(self.weights, self.per_type))

    def to_dict(self) -> dict:
        return {
            "p": list(self.p),
            "lambda": self.lam,
            "mixture_mean": self.mixture_mean,
            "mixture_variance": self.mixture_variance,
            "per_type": [
                {"r": r, "weight": w, "T": t, "mean": m.mean, "variance": m.variance}
                for r, (w, t, m) in enumerate(zip(self.weights, self.T, self.per_type), start=1)
            ],
        }


def mixture_moments(weights: Sequence[float], means: Sequence[float], variances: Sequence[float]):
    """Mean and variance of a finite mixture (law of total variance)."""
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    mean = float(w @ m)
    return mean, float(w @ (v + (m - mean) ** 2))


def limit_summary(p: Sequence[int], lam: float, services: Sequence[DistributionSpec], method: str = "auto") -> LimitSummary:
    """Limiting mixture of D/GI/1 waits with weights ``p_r/|p|`` and ``T_r = |p|/(p_r*lam)``."""
    p = tuple(int(x) for x in p)
    if len(p) != len(services):
        raise ConfigurationError("p and services must have the same length")
    norm = sum(p)
    per_type, Ts = [], []
    for r, (pr, svc) in enumerate(zip(p, services), start=1):
        T = norm / (pr * lam)
        if not svc.mean() < T:
            raise InstabilityError(
                f"type {r} unstable: lambda*p_r/|p| = {lam * pr / norm:g} >= mu_r = {1 / svc.mean():g}"
            )
        Ts.append(T)
        per_type.append(wait_moments(T, svc, method))
    weights = tuple(pr / norm for pr in p)
    mean, var = mixture_moments(weights, [m.mean for m in per_type], [m.variance for m in per_type])
    return LimitSummary(p, lam, weights, tuple(Ts), tuple(per_type), mean, var)


def type_cost(x: float, lam: float, service: DistributionSpec, method: str = "auto") -> float:
    """``x * E W`` for a D/GI/1 queue fed at rate ``lam*x`` (0 when ``x == 0``)."""
    if x == 0:
        return 0.0
    if x < 0 or not lam * x * service.mean() < 1:
        raise InfeasibleError(f"fraction {x} infeasible at lambda={lam}")
    return x * wait_moments(1.0 / (lam * x), service, method).mean


def objective(x: Sequence[float], lam: float, services: Sequence[DistributionSpec], method: str = "auto") -> float:
    """Limiting mean wait when a fraction ``x_r`` of jobs goes to type ``r``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(services),):
        raise ConfigurationError("x and services must have the same length")
    if np.any(x < -1e-12) or abs(x.sum() - 1.0) > 1e-9:
        raise InfeasibleError(f"x = {x} is not on the simplex")
    return float(sum(type_cost(max(xr, 0.0), lam, svc, method) for xr, svc in zip(x, services)))
