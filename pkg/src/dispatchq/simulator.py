"""Stream-then-route simulation of a dispatcher feeding parallel FCFS queues.

A replication draws the whole dispatcher epoch sequence first, routes job
``n`` to ``policy.assignment[n % period]`` and then runs Lindley's
recursion on each queue's trace independently.  Random streams are keyed
by ``(seed, replication, queue)`` so results do not depend on the order
(or thread) in which queues and replications are processed.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import analytic
from .distributions import ArrivalModel, DistributionSpec, dispatcher_interarrival_spec
from .errors import ConfigurationError, InstabilityError
from .policy import PeriodicPolicy, Queue, build_cpk, in_aggregate_class, scale_policy

log = logging.getLogger(__name__)

ARRIVAL_STREAM = 0
QUEUE_STREAM = 1


@dataclass(frozen=True)
class SystemConfig:
    R: int
    k: int
    lam: float
    arrival: ArrivalModel
    service: tuple[DistributionSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "service", tuple(self.service))
        if len(self.service) != self.R:
            raise ConfigurationError(f"need {self.R} service specs, got {len(self.service)}")
        if self.k < 1 or self.R < 1 or not self.lam > 0:
            raise ConfigurationError("need R >= 1, k >= 1 and lam > 0")

    @property
    def mu(self) -> tuple[float, ...]:
        return tuple(1.0 / s.mean() for s in self.service)

    def with_k(self, k: int) -> "SystemConfig":
        return replace(self, k=k)


@dataclass(frozen=True)
class SimPlan:
    jobs_total: int = 200_000
    warmup_fraction: float = 0.2
    replications: int = 1
    seed: int = 0
    batch_count: int = 32
    ecdf_resolution: int = 512

    def __post_init__(self):
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigurationError("warmup_fraction must lie in [0, 1)")
        if self.batch_count < 10:
            raise ConfigurationError("batch_count must be at least 10")
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")


class ECDF:
    """Empirical CDF over a sorted table of points: ``F(t) = #{x_i <= t} / n``.

    Built from the full sample, or from ``resolution`` mid-level quantiles
    of it when a resolution is given.
    """

    def __init__(self, points, n_samples: Optional[int] = None):
        self.points = np.sort(np.asarray(points, dtype=float))
        self.n_samples = self.points.size if n_samples is None else n_samples

    @classmethod
    def from_samples(cls, samples, resolution: Optional[int] = None) -> "ECDF":
        samples = np.asarray(samples, dtype=float)
        if resolution is None or samples.size <= resolution:
            return cls(samples)
        levels = (np.arange(resolution) + 0.5) / resolution
        return cls(np.quantile(samples, levels), n_samples=samples.size)

    def __call__(self, t):
        return np.searchsorted(self.points, np.asarray(t, dtype=float), side="right") / self.points.size

    def table(self) -> tuple[np.ndarray, np.ndarray]:
        """``(t, F(t))`` at the distinct points."""
        t = np.unique(self.points)
        return t, self(t)


MIN_DOMINANCE_SAMPLES = 10_000


def empirical_st_dominates(lower: ECDF, upper: ECDF, tolerance: float = 0.0) -> bool:
    """True when ``lower`` is stochastically smaller than ``upper`` up to ``tolerance``.

    Checks ``F_lower(t) >= F_upper(t) - tolerance`` at every point of both
    tables.  Both ECDFs must come from at least 10^4 samples.
    """
    if min(lower.n_samples, upper.n_samples) < MIN_DOMINANCE_SAMPLES:
        raise ConfigurationError(f"dominance check needs >= {MIN_DOMINANCE_SAMPLES} samples per ECDF")
    grid = np.union1d(lower.points, upper.points)
    return bool(np.all(lower(grid) >= upper(grid) - tolerance))


@dataclass(frozen=True)
class WaitingTimeStats:
    mean: float
    variance: float
    ci_halfwidth: float
    n_samples: int
    ecdf: ECDF = field(repr=False, compare=False)


@dataclass(frozen=True)
class MixtureStats:
    mean: float
    variance: float
    ci_halfwidth: float
    per_queue: dict[Queue, WaitingTimeStats] = field(repr=False)
    weights: dict[Queue, float] = field(repr=False)
    replication_means: tuple[float, ...] = ()


def lindley_trace(service_minus_gap) -> np.ndarray:
    """Waits ``W_n = max(W_{n-1} + x_n, 0)`` from ``W_0 = 0``.

    Vectorized through ``W_n = X_n - min(0, X_1, ..., X_n)`` with ``X``
    the partial sums of ``x``.
    """
    x = np.asarray(service_minus_gap, dtype=float)
    if x.size == 0:
        return x.copy()
    X = np.cumsum(x)
    floor = np.minimum.accumulate(np.minimum(X, 0.0))
    return X - floor


def mixture_variance(means, variances, weights) -> float:
    """Law of total variance for a finite mixture."""
    w = np.asarray(weights, dtype=float)
    if not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ConfigurationError("mixture weights must sum to 1")
    return analytic.mixture_moments(w, means, variances)[1]


def batch_means_ci(batch_means: np.ndarray, confidence: float = 0.95) -> float:
    """Student-t half-width over approximately independent batch (or replication) means."""
    b = np.asarray(batch_means, dtype=float)
    if b.size < 2:
        return math.nan
    return float(stats.t.ppf(0.5 + confidence / 2, b.size - 1) * b.std(ddof=1) / math.sqrt(b.size))


def _batch(x: np.ndarray, count: int) -> np.ndarray:
    # drops the leading remainder so all batches have equal size
    size = x.size // count
    if size == 0:
        return x.copy()
    return x[x.size - size * count :].reshape(count, size).mean(axis=1)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def check_stability(config: SystemConfig, policy: PeriodicPolicy) -> None:
    """Raise unless every queue in use receives ``lam*k*q < mu``."""
    if (policy.R, policy.k) != (config.R, config.k):
        raise ConfigurationError(
            f"policy is for R={policy.R}, k={policy.k} but system has R={config.R}, k={config.k}"
        )
    q = policy.fractions
    for (r, c) in policy.queues_in_use():
        rate = config.lam * config.k * float(q[(r, c)])
        mu = config.mu[r - 1]
        if not rate < mu:
            raise InstabilityError(f"queue ({r},{c}) unstable: arrival rate {rate:g} >= mu {mu:g}")


def dispatcher_epochs(config: SystemConfig, n_jobs: int, rng: np.random.Generator) -> np.ndarray:
    """Arrival epochs of jobs ``0..n_jobs-1`` at the dispatcher."""
    spec = dispatcher_interarrival_spec(config.arrival, config.lam, config.k)
    if spec.kind == "deterministic":
        return spec.params["value"] * np.arange(1, n_jobs + 1, dtype=float)
    return np.cumsum(spec.sample(rng, n_jobs))


def route(policy: PeriodicPolicy, n_jobs: int, offset: int = 0) -> np.ndarray:
    """Flat queue index of jobs ``0..n_jobs-1``; the word is entered at position ``offset``."""
    flat = policy.flat_assignment()
    return flat[(np.arange(n_jobs) + offset) % flat.size]


def queue_job_indices(routes: np.ndarray, n_queues: int) -> list[np.ndarray]:
    order = np.argsort(routes, kind="stable")
    counts = np.bincount(routes, minlength=n_queues)
    return np.split(order, np.cumsum(counts)[:-1])


def queue_waits(epochs: np.ndarray, idx: np.ndarray, service: DistributionSpec, rng) -> np.ndarray:
    """FCFS waits of the jobs ``idx`` (dispatcher order) at one queue."""
    if idx.size == 0:
        return np.empty(0)
    a = epochs[idx]
    s = service.sample(rng, idx.size)
    return np.concatenate([[0.0], lindley_trace(s[:-1] - np.diff(a))])


def queue_arrival_gaps(config: SystemConfig, policy: PeriodicPolicy, n_jobs: int, seed: int = 0) -> dict[Queue, np.ndarray]:
    """Inter-arrival times seen by each queue in replication 0."""
    epochs = dispatcher_epochs(config, n_jobs, _stream(seed, 0, ARRIVAL_STREAM))
    groups = queue_job_indices(route(policy, n_jobs), config.R * config.k)
    return {
        (i // config.k + 1, i % config.k + 1): np.diff(epochs[idx])
        for i, idx in enumerate(groups)
        if idx.size
    }


def _guard(waits: np.ndarray, service_mean: float, queue: Queue) -> None:
    n = waits.size // 10
    if n < 10:
        return
    first, last = waits[:n].mean(), waits[-n:].mean()
    if last > 10.0 * max(first, service_mean):
        raise InstabilityError(
            f"queue {queue}: mean wait grew from {first:.4g} (first decile) to {last:.4g} (last decile)"
        )


def _replicate(config: SystemConfig, policy: PeriodicPolicy, plan: SimPlan, rep: int):
    n = plan.jobs_total
    epochs = dispatcher_epochs(config, n, _stream(plan.seed, rep, ARRIVAL_STREAM))
    groups = queue_job_indices(route(policy, n), config.R * config.k)
    n_warm = int(plan.warmup_fraction * n)
    out = {}
    for i, idx in enumerate(groups):
        if idx.size == 0:
            continue
        queue = (i // config.k + 1, i % config.k + 1)
        svc = config.service[queue[0] - 1]
        w = queue_waits(epochs, idx, svc, _stream(plan.seed, rep, QUEUE_STREAM, i))
        w = w[idx >= n_warm]
        _guard(w, svc.mean(), queue)
        out[queue] = w
    return out


def simulate(config: SystemConfig, policy: PeriodicPolicy, plan: SimPlan, threads: int = 1) -> MixtureStats:
    """Estimate per-queue and mixture waiting-time statistics.

    Per-queue confidence intervals come from batch means (``batch_count``
    batches per replication, pooled).  The mixture interval uses the
    spread of per-replication mixture means when there are at least 8
    replications, and otherwise the conservative sum ``sum q * ci``.
    """
    check_stability(config, policy)
    n_star = policy.fractions.n_star
    if plan.jobs_total < 10 * n_star:
        raise ConfigurationError(f"jobs_total {plan.jobs_total} < 10 * n* = {10 * n_star}")

    reps = range(plan.replications)
    if threads > 1 and plan.replications > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: _replicate(config, policy, plan, r), reps))
    else:
        results = [_replicate(config, policy, plan, r) for r in reps]

    q = policy.fractions
    weights = {queue: float(q[queue]) for queue in policy.queues_in_use()}
    per_queue = {}
    rep_means = np.zeros((plan.replications, len(weights)))
    for j, queue in enumerate(weights):
        parts = [res[queue] for res in results]
        allw = np.concatenate(parts)
        if allw.size < 2:
            raise ConfigurationError(f"queue {queue} has too few post-warmup samples")
        batches = np.concatenate([_batch(x, plan.batch_count) for x in parts])
        rep_means[:, j] = [x.mean() for x in parts]
        per_queue[queue] = WaitingTimeStats(
            mean=float(allw.mean()),
            variance=float(allw.var()),
            ci_halfwidth=batch_means_ci(batches),
            n_samples=int(allw.size),
            ecdf=ECDF.from_samples(allw, plan.ecdf_resolution),
        )
    w = np.array(list(weights.values()))
    means = np.array([s.mean for s in per_queue.values()])
    variances = np.array([s.variance for s in per_queue.values()])
    mix_mean, mix_var = analytic.mixture_moments(w, means, variances)
    by_rep = rep_means @ w
    if plan.replications >= 8:
        ci = batch_means_ci(by_rep)
    else:
        ci = float(w @ np.array([s.ci_halfwidth for s in per_queue.values()]))
    return MixtureStats(mix_mean, mix_var, ci, per_queue, weights, tuple(float(x) for x in by_rep))


def job_indexed_waits(
    config: SystemConfig,
    policy: PeriodicPolicy,
    n_jobs: int,
    replications: int,
    seed: int,
    random_offset: bool = True,
) -> np.ndarray:
    """Waits of dispatcher jobs ``1..n_jobs`` for each replication (rows), no warmup.

    With ``random_offset`` the first served job enters the routing word at a
    uniformly chosen position of its period.
    """
    check_stability(config, policy)
    out = np.empty((replications, n_jobs))
    period = policy.period
    for rep in range(replications):
        offset = int(_stream(seed, rep, 2).integers(period)) if random_offset else 0
        epochs = dispatcher_epochs(config, n_jobs, _stream(seed, rep, ARRIVAL_STREAM))
        groups = queue_job_indices(route(policy, n_jobs, offset), config.R * config.k)
        for i, idx in enumerate(groups):
            if idx.size:
                svc = config.service[i // config.k]
                out[rep, idx] = queue_waits(epochs, idx, svc, _stream(seed, rep, QUEUE_STREAM, i))
    return out


@dataclass(frozen=True)
class SweepRow:
    k: int
    mean: float
    ci_halfwidth: float
    variance: float
    analytic_mean: float
    analytic_variance: float


def convergence_sweep(
    base: PeriodicPolicy,
    config: SystemConfig,
    k_list: Sequence[int],
    plan: SimPlan,
    threads: int = 1,
    scale_jobs: bool = True,
    words: Optional[Sequence[Sequence[int]]] = None,
) -> list[SweepRow]:
    """Simulate a family of round-robin policies at each ``k`` next to the limit values.

    By default the family is the natural scaling of ``base`` (one type word
    for all ``k``).  ``words`` gives one type word per ``k`` instead; they
    must all have the type counts of ``base``.  With ``scale_jobs`` the
    plan's ``jobs_total`` is multiplied by ``k`` so each queue keeps roughly
    the same sample size.
    """
    if words is not None:
        if len(words) != len(k_list):
            raise ConfigurationError("need one type word per k")
        family = [build_cpk(w, k, R=base.R) for w, k in zip(words, k_list)]
        if any(pol.p != base.p for pol in family):
            raise ConfigurationError(f"every type word must have type counts {base.p}")
    else:
        family = [scale_policy(base, k) for k in k_list]
    limit = analytic.limit_summary(base.p, config.lam, config.service)
    rows = []
    for k, pol in zip(k_list, family):
        kplan = replace(plan, jobs_total=plan.jobs_total * k) if scale_jobs else plan
        res = simulate(config.with_k(k), pol, kplan, threads)
        log.info("k=%d mean=%.5g ci=%.3g limit=%.5g", k, res.mean, res.ci_halfwidth, limit.mixture_mean)
        rows.append(SweepRow(k, res.mean, res.ci_halfwidth, res.variance, limit.mixture_mean, limit.mixture_variance))
    return rows


@dataclass(frozen=True)
class BoundRow:
    policy_id: str
    mean: float
    ci_halfwidth: float
    bound: float

    @property
    def respects_bound(self) -> bool:
        return self.mean + 3 * self.ci_halfwidth >= self.bound


def lower_bound_check(
    config: SystemConfig,
    p: Sequence[int],
    policies: Sequence[tuple[str, PeriodicPolicy]],
    plan: SimPlan,
    threads: int = 1,
) -> list[BoundRow]:
    """Simulated mean of each policy against the limiting lower bound for ``p``."""
    bound = analytic.limit_summary(p, config.lam, config.service).mixture_mean
    rows = []
    for name, pol in policies:
        if not in_aggregate_class(pol, p):
            raise ConfigurationError(f"policy {name} does not send fraction p_r/|p| to each type")
        res = simulate(config, pol, plan, threads)
        rows.append(BoundRow(name, res.mean, res.ci_halfwidth, bound))
    return rows
