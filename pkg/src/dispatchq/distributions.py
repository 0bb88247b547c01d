"""Positive parametric distributions and the dispatcher arrival models.

Every kind here has closed-form raw moments (at least up to order 5), a
closed-form CDF and partial mean, and a finite moment generating function
on some interval ``[0, theta_max)``.  The analytic solvers rely on all
three.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import stats

from .errors import ConfigurationError

KINDS = ("deterministic", "exponential", "erlang", "hyperexponential2", "uniform")

_PARAM_NAMES = {
    "deterministic": ("value",),
    "exponential": ("rate",),
    "erlang": ("shape", "rate"),
    "hyperexponential2": ("weight", "rate1", "rate2"),
    "uniform": ("low", "high"),
}


@dataclass(frozen=True)
class DistributionSpec:
    """A positive distribution given by ``kind`` and named parameters.

    Parameters (all in time units, rates in 1/time):

    ============================  =====================================
    ``deterministic``             ``value`` > 0
    ``exponential``               ``rate`` > 0
    ``erlang``                    integer ``shape`` >= 1, ``rate`` > 0
    ``hyperexponential2``         ``weight`` in (0,1), ``rate1``, ``rate2``
    ``uniform``                   0 < ``low`` < ``high``
    ============================  =====================================
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PARAM_NAMES:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        names = _PARAM_NAMES[self.kind]
        if set(self.params) != set(names):
            raise ConfigurationError(
                f"{self.kind} needs parameters {names}, got {tuple(self.params)}"
            )
        params = {k: float(v) for k, v in self.params.items()}
        for k, v in params.items():
            if not math.isfinite(v):
                raise ConfigurationError(f"{self.kind}.{k} must be finite")
        ok = {
            "deterministic": lambda p: p["value"] > 0,
            "exponential": lambda p: p["rate"] > 0,
            "erlang": lambda p: p["rate"] > 0 and p["shape"] >= 1 and p["shape"] == int(p["shape"]),
            "hyperexponential2": lambda p: 0 < p["weight"] < 1 and p["rate1"] > 0 and p["rate2"] > 0,
            "uniform": lambda p: 0 < p["low"] < p["high"],
        }[self.kind](params)
        if not ok:
            raise ConfigurationError(f"invalid parameters for {self.kind}: {params}")
        object.__setattr__(self, "params", params)

    # -- constructors ---------------------------------------------------
    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", {"value": value})

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", {"rate": rate})

    @classmethod
    def erlang(cls, shape, rate):
        return cls("erlang", {"shape": shape, "rate": rate})

    @classmethod
    def hyperexponential2(cls, weight, rate1, rate2):
        return cls("hyperexponential2", {"weight": weight, "rate1": rate1, "rate2": rate2})

    @classmethod
    def uniform(cls, low, high):
        return cls("uniform", {"low": low, "high": high})

    @classmethod
    def from_dict(cls, d: Mapping) -> "DistributionSpec":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise ConfigurationError("distribution entry lacks 'kind'") from None
        return cls(kind, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    # -- moments --------------------------------------------------------
    def raw_moment(self, order: int) -> float:
        """Exact ``E[S**order]`` for ``order`` in 1..5 (higher orders also work)."""
        if int(order) != order or order < 1:
            raise ConfigurationError(f"moment order must be a positive integer, got {order}")
        n = int(order)
        p = self.params
        if self.kind == "deterministic":
            return p["value"] ** n
        if self.kind == "exponential":
            return math.factorial(n) / p["rate"] ** n
        if self.kind == "erlang":
            m = int(p["shape"])
            return math.prod(range(m, m + n)) / p["rate"] ** n
        if self.kind == "hyperexponential2":
            w = p["weight"]
            return math.factorial(n) * (w / p["rate1"] ** n + (1 - w) / p["rate2"] ** n)
        a, b = p["low"], p["high"]
        return (b ** (n + 1) - a ** (n + 1)) / ((n + 1) * (b - a))

    def mean(self) -> float:
        return self.raw_moment(1)

    def variance(self) -> float:
        m1 = self.raw_moment(1)
        return max(self.raw_moment(2) - m1 * m1, 0.0)

    # -- sampling -------------------------------------------------------
    def sample(self, rng: np.random.Generator, size=None):
        """Draw variates from ``rng``; a scalar when ``size`` is None."""
        p = self.params
        if self.kind == "deterministic":
            return p["value"] if size is None else np.full(size, p["value"])
        if self.kind == "exponential":
            return rng.exponential(1.0 / p["rate"], size)
        if self.kind == "erlang":
            return rng.gamma(p["shape"], 1.0 / p["rate"], size)
        if self.kind == "hyperexponential2":
            u = rng.random(size)
            e = rng.exponential(1.0, size)
            rate = np.where(u < p["weight"], p["rate1"], p["rate2"])
            out = e / rate
            return float(out) if size is None else out
        return rng.uniform(p["low"], p["high"], size)

    # -- distribution functions ----------------------------------------
    def sf(self, x):
        """Survival function ``P(S > x)``, vectorized."""
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "deterministic":
            return (x < p["value"]).astype(float)
        if self.kind == "exponential":
            return np.exp(-p["rate"] * np.maximum(x, 0.0))
        if self.kind == "erlang":
            return stats.gamma.sf(x, p["shape"], scale=1.0 / p["rate"])
        if self.kind == "hyperexponential2":
            xx = np.maximum(x, 0.0)
            w = p["weight"]
            return w * np.exp(-p["rate1"] * xx) + (1 - w) * np.exp(-p["rate2"] * xx)
        a, b = p["low"], p["high"]
        return np.clip((b - x) / (b - a), 0.0, 1.0)

    def cdf(self, x):
        return 1.0 - self.sf(x)

    def tail_mean(self, x):
        """Partial mean ``E[S; S > x]``, vectorized."""
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "deterministic":
            return np.where(x < p["value"], p["value"], 0.0)
        if self.kind == "exponential":
            xx = np.maximum(x, 0.0)
            mu = p["rate"]
            return np.exp(-mu * xx) * (xx + 1.0 / mu)
        if self.kind == "erlang":
            m, th = p["shape"], p["rate"]
            return (m / th) * stats.gamma.sf(x, m + 1, scale=1.0 / th)
        if self.kind == "hyperexponential2":
            xx = np.maximum(x, 0.0)
            w, m1, m2 = p["weight"], p["rate1"], p["rate2"]
            return w * np.exp(-m1 * xx) * (xx + 1 / m1) + (1 - w) * np.exp(-m2 * xx) * (xx + 1 / m2)
        a, b = p["low"], p["high"]
        xx = np.clip(x, a, b)
        return (b * b - xx * xx) / (2 * (b - a))

    def upper_support(self) -> float:
        """Essential supremum of the support (``inf`` for unbounded kinds)."""
        if self.kind == "deterministic":
            return self.params["value"]
        if self.kind == "uniform":
            return self.params["high"]
        return math.inf

    def quantile_upper(self, tail: float) -> float:
        """Smallest ``x`` with ``P(S > x) <= tail`` (approximately, for the bounded kinds exactly)."""
        ub = self.upper_support()
        if math.isfinite(ub):
            return ub
        p = self.params
        if self.kind == "exponential":
            return -math.log(tail) / p["rate"]
        if self.kind == "erlang":
            return float(stats.gamma.isf(tail, p["shape"], scale=1.0 / p["rate"]))
        slow = min(p["rate1"], p["rate2"])
        return -math.log(tail) / slow

    # -- transforms -----------------------------------------------------
    def mgf_limit(self) -> float:
        """Supremum of the arguments where ``E[exp(theta S)]`` is finite."""
        p = self.params
        if self.kind == "exponential":
            return p["rate"]
        if self.kind == "erlang":
            return p["rate"]
        if self.kind == "hyperexponential2":
            return min(p["rate1"], p["rate2"])
        return math.inf

    def log_mgf(self, theta: float) -> float:
        """``log E[exp(theta S)]`` for ``0 <= theta < mgf_limit()``."""
        p = self.params
        if theta == 0:
            return 0.0
        if self.kind == "deterministic":
            return theta * p["value"]
        if self.kind == "exponential":
            return math.log(p["rate"] / (p["rate"] - theta))
        if self.kind == "erlang":
            return p["shape"] * math.log(p["rate"] / (p["rate"] - theta))
        if self.kind == "hyperexponential2":
            w, m1, m2 = p["weight"], p["rate1"], p["rate2"]
            return math.log(w * m1 / (m1 - theta) + (1 - w) * m2 / (m2 - theta))
        a, b = p["low"], p["high"]
        # log((e^{tb} - e^{ta}) / (t (b - a))) computed without overflow
        return theta * b + math.log(-math.expm1(-theta * (b - a))) - math.log(theta * (b - a))

    def phase_type(self) -> Optional[tuple[np.ndarray, np.ndarray]]:
        """``(alpha, S)`` phase-type representation, or None for non-PH kinds."""
        p = self.params
        if self.kind == "exponential":
            return np.array([1.0]), np.array([[-p["rate"]]])
        if self.kind == "erlang":
            m, th = int(p["shape"]), p["rate"]
            gen = -th * np.eye(m) + th * np.eye(m, k=1)
            alpha = np.zeros(m)
            alpha[0] = 1.0
            return alpha, gen
        if self.kind == "hyperexponential2":
            w = p["weight"]
            return np.array([w, 1 - w]), np.diag([-p["rate1"], -p["rate2"]])
        return None

    # -- rescaling ------------------------------------------------------
    def scaled(self, factor: float) -> "DistributionSpec":
        """Law of ``factor * S``."""
        if not factor > 0:
            raise ConfigurationError("scale factor must be positive")
        p = self.params
        if self.kind == "deterministic":
            return DistributionSpec.deterministic(p["value"] * factor)
        if self.kind == "exponential":
            return DistributionSpec.exponential(p["rate"] / factor)
        if self.kind == "erlang":
            return DistributionSpec.erlang(p["shape"], p["rate"] / factor)
        if self.kind == "hyperexponential2":
            return DistributionSpec.hyperexponential2(p["weight"], p["rate1"] / factor, p["rate2"] / factor)
        return DistributionSpec.uniform(p["low"] * factor, p["high"] * factor)

    def with_mean(self, mean: float) -> "DistributionSpec":
        return self.scaled(mean / self.mean())


def sample(spec: DistributionSpec, stream: np.random.Generator) -> float:
    """One variate of ``spec`` drawn from ``stream``."""
    return float(spec.sample(stream))


def raw_moment(spec: DistributionSpec, order: int) -> float:
    return spec.raw_moment(order)


ARRIVAL_CASES = ("renewal", "poisson", "deterministic")


@dataclass(frozen=True)
class ArrivalModel:
    """Dispatcher arrival process at scale 1.

    ``renewal`` uses ``base_spec`` only for its shape: at scale ``k`` the
    inter-arrival law is ``base_spec`` rescaled to mean ``1/(lam*k)``, so
    its variance shrinks like ``k**-2``.
    """

    case: str = "poisson"
    base_spec: Optional[DistributionSpec] = None

    def __post_init__(self):
        if self.case not in ARRIVAL_CASES:
            raise ConfigurationError(f"unknown arrival case {self.case!r}")
        if self.case == "renewal" and self.base_spec is None:
            raise ConfigurationError("renewal arrivals need a base_spec")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArrivalModel":
        d = dict(d)
        base = d.get("base_spec")
        return cls(d.get("case", "poisson"), DistributionSpec.from_dict(base) if base else None)

    def to_dict(self) -> dict:
        out = {"case": self.case}
        if self.base_spec is not None:
            out["base_spec"] = self.base_spec.to_dict()
        return out


def dispatcher_interarrival_spec(model: ArrivalModel, lam: float, k: int) -> DistributionSpec:
    """Inter-arrival law seen by the dispatcher of the ``k``-scaled system (rate ``lam*k``)."""
    if not lam > 0 or k < 1:
        raise ConfigurationError("need lam > 0 and k >= 1")
    rate = lam * k
    if model.case == "poisson":
        return DistributionSpec.exponential(rate)
    if model.case == "deterministic":
        return DistributionSpec.deterministic(1.0 / rate)
    return model.base_spec.with_mean(1.0 / rate)
