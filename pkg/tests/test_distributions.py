import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dispatchq import ConfigurationError
from dispatchq.distributions import (
    ArrivalModel,
    DistributionSpec as D,
    dispatcher_interarrival_spec,
    raw_moment,
    sample,
)

ALL_KINDS = [
    D.deterministic(2.0),
    D.exponential(1.5),
    D.erlang(4, 4.0),
    D.hyperexponential2(0.3, 0.5, 3.0),
    D.uniform(0.5, 2.5),
]


def test_deterministic_point_mass():
    rng = np.random.default_rng(0)
    assert all(sample(D.deterministic(2.0), rng) == 2.0 for _ in range(10))


def test_exponential_sample_mean():
    x = D.exponential(1.0).sample(np.random.default_rng(1), 10**6)
    assert abs(x.mean() - 1.0) < 3 * x.std() / math.sqrt(x.size)


def test_erlang_variance():
    assert D.erlang(4, 4).variance() == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize(
    "spec, order, expected",
    [
        (D.exponential(1.0), 3, 6.0),
        (D.deterministic(1.7), 4, 1.7**4),
        (D.erlang(2, 2), 1, 1.0),
        (D.uniform(1, 3), 2, (27 - 1) / 6),
    ],
)
def test_raw_moment_values(spec, order, expected):
    assert raw_moment(spec, order) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("spec", ALL_KINDS, ids=lambda s: s.kind)
def test_moments_match_samples(spec):
    x = spec.sample(np.random.default_rng(7), 10**6)
    n = x.size
    se_mean = math.sqrt(spec.variance() / n) or 1e-12
    assert abs(x.mean() - spec.mean()) <= 4 * se_mean + 1e-12
    # standard error of the sample variance from the fourth central moment
    m = [spec.raw_moment(i) for i in range(1, 5)]
    mu4 = m[3] - 4 * m[2] * m[0] + 6 * m[1] * m[0] ** 2 - 3 * m[0] ** 4
    se_var = math.sqrt(max(mu4 - spec.variance() ** 2, 0) / n) or 1e-12
    assert abs(x.var() - spec.variance()) <= 4 * se_var + 1e-12


@pytest.mark.parametrize("spec", ALL_KINDS, ids=lambda s: s.kind)
def test_all_five_moments_finite(spec):
    for order in range(1, 6):
        assert math.isfinite(spec.raw_moment(order)) and spec.raw_moment(order) > 0


@pytest.mark.parametrize("spec", ALL_KINDS[1:], ids=lambda s: s.kind)
def test_tail_mean_consistent_with_sf(spec):
    # E[S; S > x] = x P(S > x) + int_x^inf P(S > t) dt
    from scipy.integrate import quad

    for x in (0.0, 0.3, 1.1, 2.0):
        integral, _ = quad(lambda t: float(spec.sf(t)), x, np.inf if spec.kind != "uniform" else 3.0)
        assert float(spec.tail_mean(x)) == pytest.approx(x * float(spec.sf(x)) + integral, rel=1e-7, abs=1e-12)


@pytest.mark.parametrize("spec", ALL_KINDS[1:], ids=lambda s: s.kind)
def test_log_mgf_against_survival_integral(spec):
    # E exp(theta S) = 1 + theta * int_0^inf exp(theta x) P(S > x) dx
    from scipy.integrate import quad

    hi = np.inf if spec.kind != "uniform" else 2.5
    for frac in (0.05, 0.5, 0.9):
        theta = frac * spec.mgf_limit() if math.isfinite(spec.mgf_limit()) else frac

        def integrand(x):
            sf = float(spec.sf(x))
            return math.exp(theta * x + math.log(sf)) if sf > 0 else 0.0

        integral, _ = quad(integrand, 0, hi, limit=200)
        assert spec.log_mgf(theta) == pytest.approx(math.log1p(theta * integral), rel=1e-7)


def test_log_mgf_deterministic():
    assert D.deterministic(2.0).log_mgf(0.3) == pytest.approx(0.6, rel=1e-15)


@pytest.mark.parametrize("spec", ALL_KINDS[1:4], ids=lambda s: s.kind)
def test_phase_type_mean(spec):
    alpha, S = spec.phase_type()
    mean = alpha @ np.linalg.solve(-S, np.ones(len(alpha)))
    assert mean == pytest.approx(spec.mean(), rel=1e-14)


def test_reproducible_streams():
    a = D.hyperexponential2(0.4, 1, 2).sample(np.random.default_rng(42), 1000)
    b = D.hyperexponential2(0.4, 1, 2).sample(np.random.default_rng(42), 1000)
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "kind, params",
    [
        ("deterministic", {"value": 0}),
        ("exponential", {"rate": -1}),
        ("erlang", {"shape": 2.5, "rate": 1}),
        ("erlang", {"shape": 0, "rate": 1}),
        ("hyperexponential2", {"weight": 1.0, "rate1": 1, "rate2": 2}),
        ("uniform", {"low": 0, "high": 1}),
        ("uniform", {"low": 2, "high": 1}),
        ("gamma", {"shape": 1}),
        ("exponential", {"mean": 1}),
    ],
)
def test_invalid_specs_rejected(kind, params):
    with pytest.raises(ConfigurationError):
        D(kind, params)


def test_interarrival_poisson():
    assert dispatcher_interarrival_spec(ArrivalModel("poisson"), 1, 4) == D.exponential(4)


def test_interarrival_deterministic():
    spec = dispatcher_interarrival_spec(ArrivalModel("deterministic"), 2, 3)
    assert spec.kind == "deterministic" and spec.mean() == pytest.approx(1 / 6, rel=1e-15)


def test_interarrival_renewal_erlang():
    spec = dispatcher_interarrival_spec(ArrivalModel("renewal", D.erlang(3, 3)), 1, 10)
    assert spec.kind == "erlang" and spec.params["shape"] == 3
    assert spec.params["rate"] == pytest.approx(30)
    assert spec.variance() == pytest.approx(1 / 300, rel=1e-12)


@pytest.mark.parametrize("base", ALL_KINDS, ids=lambda s: s.kind)
def test_renewal_variance_is_o_of_inverse_k(base):
    model = ArrivalModel("renewal", base)
    scaled = [dispatcher_interarrival_spec(model, 1.3, k).variance() * k for k in (1, 10, 100, 1000)]
    assert all(b < a for a, b in zip(scaled, scaled[1:])) or all(v == 0 for v in scaled)
    assert scaled[-1] <= scaled[0] / 999


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0.01, 100), k=st.integers(1, 500), case=st.sampled_from(["poisson", "deterministic", "renewal"]))
def test_interarrival_mean_exact(lam, k, case):
    model = ArrivalModel(case, D.uniform(1, 2) if case == "renewal" else None)
    assert dispatcher_interarrival_spec(model, lam, k).mean() == pytest.approx(1 / (lam * k), rel=1e-12)
