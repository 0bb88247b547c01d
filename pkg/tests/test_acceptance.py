"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (with the measured quantities
and the wall time) that is printed in the pytest terminal summary.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import itertools
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE_LINES
from dispatchq import cli
from dispatchq.analytic import Dgi1Instance, dgi1_wait, dm1_wait, limit_summary
from dispatchq.distributions import ArrivalModel, DistributionSpec as D
from dispatchq.optimizer import FeasibleSet, convexity_probe, minimize
from dispatchq.policy import (
    _words,
    build_cpk,
    class_cardinality,
    cpk_gap_table,
    explicit_policy,
    gap_shift_holds,
    lcm_of,
    type_sequence_array,
)
from dispatchq.simulator import (
    ECDF,
    SimPlan,
    SystemConfig,
    convergence_sweep,
    empirical_st_dominates,
    job_indexed_waits,
    simulate,
)

EXP1 = D.exponential(1.0)


def report(number, title, ok, detail, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail} | {seconds:.2f} s"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def compositions(n):
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in compositions(n - first):
            yield (first,) + rest


def strictly_sorted_rows(words):
    diff = np.diff(words.astype(np.int64), axis=0)
    first = np.argmax(diff != 0, axis=1)
    return bool(np.all(diff[np.arange(diff.shape[0]), first] > 0))


# ---------------------------------------------------------------------------
def test_criterion_1_structural_exactness():
    _words.cache_clear()
    t0 = time.perf_counter()
    n_words = shift_bad = sum_bad = card_bad = 0
    for n in range(1, 7):
        for p in compositions(n):
            words = type_sequence_array(p)
            n_words += len(words)
            for r in range(1, len(p) + 1):
                shift_bad += int(np.count_nonzero(~gap_shift_holds(words, r, 20)))
                ks = np.arange(1, 41)
                sums = cpk_gap_table(words, r, ks).sum(axis=-1)
                sum_bad += int(np.count_nonzero(sums != ks * n))
                # every replica of every k up to 12
                kk, cc = np.array([(k, c) for k in range(1, 13) for c in range(1, k + 1)]).T
                sums = cpk_gap_table(words, r, kk, cc).sum(axis=-1)
                sum_bad += int(np.count_nonzero(sums != kk * n))
    n_classes = 0
    for n in range(1, 9):
        for p in compositions(n):
            words = type_sequence_array(p)
            n_classes += 1
            counts_ok = all(np.all((words == r).sum(axis=1) == pr) for r, pr in enumerate(p, start=1))
            if len(words) != class_cardinality(p) or not counts_ok or not strictly_sorted_rows(words):
                card_bad += 1
    worst_ratio = 0.0
    for p in [(1, 1), (2, 1), (3, 2)]:
        k = 1000 * lcm_of(p)
        for w in type_sequence_array(p):
            for r, pr in enumerate(p, start=1):
                gaps = cpk_gap_table(w, r, [k])[0]
                worst_ratio = max(worst_ratio, float(np.max(np.abs(gaps / k - sum(p) / pr) / (sum(p) / pr))))
    dt = time.perf_counter() - t0
    ok = shift_bad == 0 and sum_bad == 0 and card_bad == 0 and worst_ratio <= 0.01 and dt < 1.0
    report(
        1,
        "structural exactness",
        ok,
        f"{n_words} words |p|<=6: gap-shift identity violations {shift_bad}, gap-sum violations {sum_bad}; "
        f"cardinality mismatches {card_bad}/{n_classes} classes |p|<=8; "
        f"max rel. gap-ratio error at k=1000 lcm(p) {worst_ratio:.2e} (tol 1e-2); budget 1 s",
        dt,
    )
    assert ok


# ---------------------------------------------------------------------------
def test_criterion_2_analytic_solver():
    t0 = time.perf_counter()
    dm = dm1_wait(2.0, 1.0)
    residual = abs(dm.sigma - math.exp(-2.0 * (1.0 - dm.sigma)))
    cfg = SystemConfig(R=1, k=1, lam=0.5, arrival=ArrivalModel("deterministic"), service=(EXP1,))
    mc = simulate(cfg, build_cpk((1,), 1), SimPlan(jobs_total=10**6, seed=31))
    mc_ok = abs(mc.mean - dm.mean) <= 3 * mc.ci_halfwidth
    grid_err = {}
    for muT in (1.2, 2.0, 5.0):
        g = dgi1_wait(Dgi1Instance(muT, EXP1))
        exact = dm1_wait(muT, 1.0).mean
        grid_err[muT] = abs(g.mean - exact) / exact
    dd1 = dgi1_wait(Dgi1Instance(2.0, D.deterministic(1.0)))
    dd1_sim = simulate(
        SystemConfig(R=1, k=1, lam=0.5, arrival=ArrivalModel("deterministic"), service=(D.deterministic(1.0),)),
        build_cpk((1,), 1),
        SimPlan(jobs_total=10_000),
    )
    dd1_ok = dd1.mean == 0.0 and dd1.variance == 0.0 and dd1_sim.mean == 0.0 and dd1_sim.variance == 0.0
    dt = time.perf_counter() - t0
    ok = residual < 1e-12 and mc_ok and max(grid_err.values()) < 1e-4 and dd1_ok and dt < 10.0
    report(
        2,
        "analytic solver correctness",
        ok,
        f"sigma residual {residual:.1e} (tol 1e-12); MC mean {mc.mean:.5f} +- {mc.ci_halfwidth:.5f} vs {dm.mean:.5f}; "
        f"grid rel. err " + ", ".join(f"muT={k}: {v:.1e}" for k, v in grid_err.items()) + " (tol 1e-4); "
        f"D/D/1 zero {dd1_ok}; budget 10 s",
        dt,
    )
    assert ok


# ---------------------------------------------------------------------------
STANDARD = dict(R=2, lam=1.2, arrival=ArrivalModel("poisson"))
SWEEP_PLAN = SimPlan(jobs_total=100_000, replications=8, seed=2024)


def test_criterion_3_mean_convergence():
    t0 = time.perf_counter()
    cfg = SystemConfig(k=1, service=(EXP1, EXP1), **STANDARD)
    rows = convergence_sweep(build_cpk((1, 1, 2), 1), cfg, [1, 2, 4, 8, 16, 32], SWEEP_PLAN)
    limit = rows[0].analytic_mean
    lower_ok = all(r.mean >= limit - 3 * r.ci_halfwidth for r in rows)
    last = rows[-1]
    final_ok = abs(last.mean - limit) <= max(3 * last.ci_halfwidth, 0.05 * limit)
    dt = time.perf_counter() - t0
    ok = lower_ok and final_ok
    series = ", ".join(f"k={r.k}: {r.mean:.4f}+-{r.ci_halfwidth:.4f}" for r in rows)
    report(
        3,
        "mean convergence",
        ok,
        f"E W(p) = {limit:.5f}; {series}; lower bound held {lower_ok}; "
        f"|E W(32) - E W(p)| = {abs(last.mean - limit):.4f} vs max(3 CI, 5%) = {max(3 * last.ci_halfwidth, 0.05 * limit):.4f}",
        dt,
    )
    assert ok


def test_criterion_4_variance_convergence():
    t0 = time.perf_counter()
    services = (EXP1, D.exponential(0.8))
    cfg = SystemConfig(k=32, service=services, **STANDARD)
    limit = limit_summary((2, 1), 1.2, services)
    plan = SimPlan(jobs_total=SWEEP_PLAN.jobs_total * 32, replications=8, seed=77)
    res = simulate(cfg, build_cpk((1, 1, 2), 32), plan)
    rel = abs(res.variance - limit.mixture_variance) / limit.mixture_variance
    between = limit.mixture_variance - limit.within_variance
    dt = time.perf_counter() - t0
    ok = rel <= 0.10
    report(
        4,
        "variance convergence",
        ok,
        f"Var W^(32) = {res.variance:.4f} vs limit {limit.mixture_variance:.4f} (between-type term {between:.4f}); "
        f"rel. err {rel:.3f} (tol 0.10)",
        dt,
    )
    assert ok


def test_criterion_5_policy_equivalence():
    t0 = time.perf_counter()
    cfg = SystemConfig(k=32, service=(EXP1, EXP1), **STANDARD)
    words = [tuple(w) for w in type_sequence_array((2, 1)).tolist()]
    res = {}
    for i, w in enumerate(words):
        plan = SimPlan(jobs_total=SWEEP_PLAN.jobs_total * 32, replications=8, seed=500 + i)
        res[w] = simulate(cfg, build_cpk(w, 32), plan)
    worst = 0.0
    for a, b in itertools.combinations(words, 2):
        z = abs(res[a].mean - res[b].mean) / math.hypot(res[a].ci_halfwidth, res[b].ci_halfwidth)
        worst = max(worst, z)
    dt = time.perf_counter() - t0
    ok = len(words) == 3 and worst <= 3.0
    means = ", ".join(f"{''.join(map(str, w))}: {res[w].mean:.4f}+-{res[w].ci_halfwidth:.4f}" for w in words)
    report(5, "policy equivalence within the class", ok, f"{means}; max |diff|/combined CI = {worst:.2f} (tol 3)", dt)
    assert ok


def test_criterion_6_lower_bound_strict_off_class():
    t0 = time.perf_counter()
    cfg = SystemConfig(R=1, k=2, lam=0.5, arrival=ArrivalModel("poisson"), service=(EXP1,))
    pol = explicit_policy([(1, 1), (1, 1), (1, 1), (1, 2)], R=1, k=2)
    assert pol.fractions.q == ((Fraction(3, 4), Fraction(1, 4)),)
    res = simulate(cfg, pol, SimPlan(jobs_total=400_000, replications=8, seed=6))
    bound = limit_summary((1,), 0.5, (EXP1,)).mixture_mean
    margin = res.mean - bound
    dt = time.perf_counter() - t0
    ok = margin > 3 * res.ci_halfwidth
    report(
        6,
        "lower bound strict off the class",
        ok,
        f"q=(3/4,1/4) mean {res.mean:.4f} +- {res.ci_halfwidth:.4f}; E W(p) = {bound:.4f}; margin {margin:.4f} > 3 CI = {3 * res.ci_halfwidth:.4f}",
        dt,
    )
    assert ok


def test_criterion_7_monotonicity():
    t0 = time.perf_counter()
    cfg = SystemConfig(R=1, k=1, lam=0.8, arrival=ArrivalModel("poisson"), service=(EXP1,))
    waits = job_indexed_waits(cfg, build_cpk((1,), 1), 20_000, replications=50, seed=7)
    early = ECDF.from_samples(waits[:, :1000].ravel())
    late = ECDF.from_samples(waits[:, 9_999:20_000].ravel())
    grid = np.union1d(early.points, late.points)
    worst = float(np.max(late(grid) - early(grid)))
    ok = empirical_st_dominates(early, late, 0.02)
    dt = time.perf_counter() - t0
    report(
        7,
        "monotone waits",
        ok,
        f"M/M/1 rho=0.8, 50 reps: early mean {early.points.mean():.3f}, late mean {late.points.mean():.3f}; "
        f"max (F_late - F_early) = {worst:.4f} (tol 0.02)",
        dt,
    )
    assert ok


def test_criterion_8_convexity_and_optimization():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    lam = 1.2
    violations = {}
    for name, svc in (("exponential", (EXP1, EXP1)), ("erlang2", (D.erlang(2, 2), D.erlang(2, 2)))):
        fs = FeasibleSet.for_services(lam, svc, slack=0.05)
        pairs = [(fs.project(rng.dirichlet([1, 1])), fs.project(rng.dirichlet([1, 1]))) for _ in range(100)]
        violations[name] = convexity_probe(svc, lam, pairs)
    sym = minimize(FeasibleSet.for_services(1.0, (EXP1, EXP1)), (EXP1, EXP1))
    sym_err = float(np.max(np.abs(sym.x_opt - 0.5)))
    asym_svc = (D.exponential(2.0), EXP1)
    fs = FeasibleSet.for_services(1.5, asym_svc)
    asym = minimize(fs, asym_svc)
    from dispatchq.analytic import objective

    grid = [np.array([i / 999, 1 - i / 999]) for i in range(1000)]
    grid = [x for x in grid if fs.contains(x)]
    worst_gap = max(asym.value - objective(x, 1.5, asym_svc) for x in grid)
    dt = time.perf_counter() - t0
    ok = max(violations.values()) <= 1e-6 and sym_err <= 1e-3 and worst_gap <= 1e-6 and dt < 60
    report(
        8,
        "convexity and optimization",
        ok,
        "convexity violation " + ", ".join(f"{k}: {v:.1e}" for k, v in violations.items()) + " (tol 1e-6); "
        f"symmetric x_opt {np.round(sym.x_opt, 6).tolist()} (tol 1e-3); "
        f"asymmetric x_opt {np.round(asym.x_opt, 6).tolist()}, value - min over {len(grid)} grid points = {worst_gap:.1e} (tol 1e-6); budget 60 s",
        dt,
    )
    assert ok


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    sweep = {
        "scenario": "sweep",
        "seed": 13,
        "system": {"lam": 1.2, "arrival": {"case": "poisson"}, "service": [{"kind": "exponential", "rate": 1.0}] * 2},
        "policy": {"type_sequence": [1, 1, 2]},
        "plan": {"jobs_total": 5000, "replications": 4},
        "sweep": {"k_list": [1, 4]},
    }
    sim = {
        "scenario": "simulate",
        "seed": 14,
        "system": {"k": 3, "lam": 1.0, "arrival": {"case": "renewal", "base_spec": {"kind": "uniform", "low": 0.5, "high": 1.5}},
                   "service": [{"kind": "hyperexponential2", "weight": 0.4, "rate1": 1.0, "rate2": 3.0}]},
        "policy": {"q": [["1/2", "1/3", "1/6"]], "seed": 3},
        "plan": {"jobs_total": 30000, "replications": 5},
    }
    identical = True
    for name, cfg in (("sweep", sweep), ("simulate", sim)):
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        outputs = []
        for i, threads in enumerate((1, 1, 2, 3, 8)):
            out = tmp_path / f"{name}{i}"
            assert cli.main(["run", "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        identical &= all(o == outputs[0] for o in outputs)
    dt = time.perf_counter() - t0
    report(9, "determinism", identical, "2 scenarios x threads (1,1,2,3,8): outputs byte-identical" if identical else "outputs differ", dt)
    assert identical


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
