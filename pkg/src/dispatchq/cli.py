"""Command-line experiment runner.

    dispatchq run --config exp.yaml [--out DIR] [--seed N] [--threads N]
    dispatchq analytic --config exp.yaml [--format json|csv]
    dispatchq optimize --config exp.yaml [--out DIR]
    dispatchq policy dump (--type-sequence 1,1,2 --k 3 | --q "3/4,1/4" --seed 5)

Exit codes: 0 done, 2 configuration/schema error, 3 infeasible or
unstable system, 4 numerical failure.  Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, analytic, config, optimizer, policy, simulator
from .errors import ConfigurationError, InstabilityError, NumericError

log = logging.getLogger("dispatchq")

EXIT_CONFIG, EXIT_UNSTABLE, EXIT_NUMERIC = 2, 3, 4


def header(cfg_hash: str, seed: int) -> str:
    return f"# dispatchq {__version__} config_sha256={cfg_hash} seed={seed}\n"


def csv_text(columns, rows, head: str) -> str:
    buf = io.StringIO()
    buf.write(head)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# -- scenarios: each returns (summary, {filename: (columns, rows)}) -----------

def _simulate(cfg, threads):
    sys_ = config.system(cfg)
    pol = config.policy(cfg["policy"], sys_.R, sys_.k)
    res = simulator.simulate(sys_, pol, config.plan(cfg), threads)
    per_queue = [
        (r, c, res.weights[(r, c)], s.mean, s.variance, s.ci_halfwidth, s.n_samples)
        for (r, c), s in res.per_queue.items()
    ]
    ecdf_rows = [
        (r, c, t, f) for (r, c), s in res.per_queue.items() for t, f in zip(*s.ecdf.table())
    ]
    summary = {
        "policy": pol.describe(),
        "mean": res.mean,
        "variance": res.variance,
        "ci_halfwidth": res.ci_halfwidth,
    }
    if pol.p is not None:
        limit = analytic.limit_summary(pol.p, sys_.lam, sys_.service)
        summary["limit_mean"] = limit.mixture_mean
        summary["limit_variance"] = limit.mixture_variance
    files = {
        "per_queue.csv": (("r", "kappa", "weight", "mean", "var", "ci", "n"), per_queue),
        "ecdf.csv": (("r", "kappa", "t", "F"), ecdf_rows),
    }
    return summary, files


def _sweep(cfg, threads):
    sys_ = config.system(cfg, k=1)
    desc = cfg["policy"]
    if "type_sequence" not in desc:
        raise ConfigurationError("sweep needs a type_sequence policy")
    base = policy.build_cpk(desc["type_sequence"], 1, R=sys_.R)
    sw = cfg["sweep"]
    words = sw.get("type_sequences")
    rows = simulator.convergence_sweep(
        base, sys_, sw["k_list"], config.plan(cfg), threads, sw["scale_jobs"], words
    )
    limit = rows[0].analytic_mean
    last = rows[-1]
    checks = {
        "lower_bound": all(r.mean >= limit - 3 * r.ci_halfwidth for r in rows),
        "final_within_tolerance": abs(last.mean - limit) <= max(3 * last.ci_halfwidth, 0.05 * limit),
    }
    summary = {
        "p": list(base.p),
        "scaling": "natural" if words is None else "arbitrary",
        "limit_mean": limit,
        "limit_variance": rows[0].analytic_variance,
        "checks": checks,
    }
    table = [(r.k, r.mean, r.ci_halfwidth, r.variance, r.analytic_mean, r.analytic_variance) for r in rows]
    return summary, {"sweep.csv": (("k", "mean", "ci", "variance", "analytic", "analytic_variance"), table)}


def _lower_bound(cfg, threads):
    sys_ = config.system(cfg)
    lb = cfg["lower_bound"]
    pols = [
        (d.get("name", f"policy{i}"), config.policy(d, sys_.R, sys_.k))
        for i, d in enumerate(lb["policies"], start=1)
    ]
    rows = simulator.lower_bound_check(sys_, lb["p"], pols, config.plan(cfg), threads)
    summary = {
        "p": lb["p"],
        "bound": rows[0].bound,
        "checks": {r.policy_id: r.respects_bound for r in rows},
    }
    table = [(r.policy_id, r.mean, r.ci_halfwidth, r.bound, r.respects_bound) for r in rows]
    return summary, {"lower_bound.csv": (("policy", "mean", "ci", "bound", "respects_bound"), table)}


def _analytic(cfg, threads):
    svcs = config.services(cfg)
    lam = float(cfg["system"]["lam"])
    s = analytic.limit_summary(cfg["analytic"]["p"], lam, svcs)
    rows = [
        (r, w, t, m.mean, m.variance)
        for r, (w, t, m) in enumerate(zip(s.weights, s.T, s.per_type), start=1)
    ]
    rows.append(("mixture", 1.0, "", s.mixture_mean, s.mixture_variance))
    files = {"limit.csv": (("r", "weight", "T", "mean", "variance"), rows)}
    if cfg["analytic"]["export_grid"]:
        for r, (t, svc) in enumerate(zip(s.T, svcs), start=1):
            g = analytic.dgi1_wait(analytic.Dgi1Instance(t, svc))
            keep = g.mass > 0
            files[f"wait_grid_r{r}.csv"] = (("t", "mass"), list(zip(g.grid[keep], g.mass[keep])))
    return s.to_dict(), files


def _optimize(cfg, threads):
    svcs = config.services(cfg)
    lam = float(cfg["system"]["lam"])
    o = cfg["optimize"]
    fs = optimizer.FeasibleSet.for_services(lam, svcs, o["slack"])
    res = optimizer.minimize(fs, svcs, tol=o["tol"])
    p = optimizer.rationalize(res.x_opt, o["max_norm"], lam, svcs)
    summary = {
        "x_opt": res.x_opt.tolist(),
        "value": res.value,
        "iterations": res.iterations,
        "certificate": res.certificate,
        "rationalized_p": list(p),
        "rationalized_value": analytic.objective(np.array(p) / sum(p), lam, svcs),
    }
    cols = ("iteration",) + tuple(f"x{r}" for r in range(1, fs.R + 1)) + ("value",)
    rows = [(i, *x.tolist(), v) for i, (x, v) in enumerate(res.trajectory)]
    return summary, {"trajectory.csv": (cols, rows)}


def _verify_structure(cfg, threads):
    vs = cfg["verify_structure"]
    p = policy.as_pvector(vs["p"])
    words = policy.type_sequence_array(p)
    seqs = [tuple(w) for w in words.tolist()]
    norm = sum(p)
    shift_ok = all(bool(policy.gap_shift_holds(words, r, vs["m_max"]).all()) for r in range(1, len(p) + 1))
    rows, sums_ok = [], True
    for s in seqs:
        for k in vs["k_list"]:
            pol = policy.build_cpk(s, k)
            for r in range(1, len(p) + 1):
                for c in range(1, k + 1):
                    prof = policy.pattern_profile(pol, r, c)
                    sums_ok &= prof.total == k * norm
                    rows.append(("".join(map(str, s)), r, c, k, " ".join(map(str, prof.gaps)), prof.total, k * norm))
    expected = policy.class_cardinality(p)
    summary = {
        "p": list(p),
        "cardinality": len(seqs),
        "cardinality_expected": expected,
        "checks": {"gap_shift_identity": shift_ok, "cardinality": len(seqs) == expected, "gap_sums": bool(sums_ok)},
    }
    cols = ("type_sequence", "r", "kappa", "k", "gaps", "gap_sum", "k_norm_p")
    return summary, {"structure.csv": (cols, rows)}


def _monotonicity(cfg, threads):
    sys_ = config.system(cfg)
    pol = config.policy(cfg["policy"], sys_.R, sys_.k)
    mono = cfg["monotonicity"]
    (e0, e1), (l0, l1) = mono["early"], mono["late"]
    if not (e0 <= e1 and l0 <= l1):
        raise ConfigurationError("monotonicity windows must be increasing job ranges")
    waits = simulator.job_indexed_waits(sys_, pol, max(e1, l1), mono["replications"], cfg["seed"])
    early = simulator.ECDF.from_samples(waits[:, e0 - 1 : e1].ravel())
    late = simulator.ECDF.from_samples(waits[:, l0 - 1 : l1].ravel())
    ok = simulator.empirical_st_dominates(early, late, mono["tolerance"])
    res = cfg["plan"]["ecdf_resolution"]
    rows = []
    for name, e in (("early", early), ("late", late)):
        thin = simulator.ECDF.from_samples(e.points, res)
        rows += [(name, t, f) for t, f in zip(*thin.table())]
    summary = {
        "early_jobs": [e0, e1],
        "late_jobs": [l0, l1],
        "early_mean": float(early.points.mean()),
        "late_mean": float(late.points.mean()),
        "checks": {"early_st_below_late": ok},
    }
    return summary, {"ecdf.csv": (("window", "t", "F"), rows)}


SCENARIO_FUNCS = {
    "simulate": _simulate,
    "sweep": _sweep,
    "lower-bound": _lower_bound,
    "analytic": _analytic,
    "optimize": _optimize,
    "verify-structure": _verify_structure,
    "monotonicity": _monotonicity,
}


def execute(cfg: dict, threads: int = 1):
    """Run the configured scenario; returns ``(summary, files)`` with all text rendered."""
    h = config.config_hash(cfg)
    head = header(h, cfg["seed"])
    summary, tables = SCENARIO_FUNCS[cfg["scenario"]](cfg, threads)
    files = {name: csv_text(cols, rows, head) for name, (cols, rows) in tables.items()}
    hashed = {k: v for k, v in cfg.items() if k not in ("output_dir", "threads")}
    files["effective_config.yaml"] = head + yaml.safe_dump(hashed, sort_keys=True)
    doc = {
        "header": {"tool": "dispatchq", "version": __version__, "config_sha256": h, "seed": cfg["seed"]},
        "scenario": cfg["scenario"],
        **summary,
    }
    files["summary.json"] = json.dumps(doc, indent=2, sort_keys=False, default=_jsonable) + "\n"
    return doc, files


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def write_outputs(out_dir: Path, files: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")


def _guarded(fn):
    def wrapper(args):
        try:
            return fn(args)
        except ConfigurationError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except InstabilityError as exc:
            print(f"infeasible or unstable: {exc}", file=sys.stderr)
            return EXIT_UNSTABLE
        except NumericError as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC

    return wrapper


def _load(args, scenario=None) -> dict:
    if args.threads < 1:
        raise ConfigurationError("--threads must be at least 1")
    raw = config.load(args.config)
    if scenario is not None:
        raw = {**raw, "scenario": scenario}
    return config.effective(raw, seed=args.seed)


@_guarded
def cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.get("output_dir")
    if not out:
        raise ConfigurationError("no output directory: pass --out or set output_dir")
    doc, files = execute(cfg, args.threads)
    write_outputs(Path(out), files)
    log.info("wrote %d files to %s", len(files), out)
    return 0


@_guarded
def cmd_analytic(args) -> int:
    cfg = _load(args, "analytic")
    doc, files = execute(cfg)
    if args.out:
        write_outputs(Path(args.out), files)
    sys.stdout.write(files["limit.csv"] if args.format == "csv" else files["summary.json"])
    return 0


@_guarded
def cmd_optimize(args) -> int:
    cfg = _load(args, "optimize")
    doc, files = execute(cfg)
    if args.out:
        write_outputs(Path(args.out), files)
    print(f"x_opt = {doc['x_opt']}")
    print(f"value = {doc['value']!r}")
    print(f"rationalized p = {doc['rationalized_p']}")
    sys.stdout.write(files["trajectory.csv"])
    return 0


def _parse_q(text: str):
    return [[x.strip() for x in row.split(",")] for row in text.split(";")]


@_guarded
def cmd_policy_dump(args) -> int:
    if args.type_sequence:
        seq = [int(x) for x in args.type_sequence.split(",")]
        pol = policy.build_cpk(seq, args.k)
        desc = {"type_sequence": seq, "k": args.k}
    elif args.q:
        q = _parse_q(args.q)
        pol = policy.random_q_policy(q, args.seed)
        desc = {"q": q, "seed": args.seed}
    else:
        raise ConfigurationError("give --type-sequence or --q")
    head = header(config.config_hash(desc), args.seed)
    rows = [(n, r, c) for n, (r, c) in enumerate(pol.assignment, start=1)]
    text = csv_text(("n", "r", "kappa"), rows, head)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dispatchq", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)

    run = sub.add_parser("run", help="run the scenario named in a config file")
    common(run)
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analytic", help="print the limiting waiting-time summary")
    common(an)
    an.add_argument("--format", choices=("json", "csv"), default="json")
    an.set_defaults(func=cmd_analytic)

    op = sub.add_parser("optimize", help="minimize the limiting mean wait over routing fractions")
    common(op)
    op.set_defaults(func=cmd_optimize)

    pol = sub.add_parser("policy", help="policy utilities")
    psub = pol.add_subparsers(dest="policy_command", required=True)
    dump = psub.add_parser("dump", help="write one period as CSV (n, r, kappa)")
    dump.add_argument("--type-sequence")
    dump.add_argument("--k", type=int, default=1)
    dump.add_argument("--q", help='fraction matrix, rows split by ";" e.g. "3/4,1/4"')
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--out")
    dump.set_defaults(func=cmd_policy_dump)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
