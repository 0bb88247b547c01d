"""Limiting mean wait along the two-type simplex, with the optimizer's answer.

    python scripts/objective_landscape.py --lam 1.5 --mu 2 1 --points 21
"""
import argparse

import numpy as np

from dispatchq.analytic import objective
from dispatchq.distributions import DistributionSpec
from dispatchq.optimizer import FeasibleSet, minimize, rationalize


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lam", type=float, default=1.5)
    ap.add_argument("--mu", type=float, nargs=2, default=[2.0, 1.0])
    ap.add_argument("--erlang-shape", type=int, default=1, help="service shape (1 = exponential)")
    ap.add_argument("--points", type=int, default=21)
    ap.add_argument("--max-norm", type=int, default=10)
    args = ap.parse_args(argv)

    services = tuple(DistributionSpec.erlang(args.erlang_shape, args.erlang_shape * m) for m in args.mu)
    fs = FeasibleSet.for_services(args.lam, services)
    print("x1,objective")
    for x1 in np.linspace(0, 1, args.points):
        x = np.array([x1, 1 - x1])
        print(f"{x1:.4f},{objective(x, args.lam, services):.8g}" if fs.contains(x) else f"{x1:.4f},unstable")
    res = minimize(fs, services)
    p = rationalize(res.x_opt, args.max_norm, args.lam, services)
    print(f"# x_opt={res.x_opt.round(6).tolist()} value={res.value:.8g} iterations={res.iterations} "
          f"certificate={res.certificate:.2e} p={p}")


if __name__ == "__main__":
    main()
