"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--I 500] [--Q 20000] [--repeat 3]

Prints one line per kernel with the best wall time of each backend and the
speedup. Compilation happens in a warm-up call and is not timed.
"""

import argparse
import time

import numpy as np

from ebprod import _kernels
from ebprod.grid import TypeTable, default_grid
from ebprod.likelihood import GridDensity
from ebprod.models import model_from_name
from ebprod.simulate import calibrated_dgp, generate_replication


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--I", type=int, default=500)
    ap.add_argument("--Q", type=int, default=20_000)
    ap.add_argument("--T", type=int, default=7)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    data, _ = generate_replication(calibrated_dgp(I=args.I, T=args.T), 0)
    model = model_from_name("cd", args.T)
    side = max(2, round((args.Q / 6) ** (1 / 3)))
    grid = default_grid(model, data, {"alpha0": side, "beta": side, "gamma": side,
                                      "alpha1": 1, "alpha2": 1, "s": 6})
    table = TypeTable(grid)
    src = GridDensity(model, data, table)
    qs = np.arange(table.Q, dtype=np.int64)
    I, Q = data.n_firms, table.Q
    rng = np.random.default_rng(0)
    logf = src.columns(qs)
    shift = logf.max(axis=1)
    L = np.exp(logf - shift[:, None])
    pi = rng.dirichlet(np.ones(Q))
    w = rng.uniform(size=I)
    a, b = rng.normal(size=(2, 20_000))
    order, rank = _kernels._pair_order(a, b)

    out_f = np.empty((I, Q))
    cases = {
        "linear_logf": (_kernels.linear_logf_nb, _kernels.linear_logf_np,
                        (src._y, src._Z, table.padded, table.radix, qs, out_f)),
        "shifted_exp": (_kernels.shifted_exp_nb, _kernels.shifted_exp_np, (logf, shift, np.empty_like(logf))),
        "mixture_rows": (_kernels.mixture_rows_nb, _kernels.mixture_rows_np, (L, pi, np.empty(I))),
        "weighted_colsum": (_kernels.weighted_colsum_nb, _kernels.weighted_colsum_np, (L, w, np.empty(Q))),
        "concordant_pairs(n=20000)": (_kernels.concordant_pairs_nb, _kernels.concordant_pairs_np, (order, rank)),
    }
    print(f"I={I} T={args.T} Q={Q}")
    print(f"{'kernel':<28}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, (nb, np_, fargs) in cases.items():
        t_nb = best_of(lambda: nb(*fargs), args.repeat)
        t_np = best_of(lambda: np_(*fargs), args.repeat)
        print(f"{name:<28}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
