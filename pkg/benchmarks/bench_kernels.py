"""Compare the numba and numpy propagators on the closed-loop test network.

Run with ``python benchmarks/bench_kernels.py [--steps N] [--repeat K]``.
"""
import argparse
import time

import numpy as np

from passnet.microgrid import build_case_study
from passnet.sim import closed_loop_matrix, compute_equilibrium
from passnet.sim import kernels
from passnet.synthesis import synthesize_node


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--dt", type=float, default=2e-6)
    args = ap.parse_args(argv)

    model, refs, _ = build_case_study()
    res = synthesize_node(model.node_systems[1])
    gains = {n: res.K for n in model.controlled_nodes}
    A = closed_loop_matrix(model, gains)
    b = model.reference_vector(refs)
    x0 = compute_equilibrium(model, gains, refs) + 0.1
    M, c = kernels.trapezoid_operator(A, b, args.dt)
    out = np.empty((args.steps + 1, A.shape[0]))

    cases = {
        "trapezoidal": lambda flag: kernels.propagate_affine(M, c, x0, args.steps, out, 1e12, use_numba=flag),
        "rk4": lambda flag: kernels.propagate_rk4(A, b, args.dt, x0, args.steps, out, 1e12, use_numba=flag),
    }
    print(f"n = {A.shape[0]} states, {args.steps} steps, best of {args.repeat}")
    print(f"{'kernel':<12} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8}")
    for name, run in cases.items():
        t_np = _best(lambda: run(False), args.repeat)
        if kernels.NUMBA_ENABLED:
            run(True)  # compile
            ref = out.copy()
            run(False)
            # rounding differences accumulate slowly along the slow integrator mode
            drift = np.abs(ref - out).max() / np.abs(out).max()
            assert drift < 1e-8, drift
            t_nb = _best(lambda: run(True), args.repeat)
            print(f"{name:<12} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.1f}")
        else:
            print(f"{name:<12} {t_np:10.3f} {'n/a':>10} {'':>8}")


if __name__ == "__main__":
    main()
