"""Compare the compiled and pure-Python propagation kernels.

Runs the same batched RK4 segment through both backends on a few basis sizes,
checks that the results agree and reports the cost per state and step.

    python3 benchmarks/bench_kernels.py [--steps N] [--batch B]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qbeats import _kernels_py
from qbeats.hilbert import build_basis, photon_numbers
from qbeats.liouville import SystemParams, cavity_steady_state, make_generator

try:
    from qbeats import _kernels as _compiled
except ImportError:
    _compiled = None


def time_backend(impl, gen, start, h, steps, obs, repeats=2):
    model = gen.kernel_model()
    gvals = np.full((steps, 3), gen.params.g)
    best = float("inf")
    for _ in range(repeats):
        stack = np.ascontiguousarray(start.copy())
        readout = np.zeros((stack.shape[0], steps + 1, obs.shape[0]))
        t0 = time.perf_counter()
        impl.rk4_run(stack, h, gvals, *model.static, *model.coupling,
                     model.jrow, model.jcol, model.jval, model.joff, obs, readout, True)
        best = min(best, time.perf_counter() - t0)
    return best, stack


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args(argv)
    params = SystemParams()
    print(f"{'basis':>8} {'dim':>4} {'python us':>10} {'compiled us':>12} {'speedup':>8} {'max diff':>9}")
    for n1, n2 in [(1, 1), (2, 1), (3, 2), (4, 3)]:
        basis = build_basis(n1_max=n1, n2_max=n2)
        gen = make_generator(params, basis)
        rho = cavity_steady_state(params, basis).matrix
        start = np.repeat(rho[None], args.batch, axis=0)
        obs = photon_numbers(basis, "undriven")[None]
        h = 0.01
        per = args.batch * args.steps
        t_py, s_py = time_backend(_kernels_py, gen, start, h, args.steps, obs)
        row = f"{f'({n1},{n2})':>8} {basis.dim:>4} {1e6 * t_py / per:>10.2f}"
        if _compiled is None:
            print(row + f" {'n/a':>12} {'n/a':>8} {'n/a':>9}")
            continue
        t_c, s_c = time_backend(_compiled, gen, start, h, args.steps, obs)
        diff = float(np.max(np.abs(s_py - s_c)))
        print(row + f" {1e6 * t_c / per:>12.2f} {t_py / t_c:>8.1f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
