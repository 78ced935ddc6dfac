"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Times each hot kernel on both backends, checks the results are bitwise
equal, and reports the speed-up. A closed-loop run with a non-affine model
(grid + golden-section inversion each step) is timed end to end.
"""

from __future__ import annotations

import argparse
import importlib
import os
import timeit

import numpy as np

from d2ibc import _core_py

try:
    from d2ibc import _core
except ImportError:  # pragma: no cover - extension missing
    _core = None


def _cases(rng):
    alphas = [rng.normal(size=4) for _ in range(200)]
    theta = rng.normal(size=4)
    e = rng.normal(size=20_000)
    e_short = rng.normal(size=2_000)

    def minimize(mod):
        return [mod.minimize_poly_objective(a, 0.5, 1.0, 0.01, -5.0, 5.0, 201, 1e-10) for a in alphas]

    return {
        "minimize_poly_objective x200": minimize,
        "pid_filter 20k samples": lambda mod: mod.pid_filter(theta, e, 0.0, np.zeros(3)),
        "integrated_lags 2k x 8": lambda mod: mod.integrated_lags(e_short, 7),
    }


def _closed_loop_seconds(pure: bool, repeat: int) -> float:
    if pure:
        os.environ["D2IBC_PURE_PYTHON"] = "1"
    else:
        os.environ.pop("D2IBC_PURE_PYTHON", None)
    from d2ibc import kernels

    importlib.reload(kernels)
    from d2ibc.nic import NicController, rho_constants
    from d2ibc.simloop import RunConfig, generate_record, plant, simulate_closed_loop, step_reference
    from d2ibc.sysid import IdConfig, identify
    from d2ibc.vrft import PidController

    pl = plant("c")
    rec = generate_record(pl, 300, 2.0, 0)
    model = identify(rec, IdConfig(1, 3, 1e-8, affine_in_u=False))
    nic = NicController(model, 0.01, *rho_constants(rec), pl.u_min, pl.u_max)
    cfg = RunConfig(300, step_reference(300, 1.0, 5))

    def run():
        simulate_closed_loop(pl, nic, PidController([0.1, 0.05]), cfg)

    return min(timeit.repeat(run, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'compiled [ms]':>14s} {'python [ms]':>12s} {'speed-up':>9s}  equal")
    for name, fn in _cases(rng).items():
        same = np.array_equal(np.asarray(fn(_core)), np.asarray(fn(_core_py)))
        tc = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat))
        tp = min(timeit.repeat(lambda: fn(_core_py), number=1, repeat=args.repeat))
        print(f"{name:34s} {1e3 * tc:14.3f} {1e3 * tp:12.3f} {tp / tc:8.1f}x  {same}")

    tc = _closed_loop_seconds(False, args.repeat)
    tp = _closed_loop_seconds(True, args.repeat)
    print(f"{'closed loop, T=300, non-affine':34s} {1e3 * tc:14.3f} {1e3 * tp:12.3f} {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
