"""Compare the numba and pure-numpy element kernels.

Runs each kernel on the velocity space of the coupled-rectangle mesh and
prints best-of-N wall-clock times, the speed-up and the max abs difference.
With ``--end-to-end`` it also times one short ensemble run in two
subprocesses, one with ``NSD_ENSEMBLE_DISABLE_NUMBA=1``.

    python benchmarks/bench_kernels.py --n 32 --J 10
"""

import argparse
import os
import subprocess
import sys
import textwrap
from timeit import default_timer as timer

import numpy as np

from nsd_ensemble import fem, kernels
from nsd_ensemble.mesh import build_coupled_rect_mesh


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = timer()
        out = fn()
        best = min(best, timer() - t0)
    return best, out


def kernel_cases(n, J, seed=0):
    sp_ = fem.build_spaces(build_coupled_rect_mesh(n))
    cq = sp_.cq_u
    E, Q, nb, _ = cq.dphi.shape
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((J, E, nb, 2))
    K = np.broadcast_to(np.eye(2), (E, Q, 2, 2)) * (1 + rng.random((E, Q)))[..., None, None]
    c = 1 + rng.random((E, Q))
    return {
        f"convection (J={J})": (kernels.convection_local_numpy, getattr(kernels, "_convection_local_nb", None),
                                (W, cq.phi, cq.dphi, cq.wq)),
        "stiffness": (kernels.stiffness_local_numpy, getattr(kernels, "_stiffness_local_nb", None),
                      (cq.dphi, np.ascontiguousarray(K), cq.wq)),
        "mass": (kernels.mass_local_numpy, getattr(kernels, "_mass_local_nb", None), (cq.phi, c, cq.wq)),
    }, E


def end_to_end(n, J):
    code = textwrap.dedent(f"""
        import time, warnings
        warnings.simplefilter("ignore")
        from nsd_ensemble import mms, fem
        from nsd_ensemble.mesh import build_coupled_rect_mesh
        from nsd_ensemble.scheme import EnsembleConfig, run
        ks = [1 + j / {J} for j in range({J})]
        m = build_coupled_rect_mesh({n})
        cfg = EnsembleConfig(J={J}, k=2, dt=1 / {n}, t_end=4 / {n})
        run(cfg, mms.mms_inputs(ks, fem.Physics()), m)      # warm-up / compile
        t0 = time.perf_counter()
        run(cfg, mms.mms_inputs(ks, fem.Physics()), m)
        print(time.perf_counter() - t0)
    """)
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, NSD_ENSEMBLE_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32, help="cells per unit length")
    ap.add_argument("--J", type=int, default=10, help="fields in the convection batch")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    print(f"backend available: {'numba' if kernels.HAVE_NUMBA else 'numpy only'}")
    cases, E = kernel_cases(args.n, args.J)
    print(f"velocity space, n={args.n}: {E} fluid cells")
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}{'max |diff|':>13}")
    for name, (ref, fast, inputs) in cases.items():
        t_np, out_np = best_of(lambda: ref(*inputs), args.repeat)
        if fast is None:
            print(f"{name:<22}{1e3 * t_np:12.2f}{'-':>12}{'-':>10}{'-':>13}")
            continue
        fast(*inputs)   # compile outside the timed region
        t_nb, out_nb = best_of(lambda: fast(*inputs), args.repeat)
        diff = float(np.max(np.abs(out_np - out_nb)))
        print(f"{name:<22}{1e3 * t_np:12.2f}{1e3 * t_nb:12.2f}{t_np / t_nb:10.1f}{diff:13.2e}")

    if args.end_to_end:
        t = end_to_end(args.n, args.J)
        print(f"ensemble run (J={args.J}, 4 steps): numba {t['numba']:.2f} s, "
              f"numpy {t['numpy']:.2f} s, speed-up {t['numpy'] / t['numba']:.2f}")


if __name__ == "__main__":
    main()
