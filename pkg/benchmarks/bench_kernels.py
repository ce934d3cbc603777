"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 16]

Each row reports the best-of-N time per call for both implementations and
the largest absolute difference between their outputs. The last section runs
a short evaluation sweep in a subprocess once per backend (CAMEVAL_NUMBA=1/0).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cameval import _kernels as K


def best(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(batch, rng):
    x1 = rng.normal(size=(batch, 3, 32, 32))
    w1 = rng.normal(size=(8, 3, 3, 3))
    x2 = rng.normal(size=(batch, 8, 16, 16))
    w2 = rng.normal(size=(16, 8, 3, 3))
    g2 = rng.normal(size=(batch, 16, 16, 16))
    pooled, arg = K.maxpool2x2_forward_numpy(x1)
    return {
        "conv 3->8 @32x32": ("conv2d_forward", (x1, w1, np.zeros(8), 1, 1)),
        "conv 8->16 @16x16": ("conv2d_forward", (x2, w2, np.zeros(16), 1, 1)),
        "conv backward 16->8": ("conv2d_backward_input", (g2, w2, 16, 16, 1, 1)),
        "maxpool 2x2": ("maxpool2x2_forward", (x1,)),
        "maxpool backward": ("maxpool2x2_backward", (pooled, arg, 32, 32)),
        "bilinear 16->224": ("bilinear_resize", (rng.random((batch, 16, 16)), 224, 224)),
    }


def sweep_time(numba_on):
    code = (
        "import time; from cameval import harness, nn\n"
        "cfg = harness.EvalConfig(model=nn.build_model('tinygap', 10, seed=0), images='synth:4', seed=1)\n"
        "harness.run_eval(cfg)\n"
        "t = time.perf_counter(); harness.run_eval(cfg); print(time.perf_counter() - t)\n"
    )
    env = {**os.environ, "CAMEVAL_NUMBA": "1" if numba_on else "0"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--skip-sweep", action="store_true")
    args = ap.parse_args()
    if not K._HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max diff':>11}")
    for label, (name, fargs) in cases(args.batch, rng).items():
        f_np, f_nb = getattr(K, name + "_numpy"), getattr(K, name + "_numba")
        t_np = best(lambda: f_np(*fargs), args.repeat)
        t_nb = best(lambda: f_nb(*fargs), args.repeat)
        a, b = f_np(*fargs), f_nb(*fargs)
        if isinstance(a, tuple):
            a, b = a[0], b[0]
        diff = float(np.abs(a - b).max())
        print(f"{label:<22}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x{diff:>11.1e}")

    if not args.skip_sweep:
        t_np, t_nb = sweep_time(False), sweep_time(True)
        print(f"\nsweep (4 images, 7 methods, all metrics): numpy {t_np:.2f}s, numba {t_nb:.2f}s, "
              f"speedup {t_np / t_nb:.1f}x")


if __name__ == "__main__":
    main()
