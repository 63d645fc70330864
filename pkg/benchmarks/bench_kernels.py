"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Sizes follow a Traffic-like branch (L=336, P=8, S=4 -> 83 tokens, 16 heads)
on a batch of 256 univariate windows, plus one end-to-end forward+backward.
"""
import argparse
import os
import timeit

import numpy as np

from mtst import kernels


def cases(rng):
    b, d, p, s = 256, 336, 8, 4
    j = -(-(d - p) // s) + 1
    x = rng.standard_normal((b, d))
    g = rng.standard_normal((b, j, p))
    scores = rng.standard_normal((b * 16, j, j))
    probs = kernels.softmax_rows(scores)
    vals = rng.standard_normal((2 * j - 1, 16))
    gb = rng.standard_normal((16, j, j))
    return {
        "unfold": lambda impl: kernels.unfold(x, p, s, j, impl=impl),
        "fold": lambda impl: kernels.fold(g, d, s, impl=impl),
        "softmax_rows": lambda impl: kernels.softmax_rows(scores, impl=impl),
        "softmax_backward": lambda impl: kernels.softmax_rows_backward(probs, scores, impl=impl),
        "toeplitz_gather": lambda impl: kernels.toeplitz_gather(vals, j, impl=impl),
        "toeplitz_scatter": lambda impl: kernels.toeplitz_scatter(gb, impl=impl),
    }


def end_to_end(backend, repeat):
    # the model picks its backend at import, so run it in a child interpreter
    import subprocess
    import sys

    code = (
        "import timeit, numpy as np\n"
        "from mtst import autodiff as ad, presets\n"
        "from mtst.model import MTST\n"
        "m = MTST(presets.model_config('traffic', 96), 0)\n"
        "x = np.random.default_rng(0).standard_normal((32, 336)); y = np.zeros((32, 96))\n"
        "def step():\n"
        "    ad.gradients(lambda: ad.mse_loss(m.forward(x, training=True, rng=np.random.default_rng(0)), ad.Tensor(y)), dict(m.params.items()))\n"
        f"print(min(timeit.repeat(step, number=1, repeat={repeat})))\n"
    )
    env = dict(os.environ, MTST_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the fallback is available")
    rng = np.random.default_rng(0)
    names = sorted(backends)
    print(f"{'kernel':<18}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(rng).items():
        times = {n: min(timeit.repeat(lambda: fn(backends[n]), number=1, repeat=args.repeat)) for n in names}
        row = f"{label:<18}" + "".join(f"{times[n] * 1e3:>10.3f}ms" for n in names)
        if len(names) > 1:
            row += f"{times['python'] / times['cython']:>11.1f}x"
        print(row)
    reps = max(2, args.repeat // 5)
    e2e = {n: end_to_end(n, reps) for n in names}
    row = f"{'traffic fwd+bwd':<18}" + "".join(f"{e2e[n] * 1e3:>10.1f}ms" for n in names)
    if len(names) > 1:
        row += f"{e2e['python'] / e2e['cython']:>11.1f}x"
    print(row)


if __name__ == "__main__":
    main()
