"""Compare the compiled kernel core with the pure numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 64,128,256]

Reports the best-of-repeat wall time of each kernel per backend and the speed-up of
the compiled version. Agreement between the two is checked before timing.
"""

import argparse
import os
import timeit

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np  # noqa: E402

from lrdkit import _pykernels, kernels  # noqa: E402
from lrdkit.report import format_table  # noqa: E402


def jacobi_case(n, seed=0):
    A = np.random.default_rng(seed).standard_normal((n, n))

    def run(impl):
        G = np.ascontiguousarray(A.T)
        impl.jacobi_orthogonalize(G, np.eye(n), np.finfo(float).eps * n, 60)
        return np.sort(np.linalg.norm(G, axis=1))

    return f"jacobi {n}x{n}", run


def im2col_case(n, seed=0):
    x = np.random.default_rng(seed).standard_normal((8, n // 4, 16, 16))
    return f"im2col 8x{n // 4}x16x16 k3", lambda impl: impl.im2col(x, 3, 3, 1)


def col2im_case(n, seed=0):
    C = n // 4
    cols = np.random.default_rng(seed).standard_normal((8 * 16 * 16, C * 9))
    return f"col2im 8x{C}x16x16 k3", lambda impl: impl.col2im(cols, 8, C, 16, 16, 3, 3, 1)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--sizes", default="64,128,256")
    args = p.parse_args(argv)
    compiled = kernels.compiled()
    if compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rows = []
    for n in (int(s) for s in args.sizes.split(",")):
        for make in (jacobi_case, im2col_case, col2im_case):
            name, run = make(n)
            if not np.allclose(run(compiled), run(_pykernels), rtol=1e-10, atol=1e-10):
                raise SystemExit(f"{name}: backends disagree")
            t_c = min(timeit.repeat(lambda: run(compiled), number=1, repeat=args.repeat))
            t_p = min(timeit.repeat(lambda: run(_pykernels), number=1, repeat=args.repeat))
            rows.append([name, f"{t_c * 1e3:.2f}", f"{t_p * 1e3:.2f}", f"{t_p / t_c:.2f}x"])
    print(format_table(("kernel", "cython ms", "numpy ms", "speed-up"), rows), end="")


if __name__ == "__main__":
    main()
