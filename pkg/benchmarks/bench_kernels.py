"""Time the hot kernels under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once per backend (numba compiles on first call),
then timed as the best of ``--repeat`` runs. Results from both backends are
compared so a speedup is never reported for diverging outputs.
"""

import argparse
import time

import numpy as np

from vacewpe import _accel, kernels
from vacewpe.metrics import autocorrelation, frame_signal
from vacewpe.wpe import build_delayed_stack


def _cases(rng):
    T, F, D, K = 250, 513, 2, 10
    X = rng.standard_normal((T, F, D)) + 1j * rng.standard_normal((T, F, D))
    stack = build_delayed_stack(X, 3, K)
    weight = 1.0 / (np.abs(X[:, :, 0]) ** 2 + 1e-3)
    stack_f = np.ascontiguousarray(stack.transpose(1, 0, 2))
    x_f = np.ascontiguousarray(X.transpose(1, 0, 2))
    w_f = np.ascontiguousarray(weight.T)
    R, P = kernels.weighted_correlations(stack_f, x_f, w_f, backend="numpy")
    R = R + 1e-3 * np.eye(R.shape[-1])[None] * np.trace(R, axis1=1, axis2=2).real[:, None, None]

    frames = frame_signal(rng.standard_normal(16000 * 10), 16000) * np.hamming(400)
    r = autocorrelation(frames, 10)

    dims = np.array([20.0, 15.0, 3.0])
    src = np.array([5.0, 5.0, 1.5])
    mics = np.array([[8.0, 6.0, 1.2], [8.2, 6.0, 1.2]])
    beta = np.full(6, np.sqrt(0.5))

    return {
        "weighted_correlations (F=513, T=250, DK=20)":
            lambda b: kernels.weighted_correlations(stack_f, x_f, w_f, backend=b),
        "hermitian_solve (F=513, 20x20)":
            lambda b: kernels.hermitian_solve(R, P, backend=b),
        "image_source_rir (order 12, 2 mics, 1 s)":
            lambda b: kernels.image_source_rir(src, mics, dims, beta, 12, 16000, 16000, 343.0, backend=b),
        "image_source_rir fractional (order 4)":
            lambda b: kernels.image_source_rir(src, mics, dims, beta, 4, 16000, 16000, 343.0,
                                               fractional=True, backend=b),
        "levinson (998 frames, order 10)":
            lambda b: kernels.levinson(r, backend=b),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return [np.asarray(o, dtype=complex).ravel() for o in out]
    return [np.asarray(out, dtype=complex).ravel()]


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':46s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fn in _cases(np.random.default_rng(args.seed)).items():
        ref = _flatten(fn("numpy"))
        got = _flatten(fn("numba"))
        diff = max(float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(ref, got))
        t_np = _best(lambda: fn("numpy"), args.repeat)
        t_nb = _best(lambda: fn("numba"), args.repeat)
        print(f"{name:46s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
