"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on decoder-sized inputs, then one short training run
per backend (in a subprocess, since the backend is chosen at import).
"""
import argparse
import os
import subprocess
import sys
import textwrap
import timeit

import numpy as np

from rattlab.kernels import _reference

try:
    from rattlab.kernels import _lstm_ext
except ImportError:
    _lstm_ext = None


def kernel_cases(B=32, H=64, V=450, T=12):
    r = np.random.default_rng(0)
    z = r.normal(size=(B, 4 * H))
    c_prev = r.normal(size=(B, H))
    acts, c, _ = _reference.gates_forward(z, c_prev, False)
    dh, dc = r.normal(size=(B, H)), r.normal(size=(B, H))
    logits = r.normal(size=(T * B, V))
    support = r.random(V) < 0.4
    support[:2] = True
    targets = np.zeros(T * B, dtype=np.int64)
    weights = np.ones(T * B)
    return {
        "gates_forward": ((z, c_prev, False), {}),
        "gates_backward": ((acts, c_prev, c, dh, dc, False), {}),
        "masked_xent": ((logits, support, targets, weights), {}),
    }


TRAIN_SNIPPET = textwrap.dedent(
    """
    import sys, time
    sys.path.insert(0, {tests!r})
    from conftest import make_tasks
    from rattlab.harness import TrainConfig, run_sequence
    from rattlab.kernels import BACKEND
    tasks = make_tasks(2, 300)
    t0 = time.perf_counter()
    run_sequence(tasks, TrainConfig(method="RATT", epochs=2))
    print(BACKEND, time.perf_counter() - t0)
    """
)


def time_training():
    tests = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tests")
    code = TRAIN_SNIPPET.format(tests=tests)
    out = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("RATTLAB_PURE_PYTHON", None)
        if pure:
            env["RATTLAB_PURE_PYTHON"] = "1"
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args(argv)

    if _lstm_ext is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<16}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for name, (a, kw) in kernel_cases().items():
        ref = min(timeit.repeat(lambda: getattr(_reference, name)(*a, **kw), number=args.number, repeat=args.repeat))
        ref_us = ref / args.number * 1e6
        if _lstm_ext is None:
            print(f"{name:<16}{ref_us:>12.1f}{'-':>13}{'-':>9}")
            continue
        ext = min(timeit.repeat(lambda: getattr(_lstm_ext, name)(*a, **kw), number=args.number, repeat=args.repeat))
        ext_us = ext / args.number * 1e6
        print(f"{name:<16}{ref_us:>12.1f}{ext_us:>13.1f}{ref_us / ext_us:>8.2f}x")

    if not args.skip_training:
        t = time_training()
        line = ", ".join(f"{k} {v:.2f}s" for k, v in sorted(t.items()))
        print(f"two-task RATT run, 2 epochs: {line}")


if __name__ == "__main__":
    main()
