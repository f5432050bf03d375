"""Compare the compiled and pure-Python kernel backends.

Runs each elementwise kernel on a range of vector sizes and times a full
training step (forward, backward, Adam update) of a small recurrent model
under both backends.

Usage: python3 benchmarks/bench_kernels.py
"""

import importlib
import os
import sys
import time
from fractions import Fraction

import numpy as np


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(backend):
    rng = np.random.default_rng(0)
    rows = []
    for size in (64, 512, 4096):
        x = rng.standard_normal(size)
        y = np.empty(size)
        dy = rng.standard_normal(size)
        dx = np.zeros(size)
        m = np.zeros(size)
        v = np.zeros(size)
        backend.sigmoid(x, y)
        cases = {
            "sigmoid": lambda: backend.sigmoid(x, y),
            "sigmoid_bwd": lambda: backend.sigmoid_backward(y, dy, dx),
            "tanh": lambda: backend.tanh(x, y),
            "tanh_bwd": lambda: backend.tanh_backward(y, dy, dx),
            "softmax": lambda: backend.softmax(x, y),
            "adam": lambda: backend.adam_update(x, dy, m, v,
                                                1e-3, 0.9, 0.999, 1e-8, 1),
        }
        for name, fn in cases.items():
            # amortize timer overhead over a burst of calls
            burst = 200
            best = time_call(lambda: [fn() for _ in range(burst)], 5)
            rows.append((name, size, best / burst * 1e6))
    return rows


def bench_training_step():
    """One optimizer step of a small recurrent language model."""
    from melodygen.models import ModelConfig, build_model
    from melodygen.optim import adam_step
    from melodygen.autodiff import backward
    from melodygen.tokenizer import TokenizedNote, Vocab

    vocab = Vocab(delay_ratios=[Fraction(1, 2), Fraction(1), Fraction(2)],
                  octave_range=(4, 6), meta_labels=["default"])
    model = build_model(vocab, ModelConfig(kind="lm", hidden=64), seed=0)
    tokens = [TokenizedNote(k % 12, 4 + k % 3, k % 3) for k in range(32)]

    def step():
        model.store.zero_grads()
        parts = model.loss(tokens, 0)
        backward(parts.loss)
        adam_step(model.store, lr=1e-3)

    step()  # warm up
    return time_call(lambda: [step() for _ in range(5)], 3) / 5


def run_backend(name):
    module = "melodygen._kernels_cy" if name == "cython" else "melodygen._kernels_py"
    backend = importlib.import_module(module)
    print(f"\n=== backend: {backend.NAME} ===")
    print(f"{'kernel':<14}{'size':>6}{'us/call':>12}")
    for kernel, size, us in bench_kernels(backend):
        print(f"{kernel:<14}{size:>6}{us:>12.2f}")


def main():
    for name in ("python", "cython"):
        try:
            run_backend(name)
        except ImportError as e:
            print(f"backend {name} unavailable: {e}")

    # training-step timing runs in subprocesses because the backend is
    # chosen once at package import time
    import subprocess
    print("\n=== full training step (32-note sequence, hidden 64) ===")
    for name in ("python", "cython"):
        env = {k: v for k, v in os.environ.items() if k != "MELODYGEN_PURE_PY"}
        if name == "python":
            env["MELODYGEN_PURE_PY"] = "1"
        code = ("from benchmarks.bench_kernels import bench_training_step;"
                "import melodygen.kernels as k;"
                "print(f'{k.BACKEND:<10}{bench_training_step()*1000:10.2f} ms/step')")
        proc = subprocess.run([sys.executable, "-c", code], env=env,
                              cwd=os.path.dirname(os.path.dirname(
                                  os.path.abspath(__file__))),
                              capture_output=True, text=True)
        out = proc.stdout.strip()
        print(out if out else f"{name}: failed\n{proc.stderr}")


if __name__ == "__main__":
    main()
