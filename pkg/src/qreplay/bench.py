"""Benchmark the compiled kernels against the NumPy fallback.

Times each backend on the shapes the trainer actually runs (784-100-100-10
network, batch 512, 28x28 rotations) plus a composite forward+backward
layer pass. Invoked via ``qreplay bench``.
"""

import time

import numpy as np

from . import _kernels_np
from .data import rotation_plan

try:
    from . import _core
except ImportError:
    _core = None


def _time(fn, repeat):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1e3  # ms


def _composite_step(impl, x, w1, b1, w2, b2, labels):
    z1 = impl.linear_forward(x, w1, b1)
    a1 = impl.relu_forward(z1)
    z2 = impl.linear_forward(a1, w2, b2)
    _, dlogits = impl.softmax_xent(z2, labels)
    dw2, db2, da1 = impl.linear_backward(dlogits, a1, w2, want_dx=True)
    dz1 = impl.relu_backward(da1, z1)
    impl.linear_backward(dz1, x, w1, want_dx=False)


def benchmark_cases(batch=512, repeat=30, seed=0):
    """Yield (name, numpy_ms, compiled_ms_or_None) case by case."""
    rng = np.random.default_rng(seed)
    x = rng.random((batch, 784))
    w1 = rng.standard_normal((100, 784)) * 0.05
    b1 = np.zeros(100)
    wo = rng.standard_normal((10, 100)) * 0.05
    bo = np.zeros(10)
    logits = rng.standard_normal((batch, 10))
    labels = rng.integers(0, 10, size=batch)
    delta = rng.standard_normal((batch, 100)) * 0.01
    images = rng.random((1000, 784))
    indices, weights = rotation_plan(50)

    cases = [
        ("linear_forward 512x784->100",
         lambda impl: impl.linear_forward(x, w1, b1)),
        ("linear_backward 512x784->100",
         lambda impl: impl.linear_backward(delta, x, w1, want_dx=True)),
        ("softmax_xent 512x10",
         lambda impl: impl.softmax_xent(logits, labels)),
        ("rotate 1000 images",
         lambda impl: impl.apply_rotation_plan(images, indices, weights)),
        ("fwd+bwd 784-100-10, batch 512",
         lambda impl: _composite_step(impl, x, w1, b1, wo, bo, labels)),
    ]
    for name, fn in cases:
        np_ms = _time(lambda: fn(_kernels_np), repeat)
        core_ms = _time(lambda: fn(_core), repeat) if _core is not None else None
        yield name, np_ms, core_ms


def format_report(batch=512, repeat=30):
    lines = []
    if _core is None:
        lines.append("compiled backend not built; showing numpy only")
    header = f"{'kernel':<34}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for name, np_ms, core_ms in benchmark_cases(batch=batch, repeat=repeat):
        if core_ms is None:
            lines.append(f"{name:<34}{np_ms:>10.3f}{'-':>13}{'-':>9}")
        else:
            lines.append(
                f"{name:<34}{np_ms:>10.3f}{core_ms:>13.3f}"
                f"{np_ms / core_ms:>8.2f}x"
            )
    return "\n".join(lines)
