"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run as a script; it times the selected build of each kernel (numba unless
BODYREGION_NUMBA=0 or numba is unavailable) against the pure-numpy
fallback on representative workloads. The numba path is warmed up first
so JIT compilation is excluded from the timings.
"""

from __future__ import annotations

import time

import numpy as np

from bodyregion._kernels import (USE_NUMBA, _affine_warp_numpy,
                                 _packbits_numpy, affine_warp,
                                 packbits_decode)
from bodyregion.pixels import packbits_encode

_SELECTED = "numba" if USE_NUMBA else "numpy"


def _time(fn, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_packbits() -> None:
    rng = np.random.default_rng(0)
    # CT-like byte plane: long runs (air) mixed with noisy tissue.
    plane = np.where(rng.random(512 * 512) < 0.6, 0,
                     rng.integers(0, 256, 512 * 512)).astype(np.uint8)
    encoded = np.frombuffer(packbits_encode(plane.tobytes()), dtype=np.uint8)
    out = np.empty(plane.size, dtype=np.uint8)

    for _ in range(2):  # JIT warmup
        packbits_decode(encoded, out)
    t_sel = _time(lambda: packbits_decode(encoded, out))
    t_np = _time(lambda: _packbits_numpy(encoded, out))
    _report("packbits_decode (512x512 plane)", t_sel, t_np)


def bench_affine() -> None:
    rng = np.random.default_rng(1)
    img = rng.random((224, 224))
    m00, m01, m10, m11 = 0.95, 0.11, -0.11, 0.95
    t0, t1 = 5.0, -3.0
    out = np.empty_like(img)

    for _ in range(2):
        affine_warp(img, m00, m01, m10, m11, t0, t1, out)
    t_sel = _time(lambda: affine_warp(img, m00, m01, m10, m11, t0, t1, out))
    t_np = _time(
        lambda: _affine_warp_numpy(img, m00, m01, m10, m11, t0, t1, out))
    _report("affine_warp (224x224)", t_sel, t_np)


def _report(label: str, t_sel: float, t_np: float) -> None:
    ratio = t_np / t_sel if t_sel > 0 else float("inf")
    print(f"{label:34s}  {_SELECTED} {1e3 * t_sel:8.3f} ms  "
          f"numpy {1e3 * t_np:8.3f} ms  ratio {ratio:5.1f}x")


if __name__ == "__main__":
    print(f"numba enabled: {USE_NUMBA}")
    bench_packbits()
    bench_affine()
