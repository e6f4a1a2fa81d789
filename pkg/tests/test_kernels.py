"""numba/numpy kernel interchangeability and env-flag selection."""

import subprocess
import sys

import numpy as np

from bodyregion._kernels import (_affine_warp_loop, _affine_warp_numpy,
                                 _packbits_loop, _packbits_numpy)
from bodyregion.pixels import packbits_encode


class TestAffineWarpEquivalence:
    def test_paths_agree_on_random_warps(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            src = rng.random((31, 37))
            m = np.eye(2) + 0.2 * rng.standard_normal((2, 2))
            t0, t1 = rng.uniform(-5, 5, 2)
            out_a = np.empty((29, 33))
            out_b = np.empty((29, 33))
            _affine_warp_loop(src, m[0, 0], m[0, 1], m[1, 0], m[1, 1],
                              t0, t1, out_a)
            _affine_warp_numpy(src, m[0, 0], m[0, 1], m[1, 0], m[1, 1],
                               t0, t1, out_b)
            assert np.allclose(out_a, out_b, atol=1e-12)

    def test_identity_warp(self):
        src = np.random.default_rng(1).random((16, 16))
        out = np.empty_like(src)
        _affine_warp_numpy(src, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, out)
        assert np.allclose(out, src)

    def test_outside_is_zero(self):
        src = np.ones((8, 8))
        out = np.empty((8, 8))
        _affine_warp_loop(src, 1.0, 0.0, 0.0, 1.0, 100.0, 0.0, out)
        assert np.all(out == 0.0)


class TestPackbitsEquivalence:
    def test_bit_for_bit(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(0, 2000))
            payload = rng.integers(0, 4, n).astype(np.uint8) * 85
            enc = np.frombuffer(packbits_encode(payload.tobytes()),
                                dtype=np.uint8)
            a = np.zeros(n + 4, dtype=np.uint8)
            b = np.zeros(n + 4, dtype=np.uint8)
            assert _packbits_loop(enc, a) == _packbits_numpy(enc, b)
            assert np.array_equal(a, b)


class TestEnvFlag:
    def test_disable_via_env(self):
        code = ("import os; os.environ['BODYREGION_NUMBA']='0'; "
                "from bodyregion import _kernels; "
                "print(_kernels.USE_NUMBA, "
                "_kernels.packbits_decode is _kernels._packbits_numpy)")
        out = subprocess.run([sys.executable, "-c", code],
                             capture_output=True, text=True, check=True)
        assert out.stdout.split() == ["False", "True"]
