import os
import subprocess
import sys

import numpy as np
import pytest

from reluverify import kernels


def test_env_forces_fallback():
    env = dict(os.environ, RELUVERIFY_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from reluverify import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_default_backend_is_active():
    assert kernels.get_backend() is kernels.BACKENDS[kernels.BACKEND]


def test_pivot_backends_agree(backend):
    rng = np.random.default_rng(0)
    T = rng.normal(size=(5, 8))
    ref = T.copy()
    kernels.get_backend("python").pivot(ref, 2, 3)
    kernels.get_backend(backend).pivot(T, 2, 3)
    np.testing.assert_allclose(T, ref, rtol=1e-13, atol=1e-13)
    assert T[2, 3] == 1.0 and np.all(np.delete(T[:, 3], 2) == 0.0)


def test_relax_layer_backends_agree(backend):
    rng = np.random.default_rng(1)
    lo = rng.uniform(-2, 0.5, 6)
    up = lo + rng.uniform(0, 3, 6)
    st = rng.integers(-1, 2, 6).astype(np.int8)
    A = rng.normal(size=(3, 6))
    alpha = rng.uniform(0, 1, 6)
    ref = kernels.get_backend("python").relax_layer(A, lo, up, st, alpha)
    got = kernels.get_backend(backend).relax_layer(A, lo, up, st, alpha)
    for r, g in zip(ref, got):
        np.testing.assert_allclose(np.asarray(g), np.asarray(r), rtol=1e-14, atol=1e-14)
