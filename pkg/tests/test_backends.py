"""The compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from cogload import _backend, _kernels_py

compiled = pytest.mark.skipif("cython" not in _backend.BACKENDS, reason="extension not built")


def _gmm_args(rng, n=300, C=7, F=5):
    X = rng.standard_normal((n, F)) * 3
    w = rng.random(C) + 0.1
    return X, w / w.sum(), rng.standard_normal((C, F)) * 2, rng.random((C, F)) + 0.2


@compiled
@pytest.mark.parametrize("second", [True, False])
def test_gmm_accumulate_parity(rng, second):
    args = _gmm_args(rng)
    ref = _kernels_py.gmm_accumulate(*args, second)
    got = _backend.BACKENDS["cython"].gmm_accumulate(*args, second)
    assert len(ref) == len(got) == 4
    for a, b in zip(ref, got):
        assert a.shape == b.shape
        np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-10)


@compiled
def test_posterior_and_kmeans_parity(rng):
    args = _gmm_args(rng)
    kc = _backend.BACKENDS["cython"]
    np.testing.assert_allclose(kc.gmm_posteriors(*args), _kernels_py.gmm_posteriors(*args), rtol=1e-10, atol=1e-13)
    X, centers = args[0], args[2]
    la, da = _kernels_py.kmeans_assign(X, centers)
    lb, db = kc.kmeans_assign(X, centers)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(db, da, rtol=1e-10, atol=1e-10)


@compiled
@pytest.mark.parametrize("mode", [0, 1, 2])
def test_pooling_parity_is_exact(rng, mode):
    X = rng.standard_normal((50, 9))
    flat = np.array([0, 3, 4, 8, 2, 1, 5, 8], dtype=np.int64)
    offsets = np.array([0, 1, 4, 8], dtype=np.int64)
    if mode == 0:
        flat, offsets = flat[:3], np.arange(4, dtype=np.int64)
    a = _kernels_py.pool_groups(X, flat, offsets, mode)
    b = _backend.BACKENDS["cython"].pool_groups(X, flat, offsets, mode)
    assert a.tobytes() == b.tobytes()


@compiled
@pytest.mark.parametrize("window", [1, 3, 16])
def test_trailing_mean_parity_is_exact(rng, window):
    X = rng.standard_normal((40, 4))
    starts = np.repeat([0, 10, 25], [10, 15, 15]).astype(np.int64)
    a = _kernels_py.trailing_mean(X, starts, window)
    b = _backend.BACKENDS["cython"].trailing_mean(X, starts, window)
    assert a.tobytes() == b.tobytes()


def test_use_backend_restores_previous():
    before = _backend.name()
    with _backend.use_backend("python") as kern:
        assert kern is _kernels_py
        assert _backend.name() == "python"
    assert _backend.name() == before
    with pytest.raises(ValueError):
        _backend.set_backend("fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, COGLOAD_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from cogload import _backend; print(_backend.name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
