from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from gcb_lab import _kernels_py, kernels
from gcb_lab.processes import make_descente, make_gl_chain, make_noisy_lorenz, make_ou_1d

U64 = st.integers(min_value=0, max_value=2**64 - 1)
HAS_COMPILED = "compiled" in kernels.available()
needs_compiled = pytest.mark.skipif(not HAS_COMPILED, reason="compiled backend not built")


def _np_philox(counter, key):
    # numpy bumps its 256-bit counter before producing a block
    n = (sum(c << (64 * i) for i, c in enumerate(counter)) - 1) % 2**256
    c = np.array([(n >> (64 * i)) & (2**64 - 1) for i in range(4)], dtype=np.uint64)
    g = np.random.Philox(counter=c, key=np.array(key, dtype=np.uint64))
    return [int(v) for v in g.random_raw(4)]


def test_philox_random123_vector(backend_module):
    out = backend_module.philox4x64(0, 0, 0, 0, 0, 0)
    assert [int(np.asarray(v).ravel()[0]) for v in out] == [
        0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B, 0x7E68B68AEC7BA23B]


@given(st.tuples(U64, U64, U64, U64), st.tuples(U64, U64))
def test_philox_matches_numpy(counter, key):
    ours = _kernels_py.philox4x64(*counter, *key)
    assert [int(np.asarray(v)) for v in ours] == _np_philox(counter, key)


@needs_compiled
@given(st.tuples(U64, U64, U64, U64), st.tuples(U64, U64))
def test_philox_backends_agree(counter, key):
    comp = kernels.load("compiled").philox4x64(*counter, *key)
    py = _kernels_py.philox4x64(*counter, *key)
    assert [int(np.asarray(v).ravel()[0]) for v in comp] == [int(np.asarray(v)) for v in py]


@needs_compiled
@pytest.mark.parametrize("m", [1, 2, 3, 5, 11])
def test_normals_and_uniforms_backends_agree(m):
    comp = kernels.load("compiled")
    paths = np.array([0, 1, 7, 2**40 + 3], dtype=np.uint64)
    for step in (0, 1, 13, 10**6):
        a = comp.normals(42, kernels.TAG_INCREMENT, step, paths, m)
        b = _kernels_py.normals(42, kernels.TAG_INCREMENT, step, paths, m)
        assert np.max(np.abs(a - b)) <= 1e-15
        ua = comp.uniforms(42, kernels.TAG_INIT, step, paths, m)
        ub = _kernels_py.uniforms(42, kernels.TAG_INIT, step, paths, m)
        assert np.array_equal(ua, ub)


def test_flattened_layout(backend_module):
    paths = np.arange(5, dtype=np.uint64)
    for s in (0, 3):
        wide = backend_module.normals(9, 0, s, paths, 12)
        narrow = np.hstack([backend_module.normals(9, 0, 4 * s + i, paths, 3) for i in range(4)])
        assert np.array_equal(wide, narrow)


def test_streams_depend_on_path_not_batch(backend_module):
    allp = backend_module.normals(3, 0, 5, np.arange(10, dtype=np.uint64), 2)
    some = backend_module.normals(3, 0, 5, np.array([7, 2], dtype=np.uint64), 2)
    assert np.array_equal(some, allp[[7, 2]])


def test_tags_give_distinct_streams(backend_module):
    p = np.arange(100, dtype=np.uint64)
    a = backend_module.normals(3, kernels.TAG_INCREMENT, 0, p, 1)
    b = backend_module.normals(3, kernels.TAG_INIT, 0, p, 1)
    assert not np.allclose(a, b)


def test_normals_are_standard_gaussian(backend_module):
    z = backend_module.normals(2024, 0, 0, np.arange(50000, dtype=np.uint64), 4).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_uniforms_open_interval(backend_module):
    u = backend_module.uniforms(5, 1, 0, np.arange(20000, dtype=np.uint64), 3)
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u.ravel(), "uniform").pvalue > 1e-3


def _kernel_models():
    return [
        (make_ou_1d(1.0, 1.3), 1e-3),
        (make_gl_chain(5, 1.0, 2.0, 1.0, 0.5), 1e-2),
        (make_noisy_lorenz(10.0, 28.0, 8.0 / 3.0, 1.0), 1e-3),
        (make_descente(2), 1e-4),
    ]


def _advance(mod, spec, dt, step0, n, x):
    model, params = spec.kernel
    paths = np.arange(x.shape[0], dtype=np.uint64)
    status = np.full(x.shape[0], -1, dtype=np.int64)
    mod.advance(model, params, x, paths, 17, step0, n, dt, status)
    return status


@pytest.mark.parametrize("idx", range(4))
def test_advance_split_invariance(backend_module, idx):
    spec, dt = _kernel_models()[idx]
    x0 = np.full((6, spec.dim), 0.3)
    a = x0.copy()
    _advance(backend_module, spec, dt, 0, 40, a)
    b = x0.copy()
    _advance(backend_module, spec, dt, 0, 13, b)
    _advance(backend_module, spec, dt, 13, 27, b)
    assert np.array_equal(a, b)


@needs_compiled
@pytest.mark.parametrize("idx", range(4))
def test_advance_backends_agree(idx):
    spec, dt = _kernel_models()[idx]
    x0 = np.full((8, spec.dim), 0.7)
    a, b = x0.copy(), x0.copy()
    _advance(kernels.load("compiled"), spec, dt, 0, 200, a)
    _advance(_kernels_py, spec, dt, 0, 200, b)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_backend_env_override():
    env = dict(os.environ, GCB_LAB_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from gcb_lab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
