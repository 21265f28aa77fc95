"""Pure numpy implementation of the simulation kernels.

This is the fallback used when the compiled extension ``gcb_lab._kernels``
is unavailable (or disabled through ``GCB_LAB_BACKEND=python``).  It follows
the exact counter layout and floating point operation order of the compiled
kernels, so the two backends agree to rounding of the transcendental
functions.

Random numbers come from Philox4x64-10 evaluated on the counter
``(block, 0, path, tag)`` under the key ``(seed, KEY1)``.  For a stream of
``m`` variates per step, variate ``j`` of step ``k`` has flattened index
``k * m + j`` and lives in lane ``index % 4`` of block ``index // 4``.  Every
variate is therefore a pure function of ``(seed, tag, path, step,
component)``, which is what makes ensembles independent of how paths are
split across workers.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

KEY1 = 0xA4093822299F31D0
PHILOX_M0 = 0xD2E7470EE14C6C93
PHILOX_M1 = 0xCA5A826395121157
PHILOX_W0 = 0x9E3779B97F4A7C15
PHILOX_W1 = 0xBB67AE8584CAA73B

MODEL_LINEAR = 0
MODEL_LORENZ = 1
MODEL_DESCENTE = 2

BLOWUP_NORM = 1e12

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53
_TWO_PI = 6.283185307179586


def _mulhilo(a, b):
    b = np.uint64(b)
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _M32) + (hl & _M32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds on broadcastable uint64 arrays."""
    with np.errstate(over="ignore"):
        c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3)))
        k0 = np.uint64(k0)
        k1 = np.uint64(k1)
        for r in range(10):
            if r:
                k0 = np.uint64((int(k0) + PHILOX_W0) & 0xFFFFFFFFFFFFFFFF)
                k1 = np.uint64((int(k1) + PHILOX_W1) & 0xFFFFFFFFFFFFFFFF)
            hi0, lo0 = _mulhilo(c0, PHILOX_M0)
            hi1, lo1 = _mulhilo(c2, PHILOX_M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _words(seed, tag, step, paths, m):
    first = (int(step) * m) // 4
    last = (int(step) * m + m - 1) // 4
    paths = np.asarray(paths, dtype=np.uint64)
    blocks = np.arange(first, last + 1, dtype=np.uint64)
    words = philox4x64(
        blocks[None, :],
        np.uint64(0),
        paths[:, None],
        np.uint64(tag),
        int(seed) & 0xFFFFFFFFFFFFFFFF,
        KEY1,
    )
    return words, int(step) * m - 4 * first


def normals(seed, tag, step, paths, m):
    """Standard normals of shape ``(len(paths), m)``."""
    if m == 0:
        return np.empty((len(paths), 0))
    (w0, w1, w2, w3), off = _words(seed, tag, step, paths, m)
    n = w0.shape[0]
    out = np.empty((n, w0.shape[1] * 4))
    for j, (wa, wb) in enumerate(((w0, w1), (w2, w3))):
        u1 = ((wa >> _S11).astype(np.float64) + 1.0) * _TWO_M53
        u2 = (wb >> _S11).astype(np.float64) * _TWO_M53
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = _TWO_PI * u2
        out[:, 2 * j::4] = rad * np.cos(ang)
        out[:, 2 * j + 1::4] = rad * np.sin(ang)
    return out[:, off:off + m]


def uniforms(seed, tag, step, paths, m):
    """Uniforms on the open interval (0, 1), shape ``(len(paths), m)``."""
    if m == 0:
        return np.empty((len(paths), 0))
    words, off = _words(seed, tag, step, paths, m)
    n = words[0].shape[0]
    out = np.empty((n, words[0].shape[1] * 4))
    for j, w in enumerate(words):
        out[:, j::4] = ((w >> _S11).astype(np.float64) + 0.5) * _TWO_M53
    return out[:, off:off + m]


def _drift(model, params, x):
    if model == MODEL_LINEAR:
        bmat = params[0]
        d = x.shape[1]
        out = np.zeros_like(x)
        for i in range(d):
            acc = np.zeros(x.shape[0])
            for j in range(d):
                acc = acc + bmat[i, j] * x[:, j]
            out[:, i] = acc
        return out
    if model == MODEL_LORENZ:
        s, r, b = params[0][0], params[0][1], params[0][2]
        px, py, pz = x[:, 0], x[:, 1], x[:, 2]
        return np.stack(
            [s * (py - px), -r * px - py - px * pz, px * py - b * (pz + 2.0 * r)], axis=1
        )
    if model == MODEL_DESCENTE:
        sq = np.zeros(x.shape[0])
        for j in range(x.shape[1]):
            sq = sq + x[:, j] * x[:, j]
        return -x * (1.0 + sq)[:, None]
    raise ValueError(f"unknown kernel model {model}")


def _noise_matrix(model, params, d):
    if model == MODEL_LINEAR:
        return params[1]
    if model == MODEL_LORENZ:
        return params[0][3] * np.eye(3)
    return np.eye(d)


def advance(model, params, x, paths, seed, step0, n_steps, dt, status):
    """Advance ``x`` (modified in place) by ``n_steps`` Euler-Maruyama steps.

    ``status[i]`` is -1 while path ``i`` is alive and holds the global step
    index of its blow-up otherwise; blown paths are frozen at their last
    finite state.
    """
    n, d = x.shape
    smat = _noise_matrix(model, params, d)
    m = smat.shape[1]
    sqdt = np.sqrt(dt)
    for k in range(n_steps):
        step = step0 + k
        dw = normals(seed, 0, step, paths, m) * sqdt
        f = _drift(model, params, x)
        new = np.empty_like(x)
        for i in range(d):
            acc = np.zeros(n)
            for j in range(m):
                acc = acc + smat[i, j] * dw[:, j]
            new[:, i] = x[:, i] + dt * f[:, i] + acc
        with np.errstate(invalid="ignore", over="ignore"):
            sq = np.zeros(n)
            for i in range(d):
                sq = sq + new[:, i] * new[:, i]
            bad = ~(sq <= BLOWUP_NORM * BLOWUP_NORM)
        alive = status < 0
        ok = alive & ~bad
        x[ok] = new[ok]
        status[alive & bad] = step
