# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels.

Same contract as ``gcb_lab._kernels_py``: Philox4x64-10 normals keyed by
``(seed, KEY1)`` on the counter ``(block, 0, path, tag)``, Box-Muller
transform, and a fused Euler-Maruyama loop per path.  All loops run without
the GIL so the engine can split paths across threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, sin

cnp.import_array()

NAME = "compiled"

cdef extern from *:
    """
    #include <stdint.h>
    typedef unsigned __int128 gcb_u128;

    static inline void gcb_philox4x64(uint64_t c[4], uint64_t k0, uint64_t k1) {
        const uint64_t M0 = 0xD2E7470EE14C6C93ULL, M1 = 0xCA5A826395121157ULL;
        const uint64_t W0 = 0x9E3779B97F4A7C15ULL, W1 = 0xBB67AE8584CAA73BULL;
        int r;
        for (r = 0; r < 10; r++) {
            if (r) { k0 += W0; k1 += W1; }
            gcb_u128 p0 = (gcb_u128)M0 * c[0];
            gcb_u128 p1 = (gcb_u128)M1 * c[2];
            uint64_t hi0 = (uint64_t)(p0 >> 64), lo0 = (uint64_t)p0;
            uint64_t hi1 = (uint64_t)(p1 >> 64), lo1 = (uint64_t)p1;
            uint64_t n0 = hi1 ^ c[1] ^ k0;
            uint64_t n2 = hi0 ^ c[3] ^ k1;
            c[0] = n0; c[1] = lo1; c[2] = n2; c[3] = lo0;
        }
    }

    typedef struct {
        uint64_t seed, tag, path, block;
        double buf[4];
        int pos;
    } gcb_stream;

    static inline void gcb_fill_normals(gcb_stream *st) {
        const uint64_t KEY1 = 0xA4093822299F31D0ULL;
        const double TWO_M53 = 1.0 / 9007199254740992.0;
        const double TWO_PI = 6.283185307179586;
        uint64_t c[4];
        int j;
        c[0] = st->block; c[1] = 0; c[2] = st->path; c[3] = st->tag;
        gcb_philox4x64(c, st->seed, KEY1);
        for (j = 0; j < 2; j++) {
            double u1 = ((double)(c[2 * j] >> 11) + 1.0) * TWO_M53;
            double u2 = (double)(c[2 * j + 1] >> 11) * TWO_M53;
            double rad = sqrt(-2.0 * log(u1));
            double ang = TWO_PI * u2;
            st->buf[2 * j] = rad * cos(ang);
            st->buf[2 * j + 1] = rad * sin(ang);
        }
    }

    /* Position the stream at flattened index `index` (= step * m + component). */
    static inline void gcb_seek(gcb_stream *st, uint64_t seed, uint64_t tag,
                                uint64_t path, uint64_t index) {
        st->seed = seed; st->tag = tag; st->path = path;
        st->block = index >> 2;
        st->pos = (int)(index & 3);
        gcb_fill_normals(st);
    }

    static inline double gcb_next(gcb_stream *st) {
        if (st->pos == 4) {
            st->block++;
            st->pos = 0;
            gcb_fill_normals(st);
        }
        return st->buf[st->pos++];
    }

    static inline void gcb_uniform_block(uint64_t seed, uint64_t tag, uint64_t path,
                                         uint64_t block, double out[4]) {
        const uint64_t KEY1 = 0xA4093822299F31D0ULL;
        const double TWO_M53 = 1.0 / 9007199254740992.0;
        uint64_t c[4];
        int j;
        c[0] = block; c[1] = 0; c[2] = path; c[3] = tag;
        gcb_philox4x64(c, seed, KEY1);
        for (j = 0; j < 4; j++)
            out[j] = ((double)(c[j] >> 11) + 0.5) * TWO_M53;
    }
    """
    void gcb_philox4x64(cnp.uint64_t c[4], cnp.uint64_t k0, cnp.uint64_t k1) nogil
    ctypedef struct gcb_stream:
        pass
    void gcb_seek(gcb_stream *st, cnp.uint64_t seed, cnp.uint64_t tag,
                  cnp.uint64_t path, cnp.uint64_t index) nogil
    double gcb_next(gcb_stream *st) nogil
    void gcb_uniform_block(cnp.uint64_t seed, cnp.uint64_t tag, cnp.uint64_t path,
                           cnp.uint64_t block, double out[4]) nogil

cdef enum:
    MAXDIM = 64
    K_LINEAR = 0
    K_LORENZ = 1
    K_DESCENTE = 2

MODEL_LINEAR = 0
MODEL_LORENZ = 1
MODEL_DESCENTE = 2
BLOWUP_NORM = 1e12


def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64-10 on broadcastable counters (reference/test entry point)."""
    arrs = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3)))
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(a).ravel() for a in arrs]
    cdef Py_ssize_t n = flat[0].shape[0], i
    outs = [np.empty(n, dtype=np.uint64) for _ in range(4)]
    cdef cnp.uint64_t[::1] a0 = flat[0], a1 = flat[1], a2 = flat[2], a3 = flat[3]
    cdef cnp.uint64_t[::1] o0 = outs[0], o1 = outs[1], o2 = outs[2], o3 = outs[3]
    cdef cnp.uint64_t key0 = <cnp.uint64_t>(int(k0) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.uint64_t key1 = <cnp.uint64_t>(int(k1) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.uint64_t c[4]
    for i in range(n):
        c[0] = a0[i]; c[1] = a1[i]; c[2] = a2[i]; c[3] = a3[i]
        gcb_philox4x64(c, key0, key1)
        o0[i] = c[0]; o1[i] = c[1]; o2[i] = c[2]; o3[i] = c[3]
    return tuple(o.reshape(shape) for o in outs)


def normals(seed, tag, step, paths, int m):
    cdef cnp.uint64_t[::1] p = np.ascontiguousarray(paths, dtype=np.uint64)
    cdef Py_ssize_t n = p.shape[0], i
    cdef int j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef cnp.uint64_t s = <cnp.uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.uint64_t tg = <cnp.uint64_t>tag
    cdef cnp.uint64_t start = <cnp.uint64_t>step * <cnp.uint64_t>m
    cdef gcb_stream st
    if m == 0:
        return out
    with nogil:
        for i in range(n):
            gcb_seek(&st, s, tg, p[i], start)
            for j in range(m):
                o[i, j] = gcb_next(&st)
    return out


def uniforms(seed, tag, step, paths, int m):
    cdef cnp.uint64_t[::1] p = np.ascontiguousarray(paths, dtype=np.uint64)
    cdef Py_ssize_t n = p.shape[0], i
    cdef int j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    cdef cnp.uint64_t s = <cnp.uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.uint64_t tg = <cnp.uint64_t>tag
    cdef cnp.uint64_t idx, start = <cnp.uint64_t>step * <cnp.uint64_t>m
    cdef double buf[4]
    if m == 0:
        return out
    with nogil:
        for i in range(n):
            for j in range(m):
                idx = start + <cnp.uint64_t>j
                if j == 0 or (idx & 3) == 0:
                    gcb_uniform_block(s, tg, p[i], idx >> 2, buf)
                o[i, j] = buf[idx & 3]
    return out


def advance(int model, params, double[:, ::1] x, paths, seed, long long step0,
            long long n_steps, double dt, long long[::1] status):
    """Fused Euler-Maruyama loop; see ``_kernels_py.advance`` for semantics."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.uint64_t[::1] p = np.ascontiguousarray(paths, dtype=np.uint64)
    cdef double[:, ::1] bmat, smat
    cdef double ls = 0.0, lr = 0.0, lb = 0.0, lscale = 0.0
    cdef int m
    if model == K_LINEAR:
        bmat = np.ascontiguousarray(params[0], dtype=np.float64)
        smat = np.ascontiguousarray(params[1], dtype=np.float64)
        m = smat.shape[1]
    elif model == K_LORENZ:
        ls, lr, lb, lscale = params[0][0], params[0][1], params[0][2], params[0][3]
        m = 3
        bmat = np.zeros((1, 1))
        smat = np.zeros((1, 1))
    elif model == K_DESCENTE:
        m = <int>d
        bmat = np.zeros((1, 1))
        smat = np.zeros((1, 1))
    else:
        raise ValueError(f"unknown kernel model {model}")
    if d > MAXDIM or m > MAXDIM:
        raise ValueError("kernel dimension limit exceeded")
    cdef cnp.uint64_t s = <cnp.uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef double sqdt = sqrt(dt)
    cdef double dw[MAXDIM]
    cdef double f[MAXDIM]
    cdef double nw[MAXDIM]
    cdef double acc, sq, lim = BLOWUP_NORM * BLOWUP_NORM
    cdef Py_ssize_t i, j, a
    cdef long long k, step
    cdef gcb_stream st
    with nogil:
        for i in range(n):
            if status[i] >= 0:
                continue
            gcb_seek(&st, s, 0, p[i], <cnp.uint64_t>step0 * <cnp.uint64_t>m)
            for k in range(n_steps):
                step = step0 + k
                for j in range(m):
                    dw[j] = gcb_next(&st) * sqdt
                if model == K_LINEAR:
                    for a in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc = acc + bmat[a, j] * x[i, j]
                        f[a] = acc
                    for a in range(d):
                        acc = 0.0
                        for j in range(m):
                            acc = acc + smat[a, j] * dw[j]
                        nw[a] = x[i, a] + dt * f[a] + acc
                elif model == K_LORENZ:
                    f[0] = ls * (x[i, 1] - x[i, 0])
                    f[1] = -lr * x[i, 0] - x[i, 1] - x[i, 0] * x[i, 2]
                    f[2] = x[i, 0] * x[i, 1] - lb * (x[i, 2] + 2.0 * lr)
                    for a in range(3):
                        nw[a] = x[i, a] + dt * f[a] + lscale * dw[a]
                else:
                    sq = 0.0
                    for j in range(d):
                        sq = sq + x[i, j] * x[i, j]
                    for a in range(d):
                        f[a] = -x[i, a] * (1.0 + sq)
                    for a in range(d):
                        nw[a] = x[i, a] + dt * f[a] + dw[a]
                sq = 0.0
                for a in range(d):
                    sq = sq + nw[a] * nw[a]
                if not (sq <= lim):
                    status[i] = step
                    break
                for a in range(d):
                    x[i, a] = nw[a]
