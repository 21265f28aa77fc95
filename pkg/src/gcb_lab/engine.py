"""Euler-Maruyama ensemble simulation, exact OU sampling and coupled pairs."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .kernels import BLOWUP_NORM, TAG_EXACT, TAG_INCREMENT
from .laws import PointMass
from .processes import ProcessSpec

log = logging.getLogger(__name__)

Array = np.ndarray
BLOWUP_FRACTION = 1e-3
GRID_TOL = 1e-9


class BlowUpError(RuntimeError):
    """A path left the finite region (non-finite or norm above 1e12)."""

    def __init__(self, message: str, path_id=None, time=None, count: int = 0, n_paths: int = 0):
        super().__init__(message)
        self.path_id = path_id
        self.time = time
        self.count = count
        self.n_paths = n_paths


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t1 < self.t0:
            raise ValueError("t1 must be >= t0")
        if self.t1 > self.t0:
            k = (self.t1 - self.t0) / self.dt
            if abs(k - round(k)) > GRID_TOL * max(1.0, k):
                raise ValueError(f"(t1 - t0) / dt = {k} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round((self.t1 - self.t0) / self.dt))

    def index(self, t: float) -> int:
        """Grid index of time ``t``; it must be a grid node."""
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if abs(k - kr) > GRID_TOL * max(1.0, abs(k)) or kr < 0 or kr > self.n_steps:
            raise ValueError(f"checkpoint {t} is not a node of the grid")
        return kr

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt


@dataclass
class Ensemble:
    states: Array
    time: float
    seed: int
    dt: float
    n_paths: int
    blown: int = 0
    status: Optional[Array] = None
    paths: Optional[Array] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape[0] != self.n_paths:
            raise ValueError("n_paths does not match the number of states")

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])

    def alive(self) -> Array:
        """States of paths that never blew up."""
        if self.status is None:
            return self.states
        return self.states[self.status < 0]


@dataclass
class CoupledEnsemble:
    states_x: Array
    states_y: Array
    x0: Array
    y0: Array
    time: float
    seed: int
    dt: float = 0.0
    blown: int = 0

    @property
    def n_paths(self) -> int:
        return int(self.states_x.shape[0])


@dataclass
class NonMarkovResult:
    ensembles: list
    z: list
    qv: list
    times: list = field(default_factory=list)


def em_step(spec: ProcessSpec, t: float, x, dt: float, dW, path_id=None):
    """One Euler-Maruyama step ``x + b(t, x) dt + S(t, x) dW``."""
    x = np.asarray(x, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != spec.driver_dim:
        raise ValueError(f"dW needs {spec.driver_dim} components, got {dW.shape[-1]}")
    s = np.asarray(spec.noise(t, x), dtype=float)
    if s.ndim == 2:
        incr = dW @ s.T
    else:
        incr = np.einsum("...ij,...j->...i", s, dW)
    new = x + spec.drift(t, x) * dt + incr
    norm = np.linalg.norm(new, axis=-1)
    bad = ~(norm <= BLOWUP_NORM)
    if np.any(bad):
        where = path_id
        if path_id is not None and np.ndim(path_id) > 0:
            where = np.asarray(path_id)[np.atleast_1d(bad)][0]
        raise BlowUpError(f"path {where} blew up at t={t + dt}", path_id=where, time=t + dt)
    return new


def _advance_generic(spec, x, paths, seed, step0, n_steps, grid, status):
    n = x.shape[0]
    sqdt = math.sqrt(grid.dt)
    m = spec.driver_dim
    for k in range(n_steps):
        step = step0 + k
        t = grid.time(step)
        dw = kernels.backend.normals(seed, TAG_INCREMENT, step, paths, m) * sqdt
        s = np.asarray(spec.noise(t, x), dtype=float)
        if s.ndim == 2:
            incr = dw @ s.T
        else:
            incr = np.einsum("nij,nj->ni", s, dw)
        with np.errstate(over="ignore", invalid="ignore"):
            new = x + spec.drift(t, x) * grid.dt + incr
            bad = ~(np.sum(new * new, axis=1) <= BLOWUP_NORM**2)
        alive = status < 0
        ok = alive & ~bad
        x[ok] = new[ok]
        status[alive & bad] = step
    return n


def _advance(spec, x, paths, seed, step0, n_steps, grid, status):
    if n_steps <= 0:
        return
    if spec.kernel is not None:
        model, params = spec.kernel
        kernels.backend.advance(model, params, x, paths, seed, step0, n_steps, grid.dt, status)
    else:
        _advance_generic(spec, x, paths, seed, step0, n_steps, grid, status)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(int(workers), max(n, 1)))
    bounds = np.linspace(0, n, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_paths(spec, x, paths, seed, grid, idx, workers):
    """Advance ``x`` through the checkpoint indices ``idx``; yields snapshots."""
    status = np.full(x.shape[0], -1, dtype=np.int64)
    pieces = _chunks(x.shape[0], workers)
    snaps = []
    prev = 0

    def job(piece, step0, nsteps):
        a, b = piece
        xs = np.ascontiguousarray(x[a:b])
        st = status[a:b].copy()
        _advance(spec, xs, paths[a:b], seed, step0, nsteps, grid, st)
        return a, b, xs, st

    pool = ThreadPoolExecutor(max_workers=len(pieces)) if len(pieces) > 1 else None
    try:
        for k in idx:
            nsteps = k - prev
            if nsteps > 0:
                if pool is None:
                    results = [job(p, prev, nsteps) for p in pieces]
                else:
                    results = list(pool.map(lambda p: job(p, prev, nsteps), pieces))
                for a, b, xs, st in results:
                    x[a:b] = xs
                    status[a:b] = st
            snaps.append((x.copy(), status.copy()))
            prev = k
    finally:
        if pool is not None:
            pool.shutdown()
    return snaps


def _check_blowups(status: Array, grid: TimeGrid, paths: Array, label: str = ""):
    blown = int(np.count_nonzero(status >= 0))
    n = status.shape[0]
    if blown:
        first = int(np.argmin(np.where(status >= 0, status, np.iinfo(np.int64).max)))
        msg = (f"{blown} of {n} paths blew up{label}; first: path {int(paths[first])} "
               f"at t={grid.time(int(status[first]) + 1):.6g}")
        if blown > BLOWUP_FRACTION * n:
            raise BlowUpError(msg, path_id=int(paths[first]),
                              time=grid.time(int(status[first]) + 1), count=blown, n_paths=n)
        log.warning(msg)
    return blown


def simulate_ensemble(
    spec: ProcessSpec,
    init,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    checkpoints: Optional[Sequence[float]] = None,
    workers: int = 1,
    first_path: int = 0,
) -> list[Ensemble]:
    """Simulate ``n_paths`` paths and return one :class:`Ensemble` per checkpoint.

    The result depends only on ``(spec, init, grid, n_paths, seed)``; the
    path split across ``workers`` threads does not change a single bit.
    """
    if n_paths < 0:
        raise ValueError("n_paths must be nonnegative")
    if checkpoints is None:
        checkpoints = [grid.t1]
    idx = [grid.index(float(t)) for t in checkpoints]
    if any(b < a for a, b in zip(idx, idx[1:])):
        raise ValueError("checkpoints must be non-decreasing")
    if init.dim != spec.dim:
        raise ValueError(f"initial law dimension {init.dim} != model dimension {spec.dim}")
    paths = np.arange(first_path, first_path + n_paths, dtype=np.uint64)
    x = np.ascontiguousarray(init.sample(seed, paths), dtype=float).reshape(n_paths, spec.dim)
    snaps = _run_paths(spec, x, paths, seed, grid, idx, workers)
    out = []
    for t, (xs, st) in zip(checkpoints, snaps):
        blown = _check_blowups(st, grid, paths, f" by t={t}")
        out.append(Ensemble(xs, float(t), int(seed), grid.dt, n_paths, blown, st, paths))
    return out


def exact_ou_sample(kappa: float, sigma: float, x0, t: float, n_paths: int, seed: int,
                    first_path: int = 0) -> Ensemble:
    """Draw from the exact OU transition law started at ``x0``.

    ``x0`` is a number or an initial law object (sampled on the init stream).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    paths = np.arange(first_path, first_path + n_paths, dtype=np.uint64)
    if hasattr(x0, "sample"):
        start = np.asarray(x0.sample(seed, paths), dtype=float)[:, 0]
    else:
        start = np.full(n_paths, float(x0))
    if t == 0:
        return Ensemble(start[:, None], 0.0, int(seed), 0.0, n_paths)
    if kappa == 0:
        var = sigma**2 * t
    else:
        var = sigma**2 * (-math.expm1(-2.0 * kappa * t)) / (2.0 * kappa)
    z = kernels.backend.normals(seed, TAG_EXACT, 0, paths, 1)[:, 0]
    xs = math.exp(-kappa * t) * start + math.sqrt(var) * z
    return Ensemble(xs[:, None], float(t), int(seed), 0.0, n_paths)


def simulate_coupled_pair(spec: ProcessSpec, x, y, grid: TimeGrid, n_paths: int, seed: int,
                          checkpoints: Optional[Sequence[float]] = None,
                          workers: int = 1) -> list[CoupledEnsemble]:
    """Synchronous coupling: both legs of path ``p`` share its increments."""
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    y = np.asarray(y, dtype=float).reshape(spec.dim)
    if not spec.additive:
        warnings.warn("state-dependent noise: synchronous coupling need not contract",
                      stacklevel=2)
    if checkpoints is None:
        checkpoints = [grid.t1]
    idx = [grid.index(float(t)) for t in checkpoints]
    p = np.arange(n_paths, dtype=np.uint64)
    paths = np.concatenate([p, p])
    state = np.vstack([np.tile(x, (n_paths, 1)), np.tile(y, (n_paths, 1))])
    state = np.ascontiguousarray(state)
    snaps = _run_paths(spec, state, paths, seed, grid, idx, workers)
    out = []
    for t, (xs, st) in zip(checkpoints, snaps):
        blown = _check_blowups(st, grid, paths, f" by t={t}")
        out.append(CoupledEnsemble(xs[:n_paths], xs[n_paths:], x, y, float(t), int(seed),
                                   grid.dt, blown))
    return out


def simulate_nonmarkov(spec: ProcessSpec, init, grid: TimeGrid, n_paths: int, seed: int,
                       checkpoints: Optional[Sequence[float]] = None) -> NonMarkovResult:
    """Simulate the (Y, X) pair and track Z_t = int_0^t e^{kappa s} sigma(Y_s) dW_s.

    The volatility is evaluated at the left end of each step, so the
    discrete Z is a martingale transform and its discrete quadratic
    variation is ``sum e^{2 kappa s} sigma^2 dt``.
    """
    if spec.name != "nonmarkov":
        raise ValueError("simulate_nonmarkov needs a model from make_nonmarkov_pair")
    kappa = spec.constants.kappa
    sigma_fn = spec.info["sigma_fn"]
    if checkpoints is None:
        checkpoints = [grid.t1]
    idx = [grid.index(float(t)) for t in checkpoints]
    paths = np.arange(n_paths, dtype=np.uint64)
    state = np.asarray(init.sample(seed, paths), dtype=float).reshape(n_paths, 2).copy()
    theta = spec.params["theta"]
    z = np.zeros(n_paths)
    qv = np.zeros(n_paths)
    dt = grid.dt
    sqdt = math.sqrt(dt)
    res = NonMarkovResult([], [], [])
    k = 0
    for target, t_chk in zip(idx, checkpoints):
        while k < target:
            t = grid.time(k)
            dw = kernels.backend.normals(seed, TAG_INCREMENT, k, paths, 1)[:, 0] * sqdt
            y = state[:, 0]
            s = np.asarray(sigma_fn(y), dtype=float)
            growth = math.exp(kappa * t)
            z += growth * s * dw
            qv += growth * growth * s * s * dt
            state[:, 1] = state[:, 1] - kappa * state[:, 1] * dt + s * dw
            state[:, 0] = y - theta * y * dt + dw
            k += 1
        bad = ~np.all(np.isfinite(state), axis=1)
        if np.any(bad):
            raise BlowUpError(f"{int(bad.sum())} non-Markov paths became non-finite",
                              count=int(bad.sum()), n_paths=n_paths)
        res.ensembles.append(Ensemble(state[:, 1:2].copy(), float(t_chk), int(seed), dt, n_paths))
        res.z.append(z.copy())
        res.qv.append(qv.copy())
        res.times.append(float(t_chk))
    return res


def point(x0) -> PointMass:
    return PointMass(tuple(float(v) for v in np.atleast_1d(x0)))
