"""Lipschitz observables with certified constants, and the default test family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .kernels import TAG_FAMILY

Array = np.ndarray


class ObservableError(ValueError):
    pass


@dataclass(frozen=True)
class Observable:
    """A real function of the state with a certified Lipschitz constant.

    ``fn`` maps a batch ``(n, d)`` to ``(n,)``.
    """

    fn: Callable[[Array], Array]
    lip: float
    family: str
    name: str = ""
    sup_norm: Optional[float] = None

    def __call__(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self.fn(x[None, :]), dtype=float)[0]
        return np.asarray(self.fn(x), dtype=float)


def linear(v, scale: float = 1.0, name: str = "") -> Observable:
    """x -> scale <v, x> with |v| = 1 (v is normalised here)."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ObservableError("direction must be nonzero")
    v = v / nv
    v.setflags(write=False)
    return Observable(lambda x: scale * (x @ v), abs(scale), "linear", name or f"lin{v.tolist()}")


def coordinate(i: int, dim: int, sign: float = 1.0, scale: float = 1.0) -> Observable:
    e = np.zeros(dim)
    e[i] = sign
    tag = "+" if sign > 0 else "-"
    obs = linear(e, scale, name=f"{tag}x{i + 1}*{scale:g}")
    return Observable(obs.fn, obs.lip, "coordinate", obs.name)


def distance(center, scale: float = 1.0) -> Observable:
    c = np.asarray(center, dtype=float)
    c.setflags(write=False)
    return Observable(lambda x: scale * np.linalg.norm(x - c, axis=1), abs(scale), "distance",
                      f"dist{c.tolist()}*{scale:g}")


def softplus_distance(center, scale: float = 1.0) -> Observable:
    """scale * log(1 + e^{|x - c|}): a smooth compression of the distance."""
    c = np.asarray(center, dtype=float)

    def fn(x):
        return scale * np.logaddexp(0.0, np.linalg.norm(x - c, axis=1))

    return Observable(fn, abs(scale), "softplus", f"softplus{c.tolist()}*{scale:g}")


def truncate_observable(f: Observable, M: float) -> Observable:
    """x -> clamp(f(x), -M, M); the Lipschitz constant does not grow."""
    if not M > 0:
        raise ObservableError("M must be positive")
    base = f.fn
    sup = M if f.sup_norm is None else min(M, f.sup_norm)
    return Observable(lambda x: np.clip(base(x), -M, M), f.lip, f.family + "/trunc",
                      f"{f.name}|M={M:g}", sup)


def cutoff_psi(u: Array) -> Array:
    """1 on [0, 1], linear down to 0 on [1, 2], 0 beyond."""
    return np.clip(2.0 - np.asarray(u, dtype=float), 0.0, 1.0)


def cutoff_observable(f: Observable, A: float) -> Observable:
    """x -> f(x) psi(|x| / A), with lip <= sup|f| / A + lip(f) and support in |x| <= 2A."""
    if f.sup_norm is None:
        raise ObservableError("cutoff needs an observable with a sup-norm bound")
    if not A > 0:
        raise ObservableError("A must be positive")
    base = f.fn

    def fn(x):
        r = np.linalg.norm(x, axis=1)
        return base(x) * cutoff_psi(r / A)

    return Observable(fn, f.sup_norm / A + f.lip, f.family + "/cutoff", f"{f.name}|A={A:g}",
                      f.sup_norm)


@dataclass
class TestFamily:
    """A finite list of observables standing in for all Lipschitz functions."""

    members: list = field(default_factory=list)

    __test__ = False

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def subset(self, *families: str) -> "TestFamily":
        out = [m for m in self.members if m.family.split("/")[0] in families]
        return TestFamily(out)

    def scaled(self, lam: float) -> "TestFamily":
        out = []
        for m in self.members:
            fn = m.fn
            out.append(Observable((lambda x, fn=fn: lam * fn(x)), abs(lam) * m.lip, m.family,
                                  f"{lam:g}*{m.name}",
                                  None if m.sup_norm is None else abs(lam) * m.sup_norm))
        return TestFamily(out)


def random_directions(dim: int, n: int, seed: int) -> Array:
    z = kernels.backend.normals(seed, TAG_FAMILY, 0, np.arange(n, dtype=np.uint64), dim)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def default_centers(dim: int) -> list:
    e = np.zeros(dim)
    e[0] = 1.0
    return [np.zeros(dim), e, -e]


def default_family(dim: int, seed: int = 0, n_random: int = 50,
                   centers: Optional[Sequence] = None,
                   scales: Sequence[float] = (0.5, 1.0, 2.0),
                   truncations: Sequence[float] = (1.0, 5.0)) -> TestFamily:
    """Coordinates (both signs), random unit directions and distances to centres,
    each at several scales, plus their truncations.
    """
    if centers is None:
        centers = default_centers(dim)
    base = []
    for s in scales:
        for i in range(dim):
            base.append(coordinate(i, dim, 1.0, s))
            base.append(coordinate(i, dim, -1.0, s))
        for k, v in enumerate(random_directions(dim, n_random, seed)):
            obs = linear(v, s, name=f"rand{k}*{s:g}")
            base.append(obs)
        for c in centers:
            base.append(distance(c, s))
    members = list(base)
    for M in truncations:
        members.extend(truncate_observable(f, M) for f in base)
    return TestFamily(members)


def difference_quotients(f: Observable, x: Array, y: Array) -> Array:
    num = np.abs(f(x) - f(y))
    den = np.linalg.norm(x - y, axis=1)
    keep = den > 0
    return num[keep] / den[keep]


def lipschitz_violation(f: Observable, x: Array, y: Array) -> float:
    """Largest relative excess of sampled quotients over the certified constant."""
    q = difference_quotients(f, x, y)
    if q.size == 0:
        return 0.0
    return max(0.0, float(q.max()) / f.lip - 1.0)


def identity_1d() -> Observable:
    return Observable(lambda x: x[:, 0], 1.0, "linear", "x")


def scaled_identity(lam: float) -> Observable:
    return Observable(lambda x: lam * x[:, 0], abs(lam), "linear", f"{lam:g}*x")


def constant(c: float) -> Observable:
    return Observable(lambda x: np.full(x.shape[0], float(c)), math.ulp(1.0), "constant",
                      f"const{c:g}", abs(c))
