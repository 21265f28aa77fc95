"""Initial laws for ensemble simulation.

Every law draws its randomness through the counter-based generator on the
``TAG_INIT`` stream, so the initial state of path ``p`` depends only on the
seed and ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .kernels import TAG_INIT

Array = np.ndarray


class LawError(ValueError):
    pass


@dataclass(frozen=True)
class PointMass:
    x0: tuple

    @property
    def dim(self) -> int:
        return len(self.x0)

    def sample(self, seed: int, paths: Array) -> Array:
        return np.tile(np.asarray(self.x0, dtype=float), (len(paths), 1))

    def gcb_constant(self) -> float:
        return 0.0

    def mean_distance(self, x0=None) -> float:
        c = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=float)
        return float(np.linalg.norm(np.asarray(self.x0) - c))


@dataclass(frozen=True)
class ProductGaussian:
    """Independent coordinates N(mean_i, var_i)."""

    mean: tuple
    var: tuple

    def __post_init__(self):
        if len(self.mean) != len(self.var):
            raise LawError("mean and var lengths differ")
        if any(v < 0 for v in self.var):
            raise LawError("variances must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, seed: int, paths: Array) -> Array:
        z = kernels.backend.normals(seed, TAG_INIT, 0, paths, self.dim)
        return np.asarray(self.mean) + np.sqrt(np.asarray(self.var)) * z

    def gcb_constant(self) -> float:
        return max(self.var) / 2.0

    def mean_distance(self, x0=None) -> float:
        """E|X - x0|, closed form in one dimension, quadrature-free bound otherwise."""
        c = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=float)
        if self.dim == 1:
            m = self.mean[0] - c[0]
            s = math.sqrt(self.var[0])
            if s == 0:
                return abs(m)
            return s * math.sqrt(2 / math.pi) * math.exp(-m * m / (2 * s * s)) + m * math.erf(
                m / (s * math.sqrt(2))
            )
        # Jensen: E|X - c| <= sqrt(E|X - c|^2)
        return math.sqrt(sum(self.var) + float(np.sum((np.asarray(self.mean) - c) ** 2)))


def IsotropicGaussian(mean: Sequence[float], theta2: float) -> ProductGaussian:
    mean = tuple(float(m) for m in mean)
    return ProductGaussian(mean, tuple(float(theta2) for _ in mean))


def heavy_cdf(x: Array) -> Array:
    """CDF of the density sqrt(2) / (pi (1 + x^4))."""
    x = np.asarray(x, dtype=float)
    r2 = math.sqrt(2.0)
    num = x * x + r2 * x + 1.0
    den = x * x - r2 * x + 1.0
    anti = (np.log(num / den) + 2.0 * (np.arctan(r2 * x + 1.0) + np.arctan(r2 * x - 1.0))) / (
        4.0 * r2
    )
    return 0.5 + anti * r2 / math.pi


@dataclass(frozen=True)
class HeavyTailed1D:
    """One-dimensional law with density sqrt(2) / (pi (1 + x^4)).

    Sampled by inverse transform on a tabulated CDF; the tail beyond
    ``|x| = cutoff`` is dropped and its mass kept in ``truncated_mass``.
    """

    n_nodes: int = 100_000
    cutoff: float = 1e3
    _table: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.linspace(-1.0, 1.0, self.n_nodes)
        scale = math.asinh(self.cutoff)
        nodes = np.sinh(s * scale)
        cdf = heavy_cdf(nodes)
        lo, hi = cdf[0], cdf[-1]
        object.__setattr__(self, "_table", (nodes, (cdf - lo) / (hi - lo), lo + (1.0 - hi)))

    @property
    def dim(self) -> int:
        return 1

    @property
    def truncated_mass(self) -> float:
        return float(self._table[2])

    def sample(self, seed: int, paths: Array) -> Array:
        nodes, cdf, _ = self._table
        u = kernels.backend.uniforms(seed, TAG_INIT, 0, paths, 1)[:, 0]
        return np.interp(u, cdf, nodes)[:, None]

    def gcb_constant(self) -> float:
        return math.inf

    def mean_distance(self, x0=None) -> float:
        # E|X| = 2 * int_0^inf x sqrt(2) / (pi (1 + x^4)) dx = 1 / sqrt(2)
        if x0 is None or float(np.asarray(x0).ravel()[0]) == 0.0:
            return 1.0 / math.sqrt(2.0)
        raise LawError("mean distance only tabulated about the origin")


@dataclass(frozen=True)
class SampleFile:
    """Initial states read from a file written by :mod:`gcb_lab.ensemble_io`.

    Path ``p`` takes row ``p mod n_rows``.
    """

    path: str
    _states: Optional[Array] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        from .ensemble_io import read_ensemble

        ens = read_ensemble(self.path)
        object.__setattr__(self, "_states", np.asarray(ens.states, dtype=float))
        if len(self._states) == 0:
            raise LawError(f"sample file {self.path} is empty")

    @property
    def dim(self) -> int:
        return int(self._states.shape[1])

    def sample(self, seed: int, paths: Array) -> Array:
        idx = np.asarray(paths, dtype=np.int64) % len(self._states)
        return self._states[idx].copy()

    def gcb_constant(self) -> float:
        return math.nan

    def mean_distance(self, x0=None) -> float:
        c = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=float)
        return float(np.mean(np.linalg.norm(self._states - c, axis=1)))


def build_law(cfg: dict, dim: int):
    """Construct an initial law from a config table."""
    cfg = dict(cfg)
    kind = cfg.pop("law", None)
    if kind == "point":
        x0 = cfg.pop("x0", [0.0] * dim)
        x0 = [float(x0)] * dim if isinstance(x0, (int, float)) else [float(v) for v in x0]
        law = PointMass(tuple(x0))
    elif kind == "gaussian":
        mean = cfg.pop("mean", 0.0)
        mean = [float(mean)] * dim if isinstance(mean, (int, float)) else [float(v) for v in mean]
        var = cfg.pop("var", 1.0)
        var = [float(var)] * dim if isinstance(var, (int, float)) else [float(v) for v in var]
        law = ProductGaussian(tuple(mean), tuple(var))
    elif kind == "heavytail":
        law = HeavyTailed1D()
    elif kind == "file":
        law = SampleFile(str(Path(cfg.pop("path"))))
    else:
        raise LawError(f"unknown initial law {kind!r}")
    if cfg:
        raise LawError(f"unknown initial-law keys {sorted(cfg)}")
    if law.dim != dim:
        raise LawError(f"initial law has dimension {law.dim}, model has {dim}")
    return law
