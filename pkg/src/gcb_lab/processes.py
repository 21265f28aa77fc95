"""Diffusion model abstraction and the shipped model families.

A :class:`ProcessSpec` describes ``dX = b(t, X) dt + S(t, X) dW`` with an
explicit noise matrix ``S`` of shape ``dim x driver_dim``.  The diffusion
matrix is ``a = S S^T / 2`` so that the generator reads
``<b, grad> + tr(a Hess)``.

Drift and noise callables are vectorised: ``drift(t, x)`` accepts a single
state of shape ``(d,)`` or a batch ``(n, d)`` and returns the same shape;
``noise(t, x)`` returns ``(d, m)`` for a single state and either ``(d, m)``
(additive noise) or ``(n, d, m)`` for a batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.linalg import expm

from .kernels import MODEL_DESCENTE, MODEL_LINEAR, MODEL_LORENZ

Array = np.ndarray
RateFn = Callable[[float], float]


class ModelError(ValueError):
    """Raised for invalid model parameters."""


@dataclass(frozen=True)
class ModelConstants:
    kappa: Optional[float] = None
    a_norm: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    rho: Optional[float] = None
    gamma_rate: Optional[RateFn] = None
    alpha_confine: Optional[float] = None
    beta_confine: Optional[float] = None
    theta_noise: Optional[float] = None
    sigma_bound_M: Optional[float] = None
    h_fn: Optional[RateFn] = None
    A_const: Optional[float] = None

    def __post_init__(self):
        if self.gamma_rate is not None:
            g0 = float(self.gamma_rate(0.0))
            if abs(g0 - 1.0) > 1e-10:
                raise ModelError(f"gamma_rate(0) must be 1, got {g0}")
        for name in ("c1", "c2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ModelError(f"{name} must be strictly positive")
        if self.a_norm is not None and self.a_norm < 0:
            raise ModelError("a_norm must be nonnegative")


@dataclass(frozen=True)
class ProcessSpec:
    name: str
    dim: int
    drift: Callable[[float, Array], Array]
    noise: Callable[[float, Array], Array]
    driver_dim: int
    constants: ModelConstants = field(default_factory=ModelConstants)
    additive: bool = True
    kernel: Optional[tuple] = None
    metric_weights: Optional[Array] = None
    params: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError("dim must be >= 1")
        if self.driver_dim < 1:
            raise ModelError("driver_dim must be >= 1")

    def noise_matrix(self, t: float = 0.0, x: Optional[Array] = None) -> Array:
        """Noise matrix at a single state (the origin by default)."""
        if x is None:
            x = np.zeros(self.dim)
        return np.asarray(self.noise(t, np.asarray(x, dtype=float)), dtype=float)

    def covariance(self, t: float = 0.0, x: Optional[Array] = None) -> Array:
        s = self.noise_matrix(t, x)
        return s @ s.T / 2.0

    def to_metric(self, states: Array) -> Array:
        """Map states into coordinates where the model's norm is Euclidean."""
        if self.metric_weights is None:
            return states
        return states * np.sqrt(self.metric_weights)


def _const_noise(mat: Array) -> Callable[[float, Array], Array]:
    mat = np.array(mat, dtype=float)
    mat.setflags(write=False)

    def noise(t, x):
        return mat

    return noise


def _ellipticity(a: Array) -> tuple[Optional[float], Optional[float], float]:
    eig = np.linalg.eigvalsh((a + a.T) / 2.0)
    lo, hi = float(eig[0]), float(eig[-1])
    c2 = math.sqrt(hi) if hi > 0 else None
    c1 = 1.0 / math.sqrt(lo) if lo > 1e-14 * max(hi, 1.0) else None
    return c1, c2, max(hi, 0.0)


def operator_norm(mat: Array) -> float:
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(np.asarray(mat, dtype=float), 2))


def flow_rate(drift_matrix: Array) -> RateFn:
    """t -> ||exp(B t)|| for the linear flow x' = B x."""
    b = np.array(drift_matrix, dtype=float)

    def gamma(t: float) -> float:
        if t == 0:
            return 1.0
        return operator_norm(expm(b * float(t)))

    return gamma


def make_ou_1d(kappa: float, sigma: float) -> ProcessSpec:
    """dX = -kappa X dt + sigma dW."""
    kappa = float(kappa)
    sigma = float(sigma)
    if not sigma > 0:
        raise ModelError("sigma must be positive")

    def drift(t, x):
        return -kappa * np.asarray(x, dtype=float)

    consts = ModelConstants(
        kappa=kappa,
        a_norm=sigma**2 / 2.0,
        c1=math.sqrt(2.0) / sigma,
        c2=sigma / math.sqrt(2.0),
        rho=kappa,
        gamma_rate=lambda t: math.exp(-kappa * t),
    )
    return ProcessSpec(
        name="ou1d",
        dim=1,
        drift=drift,
        noise=_const_noise([[sigma]]),
        driver_dim=1,
        constants=consts,
        kernel=(MODEL_LINEAR, (np.array([[-kappa]]), np.array([[sigma]]))),
        params={"kappa": kappa, "sigma": sigma},
    )


def make_ou_matrix(A, noise_matrix) -> ProcessSpec:
    """dX = -A X dt + S dW with constant matrices."""
    A = np.atleast_2d(np.array(A, dtype=float))
    S = np.atleast_2d(np.array(noise_matrix, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise ModelError(f"A must be square, got shape {A.shape}")
    if S.shape[0] != d:
        raise ModelError(f"noise matrix must have {d} rows, got shape {S.shape}")
    B = -A
    B.setflags(write=False)

    def drift(t, x):
        return np.asarray(x, dtype=float) @ B.T

    a = S @ S.T / 2.0
    c1, c2, a_norm = _ellipticity(a)
    sym = (A + A.T) / 2.0
    kappa = float(np.linalg.eigvalsh(sym)[0])
    consts = ModelConstants(
        kappa=kappa,
        a_norm=a_norm,
        c1=c1,
        c2=c2,
        gamma_rate=flow_rate(B),
    )
    return ProcessSpec(
        name="ou_matrix",
        dim=d,
        drift=drift,
        noise=_const_noise(S),
        driver_dim=S.shape[1],
        constants=consts,
        kernel=(MODEL_LINEAR, (B.copy(), S.copy())),
        params={"A": A.tolist(), "noise_matrix": S.tolist()},
    )


def _reservoir(b, name: str):
    """Return (callable, linear rate or None) for a reservoir drift."""
    if callable(b):
        f = b
        probe = np.array([-2.0, -0.5, 0.0, 0.7, 3.0])
        vals = np.array([float(f(p)) for p in probe])
        slope = vals[-1] / probe[-1]
        if np.allclose(vals, slope * probe, rtol=1e-12, atol=1e-14):
            return f, -slope
        return f, None
    rate = float(b)
    return (lambda x, r=rate: -r * x), rate


def gl_bulk_matrix(n: int) -> Array:
    """Discrete Laplacian with one-sided boundary rows."""
    lap = np.zeros((n, n))
    for i in range(n - 1):
        lap[i, i] -= 1.0
        lap[i, i + 1] += 1.0
        lap[i + 1, i + 1] -= 1.0
        lap[i + 1, i] += 1.0
    return lap


def gl_noise_matrix(n: int, sigma1: float, sigmaN: float) -> Array:
    s = np.zeros((n, n + 1))
    r2 = math.sqrt(2.0)
    for i in range(n - 1):
        s[i, i] = r2
        s[i + 1, i] = -r2
    s[0, n - 1] = sigma1
    s[n - 1, n] = sigmaN
    return s


def make_gl_chain(N: int, b1=0.0, bN=0.0, sigma1: float = 0.0, sigmaN: float = 0.0) -> ProcessSpec:
    """Ginzburg-Landau chain of N sites coupled to two reservoirs.

    ``b1`` and ``bN`` are either numbers (linear reservoir drift ``-rate * x``)
    or callables of one real argument.
    """
    N = int(N)
    if N < 3:
        raise ModelError("GL chain needs N >= 3")
    if sigma1 < 0 or sigmaN < 0:
        raise ModelError("reservoir noise must be nonnegative")
    f1, rate1 = _reservoir(b1, "b1")
    fN, rateN = _reservoir(bN, "bN")
    lap = gl_bulk_matrix(N)
    S = gl_noise_matrix(N, float(sigma1), float(sigmaN))

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        out = x @ lap.T
        out[..., 0] += f1(x[..., 0])
        out[..., N - 1] += fN(x[..., N - 1])
        return out

    a_full = S @ S.T / 2.0
    a_bulk = gl_noise_matrix(N, 0.0, 0.0)
    a_bulk = a_bulk @ a_bulk.T / 2.0
    c1, c2, a_norm = _ellipticity(a_full)
    kernel = None
    gamma = None
    kappa = None
    if rate1 is not None and rateN is not None:
        B = lap.copy()
        B[0, 0] -= rate1
        B[N - 1, N - 1] -= rateN
        kernel = (MODEL_LINEAR, (B, S.copy()))
        gamma = flow_rate(B)
        kappa = float(-np.linalg.eigvalsh((B + B.T) / 2.0)[-1])
    consts = ModelConstants(kappa=kappa, a_norm=a_norm, c1=c1, c2=c2, gamma_rate=gamma)
    info = {
        "alpha1": rate1,
        "alphaN": rateN,
        "covariance_full": a_full.tolist(),
        "covariance_bulk": a_bulk.tolist(),
    }
    return ProcessSpec(
        name="gl_chain",
        dim=N,
        drift=drift,
        noise=_const_noise(S),
        driver_dim=N + 1,
        constants=consts,
        kernel=kernel,
        params={"N": N, "sigma1": float(sigma1), "sigmaN": float(sigmaN),
                "b1": rate1 if rate1 is not None else "callable",
                "bN": rateN if rateN is not None else "callable"},
        info=info,
    )


def lorenz_weights(sigma: float, r: float) -> Array:
    return np.array([r, sigma, sigma], dtype=float)


def lorenz_alpha(sigma: float, r: float, b: float) -> float:
    """Linear coefficient of the confinement inequality in the weighted norm.

    In translated coordinates the weighted inner product is
    ``-sigma (r x^2 + y^2 + b z^2) - 2 sigma b r z`` and ``|z| <= ||.||_w / sqrt(sigma)``.
    """
    return 2.0 * b * r * math.sqrt(sigma)


def make_noisy_lorenz(sigma: float, r: float, b: float, noise_scale: float) -> ProcessSpec:
    """Noisy Lorenz system in shifted coordinates (x, y, z - 2r).

    States are stored in the shifted frame; ``info["shift"]`` maps back.
    The confining norm is ``r x^2 + sigma y^2 + sigma z^2``.
    """
    from .bounds import lorenz_beta

    vals = (sigma, r, b, noise_scale)
    if not all(float(v) > 0 for v in vals):
        raise ModelError("Lorenz parameters must all be positive")
    sigma, r, b, noise_scale = map(float, vals)

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        px, py, pz = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            [sigma * (py - px), -r * px - py - px * pz, px * py - b * (pz + 2.0 * r)], axis=-1
        )

    w = lorenz_weights(sigma, r)
    beta = lorenz_beta(sigma, r, b)
    consts = ModelConstants(
        alpha_confine=lorenz_alpha(sigma, r, b),
        beta_confine=beta,
        theta_noise=noise_scale**2 * float(w.max()),
        a_norm=noise_scale**2 / 2.0,
    )
    return ProcessSpec(
        name="lorenz",
        dim=3,
        drift=drift,
        noise=_const_noise(noise_scale * np.eye(3)),
        driver_dim=3,
        constants=consts,
        kernel=(MODEL_LORENZ, (np.array([sigma, r, b, noise_scale]),)),
        metric_weights=w,
        params={"sigma": sigma, "r": r, "b": b, "noise_scale": noise_scale},
        info={"shift": [0.0, 0.0, 2.0 * r]},
    )


def descente_h(u: float) -> float:
    return max(1.0, u**3)


def make_descente(dim: int = 1) -> ProcessSpec:
    """Canonical diffusion coming down from infinity: b(x) = -x (1 + |x|^2)."""
    dim = int(dim)
    if dim < 1:
        raise ModelError("dim must be >= 1")

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        sq = np.sum(x * x, axis=-1, keepdims=True)
        return -x * (1.0 + sq)

    consts = ModelConstants(h_fn=descente_h, A_const=1.0, c1=math.sqrt(2.0), c2=math.sqrt(0.5),
                            a_norm=0.5)
    return ProcessSpec(
        name="descente",
        dim=dim,
        drift=drift,
        noise=_const_noise(np.eye(dim)),
        driver_dim=dim,
        constants=consts,
        kernel=(MODEL_DESCENTE, ()),
        params={"dim": dim},
    )


def make_nonmarkov_pair(theta: float, kappa: float, sigma_fn: Callable, M: float) -> ProcessSpec:
    """Joint (Y, X) system driven by one Brownian motion.

    dY = -theta Y dt + dW,  dX = -kappa X dt + sigma_fn(Y) dW.
    """
    theta = float(theta)
    kappa = float(kappa)
    M = float(M)
    if not theta > 0:
        raise ModelError("theta must be positive")
    if not M > 0:
        raise ModelError("M must be positive")

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        return np.stack([-theta * x[..., 0], -kappa * x[..., 1]], axis=-1)

    def noise(t, x):
        x = np.asarray(x, dtype=float)
        s = np.asarray(sigma_fn(x[..., 0]), dtype=float)
        out = np.empty(x.shape[:-1] + (2, 1))
        out[..., 0, 0] = 1.0
        out[..., 1, 0] = s
        return out

    consts = ModelConstants(kappa=kappa, sigma_bound_M=M)
    return ProcessSpec(
        name="nonmarkov",
        dim=2,
        drift=drift,
        noise=noise,
        driver_dim=1,
        constants=consts,
        additive=False,
        params={"theta": theta, "kappa": kappa, "M": M},
        info={"sigma_fn": sigma_fn},
    )


def make_perturbed_ou(kappa: float, sigma: float, eps: float, dim: int = 2) -> ProcessSpec:
    """OU drift plus a bounded non-gradient perturbation of Jacobian norm <= eps.

    b(x) = -kappa x + eps * (sin x_2, -sin x_1, ...) paired over coordinates;
    the drift then contracts at rate kappa - eps.
    """
    kappa, sigma, eps, dim = float(kappa), float(sigma), float(eps), int(dim)
    if dim < 2 or dim % 2:
        raise ModelError("perturbed OU needs an even dimension >= 2")
    if not sigma > 0:
        raise ModelError("sigma must be positive")
    if not 0 <= eps < kappa:
        raise ModelError("need 0 <= eps < kappa")

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        out = -kappa * x
        even = x[..., 0::2]
        odd = x[..., 1::2]
        out[..., 0::2] += eps * np.sin(odd)
        out[..., 1::2] -= eps * np.sin(even)
        return out

    kt = kappa - eps
    consts = ModelConstants(
        kappa=kt,
        a_norm=sigma**2 / 2.0,
        c1=math.sqrt(2.0) / sigma,
        c2=sigma / math.sqrt(2.0),
        gamma_rate=lambda t: math.exp(-kt * t),
    )
    return ProcessSpec(
        name="perturbed_ou",
        dim=dim,
        drift=drift,
        noise=_const_noise(sigma * np.eye(dim)),
        driver_dim=dim,
        constants=consts,
        params={"kappa": kappa, "sigma": sigma, "eps": eps, "dim": dim},
    )


def _sigma_fn_from_config(spec: Any) -> tuple[Callable, float]:
    """Named bounded volatility functions usable from config files."""
    if isinstance(spec, (int, float)):
        c = float(spec)
        return (lambda y: np.full(np.shape(y), c)), abs(c)
    if spec == "tanh+1.5":
        return (lambda y: np.tanh(y) + 1.5), 2.5
    if spec == "cos":
        return (lambda y: np.cos(y)), 1.0
    raise ModelError(f"unknown sigma_fn {spec!r}")


def _build(model_id: str, p: dict) -> ProcessSpec:
    if model_id == "ou1d":
        return make_ou_1d(p.pop("kappa"), p.pop("sigma"))
    if model_id == "ou_matrix":
        return make_ou_matrix(p.pop("A"), p.pop("noise_matrix"))
    if model_id == "gl_chain":
        return make_gl_chain(p.pop("N"), p.pop("b1", 0.0), p.pop("bN", 0.0),
                             p.pop("sigma1", 0.0), p.pop("sigmaN", 0.0))
    if model_id == "lorenz":
        return make_noisy_lorenz(p.pop("sigma"), p.pop("r"), p.pop("b"), p.pop("noise_scale"))
    if model_id == "descente":
        return make_descente(p.pop("dim", 1))
    if model_id == "nonmarkov":
        fn, bound = _sigma_fn_from_config(p.pop("sigma_fn"))
        m = p.pop("M", bound)
        return make_nonmarkov_pair(p.pop("theta"), p.pop("kappa"), fn, m)
    if model_id == "perturbed_ou":
        return make_perturbed_ou(p.pop("kappa"), p.pop("sigma"), p.pop("eps"), p.pop("dim", 2))
    raise ModelError(f"unknown model id {model_id!r}")


def build_model(model_id: str, params: dict) -> ProcessSpec:
    """Construct a model from its config id and parameter map."""
    p = dict(params)
    try:
        spec = _build(model_id, p)
    except KeyError as exc:
        raise ModelError(f"model {model_id!r} missing parameter {exc.args[0]!r}") from None
    if p:
        raise ModelError(f"model {model_id!r} got unknown parameters {sorted(p)}")
    return spec


MODEL_IDS = ("ou1d", "ou_matrix", "gl_chain", "lorenz", "descente", "nonmarkov", "perturbed_ou")
