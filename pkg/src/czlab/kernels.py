"""s-dimensional Calderon-Zygmund kernels K(x) = Omega(x) / |x|^(s+1).

Omega is homogeneous of degree one, odd, bounded by one on the unit sphere
and alpha-Holder there with constant one.  Complex-valued kernels are stored
as two real components (real part, imaginary part).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _fast


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class CZKernel:
    name: str
    d: int
    dprime: int
    s: float
    alpha: float
    omega: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    code: int = -1
    scale: float = 1.0
    is_complex: bool = False

    def __post_init__(self):
        if not 0 < self.s < self.d:
            raise KernelError(f"s must lie in (0, {self.d}), got {self.s}")
        if not 0 < self.alpha <= 1:
            raise KernelError(f"alpha must lie in (0, 1], got {self.alpha}")

    def eval(self, x) -> np.ndarray:
        """K(x) for nonzero x; accepts a point or an (n, d) array."""
        x, single = _as_points(x, self.d)
        r = np.linalg.norm(x, axis=1)
        if np.any(r == 0):
            raise KernelError("kernel is singular at x = 0")
        out = self.scale * self.omega(x) / r[:, None] ** (self.s + 1)
        return out[0] if single else out

    def eval_regularized(self, delta: float, x) -> np.ndarray:
        """K_delta(x) = Omega(x) / max(delta, |x|)^(s+1), with Omega(0) = 0."""
        if delta <= 0:
            raise KernelError("delta must be positive")
        x, single = _as_points(x, self.d)
        r = np.linalg.norm(x, axis=1)
        out = np.zeros((len(x), self.dprime))
        nz = r > 0
        out[nz] = self.scale * self.omega(x[nz]) / np.maximum(delta, r[nz])[:, None] ** (self.s + 1)
        return out[0] if single else out

    def omega_scaled(self, x) -> np.ndarray:
        x, single = _as_points(x, self.d)
        out = self.scale * self.omega(x)
        return out[0] if single else out

    def with_scale(self, scale: float) -> "CZKernel":
        return CZKernel(self.name, self.d, self.dprime, self.s, self.alpha,
                        self.omega, self.code, scale, self.is_complex)


def _as_points(x, d):
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != d:
        raise KernelError(f"expected points in R^{d}, got shape {a.shape}")
    return a, single


def _omega_riesz(x):
    return x


def _omega_cauchy(x):
    return np.stack([x[:, 0], -x[:, 1]], axis=1)


def _omega_zbar_z2(x):
    a, b = x[:, 0], x[:, 1]
    r2 = a * a + b * b
    return np.stack([(a**3 - 3 * a * b * b) / r2, (b**3 - 3 * a * a * b) / r2], axis=1)


def riesz(d: int = 2, s: float = 1.0) -> CZKernel:
    return CZKernel("riesz", d, d, float(s), 1.0, _omega_riesz, _fast.RIESZ)


def cauchy() -> CZKernel:
    return CZKernel("cauchy", 2, 2, 1.0, 1.0, _omega_cauchy, _fast.CAUCHY, is_complex=True)


def zbar_over_z2(normalized: bool = False) -> CZKernel:
    """conj(z)/z^2.  Its Omega has Holder ratio 3 on the circle; normalized
    divides by 3 so that the unit-constant axioms hold."""
    scale = 1.0 / 3.0 if normalized else 1.0
    return CZKernel("zbar_z2", 2, 2, 1.0, 1.0, _omega_zbar_z2, _fast.ZBAR_Z2,
                    scale=scale, is_complex=True)


def custom(omega, d, dprime, s, alpha, name="custom", policy="reject",
           n_sphere_samples=2000, tol=1e-9) -> CZKernel:
    """Wrap a user Omega.  Kernels failing the normalization are rejected by
    default; policy='renormalize' rescales Omega instead."""
    k = CZKernel(name, d, dprime, float(s), float(alpha), omega)
    rep = validate(k, n_sphere_samples, tol=tol)
    if rep.odd_residual > tol:
        raise KernelError(f"kernel {name!r} is not odd (residual {rep.odd_residual:.3g})")
    if rep.passed:
        return k
    if policy == "reject":
        raise KernelError(
            f"kernel {name!r} fails normalization: sup|Omega|={rep.sup_omega:.4g}, "
            f"Holder ratio={rep.holder_ratio:.4g}")
    if policy == "renormalize":
        return k.with_scale(1.0 / max(rep.sup_omega, rep.holder_ratio))
    raise KernelError(f"unknown normalization policy {policy!r}")


BUILTIN = {
    "riesz": lambda d=2, s=1.0, **_: riesz(d, s),
    "cauchy": lambda **_: cauchy(),
    "zbar_z2": lambda normalized=False, **_: zbar_over_z2(normalized),
}


def make_kernel(name: str, **params) -> CZKernel:
    if name not in BUILTIN:
        raise KernelError(f"kernel.name: unknown kernel {name!r} (choose from {sorted(BUILTIN)})")
    return BUILTIN[name](**params)


@dataclass(frozen=True)
class ValidationReport:
    sup_omega: float
    holder_ratio: float
    odd_residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return (self.sup_omega <= 1 + self.tol and self.holder_ratio <= 1 + self.tol
                and self.odd_residual <= self.tol)


def _sphere(n, d, rng):
    if d == 2:
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def validate(K: CZKernel, n_sphere_samples: int = 10_000, tol: float = 1e-9,
             seed: int = 0) -> ValidationReport:
    """Sampled check of |Omega| <= 1, oddness, and the Holder bound on the sphere."""
    if n_sphere_samples < 100:
        raise KernelError("n_sphere_samples must be at least 100")
    rng = np.random.default_rng(seed)
    u = _sphere(n_sphere_samples, K.d, rng)
    om = K.omega_scaled(u)
    sup = float(np.max(np.linalg.norm(om, axis=1)))
    odd = float(np.max(np.linalg.norm(om + K.omega_scaled(-u), axis=1)))
    # far pairs at random, near pairs by small rotations of the same samples
    v = _sphere(n_sphere_samples, K.d, rng)[rng.permutation(n_sphere_samples)]
    eps = 10.0 ** rng.uniform(-4, -1, size=(n_sphere_samples, 1))  # closer pairs only measure roundoff
    w = u + eps * rng.standard_normal(u.shape)
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    ratio = 0.0
    for other in (v, w):
        dist = np.linalg.norm(u - other, axis=1)
        ok = dist > 1e-12
        diff = np.linalg.norm(om[ok] - K.omega_scaled(other[ok]), axis=1)
        ratio = max(ratio, float(np.max(diff / dist[ok] ** K.alpha)))
    return ValidationReport(sup, ratio, odd, tol)
