"""Dyadic cubes, the families psi_Q, Riesz-system constants, Theta and Carleson sums."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import CZKernel
from .measures import PointMeasure, BallQuery, ball_mass
from .operators import power_iteration, kernel_sum
from .reflectionless import Bump, TestFunction, standard_family, loglog_slope, weighted_sum


class RieszSystemError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Half-open cube prod [c_i 2^-k, (c_i + 1) 2^-k)."""
    level: int
    coords: tuple

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def corner(self) -> np.ndarray:
        return np.array(self.coords, float) * self.side

    @property
    def center(self) -> np.ndarray:
        return self.corner + self.side / 2

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.all(np.floor(x / self.side) == np.array(self.coords), axis=1)

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(c >> 1 for c in self.coords))

    def children(self) -> list["DyadicCube"]:
        return [DyadicCube(self.level + 1, tuple(2 * c + b for c, b in zip(self.coords, bits)))
                for bits in itertools.product((0, 1), repeat=self.d)]

    def descendants(self, depth: int) -> list["DyadicCube"]:
        """All cubes inside self at relative levels 0..depth."""
        out, layer = [self], [self]
        for _ in range(depth):
            layer = [c for q in layer for c in q.children()]
            out.extend(layer)
        return out

    def __str__(self):
        return f"{self.level}:" + ",".join(map(str, self.coords))


def cube_of(x, level: int) -> DyadicCube:
    return DyadicCube(level, tuple(np.floor(np.asarray(x, float) * 2.0 ** level).astype(int)))


def cubes_touching(region: BallQuery, levels) -> list[DyadicCube]:
    """Dyadic cubes of the given levels meeting the open ball."""
    c = np.asarray(region.center, float)
    r = float(region.radius)
    out = []
    for k in levels:
        side = 2.0 ** (-k)
        lo = np.floor((c - r) / side).astype(int)
        hi = np.floor((c + r) / side).astype(int)
        for idx in itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]):
            corner = np.array(idx, float) * side
            nearest = np.clip(c, corner, corner + side)
            if np.linalg.norm(nearest - c) < r:
                out.append(DyadicCube(k, idx))
    return out


# psi_Q

def make_psi_Q(Q: DyadicCube, A: float, mu: PointMeasure, s: float | None = None,
               strict: bool = False) -> TestFunction:
    """Tent of radius A l/2 minus lam times a tent of radius A l at x_Q.

    lam makes the mu-mean vanish; the amplitude 0.99 A l^(-s/2) / (2 + lam)
    keeps the Lipschitz constant below l^(-1-s/2)."""
    s = mu.nominal_s if s is None else s
    if strict and A <= 10 * math.sqrt(Q.d):
        raise RieszSystemError(f"A must exceed 10 sqrt(d) = {10 * math.sqrt(Q.d):.4g}")
    ell = Q.side
    R = A * ell
    if mu.n == 0 or ball_mass(mu, BallQuery(Q.center, R)) <= 0:
        raise RieszSystemError(f"degenerate reference: mu(B(x_Q, A l(Q))) = 0 for cube {Q}")
    t1 = Bump(Q.center, R / 2, 1.0, "tent")
    t2 = Bump(Q.center, R, 1.0, "tent")
    lam = weighted_sum(t1(mu.atoms), mu.weights) / weighted_sum(t2(mu.atoms), mu.weights)
    amp = 0.99 * A * ell ** (-s / 2) / (2 + lam)
    return TestFunction(Bump(Q.center, R / 2, amp, "tent"), Bump(Q.center, R, amp, "tent"), lam)


def lip_limit(Q: DyadicCube, s: float) -> float:
    return Q.side ** (-1 - s / 2)


@dataclass
class RieszSystem:
    cubes: list
    psis: list
    mu: PointMeasure
    A: float
    matrix: np.ndarray = field(repr=False)

    @property
    def sqrt_w(self) -> np.ndarray:
        return np.sqrt(self.mu.weights)

    def gram(self) -> np.ndarray:
        """G_PQ = <psi_P, psi_Q>_mu."""
        Wp = self.matrix * self.mu.weights[:, None]
        G = self.matrix.T @ Wp
        return (G + G.T) / 2

    def top_eigenvalue(self, method: str = "dense", tol: float = 1e-13, seed: int = 0) -> float:
        if not self.cubes:
            return 0.0
        if method == "dense":
            M = self.matrix * self.sqrt_w[:, None]
            small = M @ M.T if M.shape[0] < M.shape[1] else M.T @ M
            return float(np.linalg.eigvalsh(small)[-1])
        if method == "power":
            sw = self.sqrt_w
            est = power_iteration(lambda a: sw * (self.matrix @ a),
                                  lambda v: self.matrix.T @ (sw * v),
                                  len(self.cubes), tol=tol, seed=seed)
            return est.value ** 2
        raise RieszSystemError(f"unknown method {method!r}")

    def synthesis_quotient(self, a) -> float:
        """||sum a_Q psi_Q||^2_{L2(mu)} / sum |a_Q|^2."""
        a = np.asarray(a, float)
        if a.shape != (len(self.cubes),):
            raise RieszSystemError("coefficient vector does not match the cubes")
        na = float(a @ a)
        if na == 0:
            raise RieszSystemError("coefficients: zero vector")
        g = self.matrix @ a
        return float(np.sum(g * g * self.mu.weights)) / na

    def max_synthesis_quotient(self, n_starts: int = 100, steps: int = 50, seed: int = 0) -> float:
        """Largest synthesis quotient reached from random coefficient vectors,
        each improved by `steps` ascent steps a <- G a."""
        rng = np.random.default_rng(seed)
        G = self.gram()
        best = 0.0
        for _ in range(n_starts):
            a = rng.standard_normal(len(self.cubes))
            for _ in range(steps):
                a = G @ a
                n = np.linalg.norm(a)
                if n == 0:
                    break
                a /= n
            if np.linalg.norm(a) > 0:
                best = max(best, self.synthesis_quotient(a))
        return best

    def max_analysis_quotient(self, n_starts: int = 100, steps: int = 50, seed: int = 0) -> float:
        """As max_synthesis_quotient, for f <- Psi Psi^T W f."""
        rng = np.random.default_rng(seed)
        w = self.mu.weights
        best = 0.0
        for _ in range(n_starts):
            f = rng.standard_normal(self.mu.n)
            for _ in range(steps):
                f = self.matrix @ (self.matrix.T @ (f * w))
                n = np.linalg.norm(f)
                if n == 0:
                    break
                f /= n
            if np.linalg.norm(f) > 0:
                best = max(best, self.analysis_quotient(f))
        return best

    def analysis_quotient(self, f) -> float:
        """sum_Q |<f, psi_Q>_mu|^2 / ||f||^2_{L2(mu)}."""
        f = np.asarray(f, float)
        nf = float(np.sum(f * f * self.mu.weights))
        if nf == 0:
            raise RieszSystemError("f: zero in L2(mu)")
        c = self.matrix.T @ (f * self.mu.weights)
        return float(c @ c) / nf


def riesz_system(mu: PointMeasure, cubes, A: float, s: float | None = None) -> RieszSystem:
    """One psi_Q per cube; cubes whose ball carries no mass are skipped."""
    keep, psis = [], []
    for Q in cubes:
        try:
            psis.append(make_psi_Q(Q, A, mu, s))
        except RieszSystemError:
            continue
        keep.append(Q)
    M = np.stack([p(mu.atoms) for p in psis], axis=1) if psis else np.zeros((mu.n, 0))
    return RieszSystem(keep, psis, mu, A, M)


def riesz_synthesis_quotient(mu: PointMeasure, system: RieszSystem, a) -> float:
    return system.synthesis_quotient(a)


def riesz_analysis_quotient(mu: PointMeasure, system: RieszSystem, f) -> float:
    return system.analysis_quotient(f)


@dataclass(frozen=True)
class FrameScaling:
    A: np.ndarray
    constants: np.ndarray
    power_constants: np.ndarray
    n_cubes: np.ndarray
    slope: float
    slope_limit: float

    @property
    def ok(self) -> bool:
        return bool(self.slope <= self.slope_limit)


def frame_constant_scaling(mu: PointMeasure, A_grid, depth: int, root: DyadicCube | None = None,
                           s: float | None = None) -> FrameScaling:
    """Top Gram eigenvalue for cubes inside root down to `depth`, for each A.

    The lemma predicts growth at most like A^(d + 2 + 3s/2); the limit
    reported is that exponent plus 0.5."""
    s = mu.nominal_s if s is None else s
    A_grid = np.asarray(A_grid, float)
    if np.any(np.diff(A_grid) <= 0):
        raise RieszSystemError("A_grid must be increasing")
    root = root or DyadicCube(0, (0,) * mu.d)
    cubes = root.descendants(depth)
    dense, power, count = [], [], []
    for A in A_grid:
        sysm = riesz_system(mu, cubes, A, s)
        dense.append(sysm.top_eigenvalue("dense"))
        power.append(sysm.top_eigenvalue("power"))
        count.append(len(sysm.cubes))
    d = mu.d
    return FrameScaling(A_grid, np.array(dense), np.array(power), np.array(count),
                        loglog_slope(A_grid, dense), d + 2 + 1.5 * s + 0.5)


# Theta and the Carleson sum

@dataclass(frozen=True)
class ThetaResult:
    value: float
    radii: np.ndarray
    sups: np.ndarray
    family_size: int


def theta(K: CZKernel, mu: PointMeasure, Q: DyadicCube, A: float, A_prime: float, radii,
          family=None) -> ThetaResult:
    """Sampled inf over E = B(x_Q, R) of the sampled sup over psi in the
    Psi_{Q,A} family of l(Q)^(-s/2) |<T_mu(chi_E), psi>_mu|."""
    if A_prime <= 2 * A:
        raise RieszSystemError("A' must exceed 2A")
    radii = np.asarray(radii, float)
    ell = Q.side
    if np.any(radii < A_prime * ell * (1 - 1e-12)):
        raise RieszSystemError("every E radius must be at least A' l(Q)")
    if mu.n == 0 or ball_mass(mu, BallQuery(Q.center, A * ell)) <= 0:
        return ThetaResult(0.0, radii, np.zeros(len(radii)), 0)
    s = K.s
    if family is None:
        family = [make_psi_Q(Q, A, mu, s)] + standard_family(
            mu, Q.center, A * ell, lip_max=lip_limit(Q, s))
    idx = np.flatnonzero(np.linalg.norm(mu.atoms - Q.center, axis=1) < A * ell)
    P = np.stack([p(mu.atoms[idx]) for p in family], axis=1) * mu.weights[idx, None]
    sups = np.empty(len(radii))
    for i, R in enumerate(radii):
        inside = np.linalg.norm(mu.atoms - Q.center, axis=1) < R
        F = kernel_sum(K, mu.atoms[inside], mu.weights[inside], mu.atoms[idx], 0.0)
        sups[i] = ell ** (-s / 2) * np.max(np.linalg.norm(P.T @ F, axis=1))
    return ThetaResult(float(sups.min()), radii, sups, len(family))


@dataclass(frozen=True)
class CarlesonResult:
    total: float
    ratio: float
    per_level: np.ndarray
    counts: np.ndarray


def carleson_sum(mu: PointMeasure, P: DyadicCube, Delta: float, max_depth: int,
                 s: float | None = None) -> CarlesonResult:
    """sum of l(Q)^s over Q inside P, levels P.level .. P.level + max_depth,
    with mu(Q) >= Delta l(Q)^s, by exact enumeration of occupied cubes."""
    s = mu.nominal_s if s is None else s
    finest = 2.0 ** (-(P.level + max_depth))
    if finest < mu.mesh_scale * (1 - 1e-12):
        raise RieszSystemError("max_depth reaches below the mesh scale of the measure")
    inside = P.contains(mu.atoms) if mu.n else np.zeros(0, bool)
    x, w = mu.atoms[inside], mu.weights[inside]
    per_level = np.zeros(max_depth + 1)
    counts = np.zeros(max_depth + 1, dtype=int)
    for j in range(max_depth + 1):
        k = P.level + j
        side = 2.0 ** (-k)
        if len(x) == 0:
            continue
        keys = np.floor(x / side).astype(np.int64)
        _, inv = np.unique(keys, axis=0, return_inverse=True)
        mass = np.bincount(inv.ravel(), weights=w)
        good = mass >= Delta * side ** s * (1 - 1e-12)
        counts[j] = int(good.sum())
        per_level[j] = counts[j] * side ** s
    total = float(per_level.sum())
    return CarlesonResult(total, total / P.side ** s, per_level, counts)
