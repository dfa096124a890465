"""Pairings <T_mu(1), psi>, the field T~_{mu,delta}(1) and reflectionlessness defects.

For a finite atomic measure the distribution T_mu(1) is the self-excluded
sum T_0(1)(x_i) = sum_{j != i} K(x_i - x_j) w_j; cutoff-dependent pieces are
kept separate so that truncation estimates can be checked term by term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import CZKernel
from .measures import PointMeasure, BallQuery, ball_mass
from .operators import (VALIDITY_RATIO, _check_delta, kernel_sum,
                        build_tree, tree_sum)


class ReflectionlessError(ValueError):
    pass


PROFILES = ("tent", "smooth")


@dataclass(frozen=True)
class Bump:
    """amplitude * profile(1 - |x - center| / radius), zero outside the ball.

    tent is piecewise linear; smooth is the C^1 smoothstep 3t^2 - 2t^3."""
    center: np.ndarray
    radius: float
    amplitude: float = 1.0
    profile: str = "tent"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float))
        if self.radius <= 0:
            raise ReflectionlessError("bump radius must be positive")
        if self.profile not in PROFILES:
            raise ReflectionlessError(f"unknown profile {self.profile!r}")

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        t = np.clip(1.0 - np.linalg.norm(x - self.center, axis=1) / self.radius, 0.0, 1.0)
        if self.profile == "smooth":
            t = t * t * (3.0 - 2.0 * t)
        return self.amplitude * t

    @property
    def lip(self) -> float:
        k = 1.5 if self.profile == "smooth" else 1.0
        return k * abs(self.amplitude) / self.radius

    def scaled(self, x0, ell: float) -> "Bump":
        """The bump y -> psi(ell y + x0) / ell, which keeps the Lipschitz constant."""
        return Bump((self.center - x0) / ell, self.radius / ell, self.amplitude / ell, self.profile)


def _enclosing_ball(c1, r1, c2, r2):
    dist = float(np.linalg.norm(c2 - c1))
    if dist + r2 <= r1:
        return c1, r1
    if dist + r1 <= r2:
        return c2, r2
    r = (dist + r1 + r2) / 2
    return c1 + (c2 - c1) * (r - r1) / dist, r


@dataclass(frozen=True)
class TestFunction:
    """psi = base - lam * ref, supported in the ball enclosing both bumps."""
    __test__ = False

    base: Bump
    ref: Bump | None = None
    lam: float = 0.0

    def __call__(self, x) -> np.ndarray:
        v = self.base(x)
        if self.ref is not None and self.lam != 0.0:
            v = v - self.lam * self.ref(x)
        return v

    @property
    def lip_bound(self) -> float:
        extra = abs(self.lam) * self.ref.lip if self.ref is not None else 0.0
        return self.base.lip + extra

    @property
    def support(self) -> BallQuery:
        if self.ref is None or self.lam == 0.0:
            return BallQuery(self.base.center, self.base.radius)
        c, r = _enclosing_ball(self.base.center, self.base.radius, self.ref.center, self.ref.radius)
        return BallQuery(c, r)

    def measured_lip(self, n_samples: int = 4000, seed: int = 0) -> float:
        """Largest sampled difference quotient over pairs in the support."""
        rng = np.random.default_rng(seed)
        sup = self.support
        d = len(sup.center)
        x = sup.center + sup.radius * rng.uniform(-1, 1, (n_samples, d))
        y = x + sup.radius * 10.0 ** rng.uniform(-4, 0, (n_samples, 1)) * rng.standard_normal((n_samples, d))
        dist = np.linalg.norm(x - y, axis=1)
        ok = dist > 0
        return float(np.max(np.abs(self(x[ok]) - self(y[ok])) / dist[ok]))

    def scaled(self, x0, ell: float) -> "TestFunction":
        ref = self.ref.scaled(x0, ell) if self.ref is not None else None
        return TestFunction(self.base.scaled(x0, ell), ref, self.lam)


def weighted_sum(values, weights) -> float:
    return math.fsum(np.asarray(values, float) * np.asarray(weights, float))


def mean_zero_correct(psi_raw: Bump, rho: Bump, mu: PointMeasure) -> TestFunction:
    """psi_raw - lam * rho with lam = int psi_raw dmu / int rho dmu."""
    m_psi = weighted_sum(psi_raw(mu.atoms), mu.weights) if mu.n else 0.0
    if m_psi == 0.0:
        return TestFunction(psi_raw, rho, 0.0)
    m_rho = weighted_sum(rho(mu.atoms), mu.weights)
    if m_rho == 0.0:
        raise ReflectionlessError("degenerate reference: the reference bump has zero mu-mass")
    return TestFunction(psi_raw, rho, m_psi / m_rho)


def radial_cutoff(center, inner: float, outer: float):
    """1 on B(center, inner), 0 outside B(center, outer), linear in between."""
    center = np.asarray(center, float)

    def phi(x):
        r = np.linalg.norm(np.atleast_2d(x) - center, axis=1)
        return np.clip((outer - r) / (outer - inner), 0.0, 1.0)
    return phi


def _sum(K, src, q, tgt, delta, method):
    if method == "treecode" or (method == "auto" and len(src) * len(tgt) > 5e7 and len(src) > 2000):
        return tree_sum(K, build_tree(src, q), tgt, delta)
    return kernel_sum(K, src, q, tgt, delta)


def t1_at_atoms(K: CZKernel, mu: PointMeasure, index=None, method: str = "auto") -> np.ndarray:
    """T_mu(1) at atoms: sum over the other atoms of K(x_i - x_j) w_j."""
    tgt = mu.atoms if index is None else mu.atoms[index]
    if mu.n == 0:
        return np.zeros((len(tgt), K.dprime))
    return _sum(K, mu.atoms, mu.weights, tgt, 0.0, method)


@dataclass(frozen=True)
class PairingTerms:
    near: np.ndarray
    far: np.ndarray
    l1: float
    mean: float

    @property
    def value(self) -> np.ndarray:
        return self.near + self.far


def pairing_terms(K: CZKernel, mu: PointMeasure, psi: TestFunction, cutoff_scale: float = 2.0,
                  rel_tol: float = 1e-10, method: str = "auto") -> PairingTerms:
    """Near term <T_mu(phi), psi> and far term with K(x - y) - K(z - y).

    phi is 1 on cutoff_scale * B and 0 outside 2 cutoff_scale * B, where B
    is the support ball of psi and z its centre."""
    if cutoff_scale < 2:
        raise ReflectionlessError("cutoff_scale must be at least 2")
    if mu.n == 0:
        z = np.zeros(K.dprime)
        return PairingTerms(z, z.copy(), 0.0, 0.0)
    vals = psi(mu.atoms)
    l1 = weighted_sum(np.abs(vals), mu.weights)
    mean = weighted_sum(vals, mu.weights)
    if abs(mean) > rel_tol * max(l1, 1e-300):
        raise ReflectionlessError(
            f"psi is not mu-mean-zero (mean {mean:.3g}, L1 norm {l1:.3g})")
    sup = psi.support
    S = vals != 0
    z = np.zeros(K.dprime)
    if not S.any():
        return PairingTerms(z, z.copy(), l1, mean)
    phi = radial_cutoff(sup.center, cutoff_scale * sup.radius, 2 * cutoff_scale * sup.radius)(mu.atoms)
    pw = vals[S] * mu.weights[S]
    near = pw @ _sum(K, mu.atoms, phi * mu.weights, mu.atoms[S], 0.0, method)
    out = phi < 1
    far = z.copy()
    if out.any():
        g = (1 - phi[out]) * mu.weights[out]
        F = _sum(K, mu.atoms[out], g, mu.atoms[S], 0.0, method)
        Fz = kernel_sum(K, mu.atoms[out], g, sup.center[None], 0.0)[0]
        far = pw @ F - pw.sum() * Fz
    return PairingTerms(near, far, l1, mean)


def pairing_T1(K: CZKernel, mu: PointMeasure, psi: TestFunction, cutoff_scale: float = 2.0,
               rel_tol: float = 1e-10, method: str = "auto") -> np.ndarray:
    """<T_mu(1), psi>_mu for a mean-zero psi, as a d'-vector."""
    return pairing_terms(K, mu, psi, cutoff_scale, rel_tol, method).value


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x over the positive entries."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


@dataclass(frozen=True)
class TruncationCheck:
    r_primes: np.ndarray
    lhs: np.ndarray
    bound: np.ndarray
    constant: float
    slope: float
    violated: bool


def truncation_error_check(K: CZKernel, mu: PointMeasure, psi: TestFunction, r_primes,
                           slope_tol: float = 0.2, method: str = "auto") -> TruncationCheck:
    """|<T(1), psi> - <T(phi), psi>| for phi = 1 on B(z, R'), 0 outside B(z, 2R').

    The bound C R^(s+1) (R/R')^alpha uses the smallest C covering the grid;
    a log-log slope above -alpha + slope_tol is flagged."""
    r_primes = np.asarray(r_primes, float)
    sup = psi.support
    R = sup.radius
    if np.any(r_primes < 2 * R * (1 - 1e-12)):
        raise ReflectionlessError(f"R' must be at least 2R = {2 * R:g}")
    lhs = np.array([np.linalg.norm(pairing_terms(K, mu, psi, rp / R, method=method).far)
                    for rp in r_primes])
    shape = R ** (K.s + 1) * (R / r_primes) ** K.alpha
    C = float(np.max(lhs / shape))
    slope = loglog_slope(r_primes, lhs) if np.all(lhs > 0) else float("nan")
    violated = bool(np.isfinite(slope) and slope > -K.alpha + slope_tol)
    return TruncationCheck(r_primes, lhs, C * shape, C, slope, violated)


# reference pairs and T~

@dataclass(frozen=True)
class ReferencePair:
    ball: BallQuery
    eta: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, float))
        if np.any(self.eta < 0):
            raise ReflectionlessError("eta must be nonnegative")


def make_reference(mu: PointMeasure, center, radius: float, profile: str = "tent") -> ReferencePair:
    """eta = bump on B' normalized to unit mu-integral."""
    if mu.n == 0 or ball_mass(mu, BallQuery(center, radius)) <= 0:
        raise ReflectionlessError("degenerate reference: mu(B') = 0")
    vals = Bump(center, radius, 1.0, profile)(mu.atoms)
    total = weighted_sum(vals, mu.weights)
    if total <= 0:
        raise ReflectionlessError("degenerate reference: eta has zero mu-integral")
    return ReferencePair(BallQuery(center, radius), vals / total)


def default_reference(mu: PointMeasure, mass_fraction: float = 0.01) -> ReferencePair:
    """B' about the barycentre, twice the smallest radius holding mass_fraction
    of the mass, so that the tent is positive on that mass."""
    if mu.n == 0 or mu.total_mass <= 0:
        raise ReflectionlessError("degenerate reference: zero measure")
    c = mu.barycenter()
    dist = np.linalg.norm(mu.atoms - c, axis=1)
    order = np.argsort(dist)
    cw = np.cumsum(mu.weights[order])
    k = int(np.searchsorted(cw, mass_fraction * cw[-1]))
    r = 2 * max(float(dist[order[min(k, mu.n - 1)]]), mu.mesh_scale)
    return make_reference(mu, c, r)


def _ref_terms(K, mu, ref, phi, method):
    """<T_mu(phi), eta> and <T_mu(1 - phi), eta>, both self-excluded."""
    S = ref.eta > 0
    ew = ref.eta[S] * mu.weights[S]
    t_phi = ew @ _sum(K, mu.atoms, phi * mu.weights, mu.atoms[S], 0.0, method)
    t_rest = ew @ _sum(K, mu.atoms, (1 - phi) * mu.weights, mu.atoms[S], 0.0, method)
    return t_phi, t_rest


def ttilde1(K: CZKernel, mu: PointMeasure, delta, targets=None, ref: ReferencePair | None = None,
            cutoff_scale: float = 2.0, method: str = "auto",
            validity_ratio: float = VALIDITY_RATIO) -> np.ndarray:
    """T~_{mu,delta}(1) = T_delta(phi)(x) - <T(phi), eta> + tail, the tail being
    the integral of (1 - phi(y)) [K_delta(x - y) - <K(. - y), eta>].

    targets=None evaluates at the atoms (self-excluded, the L2(mu) sense).
    delta may be a sequence; the result then has a leading delta axis.
    B is the ball about the centre of B' containing B' and the targets, and
    phi is 1 on cutoff_scale * B, 0 outside 2 cutoff_scale * B.
    """
    if mu.n == 0:
        m = mu.n if targets is None else len(np.atleast_2d(targets))
        shape = (m, K.dprime) if np.ndim(delta) == 0 else (len(delta), m, K.dprime)
        return np.zeros(shape)
    ref = ref or default_reference(mu)
    at_atoms = targets is None
    tgt = mu.atoms if at_atoms else np.atleast_2d(np.asarray(targets, float))
    deltas = np.atleast_1d(np.asarray(delta, float))
    for dl in deltas:
        if not (at_atoms and dl == 0):
            _check_delta(mu, float(dl), tgt, validity_ratio)
    c = ref.ball.center
    rB = max(ref.ball.radius, float(np.max(np.linalg.norm(tgt - c, axis=1))))
    phi = radial_cutoff(c, cutoff_scale * rB, 2 * cutoff_scale * rB)(mu.atoms)
    t_phi, t_rest = _ref_terms(K, mu, ref, phi, method)
    out = []
    for dl in deltas:
        near = _sum(K, mu.atoms, phi * mu.weights, tgt, float(dl), method)
        tail = _sum(K, mu.atoms, (1 - phi) * mu.weights, tgt, float(dl), method)
        out.append(near - t_phi + tail - t_rest)
    out = np.array(out)
    return out[0] if np.ndim(delta) == 0 else out


def ttilde1_collapsed(K: CZKernel, mu: PointMeasure, delta: float, targets=None,
                      ref: ReferencePair | None = None, method: str = "auto") -> np.ndarray:
    """For finite measures the three terms collapse to T_delta(1)(x) - <T(1), eta>."""
    ref = ref or default_reference(mu)
    tgt = mu.atoms if targets is None else np.atleast_2d(np.asarray(targets, float))
    S = ref.eta > 0
    c = (ref.eta[S] * mu.weights[S]) @ t1_at_atoms(K, mu, np.flatnonzero(S), method)
    return _sum(K, mu.atoms, mu.weights, tgt, float(delta), method) - c


# defect over a test family

def standard_family(mu: PointMeasure, center, R: float, scales=(0.5, 0.25, 0.125),
                    profiles=PROFILES, lip_target: float = 0.5,
                    ref_lip: float = 0.45, lip_max: float = 1.0) -> list[TestFunction]:
    """Tents and smoothsteps of radius f R on a grid of centres in B(center, R),
    mean-zero corrected with a tent of radius R at the centre; members whose
    corrected Lipschitz bound reaches lip_max or that vanish on mu are dropped.
    lip_target and ref_lip are fractions of lip_max."""
    center = np.asarray(center, float)
    d = len(center)
    rho = Bump(center, R, ref_lip * lip_max * R, "tent")
    fam = []
    for f in scales:
        r = f * R
        k = int(math.floor((R - r) / r + 1e-9))
        axis = np.arange(-k, k + 1) * r
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
        grid = grid[np.linalg.norm(grid, axis=1) <= R - r + 1e-12] + center
        for prof in profiles:
            amp = lip_target * lip_max * r / (1.5 if prof == "smooth" else 1.0)
            for c in grid:
                b = Bump(c, r, amp, prof)
                if mu.n and not np.any(b(mu.atoms) != 0):
                    continue
                psi = mean_zero_correct(b, rho, mu)
                if psi.lip_bound < lip_max:
                    fam.append(psi)
    return fam


@dataclass(frozen=True)
class DefectResult:
    raw: float
    relative: float
    normalization: float
    family_size: int
    values: np.ndarray = field(repr=False)
    l1: np.ndarray = field(repr=False)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.values)) if len(self.values) else -1


def defect(K: CZKernel, mu: PointMeasure, R: float, family=None, center=None,
           method: str = "auto") -> DefectResult:
    """max over the family of |<T_mu(1), psi>|, a lower bound for the sup over
    all mean-zero Lip < 1 functions supported in B(center, R).

    The relative value divides by 2 R mu(B(center, R)), which bounds every
    ||psi||_{L1(mu)} in the family."""
    if mu.n == 0:
        return DefectResult(0.0, 0.0, 0.0, 0, np.zeros(0), np.zeros(0))
    center = mu.barycenter() if center is None else np.asarray(center, float)
    if family is None:
        family = standard_family(mu, center, R)
    if len(family) == 0:
        raise ReflectionlessError("family: empty test family")
    idx = np.flatnonzero(np.linalg.norm(mu.atoms - center, axis=1) <= R * (1 + 1e-12))
    for psi in family:
        sup = psi.support
        if np.linalg.norm(sup.center - center) + sup.radius > R * (1 + 1e-9):
            raise ReflectionlessError("family: member not supported in B(center, R)")
    field_ = t1_at_atoms(K, mu, idx, method)
    w = mu.weights[idx]
    vals = np.empty(len(family))
    l1 = np.empty(len(family))
    for i, psi in enumerate(family):
        p = psi(mu.atoms[idx])
        vals[i] = np.linalg.norm((p * w) @ field_)
        l1[i] = np.sum(np.abs(p) * w)
    norm = 2 * R * ball_mass(mu, BallQuery(center, R))
    raw = float(vals.max())
    return DefectResult(raw, raw / norm if norm > 0 else 0.0, norm, len(family), vals, l1)


# Holder and Cotlar estimates

def holder_modulus(t, delta: float, alpha: float):
    u = np.asarray(t, float) / delta
    return u ** alpha * np.maximum(1.0, u) ** (1 - alpha)


def random_pairs(center, half_width, delta: float, n: int, seed: int = 0,
                 lo: float = 0.1, hi: float = 10.0):
    """n pairs with x uniform in a box and |x - x'| log-uniform in [lo delta, hi delta]."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, float)
    hw = np.asarray(half_width, float) * np.ones(len(center))
    x = center + rng.uniform(-1, 1, (n, len(center))) * hw
    u = rng.standard_normal((n, len(center)))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    t = delta * np.exp(rng.uniform(math.log(lo), math.log(hi), (n, 1)))
    return x, x + t * u


@dataclass(frozen=True)
class HolderResult:
    constant: float
    ratios: np.ndarray = field(repr=False)


def holder_check(K: CZKernel, mu: PointMeasure, delta: float, x, x_prime,
                 ref: ReferencePair | None = None, method: str = "auto") -> HolderResult:
    """max over pairs of |T~(x) - T~(x')| / modulus(|x - x'|, delta)."""
    x = np.atleast_2d(np.asarray(x, float))
    xp = np.atleast_2d(np.asarray(x_prime, float))
    ref = ref or (default_reference(mu) if mu.n else None)
    vals = ttilde1(K, mu, delta, np.vstack([x, xp]), ref, method=method)
    diff = np.linalg.norm(vals[:len(x)] - vals[len(x):], axis=1)
    t = np.linalg.norm(x - xp, axis=1)
    ratios = np.zeros(len(x))
    ok = t > 0
    ratios[ok] = diff[ok] / holder_modulus(t[ok], delta, K.alpha)
    return HolderResult(float(ratios.max()) if len(ratios) else 0.0, ratios)


@dataclass(frozen=True)
class CotlarResult:
    sups: np.ndarray
    argmax_delta: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def ratio(self) -> float:
        """max / median of the per-target suprema."""
        med = float(np.median(self.sups)) if len(self.sups) else 0.0
        return float(self.sups.max()) / med if med > 0 else float("inf")


def cotlar_sup(K: CZKernel, mu: PointMeasure, targets, delta_grid,
               ref: ReferencePair | None = None, method: str = "auto") -> CotlarResult:
    """max over the delta grid of |T~_{mu,delta}(1)(x)| at every target."""
    tgt = np.atleast_2d(np.asarray(targets, float))
    deltas = np.asarray(delta_grid, float)
    if mu.n == 0:
        return CotlarResult(np.zeros(len(tgt)), np.full(len(tgt), deltas[0]),
                            np.zeros((len(deltas), len(tgt))))
    vals = np.linalg.norm(ttilde1(K, mu, deltas, tgt, ref, method=method), axis=-1)
    k = np.argmax(vals, axis=0)
    return CotlarResult(vals.max(axis=0), deltas[k], vals)


def cotlar_scale(mu: PointMeasure, s: float, targets, delta_grid) -> np.ndarray:
    """max over delta of 2 sum_y w_y / (delta + |x - y|)^s restricted to
    B(x, 2 max delta): the size of the local part of T~ at each target."""
    tgt = np.atleast_2d(np.asarray(targets, float))
    deltas = np.asarray(delta_grid, float)
    out = np.zeros(len(tgt))
    for i, x in enumerate(tgt):
        dist = np.linalg.norm(mu.atoms - x, axis=1)
        near = dist <= 2 * deltas.max()
        out[i] = max(2 * np.sum(mu.weights[near] / (dl + dist[near]) ** s) for dl in deltas)
    return out


def doubling_radius(mu: PointMeasure, x, delta: float, s: float, max_steps: int = 200):
    """Least j >= 0 with mu(B(x, 2^(j+1) delta)) < 2^(s+1) mu(B(x, 2^j delta)).

    Returns (j, r = 2^j delta)."""
    if mu.n == 0 or mu.total_mass <= 0:
        raise ReflectionlessError("zero measure has no doubling radius")
    x = np.asarray(x, float)
    dist = np.sort(np.linalg.norm(mu.atoms - x, axis=1))
    order = np.argsort(np.linalg.norm(mu.atoms - x, axis=1))
    cw = np.concatenate([[0.0], np.cumsum(mu.weights[order])])

    def m(r):
        return cw[np.searchsorted(dist, r, side="right")]
    for j in range(max_steps):
        r = delta * 2.0 ** j
        if m(2 * r) < 2 ** (s + 1) * m(r):
            return j, r
    raise ReflectionlessError("no doubling radius found within max_steps")
