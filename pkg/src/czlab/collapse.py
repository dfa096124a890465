"""Level sets E(e, eps, r), density tests, the decay/increment steps of the
collapse argument, its parameter schedule, and porosity detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree, ConvexHull, Delaunay

from .kernels import CZKernel
from .measures import PointMeasure, BallQuery, ball_mass
from .reflectionless import ReferencePair, ttilde1, default_reference, loglog_slope


class CollapseError(ValueError):
    pass


# level sets

def project(K: CZKernel, e, vals) -> np.ndarray:
    """Re[e . v] for field values v of shape (..., d').

    Complex kernels store (Re, Im) of a scalar; e is then a complex number."""
    vals = np.asarray(vals, float)
    if K.is_complex:
        e = complex(np.ravel(np.asarray(e, complex))[0])
        return e.real * vals[..., 0] - e.imag * vals[..., 1]
    e = np.asarray(e, float)
    return vals @ e


def unit_direction(K: CZKernel, e):
    a = np.asarray(e, complex if K.is_complex else float)
    n = np.linalg.norm(a)
    if n == 0:
        raise CollapseError("e: direction must be nonzero")
    return a / n


def probe_lattice(center, radius: float, spacing: float) -> np.ndarray:
    """Square lattice points of the given spacing inside the closed ball."""
    center = np.asarray(center, float)
    k = int(math.floor(radius / spacing))
    axis = np.arange(-k, k + 1) * spacing
    grid = np.stack(np.meshgrid(*([axis] * len(center)), indexing="ij"), -1).reshape(-1, len(center))
    return grid[np.linalg.norm(grid, axis=1) <= radius * (1 + 1e-12)] + center


def delta_grid(mu: PointMeasure, r: float, n_min: int = 12, ratio: float = 2.0,
               validity_ratio: float = 10.0) -> np.ndarray:
    """Geometric grid r/ratio, r/ratio^2, ... with n_min points, cut off below at
    the quadrature validity limit validity_ratio * mesh_scale."""
    g = r / ratio ** np.arange(1, n_min + 1)
    g = g[g >= validity_ratio * mu.mesh_scale * (1 - 1e-12)]
    if len(g) == 0:
        raise CollapseError("no delta in (0, r) is above the quadrature validity limit")
    return g


@dataclass(frozen=True)
class LevelSetSample:
    probes: np.ndarray = field(repr=False)
    spacing: float
    e: np.ndarray
    eps: float
    deltas: np.ndarray
    score: np.ndarray = field(repr=False)

    @property
    def mask(self) -> np.ndarray:
        return self.score > self.eps

    def at(self, eps: float) -> "LevelSetSample":
        """Same probes at another threshold; E(eps2) is inside E(eps1) when eps1 <= eps2."""
        return LevelSetSample(self.probes, self.spacing, self.e, eps, self.deltas, self.score)


def level_set(K: CZKernel, mu: PointMeasure, e, eps: float, r: float, probes, deltas,
              spacing: float, ref: ReferencePair | None = None) -> LevelSetSample:
    """Probes where Re[e . T~_{mu,delta}(1)] > eps for every sampled delta in (0, r).

    score is the minimum over the grid, so membership is a necessary condition
    for membership in the true level set."""
    probes = np.atleast_2d(np.asarray(probes, float))
    deltas = np.asarray(deltas, float)
    deltas = deltas[(deltas > 0) & (deltas < r)]
    if len(deltas) == 0:
        raise CollapseError("delta grid has no point in (0, r)")
    e = unit_direction(K, e)
    if mu.n == 0:
        score = np.zeros(len(probes))
    else:
        vals = ttilde1(K, mu, deltas, probes, ref or default_reference(mu))
        score = project(K, e, vals).min(axis=0)
    return LevelSetSample(probes, float(spacing), e, float(eps), deltas, score)


def density_test(E: LevelSetSample, q: BallQuery, kappa: float) -> bool:
    """Every probe in q lies within kappa * q.radius of a member probe in q."""
    if E.spacing > kappa * q.radius / 4 * (1 + 1e-12):
        raise CollapseError(
            f"probe spacing {E.spacing:g} exceeds kappa r / 4 = {kappa * q.radius / 4:g}")
    inside = np.linalg.norm(E.probes - q.center, axis=1) < q.radius
    if not inside.any():
        return True
    members = E.probes[inside & E.mask]
    if len(members) == 0:
        return False
    dist, _ = cKDTree(members).query(E.probes[inside])
    return bool(np.all(dist <= kappa * q.radius))


# the decay inequality

def decay_bound(Lam: float, eps: float) -> float:
    """4 Lam^2 / (4 Lam^2 + eps^2 / 4)."""
    return 4 * Lam**2 / (4 * Lam**2 + eps**2 / 4)


def rearrange_check(A, B, e, l):
    """Integer form of the rearrangement step, exact in int64.

    With eps = e/k and Lam = l/k the hypothesis (eps/2) A <= 2 Lam sqrt(A(B - A)),
    0 <= A <= B, squares to e^2 A^2 <= 16 l^2 A (B - A), and the conclusion
    A <= 4 Lam^2 / (4 Lam^2 + eps^2/4) B to A (16 l^2 + e^2) <= 16 l^2 B.
    Inputs must satisfy A, B < 2^20 and e, l < 2^9 so that nothing overflows.
    Returns (hypothesis, conclusion) boolean arrays."""
    A, B, e, l = (np.asarray(v, dtype=np.int64) for v in (A, B, e, l))
    if (np.any(A < 0) or np.any(B >= 2**20) or np.any(A >= 2**20)
            or np.any(np.abs(e) >= 2**9) or np.any(np.abs(l) >= 2**9)):
        raise CollapseError("rearrange_check: inputs out of the exact int64 range")
    hyp = (A <= B) & (e * e * A * A <= 16 * l * l * A * (B - A))
    concl = A * (16 * l * l + e * e) <= 16 * l * l * B
    return hyp, concl


@dataclass(frozen=True)
class StepResult:
    status: str          # "verified", "violated" or "inconclusive"
    ratio: float
    bound: float
    reason: str = ""


def decay_step(mu: PointMeasure, t: float, kappa: float, eps: float, Lam: float,
               E: LevelSetSample, C6: float, alpha: float = 1.0, center=None) -> StepResult:
    """mu(B(0, t - sqrt(kappa))) / mu(B(0, t)) against the (rearrange) bound.

    Hypotheses: E is kappa-dense in B(0, t - sqrt(kappa)) and eps >= 2 C6 kappa^(alpha/2)."""
    center = np.zeros(mu.d) if center is None else np.asarray(center, float)
    inner = t - math.sqrt(kappa)
    big = ball_mass(mu, BallQuery(center, t)) if mu.n else 0.0
    small = ball_mass(mu, BallQuery(center, inner)) if mu.n else 0.0
    ratio = small / big if big > 0 else 0.0
    bound = decay_bound(Lam, eps)
    if eps < 2 * C6 * kappa ** (alpha / 2):
        return StepResult("inconclusive", ratio, bound, "eps < 2 C6 kappa^(alpha/2)")
    q = BallQuery(center, inner)
    try:
        dense = density_test(E, q, kappa / inner)
    except CollapseError as exc:
        return StepResult("inconclusive", ratio, bound, str(exc))
    if not dense:
        return StepResult("inconclusive", ratio, bound, "level set is not kappa-dense")
    return StepResult("violated" if ratio > bound else "verified", ratio, bound)


@dataclass(frozen=True)
class IncrementResult:
    eps: float
    kappa: float
    t: float
    verified: bool
    status: str
    reason: str = ""


def increment_parameters(eps, kappa, m, t, C6, C9, alpha, d):
    """eps' = eps - C6 (kappa^(alpha/2) + sqrt m), kappa' = C9 m^(1/(2d)), t' = t - sqrt kappa."""
    return (eps - C6 * (kappa ** (alpha / 2) + math.sqrt(m)), C9 * m ** (1 / (2 * d)),
            t - math.sqrt(kappa))


def increment_step(mu: PointMeasure, E: LevelSetSample, eps: float, kappa: float, m: float,
                   t: float, C6: float, C9: float, alpha: float = 1.0,
                   center=None) -> IncrementResult:
    """New parameters and a direct density test of E(e, eps', 1) in B(0, t')."""
    d = mu.d
    center = np.zeros(d) if center is None else np.asarray(center, float)
    e2, k2, t2 = increment_parameters(eps, kappa, m, t, C6, C9, alpha, d)
    inner = t - math.sqrt(kappa)
    try:
        if not density_test(E.at(eps), BallQuery(center, inner), kappa / inner):
            return IncrementResult(e2, k2, t2, False, "inconclusive", "hypothesis: not kappa-dense")
    except CollapseError as exc:
        return IncrementResult(e2, k2, t2, False, "inconclusive", str(exc))
    if mu.n and ball_mass(mu, BallQuery(center, t)) > m:
        return IncrementResult(e2, k2, t2, False, "inconclusive", "hypothesis: mu(B(0, t)) > m")
    if k2 <= 0:
        ok = bool(np.all(E.at(e2).mask[np.linalg.norm(E.probes - center, axis=1) < t2]))
        return IncrementResult(e2, k2, t2, ok, "verified" if ok else "violated")
    try:
        ok = density_test(E.at(e2), BallQuery(center, t2), k2 / t2)
    except CollapseError as exc:
        return IncrementResult(e2, k2, t2, False, "inconclusive", str(exc))
    return IncrementResult(e2, k2, t2, ok, "verified" if ok else "violated")


# the schedule

def derived_constants(Lam: float, d: int, C6: float, C1: float) -> dict:
    """c8 = 1/(16 Lam^2 + 1) (enough for eps <= 1 by the rearrangement algebra)
    and C9 = (4 C1 / (omega_d C6))^(1/d) from the Chebyshev step."""
    omega = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return {"c8": 1.0 / (16 * Lam**2 + 1), "C9": (4 * C1 / (omega * C6)) ** (1 / d), "C6": C6}


@dataclass
class CollapseSchedule:
    eps: float
    Lam: float
    m0: float
    kappa0: float
    c8: float
    C9: float
    C6: float
    alpha: float
    d: int
    t0: Fraction
    eps_j: list = field(repr=False)
    kappa_j: list = field(repr=False)
    t_j: list = field(repr=False)
    m_j: list = field(repr=False)
    eps_inc: list = field(repr=False)
    t_inc: list = field(repr=False)
    limits: dict
    verified: bool
    stop_reason: str
    first_failure: int | None

    def conservation_residuals(self):
        """Exact residuals of t_j + sum sqrt(kappa_l) = t0 and the eps analogue."""
        rt, re = [], []
        acc_t = acc_e = Fraction(0)
        for j in range(len(self.t_j)):
            rt.append(self.t_j[j] + acc_t - self.t0)
            re.append(self.eps_j[j] + acc_e - Fraction(self.eps))
            if j < len(self.t_inc):
                acc_t += self.t_inc[j]
                acc_e += self.eps_inc[j]
        return rt, re


def run_schedule(eps: float, Lam: float, m0: float, kappa0: float, c8: float, C9: float,
                 C6: float, alpha: float = 1.0, d: int = 2, max_steps: int = 200,
                 t0=Fraction(3, 2)) -> CollapseSchedule:
    """Iterate eps_j, kappa_j, t_j, m_j and check eps_j >= eps/2,
    2 C6 kappa_j^(alpha/2) <= eps/2 and t_j > 1 for every j.

    The first max_steps steps are recorded exactly (increments are rounded to
    floats once, then summed as fractions); all later steps are settled by the
    closed-form geometric limits of the three sums."""
    for name, v in (("eps", eps), ("Lam", Lam), ("m0", m0), ("kappa0", kappa0), ("c8", c8),
                    ("C9", C9), ("C6", C6), ("alpha", alpha)):
        if not v > 0:
            raise CollapseError(f"{name}: must be positive, got {v}")
    lam = c8 * eps**2
    if lam >= 4:
        raise CollapseError("c8 eps^2 must be below 4")
    qf = 1 - lam / 4
    t0 = Fraction(t0)
    E0 = Fraction(eps)
    eps_j, kap_j, t_j, m_j, e_inc, t_inc = [E0], [kappa0], [t0], [m0], [], []
    first = None
    half = Fraction(eps) / 2

    def ok(j):
        return (eps_j[j] >= half and 2 * C6 * kap_j[j] ** (alpha / 2) <= eps / 2 and t_j[j] > 1)
    if not ok(0):
        first = 0
    for j in range(1, max_steps + 1):
        e_inc.append(Fraction(C6 * (kap_j[-1] ** (alpha / 2) + math.sqrt(m_j[-1]))))
        t_inc.append(Fraction(math.sqrt(kap_j[-1])))
        eps_j.append(eps_j[-1] - e_inc[-1])
        t_j.append(t_j[-1] - t_inc[-1])
        kap_j.append(C9 * m_j[-1] ** (1 / (2 * d)))
        m_j.append(qf * m_j[-1])
        if first is None and not ok(j):
            first = j
    # closed-form limits of the full sums (j -> infinity)
    a2 = alpha / (4 * d)
    sum_sqrt_m = math.sqrt(m0) / (1 - math.sqrt(qf))
    sum_kap_a = kappa0 ** (alpha / 2) + C9 ** (alpha / 2) * m0 ** a2 / (1 - qf ** a2)
    sum_sqrt_kap = math.sqrt(kappa0) + math.sqrt(C9) * m0 ** (1 / (4 * d)) / (1 - qf ** (1 / (4 * d)))
    kap_max = max(kappa0, C9 * m0 ** (1 / (2 * d)))
    limits = {
        "eps_inf": eps - C6 * (sum_kap_a + sum_sqrt_m),
        "t_inf": float(t0) - sum_sqrt_kap,
        "kappa_max": kap_max,
        "lambda": lam,
    }
    all_ok = (limits["eps_inf"] >= eps / 2 and 2 * C6 * kap_max ** (alpha / 2) <= eps / 2
              and limits["t_inf"] >= 1)
    if first is not None:
        reason = f"condition fails at step {first}"
    elif all_ok:
        reason = "all steps verified (closed-form limits)"
    else:
        reason = "recorded prefix passes but the limits fail"
    return CollapseSchedule(eps, Lam, m0, kappa0, c8, C9, C6, alpha, d, t0, eps_j, kap_j, t_j,
                            m_j, e_inc, t_inc, limits, bool(all_ok and first is None), reason, first)


def initial_mass_ok(eps: float, Lam: float, m0: float, kappa0: float, c8: float, s: float) -> bool:
    """mu(B(0, 3/2)) <= m0 from N decay steps: N = least with (1 - lam)^N <= m0 / (Lam 2^s),
    which needs N sqrt(kappa0) < 1/2."""
    lam = c8 * eps**2
    target = m0 / (Lam * 2**s)
    N = 0 if target >= 1 else math.ceil(math.log(target) / math.log1p(-lam))
    return N * math.sqrt(kappa0) < 0.5


def largest_kappa0(eps: float, Lam: float, c8: float, C9: float, C6: float, alpha: float = 1.0,
                   d: int = 2, s: float = 1.0, iters: int = 200, lo: float = 1e-60) -> float:
    """Largest kappa0 (bisection in log space) for which the schedule with
    m0 = (kappa0 / C9)^(2d) verifies and the initial-mass step fits."""
    def good(k):
        m0 = (k / C9) ** (2 * d)
        if m0 <= 0:
            return False
        sch = run_schedule(eps, Lam, m0, k, c8, C9, C6, alpha, d, max_steps=0)
        return sch.verified and initial_mass_ok(eps, Lam, m0, k, c8, s)
    a, b = math.log(lo), math.log(0.25)
    if not good(lo):
        raise CollapseError("no verifying kappa0 above the search floor")
    if good(0.25):
        return 0.25
    for _ in range(iters):
        mid = (a + b) / 2
        if good(math.exp(mid)):
            a = mid
        else:
            b = mid
        if b - a < 1e-12:
            break
    return math.exp(a)


def fit_beta(eps_values, kappas) -> float:
    """Exponent beta in kappa(eps) ~ c eps^beta."""
    return loglog_slope(eps_values, kappas)


# the alternative and porosity

@dataclass(frozen=True)
class AlternativeResult:
    outcome: str         # "dense-mass", "empty-ball", "neither" or "inconclusive"
    ttilde: float
    mass_far: float
    mass_near: float


def alternative_check(K: CZKernel, mu: PointMeasure, x, r: float, eps: float, M: float,
                      tau: float, ref: ReferencePair | None = None) -> AlternativeResult:
    """Given |T~_{mu,Mr}(1)(x)| > eps: (i) mu(B(x, 2Mr)) >= tau r^s, or (ii) mu(B(x, r)) = 0."""
    x = np.asarray(x, float)
    if mu.n == 0:
        return AlternativeResult("inconclusive", 0.0, 0.0, 0.0)
    val = float(np.linalg.norm(ttilde1(K, mu, M * r, x[None], ref or default_reference(mu))[0]))
    far = ball_mass(mu, BallQuery(x, 2 * M * r))
    near = ball_mass(mu, BallQuery(x, r))
    if val <= eps:
        return AlternativeResult("inconclusive", val, far, near)
    if far >= tau * r ** K.s:
        out = "dense-mass"
    elif near == 0:
        out = "empty-ball"
    else:
        out = "neither"
    return AlternativeResult(out, val, far, near)


@dataclass(frozen=True)
class PorosityResult:
    status: str              # "found", "none" or "skipped"
    average: float
    lam: float
    balls: list = field(default_factory=list)


def _hull_mask(atoms, pts):
    d = atoms.shape[1]
    if len(atoms) <= d:
        return np.zeros(len(pts), bool)
    try:
        ConvexHull(atoms)
    except Exception:
        return np.zeros(len(pts), bool)
    return Delaunay(atoms).find_simplex(pts) >= 0


def mean_abs_ttilde(K: CZKernel, mu: PointMeasure, q: BallQuery, cells: int = 48,
                    ref: ReferencePair | None = None, delta: float | None = None) -> float:
    """Lattice average of |T~_{mu,delta}(1)| over q, with delta at the quadrature limit."""
    if mu.n == 0:
        return 0.0
    pts = probe_lattice(q.center, q.radius, 2 * q.radius / cells)
    delta = 10 * mu.mesh_scale if delta is None else delta
    vals = ttilde1(K, mu, delta, pts, ref or default_reference(mu))
    return float(np.mean(np.linalg.norm(vals, axis=1)))


def porosity_scan(K: CZKernel, mu: PointMeasure, q: BallQuery, eps: float, grid: int = 64,
                  hull: bool = True, refine: int = 12, cells: int = 48, n_balls: int = 5,
                  ref: ReferencePair | None = None) -> PorosityResult:
    """Largest empty balls B' inside q when the average of |T~_mu(1)| over q exceeds eps.

    Centres start on a grid over q (restricted to the convex hull of the
    support when hull=True) and the best ones are refined by shrinking the
    grid around them.  A ball is empty when it misses every atom cell, so the
    radius is the distance to the nearest atom minus half a cell diagonal."""
    avg = mean_abs_ttilde(K, mu, q, cells, ref)
    if not avg > eps:
        return PorosityResult("skipped", avg, 0.0)
    c = np.asarray(q.center, float)
    tree = cKDTree(mu.atoms)
    pad = mu.mesh_scale * math.sqrt(mu.d) / 2

    def radius(pts):
        dist, _ = tree.query(pts)
        return np.minimum(dist - pad, q.radius - np.linalg.norm(pts - c, axis=1))

    def allowed(pts):
        ok = np.linalg.norm(pts - c, axis=1) < q.radius
        if hull:
            ok &= _hull_mask(mu.atoms, pts)
        return ok
    h = 2 * q.radius / grid
    pts = probe_lattice(c, q.radius, h)
    pts = pts[allowed(pts)]
    if len(pts) == 0:
        return PorosityResult("none", avg, 0.0)
    rad = radius(pts)
    order = np.argsort(-rad)[:n_balls * 4]
    best = []
    for i in order:
        p, rp, step = pts[i], rad[i], h
        for _ in range(refine):
            offs = np.stack(np.meshgrid(*([np.array([-1.0, 0.0, 1.0]) * step] * mu.d),
                                        indexing="ij"), -1).reshape(-1, mu.d)
            cand = p + offs
            cand = cand[allowed(cand)]
            if len(cand) == 0:
                break
            rc = radius(cand)
            k = int(np.argmax(rc))
            if rc[k] > rp:
                p, rp = cand[k], rc[k]
            else:
                step /= 2
        best.append((float(rp), p))
    best.sort(key=lambda b: -b[0])
    balls = []
    for rp, p in best:
        if rp <= 0:
            break
        if all(np.linalg.norm(p - b.center) > max(rp, b.radius) for b in balls):
            balls.append(BallQuery(p, rp))
        if len(balls) == n_balls:
            break
    if not balls:
        return PorosityResult("none", avg, 0.0)
    return PorosityResult("found", avg, balls[0].radius / q.radius, balls)
