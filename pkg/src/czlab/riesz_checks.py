"""Riesz-transform identities on grids: the divergence identity, the
fractional-Laplacian principal value, the lower-bound integral with its
Fourier-built test field, and the truncation / growth diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from .kernels import CZKernel, riesz
from .measures import BallQuery, PointMeasure, ball_mass
from .operators import VALIDITY_RATIO, build_tree, kernel_sum, kernel_sum_dot, tree_sum
from .reflectionless import ReferencePair, default_reference, loglog_slope, ttilde1


class RieszCheckError(ValueError):
    pass


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _require_riesz(K: CZKernel):
    if not K.name.startswith("riesz"):
        raise RieszCheckError(f"kernel: needs the Riesz kernel, got {K.name!r}")


# grids

@dataclass(frozen=True)
class GridSpec:
    """n nodes per axis at center - half_width + i h, h = 2 half_width / n.
    The centre is a node; the layout is periodic-friendly."""
    center: tuple
    half_width: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.half_width > 0:
            raise RieszCheckError("grid: half_width must be positive")
        if self.n < 4:
            raise RieszCheckError("grid: need at least 4 nodes per axis")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / self.n

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.center) - self.half_width

    def axes(self):
        return [self.origin[k] + self.spacing * np.arange(self.n) for k in range(self.d)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def nodes(self) -> np.ndarray:
        return np.stack(self.mesh(), -1).reshape(-1, self.d)


@dataclass
class GridField:
    origin: np.ndarray
    spacing: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, float)
        self.values = np.asarray(self.values, float)
        if not self.spacing > 0:
            raise RieszCheckError("grid: spacing must be positive")
        if self.values.ndim == len(self.origin):
            self.values = self.values[..., None]
        if self.values.ndim != len(self.origin) + 1:
            raise RieszCheckError("grid: values must carry one component axis")
        if not np.all(np.isfinite(self.values)):
            raise RieszCheckError("grid: non-finite values")

    @property
    def d(self) -> int:
        return len(self.origin)

    @property
    def extents(self) -> tuple:
        return self.values.shape[:-1]

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def nodes(self) -> np.ndarray:
        ax = [self.origin[k] + self.spacing * np.arange(n) for k, n in enumerate(self.extents)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), -1).reshape(-1, self.d)

    def to_csv(self) -> str:
        cols = [f"x{k}" for k in range(self.d)] + [f"v{c}" for c in range(self.components)]
        data = np.hstack([self.nodes(), self.values.reshape(-1, self.components)])
        rows = [",".join(cols)] + [",".join(f"{v:.17g}" for v in row) for row in data]
        return "\n".join(rows) + "\n"


def deposit(mu: PointMeasure, grid: GridSpec) -> np.ndarray:
    """Cloud-in-cell density of mu on the grid nodes."""
    d, n, h = grid.d, grid.n, grid.spacing
    rho = np.zeros((n,) * d)
    if mu.n == 0:
        return rho
    t = (mu.atoms - grid.origin) / h
    i0 = np.floor(t).astype(int)
    fr = t - i0
    if np.any(i0 < 0) or np.any(i0 + 1 > n - 1):
        raise RieszCheckError("grid: the measure is not inside the grid")
    for corner in np.ndindex(*(2,) * d):
        c = np.array(corner)
        w = np.prod(np.where(c == 1, fr, 1 - fr), axis=1) * mu.weights
        np.add.at(rho, tuple((i0 + c).T), w)
    return rho / h**d


def mollifier(h: float, d: int, radius: float = 0.5) -> np.ndarray:
    """Radial smoothstep bump of the given radius with unit grid mass."""
    m = int(math.ceil(radius / h))
    ax = np.arange(-m, m + 1) * h
    r = np.linalg.norm(np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1), axis=-1)
    t = np.clip(r / radius, 0, 1)
    psi = 1 - t * t * (3 - 2 * t)
    return psi / (psi.sum() * h**d)


def _kernel_grid(K: CZKernel, n: int, h: float) -> np.ndarray:
    """K at the (2n-1)^d lattice offsets, zero at the origin."""
    ax = np.arange(-(n - 1), n) * h
    off = np.stack(np.meshgrid(*([ax] * K.d), indexing="ij"), -1).reshape(-1, K.d)
    out = np.zeros((len(off), K.dprime))
    nz = np.any(off != 0, axis=1)
    out[nz] = K.eval(off[nz])
    return out.reshape((2 * n - 1,) * K.d + (K.dprime,))


def _power_grid(n: int, h: float, d: int, p: float) -> np.ndarray:
    ax = np.arange(-(n - 1), n) * h
    r = np.linalg.norm(np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1), axis=-1)
    out = np.zeros_like(r)
    out[r > 0] = r[r > 0] ** (-p)
    return out


def central_divergence(F: np.ndarray, h: float) -> np.ndarray:
    """Central-difference divergence on the interior nodes (one layer trimmed)."""
    d = F.ndim - 1
    inner = (slice(1, -1),) * d
    div = np.zeros(tuple(n - 2 for n in F.shape[:-1]))
    for a in range(d):
        hi = list(inner)
        lo = list(inner)
        hi[a] = slice(2, None)
        lo[a] = slice(None, -2)
        div += (F[tuple(hi) + (a,)] - F[tuple(lo) + (a,)]) / (2 * h)
    return div


def flux_residual(F: GridField) -> float:
    """Discrete divergence theorem: the lattice sum of the central divergence
    against the matching boundary flux, relative to the absolute sum."""
    d, h = F.d, F.spacing
    div = central_divergence(F.values, h)
    total = div.sum() * h**d
    flux = 0.0
    for a in range(d):
        idx = [slice(1, -1)] * d

        def face(i):
            j = list(idx)
            j[a] = i
            return F.values[tuple(j) + (a,)].sum()
        flux += h ** (d - 1) * 0.5 * (face(-1) + face(-2) - face(0) - face(1))
    scale = np.abs(div).sum() * h**d
    return abs(total - flux) / scale if scale > 0 else abs(total - flux)


# divergence identity

@dataclass
class DivergenceResult:
    lhs: GridField
    rhs: GridField
    error: float
    b: float
    b_fitted: bool
    mollified: GridField = field(repr=False)


def divergence_identity(mu: PointMeasure, grid: GridSpec, s: float,
                        radius: float = 0.5) -> DivergenceResult:
    """div(psi * R_mu(1)) against b (psi * mu) for s = d - 1 (b the sphere area),
    or b times the (s+1)-potential of psi * mu for s < d - 1 (b fitted)."""
    d, n, h = grid.d, grid.n, grid.spacing
    if s > d - 1 + 1e-12:
        raise RieszCheckError(f"s: needs s <= d - 1 = {d - 1}, got {s}; use frac_laplacian_pv")
    if 2 * radius / h < 8:
        raise RieszCheckError("grid: fewer than 8 cells across the mollifier support")
    K = riesz(d, s)
    rho = fftconvolve(deposit(mu, grid), mollifier(h, d, radius), mode="same") * h**d
    Kg = _kernel_grid(K, n, h)
    F = np.stack([fftconvolve(rho, Kg[..., c], mode="same") for c in range(d)], -1) * h**d
    lhs = central_divergence(F, h)
    inner = (slice(1, -1),) * d
    if abs(s - (d - 1)) < 1e-12:
        shape, b, fitted = rho[inner], sphere_area(d), False
    else:
        shape = (fftconvolve(rho, _power_grid(n, h, d, s + 1), mode="same") * h**d)[inner]
        den = float(np.sum(shape * shape))
        b, fitted = (float(np.sum(lhs * shape)) / den if den > 0 else 0.0), True
    rhs = b * shape
    scale = np.abs(rhs).sum()
    err = float(np.abs(lhs - rhs).sum() / scale) if scale > 0 else float(np.abs(lhs).sum())
    org = grid.origin + h
    return DivergenceResult(GridField(org, h, lhs), GridField(org, h, rhs), err, b, fitted,
                            GridField(grid.origin, h, F))


def convergence_order(errors, ns) -> list[float]:
    """Observed orders log2(e_k / e_{k+1}) / log2(n_{k+1} / n_k)."""
    e = np.asarray(errors, float)
    n = np.asarray(ns, float)
    return list(np.log(e[:-1] / e[1:]) / np.log(n[1:] / n[:-1]))


def _ball_quadrature(center, radius, cells):
    """Midpoint nodes of a cells^d grid on the bounding box, kept inside the ball."""
    c = np.asarray(center, float)
    d = len(c)
    h = 2 * radius / cells
    ax = -radius + h * (np.arange(cells) + 0.5)
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
    return pts[np.linalg.norm(pts, axis=1) <= radius] + c, h


def _valid_nodes(mu, pts, validity_ratio):
    if mu.n == 0:
        return np.ones(len(pts), bool)
    dist, _ = cKDTree(mu.atoms).query(pts)
    return dist >= validity_ratio * mu.mesh_scale


def ball_l1(K: CZKernel, mu: PointMeasure, center, radius: float, cells: int = 48,
            ref: ReferencePair | None = None, validity_ratio: float = VALIDITY_RATIO):
    """Grid quadrature of int_{B(center, radius)} |R~_mu(1)| dm_d. Nodes too close
    to the atoms are dropped and the mean over the kept nodes is used; returns
    (integral, kept fraction)."""
    pts, _ = _ball_quadrature(center, radius, cells)
    keep = _valid_nodes(mu, pts, validity_ratio)
    if not keep.any():
        raise RieszCheckError("cells: every quadrature node is too close to the support")
    vals = np.linalg.norm(ttilde1(K, mu, 0.0, pts[keep], ref, validity_ratio=validity_ratio), axis=1)
    vol = ball_volume(len(pts[0])) * radius ** len(pts[0])
    return float(vals.mean() * vol), float(keep.mean())


@dataclass
class LowerBound:
    eps: float
    integral: float
    constant: float
    kept: float


def lower_bound_constant(K: CZKernel, mu: PointMeasure, x, r: float, cells: int = 48,
                         ref: ReferencePair | None = None) -> LowerBound:
    """c in int_{B(x,3r)} |R~_mu(1)| >= c eps m_d(B(x,3r)), eps = mu(B(x,r)) / r^s."""
    _require_riesz(K)
    eps = ball_mass(mu, BallQuery(x, r)) / r**K.s
    if eps <= 0:
        raise RieszCheckError("x: mu(B(x, r)) = 0, the lower bound is vacuous")
    I, kept = ball_l1(K, mu, x, 3 * r, cells, ref)
    return LowerBound(eps, I, I / (eps * ball_volume(K.d) * (3 * r) ** K.d), kept)


# fractional-Laplacian principal value (d = 2)

def _gauss_log_shells(r_lo, r_hi, per_octave, k):
    """Gauss-Legendre nodes in log r on shells of equal log-width."""
    m = max(1, int(math.ceil(per_octave * math.log2(r_hi / r_lo))))
    edges = np.exp(np.linspace(math.log(r_lo), math.log(r_hi), m + 1))
    gx, gw = np.polynomial.legendre.leggauss(k)
    t, w, shell = [], [], []
    for i in range(m):
        a, b = math.log(edges[i]), math.log(edges[i + 1])
        t.append(0.5 * (b - a) * gx + 0.5 * (a + b))
        w.append(0.5 * (b - a) * gw)
        shell.append(np.full(k, i))
    return np.exp(np.concatenate(t)), np.concatenate(w), np.concatenate(shell), edges


def _directions(n_theta):
    """Unit vectors at half-step angles, second half the exact negatives of the first."""
    if n_theta % 2:
        raise RieszCheckError("n_theta: must be even")
    th = (np.arange(n_theta // 2) + 0.5) * 2 * math.pi / n_theta
    D = np.stack([np.cos(th), np.sin(th)], -1)
    return np.vstack([D, -D])


@dataclass
class PVResult:
    value: np.ndarray
    raw: np.ndarray
    radii: tuple
    normalization: float
    relative: float
    tail: np.ndarray
    tail_bound: float
    inner_bound: float


def pv_integral(u, x0, s: float, eps: float, r_out: float, far_value=None,
                per_octave: int = 8, gauss: int = 4, n_theta: int = 256,
                hessian_bound: float | None = None) -> PVResult:
    """P.V. int (u(x0) - u(x)) / |x - x0|^{2d+1-s} dm_2(x) for a callable field u on R^2.

    Polar shells with equal log-width from eps/2 to r_out, exclusion radii eps
    and eps/2 combined by Richardson extrapolation with exponent 1 + s - d.
    Beyond r_out u is replaced by far_value (default 0) analytically.
    """
    d = 2
    x0 = np.asarray(x0, float)
    p = 2 * d + 1 - s
    expo = 1 + s - d
    if not 0 < expo < 1:
        raise RieszCheckError(f"s: needs s in (d-1, d) = (1, 2), got {s}")
    if not 0 < eps < r_out:
        raise RieszCheckError("eps: need 0 < eps < r_out")
    r, w, _, _ = _gauss_log_shells(eps / 2, r_out, per_octave, gauss)
    D = _directions(n_theta)
    pts = x0 + (r[:, None, None] * D[None]).reshape(-1, d)
    u0 = np.atleast_1d(np.asarray(u(x0[None]), float)[0])
    vals = np.asarray(u(pts), float).reshape(len(r), n_theta, -1)
    diff = u0[None, None, :] - vals
    # dm = r^d dt dtheta with t = log r
    wr = w * r ** (d - p) * (2 * math.pi / n_theta)
    far = np.zeros_like(u0) if far_value is None else np.atleast_1d(np.asarray(far_value, float))
    texp = p - d
    tail = (u0 - far) * sphere_area(d) * r_out ** (-texp) / texp
    full = np.einsum("i,ijc->c", wr, diff) + tail
    outer = np.einsum("i,ijc->c", wr * (r >= eps), diff) + tail
    q = 2.0**expo
    value = (q * full - outer) / (q - 1)
    absw = np.einsum("i,ij->", wr * (r >= eps), np.linalg.norm(diff, axis=-1))
    norm = float(absw + np.linalg.norm(tail))
    tail_bound = float(np.max(np.linalg.norm(vals[-1] - far, axis=-1)) * sphere_area(d)
                       * r_out ** (-texp) / texp)
    inner = (float("nan") if hessian_bound is None
             else 0.5 * hessian_bound * sphere_area(d) * (eps / 2) ** expo / expo)
    rel = float(np.linalg.norm(value) / norm) if norm > 0 else 0.0
    return PVResult(value, np.stack([outer, full]), (eps, eps / 2), norm, rel, tail,
                    tail_bound, inner)


def field_u(K: CZKernel, mu: PointMeasure, delta: float | None = None, method: str = "auto"):
    """x -> R_{mu,delta}(1)(x), regularized at delta (default 2 mesh) so that the
    values are continuum-accurate away from the boundary of the support."""
    dl = 2 * mu.mesh_scale if delta is None else delta
    tree = []

    def u(x):
        x = np.atleast_2d(x)
        big = method == "treecode" or (method == "auto" and mu.n > 2000
                                       and mu.n * len(x) > 5e7)
        if not big:
            return kernel_sum(K, mu.atoms, mu.weights, x, dl)
        if not tree:
            tree.append(build_tree(mu.atoms, mu.weights))
        return tree_sum(K, tree[0], x, dl)
    return u


def hessian_norm(u, x, h: float) -> float:
    """Max over components of the Frobenius norm of the finite-difference Hessian."""
    x = np.asarray(x, float)
    d = len(x)
    E = np.eye(d) * h
    pts = [x]
    for i in range(d):
        pts += [x + E[i], x - E[i]]
        for j in range(i + 1, d):
            pts += [x + E[i] + E[j], x + E[i] - E[j], x - E[i] + E[j], x - E[i] - E[j]]
    v = np.asarray(u(np.array(pts)), float)
    f0 = v[0]
    H = np.zeros((v.shape[1], d, d))
    k = 1
    for i in range(d):
        H[:, i, i] = (v[k] - 2 * f0 + v[k + 1]) / h**2
        k += 2
        for j in range(i + 1, d):
            H[:, i, j] = H[:, j, i] = (v[k] - v[k + 1] - v[k + 2] + v[k + 3]) / (4 * h * h)
            k += 4
    return float(np.max(np.sqrt(np.sum(H * H, axis=(1, 2)))))


def second_derivative_bound(K: CZKernel, mu: PointMeasure, points, h: float | None = None,
                            delta: float | None = None) -> float:
    """max |D^2 R_mu(1)| over off-support points by central differences."""
    pts = np.atleast_2d(np.asarray(points, float))
    if mu.n:
        dist, _ = cKDTree(mu.atoms).query(pts)
        if np.any(dist < VALIDITY_RATIO * mu.mesh_scale):
            raise RieszCheckError("points: too close to the support for a Hessian")
        h = h if h is not None else float(dist.min()) / 16
    h = h if h is not None else 1e-2
    u = field_u(K, mu, delta)
    return max(hessian_norm(u, p, h) for p in pts)


def frac_laplacian_pv(K: CZKernel, mu: PointMeasure, x0, eps: float | None = None,
                      r_out: float = 64.0, per_octave: int = 8, gauss: int = 4,
                      n_theta: int = 256, delta: float | None = None,
                      method: str = "auto") -> PVResult:
    """The principal value of (u(x0) - u(x)) / |x - x0|^{2d+1-s} for u = R_mu(1), x0 off
    the support. Constants drop out, so R_mu(1) stands in for R~_mu(1)."""
    _require_riesz(K)
    if K.d != 2:
        raise RieszCheckError("K: the shell quadrature is implemented for d = 2")
    x0 = np.asarray(x0, float)
    r0 = float(cKDTree(mu.atoms).query(x0)[0]) if mu.n else float("inf")
    if mu.n and r0 < VALIDITY_RATIO * mu.mesh_scale:
        raise RieszCheckError("x0: too close to the support, u is not smooth there")
    eps = eps if eps is not None else (min(0.25 * r0, 0.25) if mu.n else 0.25)
    C2 = second_derivative_bound(K, mu, x0[None], delta=delta) if mu.n else 0.0
    return pv_integral(field_u(K, mu, delta, method), x0, K.s, eps, r_out, None, per_octave,
                       gauss, n_theta, C2)


# lower-bound integral

@dataclass
class PhilemResult:
    lhs: float
    rhs: np.ndarray
    ratios: np.ndarray
    gammas: np.ndarray
    constant: float
    best_gamma: np.ndarray
    tail_fraction: float

    @property
    def tail_ok(self) -> bool:
        return self.tail_fraction < 0.01


def _philem_nodes(center, r, A, per_octave, gauss, n_theta, d):
    gx, gw = np.polynomial.legendre.leggauss(2 * gauss)
    t0 = 0.5 * r * (gx + 1)
    w0 = 0.5 * r * gw
    t1, w1, _, _ = _gauss_log_shells(r, A, per_octave, gauss)
    t = np.concatenate([t0, t1])
    w = np.concatenate([w0, w1 * t1])
    D = _directions(n_theta)
    pts = np.asarray(center, float) + (t[:, None, None] * D[None]).reshape(-1, d)
    return t, w, pts


def philem_check(K: CZKernel, mu: PointMeasure, q: BallQuery, gammas=None,
                 outer: float = 1000.0, per_octave: int = 2, gauss: int = 4,
                 n_theta: int = 64, delta: float | None = None,
                 ref: ReferencePair | None = None) -> PhilemResult:
    """mu(B(x,r)) against r^d int |R~_mu(1)(z) - Gamma| / (r + |z - x|)^{2d-s} dm_d(z).

    Polar quadrature to radius outer * r; R~ is regularized at delta (default the
    validity limit). The reported constant is the largest lhs / (r^d rhs) over
    the Gamma candidates (default: 0 and a 3^d stencil around it)."""
    _require_riesz(K)
    if K.d != 2:
        raise RieszCheckError("K: the polar quadrature is implemented for d = 2")
    d, s, r = K.d, K.s, q.radius
    c = np.asarray(q.center, float)
    lhs = ball_mass(mu, q)
    t, w, pts = _philem_nodes(c, r, outer * r, per_octave, gauss, n_theta, d)
    if mu.n:
        dl = VALIDITY_RATIO * mu.mesh_scale if delta is None else delta
        U = ttilde1(K, mu, dl, pts, ref or default_reference(mu))
    else:
        U = np.zeros((len(pts), K.dprime))
    U = U.reshape(len(t), n_theta, K.dprime)
    if gammas is None:
        spread = 0.5 * float(np.median(np.linalg.norm(U, axis=-1))) or 1.0
        st = np.stack(np.meshgrid(*([[-1, 0, 1]] * K.dprime), indexing="ij"), -1)
        gammas = spread * st.reshape(-1, K.dprime)
    gammas = np.atleast_2d(np.asarray(gammas, float))
    wt = w * t ** (d - 1) / (r + t) ** (2 * d - s) * (2 * math.pi / n_theta)
    rhs = np.array([np.einsum("i,ij->", wt, np.linalg.norm(U - g, axis=-1)) for g in gammas])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / (r**d * rhs), np.where(lhs > 0, np.inf, 0.0))
    k = int(np.argmax(ratios))
    A = outer * r
    m_out = float(np.max(np.linalg.norm(U[-1] - gammas[k], axis=-1)))
    tail = m_out * sphere_area(d) * (r + A) ** (s - d) / (d - s)
    frac = tail / rhs[k] if rhs[k] > 0 else 0.0
    return PhilemResult(lhs, rhs, ratios, gammas, float(ratios[k]), gammas[k], float(frac))


# Fourier construction of g

def smooth_bump(grid: GridSpec, r1: float = 1.0, r2: float = 2.0) -> GridField:
    """C-infinity radial bump: 1 on B(c, r1), 0 outside B(c, r2)."""
    pts = grid.nodes() - np.asarray(grid.center)
    t = np.clip((np.linalg.norm(pts, axis=1) - r1) / (r2 - r1), 0, 1)

    def e(x):
        with np.errstate(divide="ignore"):
            return np.where(x > 0, np.exp(-1 / np.where(x > 0, x, 1)), 0.0)
    f = e(1 - t) / (e(1 - t) + e(t))
    return GridField(grid.origin, grid.spacing, f.reshape((grid.n,) * grid.d))


@dataclass
class FourierGResult:
    g: GridField
    b: float
    mean_ratio: float
    envelope_ratio: float
    compact: bool
    l2_error: float
    center_match: float


def _g_unit(f: GridField, s: float) -> np.ndarray:
    d, h = f.d, f.spacing
    n = f.extents
    fh = np.fft.fftn(f.values[..., 0])
    xi = np.meshgrid(*[np.fft.fftfreq(m, h) for m in n], indexing="ij")
    mag = np.sqrt(sum(x * x for x in xi))
    fac = np.zeros_like(mag)
    fac[mag > 0] = mag[mag > 0] ** (d - 1 - s)
    return np.stack([np.real(np.fft.ifftn(-1j * x * fac * fh)) for x in xi], -1)


def r_star(K: CZKernel, g: GridField, targets) -> np.ndarray:
    """R*(g m_d)(x) = int K(y - x) . g(y) dm_d(y) by direct summation over the nodes."""
    q = g.values.reshape(-1, g.components) * g.spacing**g.d
    return -kernel_sum_dot(K, g.nodes(), q, targets)


def calibrate_b(f: GridField, s: float):
    """b with R*(b g_1 m_d)(centre) = f(centre), g_1 the field built with b = 1;
    returns (b, g_1)."""
    n = f.extents
    g1 = GridField(f.origin, f.spacing, _g_unit(f, s))
    mid = tuple(m // 2 for m in n)
    c = f.origin + f.spacing * np.array(mid)
    rc = float(r_star(riesz(f.d, s), g1, c[None])[0])
    if rc == 0:
        raise RieszCheckError("f: R*(g) vanishes at the centre, cannot calibrate b")
    return float(f.values[mid][0] / rc), g1


def fourier_g(f: GridField, s: float, stride: int = 1, floor: float = 1e-10) -> FourierGResult:
    """g = F^-1(b xi |xi|^{d-1-s} f^) with b calibrated so that R*(g m_d) = f at the
    centre, checked against f on the inner half-grid by direct summation."""
    d, h = f.d, f.spacing
    n = f.extents
    if f.components != 1:
        raise RieszCheckError("f: must be scalar")
    if any(m & (m - 1) for m in n):
        raise RieszCheckError("f: grid size must be a power of two per axis")
    if not 0 < s < d:
        raise RieszCheckError(f"s: must lie in (0, {d})")
    vals = f.values[..., 0]
    border = np.ones(vals.shape, bool)
    border[tuple(slice(m // 8, m - m // 8) for m in n)] = False
    if np.max(np.abs(vals[border])) > 1e-12 * np.max(np.abs(vals)):
        raise RieszCheckError("f: touches the boundary band (wrap-around pollution)")
    K = riesz(d, s)
    b, g1 = calibrate_b(f, s)
    mid = tuple(m // 2 for m in n)
    c = f.origin + h * np.array(mid)
    g = GridField(f.origin, h, b * g1.values)
    ax = [np.arange(m)[m // 4: m - m // 4: stride] for m in n]
    idx = np.stack(np.meshgrid(*ax, indexing="ij"), -1).reshape(-1, d)
    tgt = f.origin + h * idx
    rs = r_star(K, g, tgt)
    fv = vals[tuple(idx.T)]
    l2 = float(np.linalg.norm(rs - fv) / np.linalg.norm(fv))
    gv = g.values.reshape(-1, d)
    gmax = float(np.max(np.abs(gv)))
    mean_ratio = float(np.max(np.abs(gv.mean(axis=0))) / gmax) if gmax > 0 else 0.0
    x = g.nodes() - c
    rad = np.linalg.norm(x, axis=1)
    L = h * min(n)
    gn = np.linalg.norm(gv, axis=1)
    far = (rad >= L / 4) & (gn > floor * gmax)
    compact = not far.any()
    env = gn[far] * (1 + rad[far]) ** (2 * d - s)
    ratio = float(env.max() / np.median(env)) if not compact else 0.0
    match = float(abs(rs[np.argmin(np.linalg.norm(tgt - c, axis=1))] - vals[mid]) / abs(vals[mid]))
    return FourierGResult(g, float(b), mean_ratio, ratio, compact, l2, match)


# truncation rate and growth

@dataclass
class TruncationTable:
    N: np.ndarray
    sup: np.ndarray
    slope: float

    @property
    def ok(self) -> bool:
        return self.slope <= -0.8


def _target_lattice(A, d, per_axis):
    h = 2 * A / per_axis
    ax = -A + h * (np.arange(per_axis) + 0.5)
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
    return pts[np.linalg.norm(pts, axis=1) < A]


def truncation_convergence(K: CZKernel, mu: PointMeasure, N_grid, A: float,
                           per_axis: int = 16, ref: ReferencePair | None = None,
                           validity_ratio: float = VALIDITY_RATIO) -> TruncationTable:
    """sup over a lattice in B(0,A) of |R~_mu(1) - R~_{mu_N}(1)|, mu_N = mu on B(0,N),
    with one reference pair shared by all N."""
    _require_riesz(K)
    N = np.asarray(sorted(N_grid), float)
    if N[0] < 4 * A:
        raise RieszCheckError(f"N_grid: smallest N must be at least 4A = {4 * A:g}")
    ref = ref or default_reference(mu.restrict_ball(np.zeros(mu.d), N[0]))
    ref = _lift_reference(mu, ref)
    if np.linalg.norm(ref.ball.center) + ref.ball.radius > N[0]:
        raise RieszCheckError("ref: B' must lie inside B(0, N) for every N")
    tgt = _target_lattice(A, mu.d, per_axis)
    tgt = tgt[_valid_nodes(mu, tgt, validity_ratio)]
    full = ttilde1(K, mu, 0.0, tgt, ref, validity_ratio=validity_ratio)
    sups = []
    r = np.linalg.norm(mu.atoms, axis=1)
    for n in N:
        m = r < n
        sub = mu.restrict(m)
        part = ttilde1(K, sub, 0.0, tgt, ReferencePair(ref.ball, ref.eta[m]),
                       validity_ratio=validity_ratio)
        sups.append(float(np.max(np.linalg.norm(full - part, axis=1))))
    sups = np.array(sups)
    slope = loglog_slope(N, sups) if np.all(sups > 0) else float("-inf")
    return TruncationTable(N, sups, slope)


def _lift_reference(mu, ref):
    """Re-express a reference pair on mu's atoms (eta from a restriction is
    extended by its bump values; eta is renormalized on mu)."""
    if len(ref.eta) == mu.n:
        return ref
    from .reflectionless import make_reference
    return make_reference(mu, ref.ball.center, ref.ball.radius)


@dataclass
class GrowthTable:
    A: np.ndarray
    integrals: np.ndarray
    ratios: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(self.ratios[-1] <= 1.25 * self.ratios[0])


def tballint_diagnostic(K: CZKernel, mu: PointMeasure, A_grid=(2, 4, 8), cells: int = 48,
                        ref: ReferencePair | None = None) -> GrowthTable:
    """int_{B(0,A)} |R~_mu(1)| against A^d log(e + A)."""
    A = np.asarray(A_grid, float)
    ref = ref or default_reference(mu)
    I = np.array([ball_l1(K, mu, np.zeros(mu.d), a, cells, ref)[0] for a in A])
    return GrowthTable(A, I, I / (A ** mu.d * np.log(math.e + A)))
