"""Truncated operators T_{mu,delta}, operator norms, and the basic estimates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _fast
from .kernels import CZKernel
from .measures import PointMeasure, growth_constant

log = logging.getLogger(__name__)

VALIDITY_RATIO = 10.0


class OperatorError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, last):
        super().__init__(msg)
        self.last = last


# raw sums (no validity checks)

def kernel_sum(K: CZKernel, src, q, tgt, delta: float = 0.0) -> np.ndarray:
    """sum_j K_delta(tgt - src_j) q_j, skipping coincident pairs."""
    src = np.ascontiguousarray(src, dtype=float)
    tgt = np.ascontiguousarray(np.atleast_2d(tgt), dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    if len(src) == 0 or len(tgt) == 0:
        return np.zeros((len(tgt), K.dprime))
    if K.code >= 0:
        return _fast.sum_kernel(K.code, K.s, K.scale, float(delta), src, q, tgt)
    return _numpy_sum(K, src, q, tgt, delta)


def _numpy_sum(K, src, q, tgt, delta):
    out = np.zeros((len(tgt), K.dprime))
    step = max(1, 2_000_000 // len(src))
    for a in range(0, len(tgt), step):
        dx = tgt[a:a + step, None, :] - src[None, :, :]
        r = np.linalg.norm(dx, axis=-1)
        flat = dx.reshape(-1, K.d)
        om = np.zeros((len(flat), K.dprime))
        nz = r.reshape(-1) > 0
        om[nz] = K.omega(flat[nz])
        den = np.maximum(r, delta) ** (K.s + 1)
        den[r == 0] = 1.0
        om = om.reshape(r.shape + (K.dprime,)) * (K.scale / den)[..., None]
        out[a:a + step] = np.einsum("tjc,j->tc", om, q)
    return out


def kernel_sum_dot(K: CZKernel, src, qv, tgt, delta: float = 0.0) -> np.ndarray:
    """sum_j K_delta(tgt - src_j) . qv_j for vector charges."""
    src = np.ascontiguousarray(src, dtype=float)
    tgt = np.ascontiguousarray(np.atleast_2d(tgt), dtype=float)
    qv = np.ascontiguousarray(np.asarray(qv, float).reshape(len(src), K.dprime))
    if K.code >= 0:
        return _fast.sum_kernel_dot(K.code, K.s, K.scale, float(delta), src, qv, tgt)
    return _numpy_dot(K, src, qv, tgt, delta)


def _numpy_dot(K, src, qv, tgt, delta):
    out = np.zeros(len(tgt))
    for a in range(len(src)):
        out += _numpy_sum(K, src[a:a + 1], np.ones(1), tgt, delta) @ qv[a]
    return out


# treecode

@dataclass
class Tree:
    perm: np.ndarray
    src: np.ndarray
    q: np.ndarray
    n_start: np.ndarray
    n_end: np.ndarray
    n_child0: np.ndarray
    n_nchild: np.ndarray
    children: np.ndarray
    ctr: np.ndarray
    rad: np.ndarray
    pxy: np.ndarray
    pq: np.ndarray
    order: int


def _morton_keys(src, bits):
    lo = src.min(axis=0)
    side = float(np.max(src.max(axis=0) - lo))
    side = side if side > 0 else 1.0
    cells = np.minimum(((src - lo) / side * (1 << bits)).astype(np.int64), (1 << bits) - 1)
    return _fast.morton_keys(np.ascontiguousarray(cells), bits)


# opening angle, Chebyshev proxy order and leaf size for apply_truncated
TREE_THETA = 0.5
TREE_ORDER = 7
TREE_LEAF = 256


def build_tree(src, q, leaf_size: int = TREE_LEAF, order: int = TREE_ORDER) -> Tree:
    """2^d-ary tree over the sources in Morton order.

    order 0 stores sign-split monopoles (positive and negative charge at their
    own barycentres); order n >= 2 stores charges on an n^d tensor grid of
    Chebyshev points of each node's bounding box.
    """
    src = np.asarray(src, float)
    q = np.asarray(q, float)
    n, d = src.shape
    bits = 62 // d
    key = _morton_keys(src, bits)
    perm = np.argsort(key)
    key = key[perm]
    starts, ends, child_lists = [], [], []
    stack = [(0, n, bits, -1)]
    while stack:
        a, b, level, parent = stack.pop()
        me = len(starts)
        starts.append(a)
        ends.append(b)
        child_lists.append([])
        if parent >= 0:
            child_lists[parent].append(me)
        if b - a <= leaf_size or level == 0:
            continue
        shift = (level - 1) * d
        base = (key[a] >> (shift + d)) << (shift + d)
        edges = np.searchsorted(key[a:b], base + (np.arange(2**d + 1) << shift)) + a
        for k in range(2**d - 1, -1, -1):
            if edges[k + 1] > edges[k]:
                stack.append((int(edges[k]), int(edges[k + 1]), level - 1, me))
    ss = np.ascontiguousarray(src[perm])
    qs = np.ascontiguousarray(q[perm])
    n_start = np.array(starts, dtype=np.int64)
    n_end = np.array(ends, dtype=np.int64)
    n_nchild = np.array([len(c) for c in child_lists], dtype=np.int64)
    n_child0 = np.concatenate([[0], np.cumsum(n_nchild)[:-1]]).astype(np.int64)
    children = np.array([c for cl in child_lists for c in cl] or [0], dtype=np.int64)
    cheb = np.cos(np.pi * np.arange(max(order, 2)) / (max(order, 2) - 1))
    ctr, rad, pxy, pq = _fast.node_stats(ss, qs, n_start, n_end, n_child0, n_nchild,
                                         children, int(order), cheb)
    return Tree(perm, ss, qs, n_start, n_end, n_child0, n_nchild, children,
                ctr, rad, pxy, pq, order)


def tree_sum(K: CZKernel, tree: Tree, tgt, delta: float = 0.0, theta: float = TREE_THETA):
    if K.code < 0:
        raise OperatorError("treecode requires a built-in kernel")
    tgt = np.ascontiguousarray(np.atleast_2d(tgt), dtype=float)
    return _fast.tree_sum(K.code, K.s, K.scale, float(delta), float(theta),
                          tree.src, tree.q, tree.n_start, tree.n_end, tree.n_child0,
                          tree.n_nchild, tree.children, tree.ctr, tree.rad,
                          tree.pxy, tree.pq, tgt)


# public operations

def _check_delta(mu: PointMeasure, delta: float, targets, validity_ratio):
    if delta > 0:
        if delta < validity_ratio * mu.mesh_scale * (1 - 1e-12):
            raise OperatorError(
                f"delta={delta:g} is below the quadrature validity limit "
                f"{validity_ratio:g} x mesh_scale = {validity_ratio * mu.mesh_scale:g}")
        return
    if delta < 0:
        raise OperatorError("delta must be nonnegative")
    if mu.n:
        dist, _ = cKDTree(mu.atoms).query(targets)
        if np.any(dist < validity_ratio * mu.mesh_scale) or np.any(dist == 0):
            raise OperatorError("delta = 0 needs every target at distance >= "
                                f"{validity_ratio:g} x mesh_scale from the atoms")


def apply_truncated(K: CZKernel, mu: PointMeasure, delta: float, f, targets,
                    method: str = "dense", theta: float = TREE_THETA, order: int = TREE_ORDER,
                    validity_ratio: float = VALIDITY_RATIO, leaf_size: int = TREE_LEAF):
    """T_{mu,delta}(f) at the targets: sum_j K_delta(x - y_j) f_j w_j."""
    targets = np.atleast_2d(np.asarray(targets, float))
    if targets.shape[1] != mu.d:
        raise OperatorError("targets live in the wrong dimension")
    f = np.broadcast_to(np.asarray(f, float), (mu.n,)) if np.ndim(f) == 0 else np.asarray(f, float)
    if f.shape != (mu.n,):
        raise OperatorError(f"f has shape {f.shape}, expected ({mu.n},)")
    _check_delta(mu, delta, targets, validity_ratio)
    q = f * mu.weights
    if mu.n == 0:
        return np.zeros((len(targets), K.dprime))
    if method == "dense":
        return kernel_sum(K, mu.atoms, q, targets, delta)
    if method == "treecode":
        return tree_sum(K, build_tree(mu.atoms, q, leaf_size, order), targets, delta, theta)
    raise OperatorError(f"unknown method {method!r}")


def relative_error(approx, exact, scale=None) -> float:
    """max-norm error relative to the largest exact value, or to a given scale."""
    if np.size(exact) == 0:
        return 0.0
    if scale is None:
        scale = np.max(np.linalg.norm(exact, axis=-1))
    err = np.max(np.linalg.norm(approx - exact, axis=-1))
    return float(err / scale) if scale > 0 else float(err)


def absolute_scale(K: CZKernel, mu: PointMeasure, delta: float, f, targets) -> float:
    """max over targets of sum_j |K_delta(x - y_j)| |f_j| w_j.

    This is the size of the sum before cancellation; treecode errors are
    measured against it because reflectionless fields are nearly zero."""
    f = np.broadcast_to(np.asarray(f, float), (mu.n,))
    tgt = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
    if mu.n == 0:
        return 0.0
    if K.code >= 0:
        return float(_fast.abs_sum(K.s, K.scale, float(delta), np.ascontiguousarray(mu.atoms),
                                   np.ascontiguousarray(f * mu.weights), tgt).max())
    vals = np.zeros(len(tgt))
    for j in range(mu.n):
        dx = tgt - mu.atoms[j]
        r = np.linalg.norm(dx, axis=1)
        nz = r > 0
        om = np.linalg.norm(K.omega(dx[nz]), axis=1) * K.scale
        vals[nz] += om / np.maximum(delta, r[nz]) ** (K.s + 1) * abs(f[j]) * mu.weights[j]
    return float(vals.max())


# operator norm

def _weighted_matrix(K, mu, delta):
    """Rows indexed by (i, component); entry K_delta(y_i - y_j) sqrt(w_i w_j)."""
    y = mu.atoms
    sw = np.sqrt(mu.weights)
    dx = y[:, None, :] - y[None, :, :]
    flat = dx.reshape(-1, mu.d)
    r = np.linalg.norm(flat, axis=1)
    vals = np.zeros((len(flat), K.dprime))
    nz = r > 0
    vals[nz] = K.scale * K.omega(flat[nz]) / np.maximum(delta, r[nz])[:, None] ** (K.s + 1)
    blocks = vals.reshape(mu.n, mu.n, K.dprime) * (sw[:, None] * sw[None, :])[..., None]
    return np.transpose(blocks, (0, 2, 1)).reshape(mu.n * K.dprime, mu.n)


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    restarts: int
    converged: bool


def power_iteration(matvec, rmatvec, n: int, tol: float = 1e-12, max_iter: int = 10_000,
                    restarts: int = 3, seed: int = 0) -> NormEstimate:
    """Largest singular value of an operator given by its action and adjoint."""
    rng = np.random.default_rng(seed)
    best = 0.0
    total = 0
    for k in range(restarts):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        est = 0.0
        for it in range(1, max_iter + 1):
            w = rmatvec(matvec(v))
            nw = np.linalg.norm(w)
            if nw == 0:
                est = 0.0
                break
            new = math.sqrt(float(v @ w))
            v = w / nw
            if abs(new - est) <= tol * max(new, 1e-300):
                est = new
                break
            est = new
        else:
            raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", est)
        total += it
        log.debug("restart %d: %.12g after %d iterations", k, est, it)
        best = max(best, est)
    return NormEstimate(best, total, restarts, True)


def operator_norm(K: CZKernel, mu: PointMeasure, delta: float, tol: float = 1e-12,
                  seed: int = 0, restarts: int = 3, max_iter: int = 10_000,
                  validity_ratio: float = VALIDITY_RATIO, dense_limit: int = 4000) -> NormEstimate:
    """||T_{mu,delta}||_{L2(mu) -> L2(mu)} by power iteration on the normal operator."""
    if delta <= 0:
        raise OperatorError("operator_norm needs delta > 0")
    _check_delta(mu, delta, None, validity_ratio)
    if np.count_nonzero(mu.weights) <= 1:
        return NormEstimate(0.0, 0, 0, True)
    if mu.n <= dense_limit:
        M = _weighted_matrix(K, mu, delta)
        return power_iteration(lambda v: M @ v, lambda u: M.T @ u, mu.n, tol, max_iter,
                               restarts, seed)
    sw = np.sqrt(mu.weights)

    def mv(v):
        return (kernel_sum(K, mu.atoms, sw * v, mu.atoms, delta) * sw[:, None]).reshape(-1)

    def rmv(u):
        # adjoint via oddness: K(y_i - y_j) = -K(y_j - y_i)
        qv = u.reshape(mu.n, K.dprime) * sw[:, None]
        return -kernel_sum_dot(K, mu.atoms, qv, mu.atoms, delta) * sw

    return power_iteration(mv, rmv, mu.n, tol, max_iter, restarts, seed)


def dense_matrix(K: CZKernel, mu: PointMeasure, delta: float) -> np.ndarray:
    """The weighted matrix whose top singular value is the operator norm."""
    return _weighted_matrix(K, mu, delta)


# estimates

@dataclass(frozen=True)
class TailResult:
    value: float
    bound: float
    lam: float

    @property
    def violated(self) -> bool:
        return self.value > self.bound


def tail_integral(mu: PointMeasure, x, r: float, eps: float, s: float,
                  lam: float | None = None) -> TailResult:
    """Integral of |y - x|^(-s-eps) over the complement of B(x, r), and the
    bound lam (s + eps) / eps * r^(-eps)."""
    if eps <= 0:
        raise OperatorError("eps must be positive")
    if r < 2 * mu.mesh_scale * (1 - 1e-12):
        raise OperatorError("r must be at least twice the mesh scale")
    if lam is None:
        lam = growth_constant(mu, s).lam if mu.n else 0.0
    if mu.n == 0:
        return TailResult(0.0, 0.0, lam)
    dist = np.linalg.norm(mu.atoms - np.asarray(x, float), axis=1)
    far = dist > r
    value = float(np.sum(mu.weights[far] * dist[far] ** (-s - eps)))
    return TailResult(value, lam * (s + eps) / eps * r ** (-eps), lam)


@dataclass(frozen=True)
class LocalL1Result:
    value: float
    ratio: float
    cells: int


def local_l1_integral(nu: PointMeasure, x, r: float, R: float, s: float,
                      cells_per_axis: int = 64) -> LocalL1Result:
    """Integral over y in B(x,r) of integral over z in B(y,R) of |z - y|^(-s) dnu(z) dy.

    Atoms closer than a cell to a node use the cell average of |.|^(-s)
    computed by subsampling, so the singular part is integrated correctly.
    """
    from .measures import make_ball_lebesgue, ball_mass, BallQuery
    d = nu.d
    if cells_per_axis < 64:
        raise OperatorError("cell must be at most r/32")
    x = np.asarray(x, float)
    mass = ball_mass(nu, BallQuery(x, r + R)) if nu.n else 0.0
    if nu.n == 0:
        return LocalL1Result(0.0, 0.0, 0)
    lat = make_ball_lebesgue(d, x, r, cells_per_axis)
    h = 2 * r / cells_per_axis
    tree = cKDTree(nu.atoms)
    total = 0.0
    sub = 8
    g = (np.arange(sub) + 0.5) / sub - 0.5
    offs = np.stack(np.meshgrid(*([g * h] * d), indexing="ij"), -1).reshape(-1, d)
    a_eq = (h / sub) * (math.gamma(d / 2 + 1) / math.pi ** (d / 2)) ** (1 / d)
    for y, wy in zip(lat.atoms, lat.weights):
        idx = tree.query_ball_point(y, R)
        if not idx:
            continue
        z = nu.atoms[idx]
        wz = nu.weights[idx]
        dist = np.linalg.norm(z - y, axis=1)
        near = dist < h * math.sqrt(d)
        acc = np.sum(wz[~near] * dist[~near] ** (-s))
        for zz, ww in zip(z[near], wz[near]):
            rr = np.linalg.norm(y + offs - zz, axis=1)
            vals = np.where(rr < a_eq, d / (d - s) * a_eq ** (-s), np.maximum(rr, 1e-300) ** (-s))
            acc += ww * vals.mean()
        total += wy * acc
    ratio = total / (r ** (d - s) * mass) if mass > 0 else float("inf")
    return LocalL1Result(float(total), float(ratio), lat.n)


@dataclass(frozen=True)
class AntisymResult:
    residual: float
    abs_sum: float

    @property
    def relative(self) -> float:
        return self.residual / self.abs_sum if self.abs_sum > 0 else 0.0


def antisym_identity(K: CZKernel, mu: PointMeasure, delta: float, center, radius: float,
                     validity_ratio: float = VALIDITY_RATIO) -> AntisymResult:
    """|sum_{i,j in B} K_delta(y_i - y_j) w_i w_j| and the sum of |terms|."""
    if delta > 0:
        _check_delta(mu, delta, None, validity_ratio)
    inside = np.linalg.norm(mu.atoms - np.asarray(center, float), axis=1) <= radius
    pts = np.ascontiguousarray(mu.atoms[inside])
    w = np.ascontiguousarray(mu.weights[inside])
    if len(pts) < 2:
        return AntisymResult(0.0, 0.0)
    if K.code < 0:
        raise OperatorError("antisym_identity requires a built-in kernel")
    tot, absum = _fast.pair_sum(K.code, K.s, K.scale, float(delta), pts, w, w)
    return AntisymResult(float(np.linalg.norm(tot)), float(absum))


def bilinear_form(K: CZKernel, mu: PointMeasure, delta: float, f, g,
                  form: str = "antisym") -> float:
    """I(f, g) = double integral of K_delta(x - y) . g(x) f(y), directly or
    through H(x, y) = [f(y) g(x) - g(y) f(x)] / 2."""
    f = np.ascontiguousarray(f, dtype=float)
    g = np.ascontiguousarray(np.asarray(g, float).reshape(mu.n, K.dprime))
    if form == "direct":
        if delta <= 0:
            raise OperatorError("delta = 0 is only defined in the antisymmetrized form")
        T = kernel_sum(K, mu.atoms, f * mu.weights, mu.atoms, delta)
        return float(np.sum(T * g * mu.weights[:, None]))
    if form == "antisym":
        if K.code < 0:
            raise OperatorError("antisymmetrized form requires a built-in kernel")
        return float(_fast.antisym_form(K.code, K.s, K.scale, float(delta),
                                        np.ascontiguousarray(mu.atoms), f, g,
                                        np.ascontiguousarray(mu.weights)))
    raise OperatorError(f"unknown form {form!r}")


def c2_constant(mu: PointMeasure, s: float, delta: float, f, targets) -> float:
    """max over targets of sum_j |f_j| w_j / (delta + |x - y_j|)^s, times delta^(s/2),
    for f normalized in L2(mu)."""
    f = np.asarray(f, float)
    f = f / math.sqrt(np.sum(f * f * mu.weights))
    targets = np.atleast_2d(targets)
    vals = np.zeros(len(targets))
    for a in range(0, len(targets), 256):
        dist = np.linalg.norm(targets[a:a + 256, None, :] - mu.atoms[None], axis=-1)
        vals[a:a + 256] = (np.abs(f) * mu.weights / (delta + dist) ** s).sum(axis=1)
    return float(vals.max() * delta ** (s / 2))
