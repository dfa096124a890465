"""Atomic discretizations of measures in R^d and growth certification."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class BallQuery:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise MeasureError("ball radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


@dataclass(frozen=True, eq=False)
class PointMeasure:
    """Weighted atoms with the metadata needed to judge quadrature validity.

    mesh_scale is the largest quadrature-cell diameter (0 for genuinely
    atomic inputs).  Arrays are frozen after construction.
    """

    atoms: np.ndarray
    weights: np.ndarray
    mesh_scale: float = 0.0
    nominal_s: float = 1.0
    tag: str = ""

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float, ndmin=2)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if a.size == 0:
            a = a.reshape(0, max(a.shape[-1], 1))
        if len(a) != len(w):
            raise MeasureError("atoms and weights differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise MeasureError("weights must be finite and nonnegative")
        if self.mesh_scale < 0:
            raise MeasureError("mesh_scale must be nonnegative")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def restrict(self, mask, tag=None) -> "PointMeasure":
        return PointMeasure(self.atoms[mask], self.weights[mask], self.mesh_scale,
                            self.nominal_s, tag or self.tag)

    def restrict_ball(self, center, radius) -> "PointMeasure":
        r = np.linalg.norm(self.atoms - np.asarray(center, float), axis=1)
        return self.restrict(r <= radius, tag=f"{self.tag}|B({radius:g})")

    def barycenter(self) -> np.ndarray:
        return (self.weights @ self.atoms) / self.total_mass


def zero_measure(d: int = 2) -> PointMeasure:
    return PointMeasure(np.zeros((0, d)), np.zeros(0), 0.0, 1.0, "zero")


def _region_measure(d, lo, hi, cells, inside, tag, nominal_s):
    """Midpoint quadrature of Lebesgue measure on {inside}, boundary cells by
    4^d-point subsampling."""
    h = (hi - lo) / cells
    ax = lo + h * (np.arange(cells) + 0.5)
    centers = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    corners = np.array(list(itertools.product([-0.5, 0.5], repeat=d))) * h
    flags = np.stack([inside(centers + c) for c in corners], axis=1)
    frac = np.where(flags.all(axis=1), 1.0, 0.0)
    # a cell whose corners disagree, or whose centre disagrees, is subsampled
    mixed = ~(flags.all(axis=1) | (~flags).all(axis=1)) | (inside(centers) != flags[:, 0])
    sub = (np.arange(4) + 0.5) / 4 - 0.5
    offs = np.array(list(itertools.product(sub, repeat=d))) * h
    idx = np.nonzero(mixed)[0]
    if len(idx):
        pts = centers[idx][:, None, :] + offs[None, :, :]
        frac[idx] = inside(pts.reshape(-1, d)).reshape(len(idx), -1).mean(axis=1)
    keep = frac > 0
    return PointMeasure(centers[keep], frac[keep] * h**d, h * math.sqrt(d), nominal_s, tag)


def make_ball_lebesgue(d: int, center, radius: float, cells_per_axis: int) -> PointMeasure:
    if not radius > 0:
        raise MeasureError("radius must be positive")
    if cells_per_axis < 2:
        raise MeasureError("cells_per_axis must be at least 2")
    c = np.asarray(center, float) * np.ones(d)

    def inside(p):
        return np.sum((p - c) ** 2, axis=-1) <= radius**2

    m = _region_measure(d, -radius, radius, cells_per_axis, lambda p: inside(p + c),
                        f"ball(d={d},r={radius:g},n={cells_per_axis})", float(d))
    return PointMeasure(m.atoms + c, m.weights, m.mesh_scale, m.nominal_s, m.tag)


def make_annulus_lebesgue(d: int, center, r_in: float, r_out: float,
                          cells_per_axis: int) -> PointMeasure:
    if not 0 <= r_in < r_out:
        raise MeasureError("need 0 <= r_in < r_out")
    c = np.asarray(center, float) * np.ones(d)

    def inside(p):
        q = np.sum(p**2, axis=-1)
        return (q <= r_out**2) & (q >= r_in**2)

    m = _region_measure(d, -r_out, r_out, cells_per_axis, inside,
                        f"annulus(d={d},{r_in:g}-{r_out:g},n={cells_per_axis})", float(d))
    return PointMeasure(m.atoms + c, m.weights, m.mesh_scale, m.nominal_s, m.tag)


def make_segment_hausdorff(d: int, endpoints, n_atoms: int) -> PointMeasure:
    """One-dimensional Hausdorff measure of a segment, n_atoms equal cells."""
    p, q = (np.asarray(e, float) for e in endpoints)
    if p.shape != (d,) or q.shape != (d,):
        raise MeasureError(f"endpoints must be points in R^{d}")
    length = float(np.linalg.norm(q - p))
    if length == 0:
        raise MeasureError("segment endpoints coincide")
    if n_atoms < 2:
        raise MeasureError("n_atoms must be at least 2")
    t = (np.arange(n_atoms) + 0.5) / n_atoms
    atoms = p + t[:, None] * (q - p)
    return PointMeasure(atoms, np.full(n_atoms, length / n_atoms), length / n_atoms, 1.0,
                        f"segment(n={n_atoms})")


def four_corner_offsets(ratio: float = 0.25, d: int = 2) -> np.ndarray:
    return np.array(list(itertools.product([0.0, 1.0 - ratio], repeat=d)))


def make_cantor(d: int, ratio: float, depth: int, offsets=None, side: float = 1.0,
                origin=None) -> PointMeasure:
    """Self-similar measure on the root cube [origin, origin + side]^d.

    offsets are child-corner positions in units of the parent side; every
    generation-depth cell carries one atom at its centre.
    """
    if not 0 < ratio < 0.5 + 1e-15:
        raise MeasureError("ratio must lie in (0, 1/2)")
    if depth < 0:
        raise MeasureError("depth must be nonnegative")
    off = four_corner_offsets(ratio, d) if offsets is None else np.asarray(offsets, float)
    if off.ndim != 2 or off.shape[1] != d:
        raise MeasureError(f"offsets must be corner vectors in R^{d}")
    if np.any(off < -1e-12) or np.any(off > 1 - ratio + 1e-12):
        raise MeasureError("child cells must lie inside the parent")
    k = len(off)
    for i in range(k):
        for j in range(i + 1, k):
            if np.all(np.abs(off[i] - off[j]) < ratio - 1e-12):
                raise MeasureError("child cells overlap")
    o = np.zeros(d) if origin is None else np.asarray(origin, float)
    corners = o[None, :]
    cell = side
    for _ in range(depth):
        corners = (corners[:, None, :] + cell * off[None, :, :]).reshape(-1, d)
        cell *= ratio
    atoms = corners + cell / 2
    s = math.log(k) / math.log(1 / ratio)
    return PointMeasure(atoms, np.full(len(atoms), float(k) ** (-depth)), cell, s,
                        f"cantor(k={k},ratio={ratio:g},depth={depth})")


def ball_mass(mu: PointMeasure, q: BallQuery) -> float:
    if mu.n == 0:
        return 0.0
    r = np.linalg.norm(mu.atoms - q.center, axis=1)
    return float(mu.weights[r <= q.radius].sum())


def ball_masses(mu: PointMeasure, centers, radii) -> np.ndarray:
    """Matrix of mu(B(c_i, r_j)) via sorted distances, chunked over centres."""
    centers = np.atleast_2d(np.asarray(centers, float))
    radii = np.asarray(radii, float)
    out = np.zeros((len(centers), len(radii)))
    if mu.n == 0:
        return out
    step = max(1, 4_000_000 // max(mu.n, 1))
    for a in range(0, len(centers), step):
        c = centers[a:a + step]
        dist = np.sqrt(((c[:, None, :] - mu.atoms[None, :, :]) ** 2).sum(-1))
        order = np.argsort(dist, axis=1)
        ds = np.take_along_axis(dist, order, axis=1)
        cw = np.concatenate([np.zeros((len(c), 1)), np.cumsum(mu.weights[order], axis=1)], axis=1)
        for i in range(len(c)):
            out[a + i] = cw[i, np.searchsorted(ds[i], radii, side="right")]
    return out


@dataclass(frozen=True)
class GrowthEstimate:
    lam: float
    center: np.ndarray
    radius: float
    n_centers: int
    radii: np.ndarray


def radius_grid(r_min: float, r_max: float, ratio: float = 2 ** 0.25) -> np.ndarray:
    n = int(math.floor(math.log(r_max / r_min) / math.log(ratio) + 1e-9)) + 1
    return r_min * ratio ** np.arange(max(n, 1))


def growth_constant(mu: PointMeasure, s: float, r_min: float | None = None,
                    r_max: float | None = None, grid_per_axis: int = 16,
                    centers=None, max_atom_centers: int | None = None) -> GrowthEstimate:
    """max over sampled balls of mu(B(x,r)) / r^s; a lower bound for the true
    growth constant.  Radii below twice the mesh scale are refused because the
    discretization is not s-dimensional there."""
    if not 0 < s < mu.d + 1e-12:
        raise MeasureError(f"s must lie in (0, {mu.d}]")
    if mu.n == 0:
        return GrowthEstimate(0.0, np.zeros(mu.d), float("nan"), 0, np.array([]))
    lo = mu.atoms.min(axis=0)
    hi = mu.atoms.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    if r_min is None:
        if mu.mesh_scale == 0:
            raise MeasureError("purely atomic measure: r_min must be given explicitly")
        r_min = 2 * mu.mesh_scale
    if r_min < 2 * mu.mesh_scale * (1 - 1e-12):
        raise MeasureError(
            f"radius {r_min:g} is below twice the mesh scale {mu.mesh_scale:g}; "
            "at that scale the atoms, not the measure, dominate the ratio")
    if r_max is None:
        r_max = max(diam, r_min)
    radii = radius_grid(r_min, r_max)
    if centers is None:
        ac = mu.atoms
        if max_atom_centers is not None and mu.n > max_atom_centers:
            ac = ac[np.linspace(0, mu.n - 1, max_atom_centers).astype(int)]
        axes = [np.linspace(lo[i], hi[i], grid_per_axis) for i in range(mu.d)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, mu.d)
        centers = np.vstack([ac, grid])
    centers = np.atleast_2d(np.asarray(centers, float))
    ratio = ball_masses(mu, centers, radii) / radii[None, :] ** s
    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    return GrowthEstimate(float(ratio[i, j]), centers[i].copy(), float(radii[j]),
                          len(centers), radii)


def rescale(mu: PointMeasure, x0, ell: float, s: float) -> PointMeasure:
    """Image measure F -> mu(ell F + x0) / ell^s."""
    if not ell > 0:
        raise MeasureError("scale must be positive")
    x0 = np.asarray(x0, float) * np.ones(mu.d)
    return PointMeasure((mu.atoms - x0) / ell, mu.weights / ell**s, mu.mesh_scale / ell,
                        mu.nominal_s, mu.tag)


# serialization

def to_text(mu: PointMeasure) -> str:
    head = f"# {mu.d} {mu.nominal_s!r} {mu.mesh_scale!r} {json.dumps(mu.tag)}\n"
    rows = np.hstack([mu.atoms, mu.weights[:, None]])
    return head + "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in rows)


def from_text(text: str) -> PointMeasure:
    lines = text.splitlines()
    parts = lines[0][1:].split(maxsplit=3)
    d = int(parts[0])
    body = [ln for ln in lines[1:] if ln.strip()]
    data = np.array([[float(v) for v in ln.split()] for ln in body]).reshape(-1, d + 1)
    return PointMeasure(data[:, :d], data[:, d], float(parts[2]), float(parts[1]),
                        json.loads(parts[3]))


def to_json(mu: PointMeasure) -> str:
    return json.dumps({"d": mu.d, "nominal_s": mu.nominal_s, "mesh_scale": mu.mesh_scale,
                       "tag": mu.tag, "atoms": mu.atoms.tolist(), "weights": mu.weights.tolist()})


def from_json(text: str) -> PointMeasure:
    r = json.loads(text)
    atoms = np.array(r["atoms"], float).reshape(-1, r["d"])
    return PointMeasure(atoms, np.array(r["weights"], float), r["mesh_scale"],
                        r["nominal_s"], r["tag"])


def save(mu: PointMeasure, path) -> None:
    path = str(path)
    with open(path, "w") as fh:
        fh.write(to_json(mu) if path.endswith(".json") else to_text(mu))


def load(path) -> PointMeasure:
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    return from_json(text) if path.endswith(".json") else from_text(text)
