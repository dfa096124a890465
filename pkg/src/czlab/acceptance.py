"""The acceptance and quick suites: each check builds its instance, runs the
module operations and returns a three-valued status with its numbers."""

from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import collapse, operators, reflectionless, riesz_checks, riesz_systems
from .kernels import cauchy, riesz, zbar_over_z2
from .measures import (BallQuery, PointMeasure, growth_constant, make_annulus_lebesgue,
                       make_ball_lebesgue, make_cantor, make_segment_hausdorff, zero_measure)

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass
class Check:
    id: int
    name: str
    status: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        nums = "  ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        tail = f"  [{self.detail}]" if self.detail else ""
        return f"{self.status.upper():<12} {self.id:>2} {self.name:<28} {nums}  ({self.seconds:.1f} s){tail}"

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "status": self.status,
                "metrics": {k: _plain(v) for k, v in self.metrics.items()},
                "seconds": round(self.seconds, 3), "detail": self.detail}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return f"{float(v):.4g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ",".join(_fmt(x) for x in v) + "]"
    return str(v)


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    return v


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


# the fifteen criteria

def line_defect(seed: int = 0):
    K = riesz(2, 1.0)
    mu = make_segment_hausdorff(2, [[-50, 0], [50, 0]], 10_000)
    fam = reflectionless.standard_family(mu, [0, 0], 1.0)
    D = reflectionless.defect(K, mu, 1.0, fam, [0, 0])
    tc = reflectionless.truncation_error_check(K, mu, fam[D.argmax], [4, 8, 16, 32])
    limit = -K.alpha + 0.2
    ok = D.relative <= 1e-2 and tc.slope <= limit
    return _status(ok), {"defect_rel": D.relative, "family": D.family_size,
                         "tail_slope": tc.slope, "slope_limit": limit}


def disc_defect(seed: int = 0):
    K = zbar_over_z2()
    rel = []
    for cells in (128, 256):
        mu = make_ball_lebesgue(2, [0, 0], 1.0, cells)
        rel.append(reflectionless.defect(K, mu, 0.8, None, [0, 0]).relative)
    ratio = rel[1] / rel[0] if rel[0] > 0 else 0.0
    ok = rel[1] <= 0.05 and ratio <= 0.65
    return _status(ok), {"rel_128": rel[0], "rel_256": rel[1], "ratio": ratio}


def antisymmetry(seed: int = 0):
    rng = np.random.default_rng(seed)
    kernels = [riesz(2, 1.0), cauchy(), zbar_over_z2(), riesz(2, 0.5), riesz(2, 1.5)]
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(20, 400))
        atoms = rng.uniform(-1, 1, (n, 2))
        mu = PointMeasure(atoms, rng.uniform(0.1, 2.0, n), 1e-4, 1.0, "random")
        K = kernels[i % len(kernels)]
        delta = 0.0 if i % 2 == 0 else float(rng.uniform(0.01, 0.5))
        res = operators.antisym_identity(K, mu, delta, rng.uniform(-0.5, 0.5, 2),
                                         float(rng.uniform(0.2, 1.5)))
        worst = max(worst, res.relative)
    return _status(worst <= 1e-12), {"worst_relative": worst, "instances": 100}


def tail_estimate(seed: int = 0):
    rng = np.random.default_rng(seed)
    out, total = {}, 0
    for name, mu in (("line", make_segment_hausdorff(2, [[-50, 0], [50, 0]], 10_000)),
                     ("cantor", make_cantor(2, 0.25, 6))):
        lam = growth_constant(mu, 1.0).lam
        viol, worst = 0, 0.0
        for _ in range(100):
            x = mu.atoms[rng.integers(mu.n)]
            r = float(np.exp(rng.uniform(math.log(2 * mu.mesh_scale), math.log(10.0))))
            e = float(rng.uniform(0.05, 1.0))
            T = operators.tail_integral(mu, x, r, e, 1.0, lam)
            viol += T.violated
            worst = max(worst, T.value / T.bound)
        out[f"{name}_lambda"] = lam
        out[f"{name}_violations"] = viol
        out[f"{name}_worst"] = worst
        total += viol
    return _status(total == 0), out


def rearrange(seed: int = 0):
    rng = np.random.default_rng(seed)
    n = 100_000
    B = rng.integers(0, 2**20, n)
    A = (rng.random(n) * (B + 1)).astype(np.int64)
    e = rng.integers(1, 2**9, n)
    l = rng.integers(1, 2**9, n)
    hyp, concl = collapse.rearrange_check(A, B, e, l)
    viol = int(np.sum(hyp & ~concl))
    return _status(viol == 0), {"tuples": n, "hypothesis_true": int(hyp.sum()), "violations": viol}


def _line_cotlar_targets(seed):
    rng = np.random.default_rng(seed)
    on = np.c_[np.linspace(-5, 5, 10), np.zeros(10)]
    off = np.c_[rng.uniform(-5, 5, 40), rng.choice([-1, 1], 40) * rng.uniform(0.5, 2, 40)]
    return np.vstack([on, off])


def cotlar(seed: int = 0):
    K = riesz(2, 1.0)
    mu = make_segment_hausdorff(2, [[-50, 0], [50, 0]], 10_000)
    C = reflectionless.cotlar_sup(K, mu, _line_cotlar_targets(seed), np.geomspace(0.2, 200, 13),
                                  reflectionless.default_reference(mu))
    return _status(C.ratio <= 3), {"ratio": C.ratio, "max_sup": float(C.sups.max())}


def holder(seed: int = 0):
    K = riesz(2, 1.0)
    xs, xp = reflectionless.random_pairs([0, 0], [5, 1], 0.5, 200, seed=seed + 1)
    c = []
    for n in (10_000, 20_000):
        mu = make_segment_hausdorff(2, [[-50, 0], [50, 0]], n)
        c.append(reflectionless.holder_check(K, mu, 0.5, xs, xp,
                                             reflectionless.default_reference(mu)).constant)
    dev = abs(c[1] / c[0] - 1)
    return _status(dev <= 0.2), {"C6_10k": c[0], "C6_20k": c[1], "deviation": dev}


def frame_scaling(seed: int = 0):
    mu = make_cantor(2, 0.25, 3)
    fs = riesz_systems.frame_constant_scaling(mu, np.array([8, 16, 32]) * math.sqrt(2), 3)
    err = float(np.max(np.abs(fs.power_constants / fs.constants - 1)))
    ok = fs.ok and err <= 1e-6 and int(fs.n_cubes.max()) <= 2000
    return _status(ok), {"constants": fs.constants, "slope": fs.slope,
                         "slope_limit": fs.slope_limit, "power_vs_dense": err,
                         "cubes": int(fs.n_cubes.max())}


def line_constants():
    """C6 and C1 on the unit-density line, used by the schedule."""
    K = riesz(2, 1.0)
    line = make_segment_hausdorff(2, [[-50, 0], [50, 0]], 10_000)
    xs, xp = reflectionless.random_pairs([0, 0], [5, 1], 0.5, 200, seed=1)
    C6 = reflectionless.holder_check(K, line, 0.5, xs, xp).constant
    C1 = max(operators.local_l1_integral(line, [x, 0], 0.5, 0.5, 1.0).ratio
             for x in (-1.0, 0.3, 2.0))
    return C6, C1


def schedule(seed: int = 0):
    Lam = 2.0
    C6, C1 = line_constants()
    const = collapse.derived_constants(Lam, 2, C6, C1)
    eps_grid = [0.4, 0.2, 0.1, 0.05]
    ks = [collapse.largest_kappa0(e, Lam, const["c8"], const["C9"], C6) for e in eps_grid]
    k = ks[1]
    sch = collapse.run_schedule(0.2, Lam, (k / const["C9"]) ** 4, k, const["c8"], const["C9"], C6)
    rt, re = sch.conservation_residuals()
    exact = all(v == 0 for v in rt + re)
    beta = collapse.fit_beta(eps_grid, ks)
    ok = sch.verified and exact and math.isfinite(beta) and beta > 0
    return _status(ok), {"C6": C6, "C1": C1, "c8": const["c8"], "C9": const["C9"],
                         "kappa0": k, "beta": beta, "steps": len(sch.t_j), "exact": exact}


def porosity(seed: int = 0):
    K = riesz(2, 1.0)
    P = collapse.porosity_scan(K, make_cantor(2, 0.25, 5), BallQuery([0.5, 0.5], math.sqrt(2)), 0.05)
    Q = collapse.porosity_scan(zbar_over_z2(), make_ball_lebesgue(2, [0, 0], 1.0, 128),
                               BallQuery([0, 0], 0.5), 0.01)
    ok = P.status == "found" and 0.15 <= P.lam <= 0.35 and Q.status == "skipped"
    return _status(ok), {"cantor_status": P.status, "lambda": P.lam,
                         "disc_status": Q.status, "disc_average": Q.average}


def divergence(seed: int = 0):
    mu = make_ball_lebesgue(2, [0, 0], 1.0, 512)
    errs = [riesz_checks.divergence_identity(mu, riesz_checks.GridSpec((0, 0), 2.0, n), 1.0).error
            for n in (128, 256)]
    order = riesz_checks.convergence_order(errs, (128, 256))[0]
    return _status(errs[1] <= 0.05 and order >= 1), {"err_128": errs[0], "err_256": errs[1],
                                                      "order": order, "b": 2 * math.pi}


def pv(seed: int = 0):
    mu = make_annulus_lebesgue(2, [0, 0], 1.0, 2.0, 512)
    r = riesz_checks.frac_laplacian_pv(riesz(2, 1.5), mu, [0.3, 0.2])
    return _status(r.relative <= 0.05), {"relative": r.relative, "normalization": r.normalization,
                                         "eps": r.radii[0], "tail_bound": r.tail_bound,
                                         "inner_bound": r.inner_bound}


def fourier(seed: int = 0):
    grid = riesz_checks.GridSpec((0, 0), 8.0, 256)
    f = riesz_checks.smooth_bump(grid)
    a = riesz_checks.fourier_g(f, 1.0, stride=2)
    b = riesz_checks.fourier_g(f, 1.5, stride=2)
    ok = (a.l2_error <= 0.05 and a.mean_ratio <= 1e-6 and b.mean_ratio <= 1e-6
          and b.envelope_ratio <= 10 and not b.compact)
    return _status(ok), {"l2_s1": a.l2_error, "mean_s1": a.mean_ratio, "b_s1": a.b,
                         "l2_s1.5": b.l2_error, "mean_s1.5": b.mean_ratio,
                         "envelope_s1.5": b.envelope_ratio}


def truncation(seed: int = 0):
    K = riesz(2, 1.0)
    mu = make_segment_hausdorff(2, [[-1000, 0], [1000, 0]], 200_000)
    t = riesz_checks.truncation_convergence(K, mu, [8, 16, 32, 64], 2.0)
    return _status(t.ok), {"sups": t.sup, "slope": t.slope}


def _best_of(n, fn):
    """Smallest wall time over n runs (timeit convention) and the last result."""
    best = math.inf
    for _ in range(n):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def treecode(seed: int = 0):
    rng = np.random.default_rng(seed)
    cases = (("disc", make_ball_lebesgue(2, [0, 0], 1.0, 356), rng.uniform(-0.7, 0.7, (1000, 2))),
             ("cantor", make_cantor(2, 0.25, 8), rng.uniform(0, 1, (1000, 2))),
             ("line", make_segment_hausdorff(2, [[-50, 0], [50, 0]], 100_000),
              np.c_[rng.uniform(-50, 50, 1000), rng.uniform(-2, 2, 1000)]))
    out, errs, speeds = {}, [], []
    # compile both paths once
    operators.kernel_sum(riesz(2, 1.0), np.zeros((2, 2)), np.ones(2), np.ones((1, 2)), 0.1)
    operators.tree_sum(riesz(2, 1.0), operators.build_tree(rng.random((300, 2)), np.ones(300)),
                       np.ones((1, 2)), 0.1)
    for name, mu, tgt in cases:
        for K in (riesz(2, 1.0), zbar_over_z2()):
            delta = max(10 * mu.mesh_scale, 1e-3)
            td, D = _best_of(3, lambda: operators.kernel_sum(K, mu.atoms, mu.weights, tgt, delta))
            tt, T = _best_of(3, lambda: operators.apply_truncated(K, mu, delta, 1.0, tgt,
                                                                  method="treecode"))
            e = operators.relative_error(T, D, operators.absolute_scale(K, mu, delta, 1.0, tgt))
            errs.append(e)
            if mu.n >= 100_000:
                speeds.append(td / tt)
            out[f"{name}_{K.name}_err"] = e
    out["speedup_min"] = min(speeds)
    ok = max(errs) <= 1e-4 and min(speeds) >= 5
    return _status(ok), out


CRITERIA = [
    (1, "reflectionless-line", line_defect),
    (2, "disc-zbar-z2", disc_defect),
    (3, "antisymmetry", antisymmetry),
    (4, "tail-estimate", tail_estimate),
    (5, "rearrange", rearrange),
    (6, "cotlar", cotlar),
    (7, "holder", holder),
    (8, "riesz-family-scaling", frame_scaling),
    (9, "collapse-schedule", schedule),
    (10, "porosity", porosity),
    (11, "divergence-identity", divergence),
    (12, "fractional-laplacian-pv", pv),
    (13, "fourier-g", fourier),
    (14, "truncation-rate", truncation),
    (15, "treecode", treecode),
]


# the quick suite: cheap sanity checks with known exact answers

def q_zero_defect(seed=0):
    D = reflectionless.defect(riesz(2, 1.0), zero_measure(2), 1.0)
    return _status(D.raw == 0), {"raw": D.raw}


def q_zero_divergence(seed=0):
    r = riesz_checks.divergence_identity(zero_measure(2), riesz_checks.GridSpec((0, 0), 2.0, 64), 1.0)
    return _status(r.error == 0), {"error": r.error}


def q_constant_pv(seed=0):
    r = riesz_checks.pv_integral(lambda x: np.ones((len(x), 2)), [0.0, 0.0], 1.5, 0.1, 10.0,
                                 far_value=[1.0, 1.0])
    v = float(np.max(np.abs(r.value)))
    return _status(v <= 1e-12), {"value": v}


def q_rearrange(seed=0):
    rng = np.random.default_rng(seed)
    B = rng.integers(0, 2**20, 10_000)
    A = (rng.random(10_000) * (B + 1)).astype(np.int64)
    hyp, concl = collapse.rearrange_check(A, B, rng.integers(1, 512, 10_000),
                                          rng.integers(1, 512, 10_000))
    return _status(not np.any(hyp & ~concl)), {"violations": int(np.sum(hyp & ~concl))}


def q_fourier_mean(seed=0):
    r = riesz_checks.fourier_g(riesz_checks.smooth_bump(riesz_checks.GridSpec((0, 0), 8.0, 64)),
                               1.0, stride=4)
    return _status(r.mean_ratio <= 1e-6), {"mean_ratio": r.mean_ratio}


def q_truncation_contained(seed=0):
    mu = make_segment_hausdorff(2, [[-5, 0], [5, 0]], 2000)
    t = riesz_checks.truncation_convergence(riesz(2, 1.0), mu, [8, 16], 2.0)
    return _status(bool(np.all(t.sup == 0))), {"max_diff": float(t.sup.max())}


def q_schedule_identities(seed=0):
    sch = collapse.run_schedule(0.2, 2.0, 1e-30, 1e-10, 0.01, 1.0, 1.0, max_steps=20)
    rt, re = sch.conservation_residuals()
    return _status(all(v == 0 for v in rt + re)), {"steps": len(rt)}


QUICK = [
    (1, "zero-measure-defect", q_zero_defect),
    (2, "zero-measure-divergence", q_zero_divergence),
    (3, "constant-field-pv", q_constant_pv),
    (4, "rearrange-1e4", q_rearrange),
    (5, "fourier-g-mean", q_fourier_mean),
    (6, "truncation-contained", q_truncation_contained),
    (7, "schedule-identities", q_schedule_identities),
]

SUITES = {"acceptance": CRITERIA, "quick": QUICK}


def run_check(cid: int, name: str, fn, seed: int = 0) -> Check:
    t0 = time.perf_counter()
    try:
        status, metrics = fn(seed)
        detail = ""
    except Exception as exc:  # a failing check must not stop the suite
        status, metrics = FAIL, {}
        detail = f"{type(exc).__name__}: {exc}"
        traceback.print_exc()
    return Check(cid, name, status, metrics, time.perf_counter() - t0, detail)


def run_suite(name: str = "acceptance", ids=None, seed: int = 0, echo=None) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"suite: unknown suite {name!r}, choose from {sorted(SUITES)}")
    out = []
    for cid, cname, fn in SUITES[name]:
        if ids is not None and cid not in ids:
            continue
        chk = run_check(cid, cname, fn, seed)
        if echo:
            echo(chk.line())
        out.append(chk)
    return out
