"""Command-line experiment runner: one YAML config per experiment, a JSON report
and CSV tables per run."""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import click
import numpy as np
import yaml

from . import acceptance, collapse, measures, operators, reflectionless, riesz_checks, riesz_systems
from .kernels import BUILTIN, make_kernel

CONFIG_DIR = Path(__file__).parent / "configs"
GENERATORS = {
    "segment": ("d", "endpoints", "n_atoms"),
    "cantor": ("d", "ratio", "depth"),
    "ball": ("d", "center", "radius", "cells"),
    "annulus": ("d", "center", "r_in", "r_out", "cells"),
    "file": ("path",),
}
NEEDS_KERNEL = {"apply", "norm", "defect", "ttilde", "porosity", "collapse-schedule"}
NEEDS_MEASURE = NEEDS_KERNEL | {"measure-gen", "riesz-system"}
OPERATION_KEYS = {
    "measure-gen": (),
    "apply": ("delta",),
    "norm": ("delta",),
    "defect": ("R",),
    "ttilde": ("delta",),
    "riesz-system": ("A_grid", "depth"),
    "collapse-schedule": ("eps", "Lam"),
    "porosity": ("center", "radius", "eps"),
    "riesz-checks": (),
    "suite": (),
}
EXPERIMENTS = ("div", "pv", "philem", "fourier-g", "trunc")


class ConfigError(click.ClickException):
    exit_code = 2

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


# config

def load_config(path) -> dict:
    """Read a YAML config; a bare template name resolves to the bundled copy."""
    p = Path(path)
    if not p.exists():
        alt = CONFIG_DIR / f"{path}.yaml"
        if not alt.exists():
            raise ConfigError([f"config: no such file {path!s}"])
        p = alt
    with open(p) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(["config: top level must be a mapping"])
    return cfg


def _walk_tolerances(node, prefix, out):
    if isinstance(node, dict):
        for k, v in node.items():
            key = f"{prefix}.{k}" if prefix else str(k)
            if "tol" in str(k).lower() and not isinstance(v, (dict, list)):
                if not isinstance(v, (int, float)) or not v > 0:
                    out.append(f"{key}: tolerance must be positive, got {v!r}")
            _walk_tolerances(v, key, out)


def validate(cfg: dict, command: str) -> list[str]:
    """Every violated field, by dotted name."""
    bad = []
    seed = cfg.get("seed")
    if seed is None:
        bad.append("seed: missing (a seed is mandatory)")
    elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        bad.append(f"seed: must be an unsigned 64-bit integer, got {seed!r}")
    threads = cfg.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        bad.append(f"threads: must be a positive integer, got {threads!r}")
    op = cfg.get("operation", {}) or {}
    exp = op.get("experiment") if isinstance(op, dict) else None
    needs_measure = command in NEEDS_MEASURE or (command == "riesz-checks" and exp != "fourier-g")
    needs_kernel = command in NEEDS_KERNEL or (command == "riesz-checks" and exp in ("pv", "philem"))
    if needs_measure:
        m = cfg.get("measure")
        if not isinstance(m, dict):
            bad.append("measure: missing")
        else:
            gen = m.get("generator")
            if gen not in GENERATORS:
                bad.append(f"measure.generator: unknown generator {gen!r} "
                           f"(choose from {sorted(GENERATORS)})")
            else:
                bad += [f"measure.{k}: missing" for k in GENERATORS[gen] if k not in m]
                for k in ("d", "n_atoms", "depth", "cells", "radius", "r_in", "r_out", "ratio"):
                    v = m.get(k)
                    if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))
                                          or v <= 0):
                        bad.append(f"measure.{k}: must be positive, got {v!r}")
    if needs_kernel or "kernel" in cfg:
        k = cfg.get("kernel")
        if not isinstance(k, dict):
            bad.append("kernel: missing")
        elif k.get("name") not in BUILTIN:
            bad.append(f"kernel.name: unknown kernel {k.get('name')!r} (choose from {sorted(BUILTIN)})")
    if not isinstance(op, dict):
        bad.append("operation: must be a mapping")
        op = {}
    name = op.get("name", command)
    if name != command:
        bad.append(f"operation.name: {name!r} does not match the command {command!r}")
    bad += [f"operation.{k}: missing" for k in OPERATION_KEYS.get(command, ()) if k not in op]
    if command == "riesz-checks" and op.get("experiment") not in EXPERIMENTS:
        bad.append(f"operation.experiment: must be one of {list(EXPERIMENTS)}, "
                   f"got {op.get('experiment')!r}")
    _walk_tolerances(cfg, "", bad)
    return bad


def build_measure(m: dict) -> measures.PointMeasure:
    gen = m["generator"]
    if gen == "segment":
        return measures.make_segment_hausdorff(m["d"], m["endpoints"], m["n_atoms"])
    if gen == "cantor":
        return measures.make_cantor(m["d"], m["ratio"], m["depth"])
    if gen == "ball":
        return measures.make_ball_lebesgue(m["d"], m["center"], m["radius"], m["cells"])
    if gen == "annulus":
        return measures.make_annulus_lebesgue(m["d"], m["center"], m["r_in"], m["r_out"], m["cells"])
    return measures.load(m["path"])


def build_kernel(k: dict):
    return make_kernel(k["name"], **{a: b for a, b in k.items() if a != "name"})


# reports

def build_id() -> str:
    """Content hash of the package sources, in the style of a short commit id."""
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def make_report(command, cfg, checks, tables=None, seconds=0.0):
    return {
        "command": command,
        "config": _plain(cfg),
        "build": build_id(),
        "seed": cfg.get("seed"),
        "threads": cfg.get("threads", 1),
        "checks": [c.to_dict() for c in checks],
        "tables": _plain(tables or {}),
        "wall_time": round(seconds, 3),
    }


def strip_timing(report: dict) -> dict:
    """The report without its timing fields, for determinism comparisons."""
    r = dict(report)
    r.pop("wall_time", None)
    r["checks"] = [{k: v for k, v in c.items() if k != "seconds"} for c in r.get("checks", [])]
    return r


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def exit_code(checks, strict: bool) -> int:
    if any(c.status == acceptance.FAIL for c in checks):
        return 1
    if strict and any(c.status == acceptance.INCONCLUSIVE for c in checks):
        return 1
    return 0


# experiments

def _check(cid, name, status, metrics, detail=""):
    return acceptance.Check(cid, name, status, _plain(metrics), 0.0, detail)


def _targets(op, mu):
    t = op.get("targets", "atoms")
    if t == "atoms":
        return None
    if isinstance(t, dict):
        c = np.asarray(t["center"], float)
        return collapse.probe_lattice(c, float(t["radius"]), float(t["spacing"]))
    return np.atleast_2d(np.asarray(t, float))


def run_measure_gen(cfg, out):
    mu = build_measure(cfg["measure"])
    fmt = cfg.get("operation", {}).get("format", "json")
    path = out / f"measure.{'json' if fmt == 'json' else 'txt'}"
    _atomic_write(path, measures.to_json(mu) if fmt == "json" else measures.to_text(mu))
    g = measures.growth_constant(mu, mu.nominal_s) if mu.n else None
    m = {"atoms": mu.n, "mass": mu.total_mass, "mesh_scale": mu.mesh_scale,
         "nominal_s": mu.nominal_s, "growth": g.lam if g else 0.0, "file": path.name}
    return [_check(1, "measure-gen", acceptance.PASS, m)], {}


def run_apply(cfg, out, ttilde=False):
    mu = build_measure(cfg["measure"])
    K = build_kernel(cfg["kernel"])
    op = cfg["operation"]
    tgt = _targets(op, mu)
    if ttilde:
        vals = reflectionless.ttilde1(K, mu, op["delta"], tgt)
        name = "ttilde"
    else:
        pts = mu.atoms if tgt is None else tgt
        vals = operators.apply_truncated(K, mu, float(op["delta"]), 1.0, pts,
                                         method=op.get("method", "dense"))
        name = "apply"
    pts = mu.atoms if tgt is None else tgt
    vals = np.asarray(vals)
    if vals.ndim == 3:
        vals = vals.reshape(-1, vals.shape[-1])
        pts = np.tile(pts, (len(np.atleast_1d(op["delta"])), 1))
    hdr = [f"x{k}" for k in range(mu.d)] + [f"v{c}" for c in range(vals.shape[1])]
    write_csv(out / f"{name}.csv", hdr, np.hstack([pts, vals]))
    m = {"targets": len(pts), "max_abs": float(np.max(np.abs(vals))) if vals.size else 0.0}
    return [_check(1, name, acceptance.PASS, m)], {}


def run_norm(cfg, out):
    mu = build_measure(cfg["measure"])
    K = build_kernel(cfg["kernel"])
    op = cfg["operation"]
    est = operators.operator_norm(K, mu, float(op["delta"]), tol=float(op.get("tol", 1e-10)),
                                  seed=cfg["seed"])
    status = acceptance.PASS if est.converged else acceptance.INCONCLUSIVE
    return [_check(1, "norm", status, {"norm": est.value, "iterations": est.iterations,
                                       "converged": est.converged})], {}


def run_defect(cfg, out):
    mu = build_measure(cfg["measure"])
    K = build_kernel(cfg["kernel"])
    op = cfg["operation"]
    D = reflectionless.defect(K, mu, float(op["R"]), None, op.get("center"))
    tol = float(op.get("tol", 1e-2))
    write_csv(out / "defect.csv", ["member", "value", "l1"],
              [[i, v, l] for i, (v, l) in enumerate(zip(D.values, D.l1))])
    return [_check(1, "defect", acceptance._status(D.relative <= tol),
                   {"raw": D.raw, "relative": D.relative, "family": D.family_size})], {}


def run_riesz_system(cfg, out):
    mu = build_measure(cfg["measure"])
    op = cfg["operation"]
    A = np.asarray(op["A_grid"], float) * (math.sqrt(mu.d) if op.get("scale_sqrt_d") else 1.0)
    fs = riesz_systems.frame_constant_scaling(mu, A, int(op["depth"]))
    err = float(np.max(np.abs(fs.power_constants / fs.constants - 1)))
    write_csv(out / "frame.csv", ["A", "dense", "power", "cubes"],
              zip(fs.A, fs.constants, fs.power_constants, fs.n_cubes))
    ok = fs.ok and err <= float(op.get("tol", 1e-6))
    return [_check(1, "riesz-system", acceptance._status(ok),
                   {"slope": fs.slope, "slope_limit": fs.slope_limit, "power_vs_dense": err})], {}


def _measured_constants(cfg, mu, K):
    op = cfg["operation"]
    delta = float(op.get("holder_delta", 0.5))
    c = np.asarray(op.get("holder_center", mu.barycenter()), float)
    hw = np.asarray(op.get("holder_half_width", [1.0] * mu.d), float)
    xs, xp = reflectionless.random_pairs(c, hw, delta, 200, seed=cfg["seed"])
    C6 = reflectionless.holder_check(K, mu, delta, xs, xp).constant
    r = float(op.get("local_radius", 0.5))
    pts = mu.atoms[np.linspace(0, mu.n - 1, 3).astype(int)]
    C1 = max(operators.local_l1_integral(mu, p, r, r, K.s).ratio for p in pts)
    return C6, C1


def run_schedule(cfg, out):
    op = cfg["operation"]
    eps, Lam = float(op["eps"]), float(op["Lam"])
    if "C6" in op and "C1" in op:
        C6, C1 = float(op["C6"]), float(op["C1"])
    else:
        mu = build_measure(cfg["measure"])
        C6, C1 = _measured_constants(cfg, mu, build_kernel(cfg["kernel"]))
    const = collapse.derived_constants(Lam, 2, C6, C1)
    k = float(op.get("kappa0") or collapse.largest_kappa0(eps, Lam, const["c8"], const["C9"], C6))
    m0 = float(op.get("m0") or (k / const["C9"]) ** 4)  # (kappa0 / C9)^(2d), d = 2
    sch = collapse.run_schedule(eps, Lam, m0, k, const["c8"], const["C9"], C6,
                                max_steps=int(op.get("max_steps", 200)))
    rt, re = sch.conservation_residuals()
    exact = all(v == 0 for v in rt + re)
    write_csv(out / "schedule.csv", ["j", "eps_j", "kappa_j", "t_j", "m_j"],
              [[j, float(sch.eps_j[j]), sch.kappa_j[j], float(sch.t_j[j]), sch.m_j[j]]
               for j in range(len(sch.t_j))])
    m = {"C6": C6, "C1": C1, "c8": const["c8"], "C9": const["C9"], "kappa0": k, "m0": m0,
         "limits": sch.limits, "exact": exact, "reason": sch.stop_reason}
    checks = [_check(1, "schedule", acceptance._status(sch.verified and exact), m)]
    eg = op.get("beta_eps")
    if eg:
        ks = [collapse.largest_kappa0(e, Lam, const["c8"], const["C9"], C6) for e in eg]
        beta = collapse.fit_beta(eg, ks)
        checks.append(_check(2, "beta", acceptance._status(math.isfinite(beta) and beta > 0),
                             {"beta": beta, "kappas": ks}))
    return checks, {}


def run_porosity(cfg, out):
    mu = build_measure(cfg["measure"])
    K = build_kernel(cfg["kernel"])
    op = cfg["operation"]
    P = collapse.porosity_scan(K, mu, measures.BallQuery(op["center"], float(op["radius"])),
                               float(op["eps"]), hull=bool(op.get("hull", True)))
    status = {"found": acceptance.PASS}.get(P.status, acceptance.INCONCLUSIVE)
    write_csv(out / "balls.csv", ["radius"] + [f"x{k}" for k in range(mu.d)],
              [[b.radius, *b.center] for b in P.balls])
    return [_check(1, "porosity", status, {"status": P.status, "average": P.average,
                                           "lambda": P.lam})], {}


def run_riesz_checks(cfg, out):
    op = cfg["operation"]
    exp = op["experiment"]
    tol = float(op.get("tol", 0.05))
    if exp == "div":
        mu = build_measure(cfg["measure"])
        ns = op.get("grid_n", [128, 256])
        res = [riesz_checks.divergence_identity(
            mu, riesz_checks.GridSpec(op.get("center", [0.0] * mu.d), float(op.get("half_width", 2.0)), n),
            float(op.get("s", mu.d - 1))) for n in ns]
        errs = [r.error for r in res]
        order = riesz_checks.convergence_order(errs, ns) if len(ns) > 1 else []
        _atomic_write(out / "divergence_lhs.csv", res[-1].lhs.to_csv())
        ok = errs[-1] <= tol and all(o >= 1 for o in order)
        return [_check(1, "div", acceptance._status(ok),
                       {"errors": errs, "orders": order, "b": res[-1].b,
                        "b_fitted": res[-1].b_fitted})], {}
    if exp == "pv":
        mu = build_measure(cfg["measure"])
        K = build_kernel(cfg["kernel"])
        r = riesz_checks.frac_laplacian_pv(K, mu, op["x0"], op.get("eps"),
                                           float(op.get("r_out", 64.0)))
        return [_check(1, "pv", acceptance._status(r.relative <= tol),
                       {"value": r.value, "relative": r.relative, "normalization": r.normalization,
                        "tail_bound": r.tail_bound, "inner_bound": r.inner_bound})], {}
    if exp == "philem":
        mu = build_measure(cfg["measure"])
        K = build_kernel(cfg["kernel"])
        rows, consts = [], []
        for rad in op.get("radii", [1.0]):
            p = riesz_checks.philem_check(K, mu, measures.BallQuery(op.get("center", [0.0] * mu.d), rad),
                                          op.get("gammas"))
            consts.append(p.constant)
            rows.append([rad, p.lhs, p.constant, p.tail_fraction])
        write_csv(out / "philem.csv", ["r", "lhs", "C20", "tail_fraction"], rows)
        spread = max(consts) / min(consts) if min(consts) > 0 else float("inf")
        ok = spread <= float(op.get("spread_tol", 1.25 / 0.75))
        return [_check(1, "philem", acceptance._status(ok), {"C20": consts, "spread": spread})], {}
    if exp == "fourier-g":
        n = int(op.get("grid_n", 128))
        grid = riesz_checks.GridSpec([0.0, 0.0], float(op.get("half_width", 8.0)), n)
        f = riesz_checks.smooth_bump(grid, float(op.get("r1", 1.0)), float(op.get("r2", 2.0)))
        r = riesz_checks.fourier_g(f, float(op.get("s", 1.0)), stride=int(op.get("stride", 1)))
        _atomic_write(out / "g.csv", r.g.to_csv())
        ok = r.l2_error <= tol and r.mean_ratio <= 1e-6
        return [_check(1, "fourier-g", acceptance._status(ok),
                       {"b": r.b, "l2": r.l2_error, "mean_ratio": r.mean_ratio,
                        "envelope": r.envelope_ratio, "compact": r.compact})], {}
    mu = build_measure(cfg["measure"])
    K = build_kernel(cfg.get("kernel", {"name": "riesz", "d": mu.d, "s": 1.0}))
    t = riesz_checks.truncation_convergence(K, mu, op.get("N_grid", [8, 16, 32, 64]),
                                            float(op.get("A", 2.0)))
    write_csv(out / "truncation.csv", ["N", "sup"], zip(t.N, t.sup))
    return [_check(1, "trunc", acceptance._status(t.ok), {"sups": t.sup, "slope": t.slope})], {}


RUNNERS = {
    "measure-gen": run_measure_gen,
    "apply": run_apply,
    "norm": run_norm,
    "defect": run_defect,
    "ttilde": lambda cfg, out: run_apply(cfg, out, ttilde=True),
    "riesz-system": run_riesz_system,
    "collapse-schedule": run_schedule,
    "porosity": run_porosity,
    "riesz-checks": run_riesz_checks,
}


def _set_threads(n):
    import numba
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # threading-layer fallback notices
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def run(command: str, cfg: dict, out: Path) -> tuple[dict, list]:
    """Validate, run, and write out/report.json; returns (report, checks)."""
    problems = validate(cfg, command)
    if problems:
        raise ConfigError(problems)
    _set_threads(cfg.get("threads", 1))
    np.random.seed(cfg["seed"] % 2**32)
    t0 = time.perf_counter()
    try:
        checks, tables = RUNNERS[command](cfg, out)
    except operators.ConvergenceError as exc:
        checks, tables = [_check(1, command, acceptance.INCONCLUSIVE, {}, str(exc))], {}
    except (ValueError, KeyError, TypeError) as exc:
        checks, tables = [_check(1, command, acceptance.FAIL, {}, f"{type(exc).__name__}: {exc}")], {}
    seconds = time.perf_counter() - t0
    for c in checks:
        c.seconds = seconds / len(checks)
    report = make_report(command, cfg, checks, tables, seconds)
    _atomic_write(out / "report.json", dump_report(report))
    return report, checks


# click wiring

def _options(f):
    f = click.option("--strict", is_flag=True, help="Treat inconclusive checks as failures.")(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                     help="Seed (overrides the config).")(f)
    f = click.option("--threads", type=click.IntRange(1), default=None,
                     help="Thread count (overrides the config).")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default="czlab-out",
                     show_default=True, help="Output directory.")(f)
    f = click.option("--config", "config_path", required=True,
                     help="YAML config path or bundled template name.")(f)
    return f


def _merge(cfg, seed, threads):
    if seed is not None:
        cfg["seed"] = seed
    if threads is not None:
        cfg["threads"] = threads
    return cfg


def _finish(checks, strict):
    for c in checks:
        click.echo(c.line())
    sys.exit(exit_code(checks, strict))


def _command(name):
    @_options
    def cmd(config_path, out, threads, seed, strict):
        cfg = _merge(load_config(config_path), seed, threads)
        _, checks = run(name, cfg, Path(out))
        _finish(checks, strict)
    cmd.__doc__ = f"Run the {name} experiment described by --config."
    return cmd


@click.group()
def main():
    """Experiments with Calderon-Zygmund operators on discretized measures."""


for _name in RUNNERS:
    main.command(_name)(_command(_name))


@main.command("suite")
@click.argument("name", type=click.Choice(["acceptance", "quick", "custom"]))
@click.option("--config", "config_path", default=None,
              help="For custom suites: operation.checks lists acceptance ids.")
@click.option("--out", type=click.Path(file_okay=False), default="czlab-out", show_default=True)
@click.option("--threads", type=click.IntRange(1), default=None)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None)
@click.option("--strict", is_flag=True)
def suite(name, config_path, out, threads, seed, strict):
    """Run the acceptance, quick or a custom suite."""
    cfg = load_config(config_path) if config_path else {"seed": 0}
    cfg = _merge(cfg, seed, threads)
    problems = validate(cfg, "suite")
    if problems:
        raise ConfigError(problems)
    _set_threads(cfg.get("threads", 1))
    t0 = time.perf_counter()
    if name == "custom":
        ids = list((cfg.get("operation") or {}).get("checks") or [])
        checks = acceptance.run_suite("acceptance", ids=ids, seed=cfg["seed"], echo=click.echo) if ids else []
    else:
        checks = acceptance.run_suite(name, seed=cfg["seed"], echo=click.echo)
    report = make_report(f"suite:{name}", cfg, checks, {}, time.perf_counter() - t0)
    _atomic_write(Path(out) / "report.json", dump_report(report))
    sys.exit(exit_code(checks, strict))


if __name__ == "__main__":
    main()
