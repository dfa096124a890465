import json

import pytest
import yaml
from click.testing import CliRunner

from czlab import cli
from czlab.acceptance import CRITERIA, INCONCLUSIVE, PASS, Check
from czlab.measures import load

TEMPLATES = {
    "measure-gen": "measure-gen", "apply": "apply", "norm": "norm", "defect": "defect",
    "ttilde": "ttilde", "riesz-system": "riesz-system", "collapse-schedule": "collapse-schedule",
    "porosity": "porosity", "riesz-checks-div": "riesz-checks", "riesz-checks-pv": "riesz-checks",
    "riesz-checks-philem": "riesz-checks", "riesz-checks-fourier-g": "riesz-checks",
    "riesz-checks-trunc": "riesz-checks", "suite-custom": "suite",
}


def _write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def _invoke(*args):
    return CliRunner().invoke(cli.main, list(args))


def test_every_template_is_bundled_and_valid():
    names = {p.stem for p in cli.CONFIG_DIR.glob("*.yaml")}
    assert names == set(TEMPLATES)
    for name, command in TEMPLATES.items():
        assert cli.validate(cli.load_config(name), command) == [], name


def test_every_runner_has_a_template():
    assert set(cli.RUNNERS) <= set(TEMPLATES.values())


def test_unknown_kernel_names_field(tmp_path):
    cfg = cli.load_config("defect")
    cfg["kernel"]["name"] = "hilbert"
    r = _invoke("defect", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 2
    assert "kernel.name" in r.output


def test_all_violations_listed(tmp_path):
    cfg = {"measure": {"generator": "blob"}, "operation": {"name": "defect", "tol": -1}}
    problems = cli.validate(cfg, "defect")
    fields = {p.split(":")[0] for p in problems}
    assert {"seed", "measure.generator", "kernel", "operation.R", "operation.tol"} <= fields


@pytest.mark.parametrize("field,value", [("radius", -1.0), ("cells", 0), ("d", "two")])
def test_nonpositive_measure_parameter(tmp_path, field, value):
    cfg = cli.load_config("norm")
    cfg["measure"][field] = value
    r = _invoke("norm", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 2
    assert f"measure.{field}" in r.output


def test_seed_from_flag(tmp_path):
    cfg = cli.load_config("measure-gen")
    del cfg["seed"]
    path = _write(tmp_path, cfg)
    assert _invoke("measure-gen", "--config", path, "--out", str(tmp_path / "a")).exit_code == 2
    r = _invoke("measure-gen", "--config", path, "--out", str(tmp_path / "b"), "--seed", "7")
    assert r.exit_code == 0
    assert json.loads((tmp_path / "b" / "report.json").read_text())["seed"] == 7


def test_mismatched_operation(tmp_path):
    cfg = cli.load_config("defect")
    assert any(p.startswith("operation.name") for p in cli.validate(cfg, "norm"))


def test_missing_config_file():
    r = _invoke("defect", "--config", "/nonexistent/x.yaml")
    assert r.exit_code == 2 and "no such file" in r.output


def test_deterministic_report(tmp_path):
    reports = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        r = _invoke("defect", "--config", "defect", "--out", str(out), "--seed", "3")
        assert r.exit_code == 0, r.output
        reports.append(json.loads((out / "report.json").read_text()))
    a, b = (cli.dump_report(cli.strip_timing(x)) for x in reports)
    assert a == b
    assert reports[0]["build"] == cli.build_id()
    assert (tmp_path / "run0" / "defect.csv").read_text() == (tmp_path / "run1" / "defect.csv").read_text()


def test_measure_gen_writes_loadable_measure(tmp_path):
    r = _invoke("measure-gen", "--config", "measure-gen", "--out", str(tmp_path))
    assert r.exit_code == 0
    mu = load(tmp_path / "measure.json")
    assert mu.n == 1024 and mu.total_mass == pytest.approx(1.0)


def test_apply_writes_csv(tmp_path):
    r = _invoke("apply", "--config", "apply", "--out", str(tmp_path))
    assert r.exit_code == 0, r.output
    lines = (tmp_path / "apply.csv").read_text().splitlines()
    assert lines[0] == "x0,x1,v0,v1" and len(lines) > 100


def test_norm_converges(tmp_path):
    r = _invoke("norm", "--config", "norm", "--out", str(tmp_path), "--threads", "1")
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["checks"][0]["metrics"]["norm"] == pytest.approx(1.5338, rel=1e-3)


def test_runtime_failure_is_captured(tmp_path):
    cfg = cli.load_config("norm")
    cfg["operation"]["delta"] = 0.01
    r = _invoke("norm", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 1
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["checks"][0]["status"] == "fail" and "validity" in rep["checks"][0]["detail"]


def test_exit_codes():
    ok = Check(1, "a", PASS)
    maybe = Check(2, "b", INCONCLUSIVE)
    assert cli.exit_code([ok, maybe], strict=False) == 0
    assert cli.exit_code([ok, maybe], strict=True) == 1
    assert cli.exit_code([Check(3, "c", "fail")], strict=False) == 1


def test_empty_custom_suite(tmp_path):
    path = _write(tmp_path, {"seed": 1, "operation": {"name": "suite", "checks": []}})
    r = _invoke("suite", "custom", "--config", path, "--out", str(tmp_path / "o"))
    assert r.exit_code == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["checks"] == [] and rep["command"] == "suite:custom"


def test_custom_suite(tmp_path):
    r = _invoke("suite", "custom", "--config", "suite-custom", "--out", str(tmp_path))
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert [c["id"] for c in rep["checks"]] == [3, 5]


def test_quick_suite(tmp_path):
    r = _invoke("suite", "quick", "--out", str(tmp_path), "--strict")
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["checks"] and all(c["status"] == "pass" for c in rep["checks"])


def test_acceptance_suite_lists_each_criterion_once():
    ids = [c[0] for c in CRITERIA]
    assert ids == list(range(1, 16))


@pytest.mark.parametrize("name", ["riesz-checks-div", "riesz-checks-philem", "riesz-checks-fourier-g",
                                  "collapse-schedule", "porosity", "riesz-system", "ttilde"])
def test_templates_run(tmp_path, name):
    command = TEMPLATES[name]
    r = _invoke(command, "--config", name, "--out", str(tmp_path))
    assert r.exit_code == 0, r.output
    rep = json.loads((tmp_path / "report.json").read_text())
    assert all(c["status"] == "pass" for c in rep["checks"])
