import json
import os

import pytest
import yaml

from barrierkit.cli import main

BASE = {
    "domain": {"kind": "unit-square", "gamma": "all"},
    "mesh": {"h": 0.125},
    "operator": {"p": 2.0, "weight": {"kind": "constant", "value": 1.0}},
}


def write_cfg(tmp_path, extra=None, name="run.yaml", **top):
    raw = {**{k: dict(v) for k, v in BASE.items()}, **top}
    if extra:
        for k, v in extra.items():
            raw.setdefault(k, {})
            raw[k] = {**raw[k], **v} if isinstance(v, dict) else v
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def read_report(out_dir):
    with open(os.path.join(out_dir, "report.json")) as fh:
        return json.load(fh)


def first_line(out_dir, name):
    with open(os.path.join(out_dir, name)) as fh:
        return fh.readline().strip()


def test_solve_roundtrip(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert "PASS solve" in capsys.readouterr().out
    rep = read_report(out)
    assert rep["subcommand"] == "solve"
    assert rep["passed"] is True
    assert rep["artifacts"] == ["solution.csv"]
    assert rep["results"]["solve"]["converged"] is True
    assert "timing" not in rep
    assert first_line(out, "solution.csv") == "node,x0,x1,u"
    assert "overall: PASS" in (out / "report.txt").read_text()


def test_capacity_and_cdc(tmp_path):
    cfg = write_cfg(tmp_path, extra={
        "mesh": {"h": 1.0 / 16},
        "capacity": {"plate_radius": 0.25},
        "cdc": {"scales": [0.25], "n_centers": 4, "ambient_rings": 12},
    })
    out_c = tmp_path / "cap"
    assert main(["capacity", "--config", cfg, "--out", str(out_c)]) == 0
    rep = read_report(out_c)
    assert rep["results"]["capacity"]["value"] > 0
    assert first_line(out_c, "potential.csv") == "node,x0,x1,potential"

    out_d = tmp_path / "cdc"
    assert main(["cdc-check", "--config", cfg, "--out", str(out_d)]) == 0
    rep = read_report(out_d)
    assert rep["results"]["cdc"]["gamma_hat"] >= 1e-3
    assert first_line(out_d, "ratios.csv") \
        == "center,radius,cap_complement,cap_ball,ratio"


def test_config_error_names_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path, mesh={"h": -1.0})
    assert main(["solve", "--config", cfg]) == 2
    assert "mesh.h" in capsys.readouterr().err


def test_unknown_section_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, turbo={"on": True})
    assert main(["solve", "--config", cfg]) == 2
    assert "turbo" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "absent.yaml")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_sampled_subcommand_requires_seed(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["hardy", "--config", cfg, "--out", str(tmp_path / "h")]) == 2
    assert "seed" in capsys.readouterr().err


def test_module_failure_exits_one(tmp_path, capsys):
    # h this coarse leaves no probe scale between 4h and the domain size
    cfg = write_cfg(tmp_path, mesh={"h": 0.2})
    assert main(["barrier", "--config", cfg,
                 "--out", str(tmp_path / "b")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("barrier: CalibrationError")


def test_out_dir_sources(tmp_path, capsys, monkeypatch):
    cfg = write_cfg(tmp_path)
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv("BARRIERKIT_OUT", str(env_dir))
    assert main(["solve", "--config", cfg]) == 0
    assert (env_dir / "report.json").exists()
    # explicit --out wins over the environment
    flag_dir = tmp_path / "from-flag"
    assert main(["solve", "--config", cfg, "--out", str(flag_dir)]) == 0
    assert (flag_dir / "report.json").exists()
    capsys.readouterr()


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    cfg = write_cfg(tmp, extra={
        "mesh": {"h": 1.0 / 16},
        "hardy": {"n_random": 6, "n_starts": 2, "max_iter": 60},
        "calibration": {"thetas": [0.125]},
    }, seed=3)
    a, b = tmp / "a", tmp / "b"
    code_a = main(["full-pipeline", "--config", cfg, "--out", str(a)])
    code_b = main(["full-pipeline", "--config", cfg, "--out", str(b)])
    return code_a, code_b, a, b


def test_pipeline_passes(pipeline_dirs):
    code_a, code_b, a, _ = pipeline_dirs
    assert code_a == 0 and code_b == 0
    rep = read_report(a)
    assert rep["passed"] is True
    assert set(rep["results"]) == {"barrier", "hardy", "singular"}
    assert sorted(rep["artifacts"]) == ["barrier.csv", "convergence.csv",
                                        "hardy.csv", "utilization.csv"]
    assert first_line(a, "hardy.csv").startswith("function,lhs,rhs")
    assert first_line(a, "convergence.csv") \
        == "m,cutoff,probe_increment,energy,newton_iterations"


def test_pipeline_rerun_is_byte_identical(pipeline_dirs):
    _, _, a, b = pipeline_dirs
    names = ["report.json"] + sorted(read_report(a)["artifacts"])
    for name in names:
        with open(a / name, "rb") as fa, open(b / name, "rb") as fb:
            assert fa.read() == fb.read(), name


def test_seed_override_is_echoed(tmp_path):
    cfg = write_cfg(tmp_path, extra={
        "mesh": {"h": 1.0 / 16},
        "hardy": {"n_random": 2, "n_starts": 1, "max_iter": 30},
        "calibration": {"thetas": [0.125]},
    }, seed=3)
    out = tmp_path / "h5"
    assert main(["hardy", "--config", cfg, "--seed", "5",
                 "--out", str(out)]) == 0
    assert read_report(out)["config"]["seed"] == 5
