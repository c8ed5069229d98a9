import json

import numpy as np
import pytest

from conewave.cli import ConfigError, RunConfig, main
from conewave.io import load_field, load_partition, load_sequence, load_spectrum


def _run(tmp_path, command, cfg, name="run", extra=()):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


def _report(out, command):
    return json.loads((out / f"{command}.json").read_text())


def test_invalid_cone_is_bad_config(tmp_path, capsys):
    code, out = _run(tmp_path, "cone-info", {"cone": "cube:r=2"})
    assert code == 2
    err = json.loads(capsys.readouterr().out)
    assert err["code"] == "bad_config"
    assert json.loads((out / "error.json").read_text()) == err


@pytest.mark.parametrize("cfg", [
    {"cone": "orthant:r=1", "besov": {"s_prime": 0.5}},
    {"cone": "orthant:r=1", "besov": {"p": 0.5}},
    {"cone": "orthant:r=1", "unknown": 1},
    {"cone": "orthant:r=1", "method": "jacobi"},
    {"cone": "orthant:r=1", "seeds": []},
    {"cone": "orthant:r=1", "sampling": {"epsilon": -1}},
    {"cone": "orthant:r=1", "signal": {"kind": "file"}},
    {"cone": "orthant:r=1", "selftest": {"cones": ["bogus"]}},
    {"cone": 3},
])
def test_config_validation(cfg):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(cfg)


def test_missing_and_malformed_config(tmp_path):
    assert main(["cone-info", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["cone-info", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2


def test_s_prime_is_derived():
    cfg = RunConfig.from_dict({"cone": "spd2", "besov": {"p": 1, "q": 2, "s": 3}})
    assert cfg.besov.s_prime == pytest.approx(3 * 2 / 3 - 1)


def test_cone_info_and_wavelet_build(tmp_path):
    code, out = _run(tmp_path, "cone-info", {"cone": "orthant:r=2"})
    rep = _report(out, "cone-info")
    assert code == 0 and rep["n"] == 2 and rep["besov"]["s_prime"] == -1.0
    code, out = _run(tmp_path, "wavelet-build", {"cone": "orthant:r=1"})
    rep = _report(out, "wavelet-build")
    assert code == 0 and abs(rep["admissibility_constant"] - 1) <= 1e-6
    assert load_spectrum(out / "psi_hat").grid.size == rep["grid_size"]


def test_transform_writes_fields(tmp_path):
    code, out = _run(tmp_path, "transform", {"cone": "orthant:r=1", "seeds": [3]})
    rep = _report(out, "transform")["signals"][0]
    assert code == 0 and rep["field_l2"] == pytest.approx(rep["signal_l2"], rel=1e-6)
    F = load_field(out / "field_3")
    assert len(F.hs) == rep["n_h_samples"]


def test_besov_zero_signal_gives_null_ratio(tmp_path):
    code, out = _run(tmp_path, "besov", {"cone": "orthant:r=1", "signal": {"kind": "zero"}})
    row = _report(out, "besov")["signals"][0]
    assert code == 0 and row["ratio"] is None
    assert row["discrete"]["value"] == 0 and row["continuous"]["value"] == 0
    assert set(row["discrete"]) == {"p", "q", "s", "s_prime", "value", "quadrature_report"}


def test_besov_from_signal_file(tmp_path):
    code, out = _run(tmp_path, "transform", {"cone": "orthant:r=1", "seeds": [1]}, name="t")
    assert code == 0
    cfg = {"cone": "orthant:r=1", "signal": {"kind": "file", "path": str(out / "signal_1")}}
    code, out2 = _run(tmp_path, "besov", cfg, name="b")
    code3, out3 = _run(tmp_path, "besov", {"cone": "orthant:r=1", "seeds": [1]}, name="b2")
    a, b = _report(out2, "besov")["signals"][0], _report(out3, "besov")["signals"][0]
    assert code == code3 == 0 and a["ratio"] == pytest.approx(b["ratio"], rel=1e-12)
    code, _ = _run(tmp_path, "besov", {"cone": "orthant:r=2", "signal": cfg["signal"]}, name="b3")
    assert code == 2


def test_lattice_artifacts(tmp_path):
    code, out = _run(tmp_path, "lattice", {"cone": "orthant:r=2"})
    rep = _report(out, "lattice")
    assert code == 0 and rep["partition_sum_error"] < 1e-12
    assert len(load_partition(out / "partition").lattice.points) == rep["n_points"]


def test_frame_bounds_ladder(tmp_path):
    cfg = {"cone": "orthant:r=1", "seeds": [0, 1, 2], "besov": {"p": 2, "q": 2, "s": 0},
           "sampling": {"epsilons": [1.0, 0.5], "extent": 4.0}}
    code, out = _run(tmp_path, "frame-bounds", cfg)
    rep = _report(out, "frame-bounds")
    assert code == 0 and [r["epsilon"] for r in rep["ladder"]] == [1.0, 0.5]
    assert all(0.9 < r["A1"] <= r["A2"] < 1.1 for r in rep["ladder"])
    assert load_sequence(out / "sequence").ws.epsilon == 0.5


@pytest.mark.parametrize("method", ["T1-neumann", "T2-neumann", "frame-cg"])
def test_reconstruct_report(tmp_path, method):
    cfg = {"cone": "orthant:r=1", "method": method, "sampling": {"epsilon": 0.25, "extent": 10.0},
           "iteration": {"max_iter": 50, "tol": 1e-4}}
    code, out = _run(tmp_path, "reconstruct", cfg)
    rep = _report(out, "reconstruct")
    assert code == 0 and rep["final_error"] <= 1e-2 and rep["converged"]
    assert {"method", "epsilon", "beta", "iterations", "residuals", "final_error"} <= set(rep)
    assert load_spectrum(out / "reconstruction").grid.size == load_sequence(out / "sequence").ws.window.size


def test_reconstruct_failures_exit_1(tmp_path, capsys):
    cfg = {"cone": "orthant:r=1", "sampling": {"epsilon": float(np.log(2)), "beta": 2.0, "extent": 8.0}}
    code, out = _run(tmp_path, "reconstruct", cfg, name="coarse")
    err = json.loads((out / "error.json").read_text())
    assert code == 1 and err["code"] == "diverged" and err["report"]["divergence"] == "stagnating"
    cfg = {"cone": "orthant:r=1", "iteration": {"max_iter": 2, "tol": 1e-12}}
    code, out = _run(tmp_path, "reconstruct", cfg, name="short")
    assert code == 1 and json.loads((out / "error.json").read_text())["code"] == "not_converged"
    assert _report(out, "reconstruct")["iterations"] == 2


def test_reports_are_byte_identical(tmp_path):
    cfg = {"cone": "orthant:r=1", "seeds": [0, 4], "besov": {"p": 1, "q": 2, "s": 0.5}}
    _, a = _run(tmp_path, "besov", cfg, name="a")
    _, b = _run(tmp_path, "besov", cfg, name="b", extra=("--threads", "2"))
    assert (a / "besov.json").read_bytes() == (b / "besov.json").read_bytes()
    cfg = {"cone": "orthant:r=1", "sampling": {"epsilon": 0.5, "extent": 6.0}, "iteration": {"tol": 1e-6}}
    _, a = _run(tmp_path, "reconstruct", cfg, name="ra")
    _, b = _run(tmp_path, "reconstruct", cfg, name="rb", extra=("--threads", "2"))
    assert (a / "reconstruct.json").read_bytes() == (b / "reconstruct.json").read_bytes()


def test_selftest_orthant1(tmp_path):
    cfg = {"cone": "orthant:r=1", "selftest": {"criteria": [1, 3, 6, 9]}}
    code, out = _run(tmp_path, "selftest", cfg)
    rep = _report(out, "selftest")
    assert code == 0 and rep["passed"]
    assert [r["status"] for r in rep["criteria"]] == ["pass"] * 4
    assert all(r["cones"] == ["orthant:r=1"] for r in rep["criteria"])
    assert "seconds" not in rep["criteria"][0]
