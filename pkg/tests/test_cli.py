import json
import subprocess
import sys

import numpy as np
import pytest

from pimsolve.cli import dumps, jsonable, main
from pimsolve.fixedpoint import Fixed, quantize
from pimsolve.textio import read_matrix, write_matrix

SMALL = {
    "sweep": {"sizes": [16], "kappas": [10.0], "trials": 2, "families": ["kfac", "identity"]},
    "demo": {"steps": 10, "n_train": 64, "batch": 16, "log_every": 5, "bits": [16, 32]},
    "dse": {"ratios": [8, 28]},
    "workload": [{"kind": "conv", "c_in": 16, "c_out": 32, "kernel": 3, "h": 8, "w": 8, "name": "c1"},
                 {"kind": "fc", "c_in": 64, "c_out": 10, "name": "fc"}],
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def _report(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


def test_invert_identity(tmp_path, rng):
    write_matrix(tmp_path / "a.txt", quantize(np.eye(8), 16, 14))
    b = Fixed(rng.integers(-(1 << 15), 1 << 15, 8), 16, 15)
    write_matrix(tmp_path / "b.txt", b)
    out = tmp_path / "out"
    assert main(["invert", "--matrix", str(tmp_path / "a.txt"), "--rhs", str(tmp_path / "b.txt"),
                 "--out", str(out)]) == 0
    rep = _report(out, "invert")
    assert rep["iterations"] == 1 and rep["converged"] and rep["cycles"] == 20
    x = read_matrix(out / "x.txt")
    assert np.array_equal(x.data[:, 0] * 2.0 ** -x.frac_bits, b.to_float())
    assert rep["config"]["quant"]["q_a"] == 16


def test_invert_fixture(tmp_path, fixtures_dir):
    out = tmp_path / "out"
    rc = main(["invert", "--matrix", f"{fixtures_dir}/spd64_A.txt", "--rhs", f"{fixtures_dir}/spd64_b.txt",
               "--out", str(out)])
    assert rc == 0
    x = read_matrix(out / "x.txt")
    ref = read_matrix(f"{fixtures_dir}/spd64_x.txt")
    assert x.frac_bits == ref.frac_bits and np.max(np.abs(x.data - ref.data)) <= 1


def test_invert_errors(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("2 2 0\n1 2\n3 x\n")
    good = tmp_path / "b.txt"
    write_matrix(good, Fixed(np.array([1, 2]), 16, 0))
    assert main(["invert", "--matrix", str(bad), "--rhs", str(good)]) == 1
    assert "bad.txt:3:" in capsys.readouterr().err
    write_matrix(tmp_path / "a3.txt", quantize(np.eye(3), 16, 14))
    assert main(["invert", "--matrix", str(tmp_path / "a3.txt"), "--rhs", str(good)]) == 1
    rect = tmp_path / "r.txt"
    rect.write_text("2 3 0\n1 2 3\n4 5 6\n")
    assert main(["invert", "--matrix", str(rect), "--rhs", str(good)]) == 1


def test_invert_nonconvergence_exit_code(tmp_path):
    from pimsolve.matgen import random_system

    a, b = random_system("haar", 32, 100.0, np.random.default_rng(1))
    write_matrix(tmp_path / "a.txt", a)
    write_matrix(tmp_path / "b.txt", b)
    rc = main(["invert", "--matrix", str(tmp_path / "a.txt"), "--rhs", str(tmp_path / "b.txt"),
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert _report(tmp_path / "o", "invert")["converged"] is False


def test_map_report(tmp_path, cfg_path):
    assert main(["map", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    rep = _report(tmp_path, "map")
    assert set(rep) >= {"plan", "ledger", "writes", "occupation_vs_block_size", "config"}
    assert rep["writes"]["frequency_ratio"] == "1/10"
    assert [d["name"] for d in rep["layers"]] == ["c1", "fc"]
    assert rep["config"]["workload"] == SMALL["workload"]


def test_map_block_size_override_and_capacity(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"workload": [{"kind": "fc", "c_in": 4096, "c_out": 10, "name": "w"}]}))
    rc = main(["map", "--config", str(cfg), "--block-size", "4096", "--out", str(tmp_path)])
    assert rc == 3
    rep = _report(tmp_path, "map")
    assert rep["config"]["block_size"] == 4096 and rep["plan"]["violations"][0]["layer"] == "w"


def test_table_one_dims(tmp_path):
    assert main(["map", "--out", str(tmp_path)]) == 0
    dims = {d["name"]: d for d in _report(tmp_path, "map")["layers"]}
    assert dims["vgg_c3x3_3_64"]["a_dim"] == 27 and dims["vgg_c3x3_3_64"]["g_dim"] == 64
    assert dims["vgg_c3x3_512_512"]["a_blocks"] == [1024] * 4 + [512]


def test_sweep_dse_demo_selftest(tmp_path, cfg_path):
    assert main(["sweep", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    rows = _report(tmp_path, "sweep")["rows"]
    assert rows[1]["family"] == "identity" and rows[1]["success_at"][0] == 1.0
    assert main(["dse", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    assert len(_report(tmp_path, "dse")["rows"]) == 2
    assert main(["train-demo", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    assert set(_report(tmp_path, "train-demo")["curves"]) == {"16", "32"}
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    assert _report(tmp_path, "selftest")["passed"] is True


@pytest.mark.parametrize("cmd", ["invert", "sweep", "map", "dse", "train-demo", "selftest"])
def test_reports_byte_identical(tmp_path, cfg_path, fixtures_dir, cmd):
    extra = ["--matrix", f"{fixtures_dir}/spd8_A.txt", "--rhs", f"{fixtures_dir}/spd8_b.txt"] if cmd == "invert" else []
    blobs = []
    for run in ("r1", "r2"):
        assert main([cmd, "--config", cfg_path, "--seed", "5", "--out", str(tmp_path / run), *extra]) == 0
        blobs.append((tmp_path / run / f"{cmd}.json").read_bytes())
    assert blobs[0] == blobs[1]
    assert json.loads(blobs[0])["config"]["seed"] == 5


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["nope"]) == 1
    assert main(["invert"]) == 1
    assert main(["--version"]) == 0


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["additionalProperties"] is False


def test_jsonable_non_finite():
    assert jsonable({"a": float("inf"), "b": np.float64("nan"), "c": np.int64(3), "d": np.array([1.5])}) == {
        "a": "inf", "b": "nan", "c": 3, "d": [1.5]}
    assert dumps({"b": 1, "a": 2}).index('"a"') < dumps({"b": 1, "a": 2}).index('"b"')


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "pimsolve.cli", "schema"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["title"]
