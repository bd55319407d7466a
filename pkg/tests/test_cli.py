import json
import subprocess
import sys

import numpy as np
import pytest

from bergman_lab.cli import DEFAULTS, main

GOLDEN = 2 * np.sqrt(5) + np.arcsinh(2) + 4


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def printed(out):
    """The JSON document printed before the summary line."""
    return json.loads(out[:out.rindex("}") + 1])


def read(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_weight_inspect_fock(capsys, tmp_path):
    code, out, _ = run(capsys, "weight", "inspect", "--family", "fock", "--n", "1", "--out", str(tmp_path))
    assert code == 0
    rep = printed(out)
    assert rep["doubling_D"] == pytest.approx(1.0, abs=1e-12)
    assert rep["comparability_delta"] == pytest.approx(0.25, abs=1e-12)
    assert rep["gate"] == "OPEN"
    assert read(tmp_path / "report.json")["gate"] == "OPEN"


def test_weight_inspect_harmonic_exit_2(capsys, tmp_path):
    code, out, _ = run(capsys, "weight", "inspect", "--family", "custom_radial", "--coefs", "0", "--out", str(tmp_path))
    assert code == 2
    assert printed(out)["gate"] == "CLOSED"


@pytest.mark.parametrize("argv", [
    ["weight", "inspect", "--family", "nope"],
    ["weight", "inspect", "--family", "radial_power", "--m", "0"],
    ["weight", "inspect", "--family", "gamma_monomials", "--n", "2", "--gamma", "1,x"],
    ["kernel", "--z", "0,0,1"],
    ["kernel", "--h", "-1"],
    ["verify", "--kappa", "scale:-2"],
    ["radius", "--box", "1,0"],
    ["bogus"],
])
def test_input_errors_exit_1(capsys, tmp_path, argv):
    code, out, err = run(capsys, *argv, "--out", str(tmp_path)) if argv != ["bogus"] else run(capsys, *argv)
    assert code == 1
    assert "OK" not in out


def test_error_message_names_command(capsys, tmp_path):
    code, _, err = run(capsys, "weight", "inspect", "--family", "nope", "--out", str(tmp_path))
    assert code == 1 and err.startswith("weight-inspect: error:") and "nope" in err
    assert not (tmp_path / "manifest.json").exists()


def test_kernel_fock(capsys, tmp_path):
    code, out, _ = run(capsys, "kernel", "--weight", "fock", "--n", "1", "--z", "0,0", "--w", "0,0", "--out", str(tmp_path))
    assert code == 0
    assert out.strip() == "kernel OK K=0.6366198"
    rows = (tmp_path / "kernel.csv").read_text().splitlines()
    assert rows[0] == "z_x1,z_y1,w_x1,w_y1,re_K,im_K,tail_flag"
    assert float(rows[1].split(",")[4]) == pytest.approx(2 / np.pi, rel=1e-12)


def test_distance_golden(capsys, tmp_path):
    code, out, _ = run(capsys, "distance", "--weight", "radial_power", "--m", "2", "--from", "0,0", "--to", "2,0",
                       "--out", str(tmp_path))
    assert code == 0
    res = printed(out)
    assert res["method"] == "radial-quadrature"
    assert res["d"] == pytest.approx(GOLDEN, rel=1e-8)
    assert res["source"] == [0.0, 0.0] and res["target"] == [2.0, 0.0]


def test_distance_grid_route(capsys, tmp_path):
    code, out, _ = run(capsys, "distance", "--weight", "radial_power", "--m", "2", "--from", "0,0", "--to", "2,0",
                       "--box=-0.5,2.5", "--out", str(tmp_path))
    res = printed(out)
    assert code == 0 and res["method"] != "radial-quadrature"
    assert res["d"] == pytest.approx(GOLDEN, rel=0.03)
    assert (tmp_path / "distance_grid.csv").exists()


def test_verify_fock(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--weight", "fock", "--n", "1", "--kappa", "rho", "--out", str(tmp_path))
    assert code == 0
    line = out.strip().splitlines()[-1]
    assert line.startswith("verify OK eps=")
    eps = float(line.split("eps=")[1].split()[0])
    assert eps >= 0.25
    rep = read(tmp_path / "report.json")
    assert rep["fit"]["eps_hat"] == pytest.approx(eps, rel=1e-5)
    man = read(tmp_path / "manifest.json")
    assert set(man["files"]) == {"report.json", "pairs.csv", "plot.csv"}
    on_disk = {p.name for p in tmp_path.iterdir()} - {"manifest.json"}
    assert on_disk == set(man["files"])


def test_coercivity_and_radius(capsys, tmp_path):
    code, out, _ = run(capsys, "coercivity", "--weight", "fock", "--kappa", "scale:1.4142135623730951",
                       "--box", "3", "--h", "0.1", "--out", str(tmp_path / "c"))
    assert code == 0
    lam = float(out.split("lambda_min=")[1])
    assert 0.95 <= lam <= 1.10
    code, out, _ = run(capsys, "radius", "--weight", "radial_power", "--m", "2", "--points", "0,0;1,0",
                       "--out", str(tmp_path / "r"))
    assert code == 0
    rows = (tmp_path / "r" / "radius.csv").read_text().splitlines()
    assert rows[0] == "x1,y1,rho"
    assert float(rows[1].split(",")[2]) == pytest.approx(0.5, abs=1e-8)
    assert float(rows[2].split(",")[2]) == pytest.approx((np.sqrt(2) - 1) / 2, abs=1e-8)


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"family": "radial_power", "m": 2, "z": "0.5,0", "w": "0.5,0"}))
    code, out, _ = run(capsys, "kernel", "--config", str(cfg), "--out", str(tmp_path / "a"))
    assert code == 0
    man = read(tmp_path / "a" / "manifest.json")
    assert man["config"]["family"] == "radial_power" and man["config"]["z"] == "0.5,0"
    assert man["defaults"] == json.loads(json.dumps(DEFAULTS))
    # flags beat the config file
    code, out, _ = run(capsys, "kernel", "--config", str(cfg), "--family", "fock", "--z", "0,0", "--w", "0,0",
                       "--out", str(tmp_path / "b"))
    assert out.strip() == "kernel OK K=0.6366198"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"familly": "fock"}))
    code, _, err = run(capsys, "kernel", "--config", str(bad), "--out", str(tmp_path / "c"))
    assert code == 1 and "familly" in err


def test_manifest_fields(capsys, tmp_path):
    run(capsys, "kernel", "--out", str(tmp_path))
    man = read(tmp_path / "manifest.json")
    for key in ("command", "argv", "config", "defaults", "input_sha256", "versions", "wall_time_s", "timestamp",
                "exit_code", "files"):
        assert key in man
    assert man["exit_code"] == 0 and set(man["files"]) == {"kernel.csv", "kernel_model.json"}


def test_outputs_are_byte_reproducible(capsys, tmp_path):
    for sub in ("one", "two"):
        assert run(capsys, "verify", "--weight", "fock", "--out", str(tmp_path / sub))[0] == 0
    names = read(tmp_path / "one" / "manifest.json")["files"]
    for name in names:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    assert names == read(tmp_path / "two" / "manifest.json")["files"]


def test_csv_format(capsys, tmp_path):
    run(capsys, "verify", "--weight", "fock", "--out", str(tmp_path))
    raw = (tmp_path / "pairs.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    first = raw.decode("utf-8").splitlines()[1].split(",")
    assert any(len(v.replace("-", "").replace(".", "").split("e")[0]) >= 15 for v in first)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "bergman_lab", "kernel", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "kernel OK K=0.6366198"
