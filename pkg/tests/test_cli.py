import json
import os

from torus_kam.cli import main


def write_cfg(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


BASE = {
    "lattice": {"n_max": 8},
    "phys": {"lam": 1000.0, "eta": 0.02},
    "seed": 5,
}


def test_missing_required_field_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json", {"lattice": {"n_max": 8}, "seed": 1})
    assert main(["approx", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "phys" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"lattice": {"n_max": 8},\n  "phys": }')
    assert main(["approx", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err


def test_schema_path_in_message(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json",
                    dict(BASE, phys={"lam": 0.5, "eta": 0.02}))
    assert main(["approx", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "phys/lam" in capsys.readouterr().err


def test_run_kind_mismatch(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(BASE, run_kind="solve"))
    assert main(["approx", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_resonant_omega_exits_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "c.json", dict(BASE, omega=[1.0, 1.0]))
    assert main(["approx", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_divergence_exits_4(tmp_path):
    forcing = {
        "n_max": 8,
        "f1": [{"k": [0, 1], "re": 200.0}, {"k": [0, -1], "re": 200.0}],
        "f2": [{"k": [1, 0], "re": 300.0}, {"k": [-1, 0], "re": 300.0}],
    }
    fp = tmp_path / "forcing.json"
    fp.write_text(json.dumps(forcing))
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, phys={"lam": 10.0, "eta": 0.02}, forcing_file=str(fp),
        nm={"gamma": 0.1, "smallness_eps": 1e9, "max_steps": 12,
            "target_residual": 1e-10, "k_check": 32},
        dio={"gamma": 0.2, "tau": 2.0, "k_check": 32}))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 4


def test_approx_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, lam_grid=[100.0, 1000.0], dio={"gamma": 0.1, "tau": 2.0, "k_check": 40}))
    o1, o2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["approx", "--config", cfg, "--out", o1]) == 0
    assert main(["approx", "--config", cfg, "--out", o2]) == 0
    def slurp(*parts):
        with open(os.path.join(*parts), "rb") as fh:
            return fh.read()

    s1 = slurp(o1, "summary.json")
    s2 = slurp(o2, "summary.json")
    assert s1 == s2
    c1 = slurp(o1, "approx_scaling.csv")
    c2 = slurp(o2, "approx_scaling.csv")
    assert c1 == c2
    doc = json.loads(s1)
    assert doc["content_hash"]
    assert doc["config"]["seed"] == 5
    # the CSV header carries the config hash column
    head = c1.decode().splitlines()[0]
    assert head.endswith("config_hash")


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, lam_grid=[100.0], dio={"gamma": 0.1, "tau": 2.0, "k_check": 40}))
    o1, o2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["approx", "--config", cfg, "--out", o1]) == 0
    assert main(["approx", "--config", cfg, "--out", o2, "--seed", "99"]) == 0
    with open(os.path.join(o1, "summary.json")) as fh:
        d1 = json.load(fh)
    with open(os.path.join(o2, "summary.json")) as fh:
        d2 = json.load(fh)
    assert d1["results"]["omega"] != d2["results"]["omega"]


def test_solve_writes_trace_and_state(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE,
        nm={"gamma": 0.1, "smallness_eps": 100.0, "max_steps": 8, "k_check": 32},
        dio={"gamma": 0.2, "tau": 2.0, "k_check": 32}))
    out = str(tmp_path / "solve")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "trace.jsonl"))
    assert os.path.exists(os.path.join(out, "final_state.bin"))
    from torus_kam.field_io import load_state
    state = load_state(os.path.join(out, "final_state.bin"))
    assert state.lattice.n_max == 8
    with open(os.path.join(out, "summary.json")) as fh:
        doc = json.load(fh)
    assert doc["results"]["final_residual_s0"] <= 1e-10
    with open(os.path.join(out, "trace.jsonl")) as fh:
        rec = json.loads(fh.readline())
    assert rec["wallclock"] is None


def test_measure_small_run(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, gamma_grid=[0.1, 0.05], n_samples=5000, strip_k_max=3,
        dio={"gamma": 0.1, "tau": 2.0, "k_check": 30}))
    out = str(tmp_path / "m")
    assert main(["measure", "--config", cfg, "--out", out]) == 0
    with open(os.path.join(out, "summary.json")) as fh:
        doc = json.load(fh)
    assert 0.0 < doc["results"]["slope_measure_vs_gamma"] < 2.0
    assert os.path.exists(os.path.join(out, "strip_measure.csv"))


def test_outputs_only_in_output_dir(tmp_path, monkeypatch):
    # subcommands create files nowhere else
    workdir = tmp_path / "cwd"
    workdir.mkdir()
    monkeypatch.chdir(workdir)
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, lam_grid=[100.0], dio={"gamma": 0.1, "tau": 2.0, "k_check": 30}))
    out = str(tmp_path / "only")
    assert main(["approx", "--config", cfg, "--out", out]) == 0
    assert os.listdir(workdir) == []


def test_scaling_small_run(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, lam_grid=[100.0, 1000.0],
        nm={"gamma": 0.1, "smallness_eps": 100.0, "max_steps": 8, "k_check": 32},
        dio={"gamma": 0.2, "tau": 2.0, "k_check": 32}))
    out = str(tmp_path / "s")
    assert main(["scaling", "--config", cfg, "--out", out, "--threads", "2"]) == 0
    with open(os.path.join(out, "summary.json")) as fh:
        doc = json.load(fh)
    r = doc["results"]
    assert r["pressure_residual_max"] <= 1e-12
    assert abs(r["slope_P"] - 1.02) <= 0.05
    assert os.path.exists(os.path.join(out, "physical_scaling.csv"))


def test_threads_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("TORUS_KAM_THREADS", "2")
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, gamma_grid=[0.1, 0.05], n_samples=2000, strip_k_max=2,
        dio={"gamma": 0.1, "tau": 2.0, "k_check": 20}))
    out = str(tmp_path / "env")
    assert main(["measure", "--config", cfg, "--out", out]) == 0


def test_empty_lam_grid_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, "c.json", dict(BASE, lam_grid=[]))
    assert main(["approx", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_lam_everywhere_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, "c.json",
                    {"lattice": {"n_max": 8}, "phys": {"eta": 0.02}, "seed": 1})
    assert main(["approx", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_smallness_gate_exits_3(tmp_path):
    # the theoretical default gamma at desk-scale lambda trips the gate
    cfg = write_cfg(tmp_path, "c.json", dict(
        BASE, nm={"gamma": 0.1, "max_steps": 4, "k_check": 32},
        dio={"gamma": 0.2, "tau": 2.0, "k_check": 32}))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
