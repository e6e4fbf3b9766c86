import json

import pytest

from weakkam.cli import main, manifest_fingerprint
from weakkam.config import (
    ConfigError,
    RunConfig,
    model_from_config,
    parse_config,
    serialize_config,
)

CELL_CFG = """
model.name = "pendulum"
model.a = 1.0
grid.N_x = 128
P = [0.9]
k_schedule = [8, 16]
tau_steps = 2
seed = 7
"""

SWEEP_CFG = """
model.name = "pendulum"
grid.N_x = 128
P = [2.0, 1.6, 1.8, 2.2, 2.4]
k_schedule = [8, 16]
tau_steps = 2
"""


def run(args):
    return main([str(a) for a in args])


def test_config_roundtrip_identity():
    cfg = parse_config(CELL_CFG)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert parse_config(serialize_config(RunConfig())) == RunConfig()


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("\nnot.a.key = 1\n")


def test_config_rejects_bad_json():
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("P = [1.0,,]\n")


def test_config_names_bad_field():
    with pytest.raises(ConfigError, match="k_schedule"):
        parse_config("k_schedule = [8, 8]\n")
    with pytest.raises(ConfigError, match="tau_steps"):
        parse_config("tau_steps = 0\n")


def test_swing_model_descriptor_roundtrip():
    text = """
model.name = "swing"
model.n = 1
model.m = 1
model.alpha = [0.0]
model.lam = [0.5]
model.omega = [1.0]
model.beta = [[{"const": 1.0, "modes": [[[1], 0.5, 0.0]]}]]
"""
    cfg = parse_config(text)
    model = model_from_config(cfg)
    assert model.descriptor["name"] == "swing"
    cfg2 = parse_config(serialize_config(cfg))
    assert model_from_config(cfg2).descriptor == model.descriptor


def test_cell_command_and_exit_codes(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CELL_CFG)
    out = tmp_path / "out"
    assert run(["cell", "--config", cfg, "--out", out]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "cell"
    assert len(manifest["solves"]) == 2
    for rec in manifest["solves"]:
        assert rec["converged"]
        assert {"P", "k", "tau", "Hbar_k", "grad_norm", "el_residual",
                "iterations", "sup_Dxu", "wall_time_s"} <= rec.keys()
    assert (out / "hbar_table.csv").read_text().startswith("P,k,hbar")


def test_cell_rejects_multiple_P(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CELL_CFG.replace("P = [0.9]", "P = [0.9, 1.0]"))
    assert run(["cell", "--config", cfg, "--out", tmp_path / "o"]) == 1


def test_validation_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("k_schedule = [16, 8]\n")
    assert run(["cell", "--config", cfg, "--out", tmp_path / "o"]) == 1


def test_nonconvergence_exit_code(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CELL_CFG + "tol.max_iter = 3\nP = [1.5]\nk_schedule = [64]\n")
    out = tmp_path / "out"
    assert run(["cell", "--config", cfg, "--out", out]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["error"]


def test_manifest_determinism(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CELL_CFG)
    run(["cell", "--config", cfg, "--out", tmp_path / "a", "--dump-sigma"])
    run(["cell", "--config", cfg, "--out", tmp_path / "b", "--dump-sigma"])
    ma = manifest_fingerprint(json.loads((tmp_path / "a/manifest.json").read_text()))
    mb = manifest_fingerprint(json.loads((tmp_path / "b/manifest.json").read_text()))
    assert json.dumps(ma, sort_keys=True) == json.dumps(mb, sort_keys=True)


def test_sweep_parallel_independence(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(SWEEP_CFG)
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "j1", "--jobs", 1]) == 0
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "j2", "--jobs", 2]) == 0
    m1 = manifest_fingerprint(json.loads((tmp_path / "j1/manifest.json").read_text()))
    m2 = manifest_fingerprint(json.loads((tmp_path / "j2/manifest.json").read_text()))
    assert json.dumps(m1, sort_keys=True) == json.dumps(m2, sort_keys=True)
    # rows are ordered by P then k
    ps = [rec["P"][0] for rec in m1["solves"]]
    assert ps == sorted(ps)


def test_sweep_convexity_entry(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(SWEEP_CFG)
    run(["sweep", "--config", cfg, "--out", tmp_path / "o"])
    manifest = json.loads((tmp_path / "o/manifest.json").read_text())
    conv = manifest["sweep_convexity"]
    assert conv["k"] == 16.0
    assert conv["max_violation"] <= 1e-3


def test_sweep_needs_three_points(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(SWEEP_CFG.replace("P = [2.0, 1.6, 1.8, 2.2, 2.4]", "P = [1.0, 2.0]"))
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "o"]) == 1


def test_oracle_command(tmp_path):
    cfg = tmp_path / "o.cfg"
    cfg.write_text('model.name = "pendulum"\noracle.P_range = [0.0, 2.0, 0.5]\n')
    out = tmp_path / "out"
    assert run(["oracle", "--config", cfg, "--out", out]) == 0
    rows = (out / "oracle_table.csv").read_text().strip().splitlines()
    assert rows[0] == "P,hbar"
    assert len(rows) == 6
    assert float(rows[1].split(",")[1]) == 2.0


def test_simulate_and_report(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("""
model.name = "pendulum"
sim.T = 40.0
sim.dt = 0.001
sim.y0 = [2.6]
sim.compare = true
sim.samples = 2
oracle.P_range = [0.0, 3.0, 0.25]
""")
    out = tmp_path / "sim_out"
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["energy_drift"] <= 1e-6
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x_0,y_0,energy"
    assert manifest["comparison"]

    rep = tmp_path / "rep"
    assert run(["report", out / "manifest.json", "--out", rep]) == 0
    assert (rep / "rotation_comparison.csv").exists()


def test_report_on_cell_manifest(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CELL_CFG)
    out = tmp_path / "out"
    run(["cell", "--config", cfg, "--out", out, "--dump-sigma"])
    rep = tmp_path / "rep"
    assert run(["report", out / "manifest.json", "--out", rep]) == 0
    kcsv = (rep / "Hbar_vs_k.csv").read_text().strip().splitlines()
    assert kcsv[0] == "P,k,hbar"
    assert len(kcsv) == 3
    assert (rep / "sigma_profile.csv").exists()
    pcsv = (rep / "Hbar_vs_P.csv").read_text().strip().splitlines()
    ps = [float(r.split(",")[0]) for r in pcsv[1:]]
    assert ps == sorted(ps)


def test_report_missing_manifest(tmp_path):
    assert run(["report", tmp_path / "nope.json", "--out", tmp_path / "r"]) == 1


def test_env_var_out_dir(tmp_path, monkeypatch):
    cfg = tmp_path / "o.cfg"
    cfg.write_text('model.name = "pendulum"\noracle.P_range = [0.0, 1.0, 0.5]\n')
    monkeypatch.setenv("WEAKKAM_OUT", str(tmp_path / "envout"))
    assert run(["oracle", "--config", cfg]) == 0
    assert (tmp_path / "envout" / "oracle_table.csv").exists()


def test_verify_default_config_passes(tmp_path, capsys):
    assert run(["verify", "--out", tmp_path / "v"]) == 0
    text = capsys.readouterr().out
    assert "[FAIL]" not in text
    manifest = json.loads((tmp_path / "v/manifest.json").read_text())
    assert all(c["passed"] for c in manifest["checks"])


def test_verify_empty_config_passes(tmp_path):
    cfg = tmp_path / "empty.cfg"
    cfg.write_text("# nothing overridden\n")
    assert run(["verify", "--config", cfg, "--out", tmp_path / "v"]) == 0


def test_bundled_sweep_shows_flat_region(tmp_path):
    from pathlib import Path
    bundled = Path(__file__).resolve().parents[1] / "configs" / "pendulum_sweep.cfg"
    out = tmp_path / "o"
    assert run(["sweep", "--config", bundled, "--out", out, "--jobs", 2]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert not manifest["failures"]
    col64 = {rec["P"][0]: rec["Hbar_k"] for rec in manifest["solves"]
             if rec["k"] == 64.0}
    # flat region |P| <= 4/pi sits within 0.15 of the potential ceiling 2
    for P in (-1.0, -0.5, 0.0, 0.5, 1.0):
        assert abs(col64[P] - 2.0) <= 0.15
    assert col64[2.5] > 4.0
    assert manifest["sweep_convexity"]["k"] == 64.0
    assert manifest["sweep_convexity"]["max_violation"] <= 1e-3


def test_integrable_sweep_matches_quadratic(tmp_path):
    cfg = tmp_path / "itg.cfg"
    cfg.write_text("""
model.name = "integrable"
model.n = 1
grid.N_x = 64
P = [0.0, 0.5, 1.0, 1.5]
k_schedule = [8, 16]
tau_steps = 1
""")
    out = tmp_path / "o"
    assert run(["sweep", "--config", cfg, "--out", out]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for rec in manifest["solves"]:
        P = rec["P"][0]
        assert abs(rec["Hbar_k"] - 0.5 * P * P) <= 1e-10


def test_bundled_pendulum_config(tmp_path):
    from pathlib import Path
    bundled = Path(__file__).resolve().parents[1] / "configs" / "pendulum_cell.cfg"
    cfg = tmp_path / "quick.cfg"
    # same model, smaller budget for the smoke test
    cfg.write_text(bundled.read_text().replace("[8, 16, 32, 64]", "[8, 16]"))
    out = tmp_path / "o"
    assert run(["cell", "--config", cfg, "--out", out]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(rec["converged"] for rec in manifest["solves"])
    hb = [rec["Hbar_k"] for rec in manifest["solves"]]
    assert hb == sorted(hb)


def test_verify_negative_control(tmp_path, capsys):
    # a sloppy solver tolerance must surface as failed closedness checks
    cfg = tmp_path / "sloppy.cfg"
    cfg.write_text("tol.gtol = 1e-2\nseed = 7\n")
    assert run(["verify", "--config", cfg, "--out", tmp_path / "v"]) == 3
    manifest = json.loads((tmp_path / "v/manifest.json").read_text())
    failed = {c["name"] for c in manifest["checks"] if not c["passed"]}
    assert any("closedness" in name or "stationarity" in name for name in failed)
