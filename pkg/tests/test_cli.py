import csv

import numpy as np
import pytest

from nars import cli, errors
from nars.io import read_field_dump, read_policy_vector, read_wav
from nars.rl import theta_size

WAVE_CFG = """\
[medium]
rho0 = 1000
c = 1500
beta = 3.5

[source]
p0 = 1e6
f0 = 1e6

[wave]
n_time = 512
n_steps = 200
sigma_end = 0.5
n_harm = 3
"""

KZK_CFG = """\
[medium]
rho0 = 1000
c = 1500
beta = 0.0
delta = 0.0

[source]
p0 = 1e5
f0 = 1e6

[kzk]
n_r = 96
dr = 0.0002
n_z = 40
dz = 0.002
n_harm = 4
source_radius = 0.004
"""

SCENE_CFG = """\
[run]
seed = 42

[room]
dims = 6, 5, 3
reflection = 0.4
max_order = 2
fs = 16000

[array]
center = 3, 2.5, 1.2
radius = 0.05
n_mics = 8

[scene]
source_pos = 1.5, 3.5, 1.5
noise_kind = white
snr_db = 10
duration = 0.5
echo_pos = 5, 1, 1.3
echo_level_db = -6
"""

FRONTEND_CFG = SCENE_CFG + """
[frontend]
m_bands = 64
hop = 32
aec_taps = 4
mu = 0.5
"""

TRAIN_CFG = SCENE_CFG.replace("duration = 0.5", "duration = 0.4") + """
[rl]
budget = 1024
horizon = 16
epochs = 4
minibatch = 32
"""


@pytest.fixture(autouse=True)
def quiet_logs(monkeypatch):
    monkeypatch.setenv("NARS_LOG", "error")


def run_cli(tmp_path, command, cfg_text, *extra):
    cfg = tmp_path / f"{command}.ini"
    cfg.write_text(cfg_text)
    out = tmp_path / f"out_{command}"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# === wave ===


def test_wave_produces_fubini_consistent_harmonics(tmp_path):
    code, out = run_cli(tmp_path, "wave", WAVE_CFG)
    assert code == 0
    assert (out / "waveform.csv").exists()
    assert (out / "resolved.ini").exists()
    rows = read_rows(out / "harmonics.csv")
    last = rows[-1]
    assert float(last["B2"]) == pytest.approx(0.229807, rel=2e-2)
    assert float(last["B1"]) == pytest.approx(0.969074, rel=2e-2)


def test_wave_linear_medium_has_no_harmonics(tmp_path):
    cfg = WAVE_CFG.replace("beta = 3.5", "beta = 0.0").replace(
        "sigma_end = 0.5", "z_max = 0.05"
    )
    code, out = run_cli(tmp_path, "wave", cfg)
    assert code == 0
    rows = read_rows(out / "harmonics.csv")
    assert max(float(r["B2"]) for r in rows) < 1e-6


def test_wave_past_shock_is_a_validity_failure(tmp_path):
    cfg = WAVE_CFG.replace("sigma_end = 0.5", "sigma_end = 1.05")
    code, out = run_cli(tmp_path, "wave", cfg)
    assert code == 4
    assert not (out / "harmonics.csv").exists()


def test_wave_requires_exactly_one_extent(tmp_path):
    cfg = WAVE_CFG.replace("sigma_end = 0.5", "sigma_end = 0.5\nz_max = 0.1")
    code, _ = run_cli(tmp_path, "wave", cfg)
    assert code == 1


# === kzk ===


def test_kzk_artifacts(tmp_path):
    code, out = run_cli(tmp_path, "kzk", KZK_CFG)
    assert code == 0
    rows = read_rows(out / "axis.csv")
    assert len(rows) == 41  # n_z + 1 including the source plane
    field = read_field_dump(out / "field.nfd")
    assert field.amps.shape == (4, 96)
    assert field.z == pytest.approx(40 * 0.002)


# === scene ===


def test_scene_artifacts_and_metrics(tmp_path):
    code, out = run_cli(tmp_path, "scene", SCENE_CFG)
    assert code == 0
    fs, mics = read_wav(out / "mics.wav")
    assert fs == 16000.0
    assert mics.shape == (8, 8000)
    _, ref = read_wav(out / "clean_ref.wav")
    assert ref.shape == (8000,)
    assert (out / "far_end.wav").exists()
    with open(out / "metrics.csv", newline="") as fh:
        header = fh.readline().strip()
    assert header == "scenario_id,si_snr_db,snr_gain_db,rtf,doa_err_deg"
    row = read_rows(out / "metrics.csv")[0]
    assert float(row["doa_err_deg"]) < 5.0


# === frontend ===


def test_frontend_improves_over_raw_mic(tmp_path):
    code, out = run_cli(tmp_path, "frontend", FRONTEND_CFG)
    assert code == 0
    assert (out / "enhanced.wav").exists()
    assert (out / "erle.csv").exists()
    srp = read_rows(out / "srp.csv")
    assert len(srp) > 1 and "power" in srp[0]
    row = read_rows(out / "metrics.csv")[0]
    assert float(row["snr_gain_db"]) > 0.0


def test_frontend_erle_trace_covers_the_signal(tmp_path):
    code, out = run_cli(tmp_path, "frontend", FRONTEND_CFG)
    assert code == 0
    rows = read_rows(out / "erle.csv")
    assert len(rows) == 8000 // 32  # one row per analysis hop
    assert all(np.isfinite(float(r["erle_db"])) for r in rows)


# === localize ===


LOCALIZE_CFG = """\
[run]
seed = 7

[room]
dims = 6, 5, 3
reflection = 0.0
max_order = 0
fs = 16000

[array]
center = 3, 2.5, 1.2
radius = 0.05
n_mics = 8

[scene]
noise_kind = white
snr_db = 20
duration = 0.25

[localize]
n_scenes = 6
"""


def test_localize_known_source(tmp_path):
    az = 37.0
    px = 3.0 + 1.8 * np.cos(np.radians(az))
    py = 2.5 + 1.8 * np.sin(np.radians(az))
    cfg = LOCALIZE_CFG.replace("n_scenes = 6", "n_scenes = 1").replace(
        "[scene]", f"[scene]\nsource_pos = {px:.6f}, {py:.6f}, 1.2"
    )
    code, out = run_cli(tmp_path, "localize", cfg)
    assert code == 0
    row = read_rows(out / "doa.csv")[0]
    assert float(row["true_az_deg"]) == pytest.approx(az, abs=1e-3)
    assert float(row["err_deg"]) <= 1.0


def test_localize_parallel_matches_serial(tmp_path):
    code_a, out_a = run_cli(tmp_path, "localize", LOCALIZE_CFG)
    cfg = tmp_path / "par.ini"
    cfg.write_text(LOCALIZE_CFG)
    out_b = tmp_path / "out_par"
    code_b = cli.main(
        ["localize", "--config", str(cfg), "--out", str(out_b), "--parallel", "3"]
    )
    assert code_a == code_b == 0
    assert (out_a / "doa.csv").read_bytes() == (out_b / "doa.csv").read_bytes()


def test_localize_rejects_explicit_pos_with_many_scenes(tmp_path):
    cfg = LOCALIZE_CFG.replace("[scene]", "[scene]\nsource_pos = 4, 3, 1.2")
    code, _ = run_cli(tmp_path, "localize", cfg)
    assert code == 1


# === train ===


def test_train_writes_curve_and_loadable_policy(tmp_path):
    code, out = run_cli(tmp_path, "train", TRAIN_CFG)
    assert code == 0
    rows = read_rows(out / "curve.csv")
    assert len(rows) == 1024 // 16
    assert rows[0]["episode"] == "0"
    theta = read_policy_vector(out / "policy.npc")
    assert theta.shape == (theta_size(15, 4, 24, 16),)


# === bench ===


def test_bench_single_bucket(tmp_path):
    cfg = "[bench]\ndurations = 3\nfs = 16000\nn_mics = 4\n"
    code, out = run_cli(tmp_path, "bench", cfg)
    assert code == 0
    rows = read_rows(out / "rtf.csv")
    assert len(rows) == 1
    assert rows[0]["bucket"] == "≤5 s"
    assert float(rows[0]["mean_rtf"]) > 0.0


def test_bench_empty_corpus_is_a_data_error(tmp_path):
    # a bare comma parses to zero durations (empty value would mean "default")
    code, _ = run_cli(tmp_path, "bench", "[bench]\ndurations = ,\n")
    assert code == 2


# === config and process behavior ===


def test_malformed_config_exits_one_without_artifacts(tmp_path):
    no_fs = SCENE_CFG.replace("fs = 16000\n", "")
    code, out = run_cli(tmp_path, "scene", no_fs)
    assert code == 1
    assert not out.exists() or not any(out.iterdir())


def test_unparseable_value_exits_one(tmp_path):
    code, _ = run_cli(tmp_path, "scene", "[room]\ndims = 6 5\n")
    assert code == 1


def test_unknown_key_is_rejected(tmp_path):
    code, _ = run_cli(tmp_path, "wave", WAVE_CFG + "\n[medium]\nbogus = 1\n")
    assert code == 1


def test_missing_config_file(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["wave", "--config", str(tmp_path / "nope.ini"), "--out", str(out)])
    assert code == 1


def test_seed_override_lands_in_resolved_config(tmp_path):
    code, out = run_cli(tmp_path, "scene", SCENE_CFG, "--seed", "99")
    assert code == 0
    text = (out / "resolved.ini").read_text()
    assert "seed = 99" in text


def test_resolved_config_reproduces_the_run(tmp_path):
    code_a, out_a = run_cli(tmp_path, "scene", SCENE_CFG)
    cfg_b = tmp_path / "resolved_rerun.ini"
    cfg_b.write_text((out_a / "resolved.ini").read_text())
    out_b = tmp_path / "out_rerun"
    code_b = cli.main(["scene", "--config", str(cfg_b), "--out", str(out_b)])
    assert code_a == code_b == 0
    assert (out_a / "mics.wav").read_bytes() == (out_b / "mics.wav").read_bytes()
    # metrics differ only in the wall-clock rtf column
    rows_a = read_rows(out_a / "metrics.csv")
    rows_b = read_rows(out_b / "metrics.csv")
    for ra, rb in zip(rows_a, rows_b):
        ra.pop("rtf"), rb.pop("rtf")
        assert ra == rb


def test_invalid_log_level_exits_one(tmp_path, monkeypatch):
    monkeypatch.setenv("NARS_LOG", "chatty")
    cfg = tmp_path / "w.ini"
    cfg.write_text(WAVE_CFG)
    code = cli.main(["wave", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 1


def test_bad_parallel_value(tmp_path):
    cfg = tmp_path / "l.ini"
    cfg.write_text(LOCALIZE_CFG)
    code = cli.main(
        ["localize", "--config", str(cfg), "--out", str(tmp_path / "o"), "--parallel", "0"]
    )
    assert code == 1


def test_exit_code_taxonomy():
    assert errors.ConfigurationError("x").exit_code == 1
    assert errors.DataError("x").exit_code == 2
    assert errors.DomainError("x").exit_code == 2
    assert errors.FramingError("x").exit_code == 2
    assert errors.NoSourceError("x").exit_code == 2
    assert errors.NumericalError("x").exit_code == 3
    assert errors.DivergenceError("x").exit_code == 3
    assert errors.ValidityError("x").exit_code == 4
