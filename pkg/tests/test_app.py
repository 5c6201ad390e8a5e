import json

import pytest

import app
from services.file_io import read_covariance_file, read_spectrum_csv

SMALL_RUN = """
seed = 5

[grid]
n = 19

[scenario]
sensors = 4
freqs = 3
band = [1.0, 2.0]
times = 2
snapshots = 50
snr_db = 10.0

[[scenario.sources]]
angles_deg = [-30.0, -20.0]
center = 1.3
half_width = 0.6

[[scenario.sources]]
angles_deg = [30.0, 20.0]
center = 1.7
half_width = 0.6

[solver]
max_sweeps = 200
tol = 1e-4

[rmse]
snr_db = [10.0]
trials = 1
eval_time = 1
methods = ["mvdr"]
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_RUN)
    return str(path)


def _from_covariance(tmp_path, covariance_path):
    path = tmp_path / "from_file.toml"
    path.write_text(SMALL_RUN + f"\n[data]\nsource = \"covariance\"\ncovariance_file = \"{covariance_path}\"\n")
    return str(path)


def test_simulate_then_estimate(tmp_path, small_config):
    sim_dir = tmp_path / "sim"
    assert app.main(["simulate", "--config", small_config, "--out", str(sim_dir)]) == 0
    assert (sim_dir / "covariance.bin").exists() and (sim_dir / "truth.csv").exists()
    record = read_covariance_file(str(sim_dir / "covariance.bin"))
    assert record.data.R.shape == (3, 2, 4, 4) and record.seed == 5

    config = _from_covariance(tmp_path, sim_dir / "covariance.bin")
    est_dir = tmp_path / "est"
    assert app.main(["estimate", "--config", config, "--out", str(est_dir)]) == 0
    for name in ("spectrum.csv", "spatial.csv", "temporal.csv", "report.json", "run_config.json"):
        assert (est_dir / name).exists()
    spectrum = read_spectrum_csv(str(est_dir / "spectrum.csv"))
    assert spectrum.phi.shape == (3, 2, 19)
    report = json.loads((est_dir / "report.json").read_text())
    assert report['method'] == "gsot" and report['iterations'] >= 1
    run_config = json.loads((est_dir / "run_config.json").read_text())
    assert run_config['command'] == "estimate" and run_config['data']['source'] == "covariance"


def test_outputs_are_reproducible(tmp_path, small_config):
    for name in ("a", "b"):
        assert app.main(["simulate", "--config", small_config, "--out", str(tmp_path / name)]) == 0
    for name in ("covariance.bin", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    config = _from_covariance(tmp_path, tmp_path / "a" / "covariance.bin")
    for name in ("c", "d"):
        assert app.main(["estimate", "--config", config, "--out", str(tmp_path / name)]) == 0
    for name in ("spectrum.csv", "spatial.csv", "temporal.csv"):
        assert (tmp_path / "c" / name).read_bytes() == (tmp_path / "d" / name).read_bytes()


def test_seed_changes_simulation(tmp_path, small_config):
    assert app.main(["simulate", "--config", small_config, "--out", str(tmp_path / "a")]) == 0
    assert app.main(["simulate", "--config", small_config, "--seed", "6", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "covariance.bin").read_bytes() != (tmp_path / "b" / "covariance.bin").read_bytes()


def test_mvdr_json(tmp_path, small_config):
    out = tmp_path / "mvdr"
    assert app.main(["mvdr", "--config", small_config, "--out", str(out), "--format", "json"]) == 0
    content = json.loads((out / "spectrum.json").read_text())
    assert content['method'] == "mvdr" and content['seed'] == 5
    assert len(content['phi']) == 3 and len(content['spatial']) == 2 and len(content['temporal']) == 3


def test_estimate_method_switch(tmp_path, small_config):
    out = tmp_path / "ot"
    assert app.main(["estimate", "--config", small_config, "--out", str(out), "--method", "ot"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report['method'] == "ot" and report['max_psi_violation'] == 0.0
    assert app.main(["estimate", "--config", small_config, "--out", str(tmp_path / "mv"), "--method", "mvdr"]) == 0
    assert (tmp_path / "mv" / "spatial.csv").exists()
    assert not (tmp_path / "mv" / "report.json").exists()


def test_rmse_command(tmp_path, small_config):
    out = tmp_path / "rmse"
    assert app.main(["rmse", "--config", small_config, "--out", str(out)]) == 0
    lines = (out / "rmse.csv").read_text().splitlines()
    assert lines[0].startswith("# seed=5")
    assert lines[1] == "snr_db,method,rmse_rad,rmse_deg,trials"
    assert lines[2].startswith("10.0,mvdr,")


def test_failures_return_nonzero(tmp_path, small_config):
    assert app.main(["simulate", "--config", str(tmp_path / "absent.toml")]) == 1
    assert app.main(["ingest", "--config", small_config, "--out", str(tmp_path / "x")]) == 1
    assert app.main(["simulate", "--log-level", "chatty", "--out", str(tmp_path / "y")]) == 1
    missing = _from_covariance(tmp_path, tmp_path / "nothing.bin")
    assert app.main(["estimate", "--config", missing, "--out", str(tmp_path / "z")]) == 1


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        app.main(["track"])


def test_ingest_wav_recording(tmp_path, rng):
    pytest.importorskip("magic")
    sf = pytest.importorskip("soundfile")
    wav = tmp_path / "line.wav"
    sf.write(str(wav), 0.1 * rng.standard_normal((1000, 2)), 1000, subtype='FLOAT')
    geometry = tmp_path / "line_geometry.toml"
    geometry.write_text("positions = [0.0, 0.26]\npropagation_speed = 1480.0\n")
    config = tmp_path / "wav.toml"
    config.write_text(f"[data]\nsource = \"wav\"\nwav_file = \"{wav}\"\ngeometry_file = \"{geometry}\"\n"
                      "[grid]\nn = 19\n"
                      "[ingest]\nwindow_length = 0.064\nband = [125.0, 200.0]\nn_bins = 2\ndecimation = 5\n")
    out = tmp_path / "ingested"
    assert app.main(["ingest", "--config", str(config), "--out", str(out)]) == 0
    record = read_covariance_file(str(out / "covariance.bin"))
    assert record.data.R.shape == (2, 6, 2, 2)
    assert record.bank.unit == "rad/s"
    assert record.geometry.n_sensors == 2 and record.grid.n == 19
