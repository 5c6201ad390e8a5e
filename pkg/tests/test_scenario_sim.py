import math
import os
import time
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from services.baselines import MvdrParams
from services.core_types import AngularGrid, FrequencyBank, SolverParams, spatial_average
from services.forward_model import ArrayGeometry, build_measurement_model, steering_vector
from services.gsot_solver import solve
from services.scenario_sim import (
    ScenarioConfig,
    SourceTrajectory,
    band_hump,
    draw_snapshots,
    expected_covariances,
    match_errors,
    noise_power,
    pick_peak_indices,
    pick_peaks,
    rmse_study,
    simulate_covariances,
    two_target_scenario,
)
from utils.config import load_run_config

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')


def _static_scenario(n_times=2, snr_db=math.inf, snapshots=50, angle_index=18, n_grid=37, n_freqs=3):
    grid = AngularGrid.uniform(n_grid)
    bank = FrequencyBank.uniform(n_freqs, 1.0, 2.0)
    source = SourceTrajectory(np.full(n_times, grid.points[angle_index]), np.ones(n_freqs))
    return ScenarioConfig(geometry=ArrayGeometry.uniform_linear(6), grid=grid, bank=bank, n_times=n_times,
                          snapshots=snapshots, snr_db=snr_db, seed=3, trajectories=(source,))


def test_default_two_target_scenario():
    cfg = two_target_scenario()
    assert cfg.geometry.n_sensors == 11 and cfg.bank.size == 63 and cfg.grid.n == 101
    assert cfg.n_times == 5 and cfg.snapshots == 200 and cfg.snr_db == 10.0
    npt.assert_allclose(np.rad2deg(cfg.source_angles()),
                        [[-30, -20, -12, -10, -16], [30, 18, 6, 2, 8]], atol=1e-12)
    powers = cfg.source_powers()
    assert powers.shape == (2, 63)
    assert cfg.bank.omegas[np.argmax(powers[0])] == pytest.approx(1.2, abs=0.02)
    assert cfg.bank.omegas[np.argmax(powers[1])] == pytest.approx(1.8, abs=0.02)
    assert np.any((powers[0] > 0) & (powers[1] > 0))


def test_band_hump():
    omegas = np.array([0.5, 1.2, 1.55, 1.9, 2.5])
    npt.assert_allclose(band_hump(omegas, 1.2, 0.7), [0.0, 1.0, 0.5, 0.0, 0.0], atol=1e-15)


def test_scenario_rejects_mismatch():
    grid = AngularGrid.uniform(5)
    bank = FrequencyBank.uniform(2, 1.0, 2.0)
    with pytest.raises(ValueError):
        ScenarioConfig(geometry=ArrayGeometry.uniform_linear(2), grid=grid, bank=bank, n_times=3,
                       trajectories=(SourceTrajectory(np.zeros(2), np.ones(2)),))
    with pytest.raises(ValueError):
        SourceTrajectory(np.zeros(2), -np.ones(2))


def test_noise_power_rule():
    cfg = _static_scenario(snr_db=10.0, n_freqs=4)
    assert noise_power(cfg) == pytest.approx(4.0 / (4 * 10.0))
    assert noise_power(replace(cfg, snr_db=math.inf)) == 0.0
    assert noise_power(replace(cfg, trajectories=())) == 1.0
    assert noise_power(replace(cfg, noise_power=0.25)) == 0.25


def test_noise_only_covariance_is_identity():
    cfg = replace(_static_scenario(snr_db=10.0, snapshots=20000), trajectories=(),
                  geometry=ArrayGeometry.uniform_linear(2))
    data, truth = simulate_covariances(cfg)
    npt.assert_allclose(data.R[0, 0], np.eye(2), atol=5.0 / math.sqrt(20000))
    npt.assert_array_equal(truth.phi, 0.0)


def test_expected_covariance_of_static_source():
    cfg = _static_scenario()
    R = expected_covariances(cfg)
    a = steering_vector(cfg.geometry, cfg.bank.omegas[2], cfg.grid.points[18])
    npt.assert_allclose(R.R[2, 1], np.outer(a, a.conj()), atol=1e-14)


def test_simulation_is_deterministic_and_psd():
    cfg = _static_scenario(snr_db=5.0)
    first, truth = simulate_covariances(cfg)
    second, _ = simulate_covariances(cfg)
    npt.assert_array_equal(first.R, second.R)
    for f in range(cfg.bank.size):
        for t in range(cfg.n_times):
            assert np.linalg.eigvalsh(first.R[f, t]).min() >= -1e-10
    assert truth.phi[:, :, 18].sum() == pytest.approx(cfg.bank.size * cfg.n_times)


def test_snr_calibration():
    grid = AngularGrid.uniform(11)
    bank = FrequencyBank.uniform(4, 1.0, 2.0)
    source = SourceTrajectory([0.3], [1.0, 2.0, 0.5, 1.5])
    cfg = ScenarioConfig(geometry=ArrayGeometry.uniform_linear(3), grid=grid, bank=bank, n_times=1,
                         snr_db=7.0, trajectories=(source,))
    rng = np.random.default_rng(11)
    signal_power = noise_total = 0.0
    for f in range(bank.size):
        signal, noise = draw_snapshots(cfg, f, 0, rng, 100000)
        signal_power += np.mean(np.abs(signal) ** 2)
        noise_total += np.mean(np.abs(noise) ** 2)
    assert 10 * math.log10(signal_power / noise_total) == pytest.approx(7.0, abs=10 * math.log10(1.01))


def test_pick_peaks_single_spike():
    spatial = np.zeros(9)
    spatial[6] = 2.0
    grid = AngularGrid.uniform(9)
    npt.assert_array_equal(pick_peak_indices(spatial, 1), [6])
    npt.assert_allclose(pick_peaks(spatial, 1, grid), [grid.points[6]])


def test_pick_peaks_two_modes_strongest_first():
    x = np.arange(50)
    spatial = np.exp(-0.5 * ((x - 12) / 2.0) ** 2) + 2 * np.exp(-0.5 * ((x - 33) / 3.0) ** 2)
    npt.assert_array_equal(pick_peak_indices(spatial, 2), [33, 12])


def test_pick_peaks_flat_and_edges():
    npt.assert_array_equal(pick_peak_indices(np.ones(6), 2), [0, 1])
    npt.assert_array_equal(pick_peak_indices(np.array([3.0, 1.0, 2.0, 2.0, 0.5]), 2), [0, 2])
    with pytest.raises(ValueError):
        pick_peak_indices(np.ones(3), 0)


def test_match_errors_is_label_invariant():
    truth = np.array([0.1, -0.4])
    npt.assert_allclose(match_errors(np.array([-0.38, 0.12]), truth), [-0.38 + 0.4, 0.12 - 0.1])
    npt.assert_allclose(np.sort(np.abs(match_errors(np.array([0.12, -0.38]), truth))), [0.02, 0.02])


def test_rmse_noiseless_static_target():
    cfg = _static_scenario(n_times=2, snr_db=math.inf, angle_index=18)
    params = SolverParams(gamma=20.0, tol=1e-4, max_sweeps=500)
    table = rmse_study(cfg, [math.inf], n_trials=3, solver_params=params, eval_time=1)
    half = 0.5 * cfg.grid.spacing
    assert table.get(math.inf, "mvdr") <= half * 1.01
    assert table.get(math.inf, "gsot") <= cfg.grid.spacing
    assert table.get(math.inf, "ot") <= cfg.grid.spacing
    assert {row['method'] for row in table.to_dict()} == {"gsot", "ot", "mvdr"}


def test_rmse_is_deterministic():
    cfg = two_target_scenario(n_sensors=6, n_freqs=4, n_times=3, snapshots=40, n_grid=61, seed=5)
    first = rmse_study(cfg, [0.0, 20.0], n_trials=2, methods=("mvdr",), eval_time=2)
    second = rmse_study(cfg, [0.0, 20.0], n_trials=2, methods=("mvdr",), eval_time=2)
    assert first.to_dict() == second.to_dict()
    assert len(first.rows) == 2


def test_rmse_row_ignores_snr_order():
    cfg = two_target_scenario(n_sensors=6, n_freqs=4, n_times=3, snapshots=40, n_grid=61, seed=5)
    alone = rmse_study(cfg, [0.0], n_trials=3, methods=("mvdr",), eval_time=2)
    after = rmse_study(cfg, [20.0, 0.0], n_trials=3, methods=("mvdr",), eval_time=2)
    assert alone.get(0.0, "mvdr") == after.get(0.0, "mvdr")
    before = rmse_study(cfg, [0.0, 20.0], n_trials=3, methods=("mvdr",), eval_time=2)
    assert before.get(20.0, "mvdr") == after.get(20.0, "mvdr")


def test_mvdr_resolves_separated_targets_at_high_snr():
    cfg = two_target_scenario(n_sensors=11, n_freqs=8, n_times=5, snapshots=200, n_grid=101, seed=2)
    table = rmse_study(cfg, [30.0], n_trials=3, methods=("mvdr",), mvdr_params=MvdrParams(), eval_time=0)
    assert table.get(30.0, "mvdr") <= cfg.grid.spacing


def test_rmse_rejects_bad_arguments():
    cfg = _static_scenario()
    with pytest.raises(ValueError):
        rmse_study(cfg, [0.0], n_trials=0, eval_time=1)
    with pytest.raises(ValueError):
        rmse_study(cfg, [0.0], n_trials=1, eval_time=5)
    with pytest.raises(ValueError):
        rmse_study(cfg, [0.0], n_trials=1, methods=("music",), eval_time=1)
    with pytest.raises(KeyError):
        rmse_study(cfg, [0.0], n_trials=1, methods=("mvdr",), eval_time=1).get(0.0, "gsot")


@pytest.mark.slow
def test_rmse_study_favours_sparsity_at_low_snr():
    run = load_run_config(os.path.join(CONFIG_DIR, 'two_target.toml'))
    cfg = two_target_scenario(n_freqs=21)
    table = rmse_study(cfg, [0.0, 10.0, 20.0], n_trials=10, solver_params=run.solver, eval_time=3)
    assert table.get(0.0, "gsot") <= table.get(0.0, "mvdr")
    for method in ("gsot", "ot", "mvdr"):
        assert table.get(20.0, method) <= 2 * cfg.grid.spacing


@pytest.mark.slow
def test_two_target_tracking_localizes_both_sources():
    run = load_run_config(os.path.join(CONFIG_DIR, 'two_target.toml'))
    cfg = run.scenario
    data, _ = simulate_covariances(cfg)
    model = build_measurement_model(cfg.geometry, cfg.grid, cfg.bank)
    started = time.perf_counter()
    spectrum, report = solve(data, model, run.solver)
    assert time.perf_counter() - started <= 600.0
    assert report.converged

    assert report.max_psi_violation <= 1e-12
    assert report.max_newton_residual <= 1e-8
    masses = spectrum.phi.sum(axis=2)
    npt.assert_allclose(masses, masses[:, :1] * np.ones((1, cfg.n_times)), rtol=1e-8)

    spatial = spatial_average(spectrum)
    truth = cfg.source_angles()
    for t in range(cfg.n_times):
        errors = match_errors(pick_peaks(spatial[t], 2, cfg.grid), truth[:, t])
        assert np.all(np.abs(errors) <= 2 * cfg.grid.spacing + 1e-12)
