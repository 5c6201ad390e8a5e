import argparse
import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Dict, Any, List, Optional

from dotenv import load_dotenv

from services import (
    AngularGrid,
    ArrayGeometry,
    CovarianceSequence,
    FrequencyBank,
    GsotError,
    IngestConfig,
    build_measurement_model,
    load_geometry_sidecar,
    mvdr_sequence,
    read_wav,
    rmse_study,
    simulate_covariances,
    solve,
    spatial_average,
    stft_covariances,
    temporal_average,
)
from services.errors import ConfigError
from services.file_io import (
    CovarianceFile,
    read_covariance_file,
    write_covariance_file,
    write_covariance_json,
    write_json,
    write_rmse_csv,
    write_spatial_csv,
    write_spectrum_csv,
    write_spectrum_json,
    write_temporal_csv,
)
from services.scenario_sim import METHODS
from utils.config import FORMATS, RunConfig, load_run_config
from utils.logger import setup_logging

LOGGER = logging.getLogger("GSOT:CLI")


@dataclass
class LoadedData:
    data: CovarianceSequence
    grid: AngularGrid
    bank: FrequencyBank
    geometry: ArrayGeometry
    seed: Optional[int]


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write_run_config(cfg: RunConfig, command: str) -> None:
    write_json(_out_path(cfg, "run_config.json"), {'command': command, **cfg.to_dict()})


def _ingest(cfg: RunConfig) -> LoadedData:
    signals, rate = read_wav(cfg.wav_file)
    geometry = load_geometry_sidecar(cfg.geometry_file)
    if geometry.n_sensors != signals.shape[0]:
        raise ConfigError(f"{cfg.wav_file} has {signals.shape[0]} channels but the geometry lists "
                          f"{geometry.n_sensors} sensors")
    settings = dict(cfg.ingest)
    if 'band' in settings:
        settings['band'] = tuple(settings['band'])
    ingest_cfg = IngestConfig(sample_rate=rate, **settings)
    data, bank = stft_covariances(signals, ingest_cfg)
    return LoadedData(data=data, grid=cfg.grid, bank=bank, geometry=geometry, seed=cfg.seed)


def load_data(cfg: RunConfig) -> LoadedData:
    """Resolve the single configured data source into covariances plus model inputs."""
    if cfg.source == "simulate":
        data, _ = simulate_covariances(cfg.scenario)
        return LoadedData(data=data, grid=cfg.grid, bank=cfg.scenario.bank,
                          geometry=cfg.scenario.geometry, seed=cfg.seed)
    if cfg.source == "wav":
        return _ingest(cfg)

    if not os.path.exists(cfg.covariance_file):
        raise ConfigError(f"Covariance file not found: {cfg.covariance_file}")
    record = read_covariance_file(cfg.covariance_file)
    bank = record.bank if record.bank is not None else cfg.scenario.bank
    geometry = record.geometry if record.geometry is not None else cfg.scenario.geometry
    if bank.size != record.data.n_freqs:
        raise ConfigError(f"Covariance file holds {record.data.n_freqs} frequencies, bank has {bank.size}")
    if geometry.n_sensors != record.data.n_sensors:
        raise ConfigError(f"Covariance file holds {record.data.n_sensors} sensors, geometry has "
                          f"{geometry.n_sensors}")
    grid = record.grid if record.grid is not None else cfg.grid
    LOGGER.info("Loaded %s: F=%d T=%d Q=%d", cfg.covariance_file, record.data.n_freqs,
                record.data.n_times, record.data.n_sensors)
    return LoadedData(data=record.data, grid=grid, bank=bank, geometry=geometry,
                      seed=record.seed if record.seed is not None else cfg.seed)


def _write_spectrum(cfg: RunConfig, spectrum, seed: Optional[int], **extra: Any) -> List[str]:
    spatial = spatial_average(spectrum)
    temporal = temporal_average(spectrum)
    if cfg.format == "json":
        path = _out_path(cfg, "spectrum.json")
        write_spectrum_json(path, spectrum, seed, spatial=spatial.tolist(), temporal=temporal.tolist(), **extra)
        return [path]
    paths = [_out_path(cfg, name) for name in ("spectrum.csv", "spatial.csv", "temporal.csv")]
    write_spectrum_csv(paths[0], spectrum, seed, **extra)
    write_spatial_csv(paths[1], spatial, spectrum.grid, seed, **extra)
    write_temporal_csv(paths[2], temporal, spectrum.bank, seed, **extra)
    return paths


def cmd_simulate(cfg: RunConfig) -> List[str]:
    """Simulate the configured scenario; write covariances and the ground truth."""
    scenario = cfg.scenario
    data, truth = simulate_covariances(scenario)
    record = CovarianceFile(data=data, grid=scenario.grid, bank=scenario.bank, geometry=scenario.geometry,
                            seed=cfg.seed, metadata={'snr_db': scenario.snr_db, 'snapshots': scenario.snapshots})
    if cfg.format == "json":
        paths = [_out_path(cfg, "covariance.json"), _out_path(cfg, "truth.json")]
        write_covariance_json(paths[0], record)
        write_spectrum_json(paths[1], truth, cfg.seed, kind="truth")
    else:
        paths = [_out_path(cfg, "covariance.bin"), _out_path(cfg, "truth.csv")]
        write_covariance_file(paths[0], record)
        write_spectrum_csv(paths[1], truth, cfg.seed, kind="truth")
    _write_run_config(cfg, "simulate")
    return paths


def cmd_estimate(cfg: RunConfig) -> List[str]:
    """Run the configured estimator (gsot by default) and write spectra plus a report."""
    if cfg.method == "mvdr":
        return cmd_mvdr(cfg)
    loaded = load_data(cfg)
    model = build_measurement_model(loaded.geometry, loaded.grid, loaded.bank)
    params = cfg.solver if cfg.method == "gsot" else replace(cfg.solver, sparsity=False)
    spectrum, report = solve(loaded.data, model, params)
    paths = _write_spectrum(cfg, spectrum, loaded.seed, method=cfg.method)
    report_path = _out_path(cfg, "report.json")
    write_json(report_path, {'method': cfg.method, 'seed': loaded.seed, **report.to_dict()})
    _write_run_config(cfg, "estimate")
    return paths + [report_path]


def cmd_mvdr(cfg: RunConfig) -> List[str]:
    """Per-frequency MVDR baseline spectra."""
    loaded = load_data(cfg)
    model = build_measurement_model(loaded.geometry, loaded.grid, loaded.bank)
    spectrum = mvdr_sequence(loaded.data, model, cfg.mvdr)
    paths = _write_spectrum(cfg, spectrum, loaded.seed, method="mvdr")
    _write_run_config(cfg, "mvdr")
    return paths


def cmd_rmse(cfg: RunConfig) -> List[str]:
    """Monte Carlo RMSE table over the configured SNRs and methods."""
    settings = cfg.rmse
    table = rmse_study(cfg.scenario, settings.snr_db, settings.trials, methods=settings.methods,
                       solver_params=cfg.solver, mvdr_params=cfg.mvdr, eval_time=settings.eval_time)
    if cfg.format == "json":
        path = _out_path(cfg, "rmse.json")
        write_json(path, {'seed': cfg.seed, 'rows': table.to_dict()})
    else:
        path = _out_path(cfg, "rmse.csv")
        write_rmse_csv(path, table.to_dict(), cfg.seed, eval_time=settings.eval_time)
    _write_run_config(cfg, "rmse")
    return [path]


def cmd_ingest(cfg: RunConfig) -> List[str]:
    """Turn a multichannel WAV recording into a covariance file."""
    if cfg.source != "wav":
        raise ConfigError("ingest needs data.source = 'wav' with wav_file and geometry_file")
    loaded = _ingest(cfg)
    record = CovarianceFile(data=loaded.data, grid=loaded.grid, bank=loaded.bank, geometry=loaded.geometry,
                            seed=cfg.seed, metadata={'wav_file': os.path.basename(cfg.wav_file)})
    if cfg.format == "json":
        path = _out_path(cfg, "covariance.json")
        write_covariance_json(path, record)
    else:
        path = _out_path(cfg, "covariance.bin")
        write_covariance_file(path, record)
    _write_run_config(cfg, "ingest")
    return [path]


COMMANDS = {
    'simulate': cmd_simulate,
    'estimate': cmd_estimate,
    'mvdr': cmd_mvdr,
    'rmse': cmd_rmse,
    'ingest': cmd_ingest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsot",
        description="Group-sparse optimal transport tracking of broad-band spatio-temporal spectra",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="Seed for every random draw")
    parser.add_argument("--out", metavar="DIR", help="Output directory")
    parser.add_argument("--format", choices=FORMATS, help="Output format")
    parser.add_argument("--snr", type=float, metavar="DB", help="SNR in dB (overrides the scenario and RMSE list)")
    parser.add_argument("--trials", type=int, metavar="N", help="Monte Carlo trials per SNR")
    parser.add_argument("--method", choices=METHODS, help="Estimator used by 'estimate'")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
    except ValueError as e:
        print(f"gsot: {e}", file=sys.stderr)
        return 1

    overrides: Dict[str, Any] = {
        'seed': args.seed,
        'out_dir': args.out,
        'format': args.format,
        'snr_db': args.snr,
        'trials': args.trials,
        'method': args.method,
    }
    try:
        cfg = load_run_config(args.config, overrides)
        paths = COMMANDS[args.command](cfg)
    except (GsotError, ValueError, OSError) as e:
        LOGGER.error("%s failed: %s", args.command, e)
        return 1

    for path in paths:
        LOGGER.info("Wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
