"""
Run configuration: TOML file values, overridden by CLI flags, on top of
environment defaults (GSOT_OUT_DIR, GSOT_SEED) and built-in defaults.
"""
from dataclasses import dataclass, field, replace, asdict
from typing import Dict, Any, Optional, Tuple
import math
import os

import numpy as np

from services.baselines import MvdrParams
from services.core_types import AngularGrid, FrequencyBank, NewtonParams, SolverParams
from services.errors import ConfigError, DataFormatError
from services.file_io import read_toml
from services.forward_model import ArrayGeometry
from services.scenario_sim import METHODS, ScenarioConfig, SourceTrajectory, band_hump, two_target_scenario

SOURCES = ("simulate", "covariance", "wav")
FORMATS = ("csv", "json")

SECTION_KEYS = {
    '': {'seed', 'output', 'data', 'grid', 'scenario', 'solver', 'mvdr', 'rmse', 'ingest', 'estimate'},
    'output': {'dir', 'format'},
    'data': {'source', 'covariance_file', 'wav_file', 'geometry_file'},
    'grid': {'n', 'lo_deg', 'hi_deg'},
    'scenario': {'sensors', 'spacing', 'speed', 'freqs', 'band', 'times', 'snapshots', 'snr_db', 'sources'},
    'solver': {'epsilon', 'gamma', 'eta', 'max_sweeps', 'tol', 'sparsity', 'cost_scale',
               'on_newton_failure', 'on_nonconvergence', 'balance_mass', 'newton'},
    'newton': {'max_iter', 'damping', 'tol', 'max_backtracks'},
    'mvdr': {'diagonal_loading'},
    'rmse': {'snr_db', 'trials', 'eval_time', 'methods'},
    'ingest': {'window_length', 'overlap', 'window', 'band', 'n_bins', 'rho', 'decimation'},
    'estimate': {'method'},
    'source': {'angles_deg', 'center', 'half_width', 'power'},
}


@dataclass(frozen=True)
class RmseSettings:
    snr_db: Tuple[float, ...] = (0.0, 10.0, 20.0)
    trials: int = 10
    eval_time: int = 3
    methods: Tuple[str, ...] = METHODS


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI command needs, with every default resolved."""
    seed: int
    source: str
    scenario: ScenarioConfig
    solver: SolverParams
    mvdr: MvdrParams = field(default_factory=MvdrParams)
    rmse: RmseSettings = field(default_factory=RmseSettings)
    ingest: Dict[str, Any] = field(default_factory=dict)
    method: str = "gsot"
    out_dir: str = "out"
    format: str = "csv"
    covariance_file: Optional[str] = None
    wav_file: Optional[str] = None
    geometry_file: Optional[str] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.source!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"output.format must be one of {FORMATS}, got {self.format!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        given = {'covariance': self.covariance_file, 'wav': self.wav_file}
        if self.source in given and not given[self.source]:
            raise ConfigError(f"data.source = {self.source!r} needs data.{self.source}_file")
        extra = [name for name, value in given.items() if value and name != self.source]
        if extra:
            raise ConfigError(f"Exactly one data source is allowed; {self.source!r} selected but "
                              f"{', '.join(extra)} file also given")
        if self.source == "wav" and not self.geometry_file:
            raise ConfigError("data.source = 'wav' needs data.geometry_file")

    @property
    def grid(self) -> AngularGrid:
        return self.scenario.grid

    def to_dict(self) -> Dict[str, Any]:
        cfg = self.scenario
        return {
            'seed': self.seed,
            'data': {
                'source': self.source,
                'covariance_file': self.covariance_file,
                'wav_file': self.wav_file,
                'geometry_file': self.geometry_file,
            },
            'output': {'dir': self.out_dir, 'format': self.format},
            'grid': {'n': cfg.grid.n, 'lo_deg': float(cfg.grid.degrees[0]), 'hi_deg': float(cfg.grid.degrees[-1])},
            'scenario': {
                'sensors': cfg.geometry.n_sensors,
                'positions': cfg.geometry.positions.tolist(),
                'speed': cfg.geometry.propagation_speed,
                'omegas': cfg.bank.omegas.tolist(),
                'times': cfg.n_times,
                'snapshots': cfg.snapshots,
                'snr_db': cfg.snr_db,
                'sources': [{'angles_deg': np.rad2deg(s.angles).tolist(), 'spectrum': s.spectrum.tolist()}
                            for s in cfg.trajectories],
            },
            'solver': {**self.solver.to_dict(), 'epsilon_resolved': self.solver.resolve_epsilon(cfg.grid)},
            'mvdr': asdict(self.mvdr),
            'rmse': asdict(self.rmse),
            'ingest': dict(self.ingest),
            'estimate': {'method': self.method},
        }


def _check_keys(section: str, values: Dict[str, Any]) -> None:
    unknown = set(values) - SECTION_KEYS[section]
    if unknown:
        where = section or 'top level'
        raise ConfigError(f"Unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _section(raw: Dict[str, Any], name: str) -> Dict[str, Any]:
    values = raw.get(name, {})
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    _check_keys(name, values)
    return values


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"Environment variable {name} must be an integer, got {value!r}") from e


def _scenario(raw: Dict[str, Any], seed: int) -> ScenarioConfig:
    grid_cfg = _section(raw, 'grid')
    sc = _section(raw, 'scenario')
    n_grid = int(grid_cfg.get('n', 101))
    lo = math.radians(float(grid_cfg.get('lo_deg', -90.0)))
    hi = math.radians(float(grid_cfg.get('hi_deg', 90.0)))
    band = tuple(float(b) for b in sc.get('band', (0.5, 2.5)))
    if len(band) != 2:
        raise ConfigError("scenario.band must hold two values")

    base = two_target_scenario(
        n_sensors=int(sc.get('sensors', 11)),
        n_freqs=int(sc.get('freqs', 63)),
        band=band,
        n_times=int(sc.get('times', 5)),
        snapshots=int(sc.get('snapshots', 200)),
        snr_db=float(sc.get('snr_db', 10.0)),
        n_grid=n_grid,
        seed=seed,
    )
    geometry = ArrayGeometry.uniform_linear(base.geometry.n_sensors, float(sc.get('spacing', 1.0)),
                                            float(sc.get('speed', 1.0)))
    grid = AngularGrid.uniform(n_grid, lo, hi)
    trajectories = base.trajectories
    if 'sources' in sc:
        trajectories = tuple(_source(entry, base.bank) for entry in sc['sources'])
    return replace(base, geometry=geometry, grid=grid, trajectories=trajectories)


def _source(entry: Dict[str, Any], bank: FrequencyBank) -> SourceTrajectory:
    _check_keys('source', entry)
    try:
        angles = np.deg2rad(np.asarray(entry['angles_deg'], dtype=float))
        spectrum = band_hump(bank.omegas, float(entry['center']), float(entry['half_width']),
                             float(entry.get('power', 1.0)))
    except KeyError as e:
        raise ConfigError(f"scenario.sources entry lacks {e}") from e
    return SourceTrajectory(angles, spectrum)


def _solver(raw: Dict[str, Any]) -> SolverParams:
    values = dict(_section(raw, 'solver'))
    newton = values.pop('newton', {})
    _check_keys('newton', newton)
    return SolverParams(newton=NewtonParams(**newton), **values)


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from a TOML file and CLI overrides.

    Args:
        path: TOML file, or None for built-in defaults
        overrides: Non-None values for seed, out_dir, format, snr_db, trials, method

    Returns:
        Fully resolved RunConfig

    Raises:
        ConfigError: on unreadable files, unknown keys or invalid values
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    raw: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = read_toml(path)
        except DataFormatError as e:
            raise ConfigError(str(e)) from e
    _check_keys('', raw)

    env_seed = _env_int("GSOT_SEED")
    seed = overrides.get('seed', raw.get('seed', env_seed if env_seed is not None else 0))
    output = _section(raw, 'output')
    data = _section(raw, 'data')
    rmse = _section(raw, 'rmse')

    try:
        scenario = _scenario(raw, int(seed))
        if 'snr_db' in overrides:
            scenario = replace(scenario, snr_db=float(overrides['snr_db']))
        rmse_settings = RmseSettings(
            snr_db=tuple(float(s) for s in rmse.get('snr_db', RmseSettings.snr_db)),
            trials=int(rmse.get('trials', RmseSettings.trials)),
            eval_time=int(rmse.get('eval_time', RmseSettings.eval_time)),
            methods=tuple(rmse.get('methods', RmseSettings.methods)),
        )
        if 'snr_db' in overrides:
            rmse_settings = replace(rmse_settings, snr_db=(float(overrides['snr_db']),))
        if 'trials' in overrides:
            rmse_settings = replace(rmse_settings, trials=int(overrides['trials']))
        return RunConfig(
            seed=int(seed),
            source=data.get('source', 'simulate'),
            scenario=scenario,
            solver=_solver(raw),
            mvdr=MvdrParams(**_section(raw, 'mvdr')),
            rmse=rmse_settings,
            ingest=dict(_section(raw, 'ingest')),
            method=overrides.get('method', _section(raw, 'estimate').get('method', 'gsot')),
            out_dir=overrides.get('out_dir', output.get('dir', os.getenv("GSOT_OUT_DIR") or "out")),
            format=overrides.get('format', output.get('format', 'csv')),
            covariance_file=data.get('covariance_file') or None,
            wav_file=data.get('wav_file') or None,
            geometry_file=data.get('geometry_file') or None,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {str(e)}") from e
