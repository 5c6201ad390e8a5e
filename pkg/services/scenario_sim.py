from dataclasses import dataclass, field, replace
from typing import Dict, Any, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import find_peaks

from .baselines import MvdrParams, mvdr_sequence
from .core_types import (
    AngularGrid,
    CovarianceSequence,
    FrequencyBank,
    SolverParams,
    SpatioTemporalSpectrum,
    spatial_average,
)
from .forward_model import ArrayGeometry, build_measurement_model, steering_vector
from .gsot_solver import solve

LOGGER = logging.getLogger("GSOT:SIM")

METHODS = ("gsot", "ot", "mvdr")


@dataclass(frozen=True)
class SourceTrajectory:
    """
    Args:
        angles: Angle per time instance (radians)
        spectrum: Power per frequency of the bank
    """
    angles: np.ndarray
    spectrum: np.ndarray

    def __post_init__(self):
        angles = np.array(self.angles, dtype=float).reshape(-1)
        spectrum = np.array(self.spectrum, dtype=float).reshape(-1)
        if np.any(spectrum < 0):
            raise ValueError("Source powers must be non-negative")
        if np.any(np.abs(angles) > math.pi / 2):
            raise ValueError("Source angles must lie within [-pi/2, pi/2]")
        object.__setattr__(self, 'angles', angles)
        object.__setattr__(self, 'spectrum', spectrum)


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Simulated array scenario.

    snr_db = inf gives noiseless snapshots. noise_power overrides the SNR rule.
    """
    geometry: ArrayGeometry
    grid: AngularGrid
    bank: FrequencyBank
    n_times: int
    snapshots: int = 200
    snr_db: float = 10.0
    seed: int = 0
    trajectories: Tuple[SourceTrajectory, ...] = ()
    noise_power: Optional[float] = None

    def __post_init__(self):
        if self.n_times < 1:
            raise ValueError("n_times must be at least 1")
        if self.snapshots < 1:
            raise ValueError("snapshots must be at least 1")
        object.__setattr__(self, 'trajectories', tuple(self.trajectories))
        for k, source in enumerate(self.trajectories):
            if source.angles.size != self.n_times:
                raise ValueError(f"Source {k} has {source.angles.size} angles, expected {self.n_times}")
            if source.spectrum.size != self.bank.size:
                raise ValueError(f"Source {k} has {source.spectrum.size} powers, expected {self.bank.size}")

    @property
    def n_sources(self) -> int:
        return len(self.trajectories)

    def source_powers(self) -> np.ndarray:
        """Powers with shape (K, F)."""
        if not self.trajectories:
            return np.zeros((0, self.bank.size))
        return np.stack([s.spectrum for s in self.trajectories])

    def source_angles(self) -> np.ndarray:
        """Angles with shape (K, T)."""
        if not self.trajectories:
            return np.zeros((0, self.n_times))
        return np.stack([s.angles for s in self.trajectories])


def band_hump(omegas: np.ndarray, center: float, half_width: float, power: float = 1.0) -> np.ndarray:
    """Raised-cosine hump supported on [center - half_width, center + half_width]."""
    offset = (np.asarray(omegas, dtype=float) - center) / half_width
    return np.where(np.abs(offset) < 1.0, power * np.cos(0.5 * math.pi * offset) ** 2, 0.0)


def two_target_scenario(
    n_sensors: int = 11,
    n_freqs: int = 63,
    band: Tuple[float, float] = (0.5, 2.5),
    n_times: int = 5,
    snapshots: int = 200,
    snr_db: float = 10.0,
    n_grid: int = 101,
    seed: int = 0,
) -> ScenarioConfig:
    """
    Two broad-band targets approaching each other and separating again.

    Defaults: unit-spaced ULA with c = 1, frequencies in rad/sample, grid on
    [-90, 90] degrees. With n_times = 5 the targets sit at
    [-30, -20, -12, -10, -16] and [30, 18, 6, 2, 8] degrees; other lengths
    interpolate the same paths. Temporal spectra are overlapping raised-cosine
    humps centred at 1.2 and 1.8 with half-width 0.7.
    """
    geometry = ArrayGeometry.uniform_linear(n_sensors)
    grid = AngularGrid.uniform(n_grid)
    bank = FrequencyBank.uniform(n_freqs, band[0], band[1])
    path = np.linspace(0.0, 1.0, n_times)
    knots = np.linspace(0.0, 1.0, 5)
    first = np.deg2rad(np.interp(path, knots, [-30.0, -20.0, -12.0, -10.0, -16.0]))
    second = np.deg2rad(np.interp(path, knots, [30.0, 18.0, 6.0, 2.0, 8.0]))
    low, high = band
    width = high - low
    sources = (
        SourceTrajectory(first, band_hump(bank.omegas, low + 0.35 * width, 0.35 * width)),
        SourceTrajectory(second, band_hump(bank.omegas, low + 0.65 * width, 0.35 * width)),
    )
    return ScenarioConfig(geometry=geometry, grid=grid, bank=bank, n_times=n_times, snapshots=snapshots,
                          snr_db=snr_db, seed=seed, trajectories=sources)


def noise_power(cfg: ScenarioConfig) -> float:
    """
    Noise power per sensor and band.

    SNR is the total source power per sensor summed over the band divided by
    the noise power per sensor summed over the band.
    """
    if cfg.noise_power is not None:
        return float(cfg.noise_power)
    if math.isinf(cfg.snr_db) and cfg.snr_db > 0:
        return 0.0
    total = float(cfg.source_powers().sum())
    if total == 0:
        return 1.0
    return total / (cfg.bank.size * 10.0 ** (cfg.snr_db / 10.0))


def _source_steering(cfg: ScenarioConfig, f: int, t: int) -> np.ndarray:
    omega = cfg.bank.omegas[f]
    columns = [steering_vector(cfg.geometry, omega, s.angles[t]) for s in cfg.trajectories]
    if not columns:
        return np.zeros((cfg.geometry.n_sensors, 0), dtype=complex)
    return np.stack(columns, axis=1)


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_snapshots(cfg: ScenarioConfig, f: int, t: int, rng: np.random.Generator,
                   n: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw n array snapshots at (f, t).

    Returns:
        Tuple (signal, noise), each of shape (Q, n)
    """
    n = cfg.snapshots if n is None else n
    A = _source_steering(cfg, f, t)
    amplitudes = np.sqrt(cfg.source_powers()[:, f])
    x = _complex_normal(rng, (cfg.n_sources, n))
    signal = A @ (amplitudes[:, None] * x)
    noise = math.sqrt(noise_power(cfg)) * _complex_normal(rng, (cfg.geometry.n_sensors, n))
    return signal, noise


def ground_truth(cfg: ScenarioConfig) -> SpatioTemporalSpectrum:
    """Source powers placed at the grid point nearest to each source angle."""
    phi = np.zeros((cfg.bank.size, cfg.n_times, cfg.grid.n))
    powers = cfg.source_powers()
    for k, source in enumerate(cfg.trajectories):
        for t in range(cfg.n_times):
            phi[:, t, cfg.grid.nearest_index(source.angles[t])] += powers[k]
    return SpatioTemporalSpectrum(phi=phi, grid=cfg.grid, bank=cfg.bank)


def simulate_covariances(cfg: ScenarioConfig,
                         rng: Optional[np.random.Generator] = None) -> Tuple[CovarianceSequence, SpatioTemporalSpectrum]:
    """
    Sample covariance matrices from simulated snapshots.

    Args:
        cfg: Scenario configuration
        rng: Random generator; defaults to one seeded with cfg.seed

    Returns:
        Tuple of the covariance sequence and the ground-truth spectrum
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    Q = cfg.geometry.n_sensors
    R = np.empty((cfg.bank.size, cfg.n_times, Q, Q), dtype=complex)
    for t in range(cfg.n_times):
        for f in range(cfg.bank.size):
            signal, noise = draw_snapshots(cfg, f, t, rng)
            y = signal + noise
            R[f, t] = y @ y.conj().T / cfg.snapshots
    LOGGER.info("Simulated %d sources, F=%d T=%d Q=%d, %d snapshots, SNR %.1f dB",
                cfg.n_sources, cfg.bank.size, cfg.n_times, Q, cfg.snapshots, cfg.snr_db)
    return CovarianceSequence(R), ground_truth(cfg)


def expected_covariances(cfg: ScenarioConfig) -> CovarianceSequence:
    """Exact covariances sum_k s_{k,f} a a^H + sigma^2 I."""
    Q = cfg.geometry.n_sensors
    sigma2 = noise_power(cfg)
    powers = cfg.source_powers()
    R = np.empty((cfg.bank.size, cfg.n_times, Q, Q), dtype=complex)
    for t in range(cfg.n_times):
        for f in range(cfg.bank.size):
            A = _source_steering(cfg, f, t)
            R[f, t] = (A * powers[:, f]) @ A.conj().T + sigma2 * np.eye(Q)
    return CovarianceSequence(R)


def pick_peak_indices(spatial: np.ndarray, k: int) -> np.ndarray:
    """
    Indices of the k largest local maxima of a spatial spectrum.

    Flat tops count once at their leftmost index and the ends of the grid can
    be maxima. If fewer than k maxima exist the list is padded with the
    largest remaining entries; ties resolve to the lower index.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    spatial = np.asarray(spatial, dtype=float).reshape(-1)
    padded = np.concatenate([[-np.inf], spatial, [-np.inf]])
    peaks, props = find_peaks(padded, plateau_size=1)
    candidates = props['left_edges'] - 1
    ranked = candidates[np.argsort(-spatial[candidates], kind='stable')]
    chosen = list(ranked[:k])
    if len(chosen) < k:
        for idx in np.argsort(-spatial, kind='stable'):
            if idx not in chosen:
                chosen.append(int(idx))
            if len(chosen) == k:
                break
    return np.asarray(chosen[:k], dtype=int)


def pick_peaks(spatial: np.ndarray, k: int, grid: AngularGrid) -> np.ndarray:
    """Angles (radians) of the k largest peaks, strongest first."""
    return grid.points[pick_peak_indices(spatial, k)]


def match_errors(estimates: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Angle errors after the assignment minimizing total absolute error."""
    cost = np.abs(np.asarray(estimates)[:, None] - np.asarray(truth)[None, :])
    rows, cols = linear_sum_assignment(cost)
    return np.asarray(estimates)[rows] - np.asarray(truth)[cols]


@dataclass(frozen=True)
class RmseRow:
    snr_db: float
    method: str
    rmse_rad: float
    trials: int


@dataclass
class RmseTable:
    rows: List[RmseRow] = field(default_factory=list)

    def get(self, snr_db: float, method: str) -> float:
        for row in self.rows:
            if row.method == method and row.snr_db == snr_db:
                return row.rmse_rad
        raise KeyError((snr_db, method))

    def to_dict(self) -> List[Dict[str, Any]]:
        return [{'snr_db': r.snr_db, 'method': r.method, 'rmse_rad': r.rmse_rad,
                 'rmse_deg': math.degrees(r.rmse_rad), 'trials': r.trials} for r in self.rows]


def _perturbed(cfg: ScenarioConfig, rng: np.random.Generator) -> ScenarioConfig:
    half = 0.5 * cfg.grid.spacing
    lo, hi = cfg.grid.points[0], cfg.grid.points[-1]
    sources = []
    for source in cfg.trajectories:
        shift = rng.uniform(-half, half, size=source.angles.size)
        sources.append(replace(source, angles=np.clip(source.angles + shift, lo, hi)))
    return replace(cfg, trajectories=tuple(sources))


def estimate_spectrum(method: str, data: CovarianceSequence, model, solver_params: SolverParams,
                      mvdr_params: MvdrParams) -> SpatioTemporalSpectrum:
    """Run one of the estimators listed in METHODS."""
    if method == "gsot":
        spectrum, _ = solve(data, model, solver_params)
    elif method == "ot":
        spectrum, _ = solve(data, model, replace(solver_params, sparsity=False))
    elif method == "mvdr":
        spectrum = mvdr_sequence(data, model, mvdr_params)
    else:
        raise ValueError(f"Unknown method {method!r}; expected one of {METHODS}")
    return spectrum


def rmse_study(
    cfg: ScenarioConfig,
    snr_list: Sequence[float],
    n_trials: int,
    methods: Sequence[str] = METHODS,
    solver_params: Optional[SolverParams] = None,
    mvdr_params: Optional[MvdrParams] = None,
    eval_time: int = 3,
) -> RmseTable:
    """
    Monte Carlo angle RMSE per (SNR, method).

    Each trial perturbs the true angles uniformly within half a grid cell,
    simulates covariances, picks as many peaks as there are sources from the
    frequency-averaged spectrum at eval_time, and matches them to the truth.
    Trial t draws from the stream seeded by (cfg.seed, t) at every SNR, so a
    row depends only on its own SNR value and not on its position in snr_list.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if not 0 <= eval_time < cfg.n_times:
        raise ValueError(f"eval_time {eval_time} outside [0, {cfg.n_times})")
    if cfg.n_sources < 1:
        raise ValueError("RMSE study needs at least one source")
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"Unknown method {method!r}; expected one of {METHODS}")
    solver_params = SolverParams() if solver_params is None else solver_params
    mvdr_params = MvdrParams() if mvdr_params is None else mvdr_params
    model = build_measurement_model(cfg.geometry, cfg.grid, cfg.bank)

    table = RmseTable()
    for snr in snr_list:
        squared = {method: [] for method in methods}
        for trial in range(n_trials):
            rng = np.random.default_rng([cfg.seed, trial])
            trial_cfg = replace(_perturbed(cfg, rng), snr_db=float(snr))
            data, _ = simulate_covariances(trial_cfg, rng)
            truth = trial_cfg.source_angles()[:, eval_time]
            for method in methods:
                spectrum = estimate_spectrum(method, data, model, solver_params, mvdr_params)
                spatial = spatial_average(spectrum)[eval_time]
                estimates = pick_peaks(spatial, cfg.n_sources, cfg.grid)
                squared[method].extend(match_errors(estimates, truth) ** 2)
            LOGGER.debug("SNR %.1f dB trial %d done", snr, trial)
        for method in methods:
            rmse = float(np.sqrt(np.mean(squared[method])))
            table.rows.append(RmseRow(snr_db=float(snr), method=method, rmse_rad=rmse, trials=n_trials))
            LOGGER.info("SNR %.1f dB %s: RMSE %.3f deg", snr, method, math.degrees(rmse))
    return table
