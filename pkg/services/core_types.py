from dataclasses import dataclass, field, asdict
from typing import Dict, Any, Optional, Sequence
import math

import numpy as np

HERMITIAN_RTOL = 1e-8


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class AngularGrid:
    """
    Ordered direction-of-arrival grid.

    Args:
        points: Strictly increasing angles in radians, all within [-pi/2, pi/2]
    """
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1)
        if points.size < 1:
            raise ValueError("AngularGrid needs at least one point")
        if not np.all(np.isfinite(points)):
            raise ValueError("AngularGrid points must be finite")
        if points.size > 1 and np.any(np.diff(points) <= 0):
            raise ValueError("AngularGrid points must be strictly increasing")
        if points[0] < -math.pi / 2 - 1e-12 or points[-1] > math.pi / 2 + 1e-12:
            raise ValueError("AngularGrid points must lie within [-pi/2, pi/2]")
        object.__setattr__(self, 'points', _frozen(points))

    @classmethod
    def uniform(cls, n: int, lo: float = -math.pi / 2, hi: float = math.pi / 2) -> "AngularGrid":
        """Uniform grid of n points on [lo, hi] (radians), end points included."""
        if n < 1:
            raise ValueError(f"Grid size must be positive, got {n}")
        if n == 1:
            return cls(np.array([0.5 * (lo + hi)]))
        return cls(np.linspace(lo, hi, n))

    @classmethod
    def from_degrees(cls, degrees: Sequence[float]) -> "AngularGrid":
        return cls(np.deg2rad(np.asarray(degrees, dtype=float)))

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def spacing(self) -> float:
        """Mean distance between neighbouring points (0 for a single point)."""
        if self.n < 2:
            return 0.0
        return self.span / (self.n - 1)

    @property
    def degrees(self) -> np.ndarray:
        return np.rad2deg(self.points)

    def nearest_index(self, theta: float) -> int:
        return int(np.argmin(np.abs(self.points - theta)))


@dataclass(frozen=True)
class FrequencyBank:
    """
    Filter-bank center frequencies.

    Args:
        omegas: Strictly increasing positive angular frequencies
        unit: Declared unit of the frequencies ("rad/sample" or "rad/s")
    """
    omegas: np.ndarray
    unit: str = "rad/sample"

    def __post_init__(self):
        omegas = np.array(self.omegas, dtype=float).reshape(-1)
        if omegas.size < 1:
            raise ValueError("FrequencyBank needs at least one frequency")
        if np.any(omegas <= 0) or not np.all(np.isfinite(omegas)):
            raise ValueError("FrequencyBank frequencies must be positive and finite")
        if omegas.size > 1 and np.any(np.diff(omegas) <= 0):
            raise ValueError("FrequencyBank frequencies must be strictly increasing")
        object.__setattr__(self, 'omegas', _frozen(omegas))

    @classmethod
    def uniform(cls, count: int, lo: float, hi: float, unit: str = "rad/sample") -> "FrequencyBank":
        if count < 1:
            raise ValueError(f"Frequency count must be positive, got {count}")
        if count == 1:
            return cls(np.array([0.5 * (lo + hi)]), unit=unit)
        return cls(np.linspace(lo, hi, count), unit=unit)

    @property
    def size(self) -> int:
        return self.omegas.size


@dataclass(frozen=True)
class NewtonParams:
    """Inner root-find settings for the lambda block."""
    max_iter: int = 50
    damping: float = 0.5
    tol: float = 1e-10
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("newton.max_iter must be at least 1")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("newton.damping must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("newton.tol must be positive")


@dataclass(frozen=True)
class SolverParams:
    """
    Weights and stopping rules of the group-sparse tracker.

    Args:
        epsilon: Entropic regularization weight; None means 0.01 * (grid span)^2
        gamma: Data-fit weight
        eta: Group-sparsity budget of the dual variables psi
        max_sweeps: Cap on full forward/backward sweeps
        tol: Stopping tolerance on the relative change of the marginals
        newton: Settings of the inner Newton solver
        sparsity: False disables the psi block entirely (plain OT tracker)
        cost_scale: Multiplier applied to the squared-angle transport cost
        on_newton_failure: "warn" or "raise"
        on_nonconvergence: "warn" or "raise"
        record_trace: Keep the dual objective after every block update
        balance_mass: Follow every sweep with the exact update that shifts mass
            between the time steps of each frequency
    """
    epsilon: Optional[float] = None
    gamma: float = 1.0
    eta: float = 0.5
    max_sweeps: int = 2000
    tol: float = 1e-6
    newton: NewtonParams = field(default_factory=NewtonParams)
    sparsity: bool = True
    cost_scale: float = 1.0
    on_newton_failure: str = "warn"
    on_nonconvergence: str = "warn"
    record_trace: bool = False
    balance_mass: bool = True

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if not self.cost_scale > 0:
            raise ValueError("cost_scale must be positive")
        for name in ('on_newton_failure', 'on_nonconvergence'):
            if getattr(self, name) not in ("warn", "raise"):
                raise ValueError(f"{name} must be 'warn' or 'raise'")

    def resolve_epsilon(self, grid: AngularGrid) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        span = grid.span if grid.n > 1 else 1.0
        return 0.01 * span ** 2

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CovarianceSequence:
    """
    Spatial covariance matrices R_f^(t), stored with shape (F, T, Q, Q).

    Matrices are checked to be Hermitian within a relative Frobenius tolerance
    and then symmetrized.
    """
    R: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=complex)
        if R.ndim != 4 or R.shape[2] != R.shape[3]:
            raise ValueError(f"Covariances must have shape (F, T, Q, Q), got {R.shape}")
        if min(R.shape) < 1:
            raise ValueError(f"Empty covariance sequence: shape {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("Covariances contain non-finite entries")
        RH = np.conj(np.swapaxes(R, -1, -2))
        skew = np.linalg.norm(R - RH, axis=(-2, -1))
        scale = np.linalg.norm(R, axis=(-2, -1))
        bad = skew > HERMITIAN_RTOL * scale
        if np.any(bad):
            f, t = np.argwhere(bad)[0]
            raise ValueError(f"Covariance at (f={f}, t={t}) is not Hermitian")
        object.__setattr__(self, 'R', _frozen(0.5 * (R + RH)))

    @property
    def n_freqs(self) -> int:
        return self.R.shape[0]

    @property
    def n_times(self) -> int:
        return self.R.shape[1]

    @property
    def n_sensors(self) -> int:
        return self.R.shape[2]

    # short aliases matching the usual notation
    @property
    def F(self) -> int:
        return self.n_freqs

    @property
    def T(self) -> int:
        return self.n_times

    @property
    def Q(self) -> int:
        return self.n_sensors


@dataclass(frozen=True)
class SpatioTemporalSpectrum:
    """
    Non-negative spectra Phi_f^(t) on a grid, stored with shape (F, T, N).
    """
    phi: np.ndarray
    grid: AngularGrid
    bank: FrequencyBank

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 3:
            raise ValueError(f"Spectrum must have shape (F, T, N), got {phi.shape}")
        if phi.shape[0] != self.bank.size:
            raise ValueError(f"Spectrum has {phi.shape[0]} frequencies, bank has {self.bank.size}")
        if phi.shape[2] != self.grid.n:
            raise ValueError(f"Spectrum has {phi.shape[2]} angles, grid has {self.grid.n}")
        if phi.shape[1] < 1:
            raise ValueError("Spectrum needs at least one time instance")
        if not np.all(np.isfinite(phi)):
            raise ValueError("Spectrum contains non-finite entries")
        if np.any(phi < 0):
            raise ValueError("Spectrum entries must be non-negative")
        object.__setattr__(self, 'phi', _frozen(phi))

    @property
    def n_times(self) -> int:
        return self.phi.shape[1]


def spatial_average(spectrum: SpatioTemporalSpectrum) -> np.ndarray:
    """
    Average the spectrum over frequency.

    Returns:
        Array of shape (T, N) holding (1/F) sum_f Phi_f^(t)
    """
    return spectrum.phi.mean(axis=0)


def temporal_average(spectrum: SpatioTemporalSpectrum) -> np.ndarray:
    """
    Angle-integrated power per frequency, averaged over time.

    Returns:
        Array of shape (F,) holding (1/T) sum_t sum_i [Phi_f^(t)]_i
    """
    return spectrum.phi.sum(axis=2).mean(axis=1)
