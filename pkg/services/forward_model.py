from dataclasses import dataclass
from typing import Sequence
import math

import numpy as np

from .core_types import AngularGrid, FrequencyBank


@dataclass(frozen=True)
class ArrayGeometry:
    """
    Linear array of sensors.

    Args:
        positions: Sensor coordinates along the array axis
        propagation_speed: Wave speed in the same unit system as positions
    """
    positions: np.ndarray
    propagation_speed: float = 1.0

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float).reshape(-1)
        if positions.size < 1:
            raise ValueError("ArrayGeometry needs at least one sensor")
        if np.unique(positions).size != positions.size:
            raise ValueError("Sensor positions must be distinct")
        if not self.propagation_speed > 0:
            raise ValueError("propagation_speed must be positive")
        positions.setflags(write=False)
        object.__setattr__(self, 'positions', positions)

    @classmethod
    def uniform_linear(cls, n_sensors: int, spacing: float = 1.0, speed: float = 1.0) -> "ArrayGeometry":
        """ULA with the first sensor at the origin."""
        return cls(spacing * np.arange(n_sensors, dtype=float), speed)

    @classmethod
    def from_positions(cls, positions: Sequence[float], speed: float) -> "ArrayGeometry":
        return cls(np.asarray(positions, dtype=float), speed)

    @property
    def n_sensors(self) -> int:
        return self.positions.size

    @property
    def aperture(self) -> float:
        return float(self.positions.max() - self.positions.min())


@dataclass(frozen=True)
class MeasurementModel:
    """
    Discretized forward operators.

    G has shape (F, 2Q^2, N) and steering has shape (F, Q, N). The columns
    of G are vectorized Hermitian matrices, so G[f] = basis @ G_hermitian[f]
    with basis = hermitian_basis(Q) and G_hermitian of shape (F, Q^2, N).
    """
    G: np.ndarray
    steering: np.ndarray
    grid: AngularGrid
    bank: FrequencyBank
    geometry: ArrayGeometry
    basis: np.ndarray
    G_hermitian: np.ndarray

    @property
    def n_sensors(self) -> int:
        return self.steering.shape[1]

    @property
    def n_freqs(self) -> int:
        return self.G.shape[0]


def steering_vector(geom: ArrayGeometry, omega: float, theta: float) -> np.ndarray:
    """
    Far-field array response a(theta) at angular frequency omega.

    Args:
        geom: Array geometry
        omega: Angular frequency
        theta: Direction of arrival in radians, |theta| <= pi/2

    Returns:
        Complex vector with entries exp(i * omega * p_q * sin(theta) / c)
    """
    if abs(theta) > math.pi / 2 + 1e-12:
        raise ValueError(f"Angle {theta} outside [-pi/2, pi/2]")
    delay = geom.positions * math.sin(theta) / geom.propagation_speed
    return np.exp(1j * omega * delay)


def steering_matrix(geom: ArrayGeometry, omega: float, grid: AngularGrid) -> np.ndarray:
    """Steering vectors for every grid angle stacked as columns, shape (Q, N)."""
    delay = np.outer(geom.positions, np.sin(grid.points)) / geom.propagation_speed
    return np.exp(1j * omega * delay)


def vectorize_covariance(R: np.ndarray) -> np.ndarray:
    """
    Stack a Q x Q matrix as [vec(Re R); vec(Im R)] with column-major vec.
    """
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {R.shape}")
    return np.concatenate([R.real.reshape(-1, order='F'), R.imag.reshape(-1, order='F')]).astype(float)


def devectorize_covariance(r: np.ndarray) -> np.ndarray:
    """Inverse of vectorize_covariance."""
    r = np.asarray(r, dtype=float).reshape(-1)
    q = math.isqrt(r.size // 2)
    if 2 * q * q != r.size:
        raise ValueError(f"Vector of length {r.size} is not 2Q^2 for any Q")
    half = q * q
    return r[:half].reshape(q, q, order='F') + 1j * r[half:].reshape(q, q, order='F')


def hermitian_basis(n_sensors: int) -> np.ndarray:
    """
    Orthonormal basis of the vectorized Hermitian Q x Q matrices.

    Returns:
        Array of shape (2Q^2, Q^2). Columns hold the Q diagonal entries first,
        then for every pair i < j the symmetric real part and the
        antisymmetric imaginary part, both scaled by 1/sqrt(2).
    """
    q = n_sensors
    half = q * q
    basis = np.zeros((2 * half, half))
    for i in range(q):
        basis[i + i * q, i] = 1.0
    column = q
    scale = 1.0 / math.sqrt(2.0)
    for j in range(q):
        for i in range(j):
            basis[[i + j * q, j + i * q], column] = scale
            basis[[half + i + j * q, half + j + i * q], column + 1] = [scale, -scale]
            column += 2
    return basis


def _outer_columns(A: np.ndarray) -> np.ndarray:
    # column i -> [vec(Re(a a^H)); vec(Im(a a^H))]
    q, n = A.shape
    outer = A[:, None, :] * np.conj(A[None, :, :])
    flat = outer.reshape(q * q, n, order='F')
    return np.vstack([flat.real, flat.imag])


def build_measurement_model(geom: ArrayGeometry, grid: AngularGrid, bank: FrequencyBank) -> MeasurementModel:
    """
    Build G_f and the steering matrices for every frequency of the bank.

    Args:
        geom: Array geometry
        grid: Angular grid
        bank: Frequency bank (unit must agree with geometry and speed)

    Returns:
        MeasurementModel with read-only arrays
    """
    steering = np.stack([steering_matrix(geom, omega, grid) for omega in bank.omegas])
    G = np.stack([_outer_columns(A) for A in steering])
    basis = hermitian_basis(geom.n_sensors)
    G_hermitian = np.einsum('dk,fdn->fkn', basis, G)
    for array in (steering, G, basis, G_hermitian):
        array.setflags(write=False)
    return MeasurementModel(G=G, steering=steering, grid=grid, bank=bank, geometry=geom,
                            basis=basis, G_hermitian=G_hermitian)


def _check_index(model: MeasurementModel, f: int) -> None:
    if not 0 <= f < model.n_freqs:
        raise ValueError(f"Frequency index {f} out of range [0, {model.n_freqs})")


def apply_forward(model: MeasurementModel, f: int, phi: np.ndarray) -> np.ndarray:
    """G_f phi."""
    _check_index(model, f)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (model.G.shape[2],):
        raise ValueError(f"Spectrum length {phi.shape} does not match grid size {model.G.shape[2]}")
    return model.G[f] @ phi


def apply_adjoint(model: MeasurementModel, f: int, y: np.ndarray) -> np.ndarray:
    """G_f^T y."""
    _check_index(model, f)
    y = np.asarray(y, dtype=float)
    if y.shape != (model.G.shape[1],):
        raise ValueError(f"Vector length {y.shape} does not match 2Q^2 = {model.G.shape[1]}")
    return model.G[f].T @ y


def vectorize_sequence(R: np.ndarray) -> np.ndarray:
    """Vectorize an (F, T, Q, Q) stack into (F, T, 2Q^2)."""
    F, T, Q, _ = R.shape
    flat = np.swapaxes(R, -1, -2).reshape(F, T, Q * Q)
    return np.concatenate([flat.real, flat.imag], axis=-1)
