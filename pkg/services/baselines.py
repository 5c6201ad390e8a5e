from dataclasses import dataclass
import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve, LinAlgError

from .core_types import CovarianceSequence, SpatioTemporalSpectrum
from .errors import SingularCovarianceError
from .forward_model import MeasurementModel

LOGGER = logging.getLogger("GSOT:MVDR")


@dataclass(frozen=True)
class MvdrParams:
    """
    Args:
        diagonal_loading: Loading delta, relative to trace(R) / Q
    """
    diagonal_loading: float = 1e-3

    def __post_init__(self):
        if not self.diagonal_loading >= 0:
            raise ValueError(f"diagonal_loading must be non-negative, got {self.diagonal_loading}")


def mvdr_spectrum(R: np.ndarray, steering: np.ndarray, params: MvdrParams) -> np.ndarray:
    """
    MVDR (Capon) spatial spectrum 1 / (a^H (R + delta tr(R)/Q I)^{-1} a).

    Args:
        R: Q x Q Hermitian covariance matrix
        steering: Q x N steering matrix
        params: Diagonal loading settings

    Returns:
        Strictly positive spectrum of length N

    Raises:
        SingularCovarianceError: if the loaded matrix cannot be factorized
    """
    R = np.asarray(R, dtype=complex)
    q = R.shape[0]
    if R.shape != (q, q) or steering.shape[0] != q:
        raise ValueError(f"Shape mismatch: R {R.shape}, steering {steering.shape}")
    loaded = R + params.diagonal_loading * (np.trace(R).real / q) * np.eye(q)

    try:
        weights = cho_solve(cho_factor(loaded, lower=True), steering)
    except LinAlgError:
        # not positive definite; fall back to a Hermitian-indefinite solve
        try:
            weights = solve(loaded, steering, assume_a='her')
        except LinAlgError as e:
            raise SingularCovarianceError(f"Loaded covariance is singular: {e}") from e

    denom = np.sum(np.conj(steering) * weights, axis=0).real
    if not np.all(np.isfinite(denom)) or np.any(denom <= 0):
        raise SingularCovarianceError("Loaded covariance is not positive definite")
    return 1.0 / denom


def mvdr_sequence(data: CovarianceSequence, model: MeasurementModel, params: MvdrParams) -> SpatioTemporalSpectrum:
    """Apply mvdr_spectrum independently for every (f, t)."""
    if data.n_freqs != model.n_freqs or data.n_sensors != model.n_sensors:
        raise ValueError("Covariance sequence does not match the measurement model")
    phi = np.empty((data.n_freqs, data.n_times, model.grid.n))
    for f in range(data.n_freqs):
        for t in range(data.n_times):
            phi[f, t] = mvdr_spectrum(data.R[f, t], model.steering[f], params)
    LOGGER.info("MVDR spectra for %d frequencies x %d times (loading %.1e)",
                data.n_freqs, data.n_times, params.diagonal_loading)
    return SpatioTemporalSpectrum(phi=phi, grid=model.grid, bank=model.bank)
