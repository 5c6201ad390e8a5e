import os
import sys
from dataclasses import dataclass

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.core_types import AngularGrid, CovarianceSequence, FrequencyBank  # noqa: E402
from services.forward_model import (  # noqa: E402
    ArrayGeometry,
    MeasurementModel,
    build_measurement_model,
    devectorize_covariance,
    vectorize_sequence,
)


@dataclass
class Problem:
    model: MeasurementModel
    data: CovarianceSequence
    r: np.ndarray
    phi: np.ndarray


def make_problem(rng: np.random.Generator, n_grid: int, n_times: int, n_freqs: int,
                 n_sensors: int = 2) -> Problem:
    """Covariances generated exactly by a random non-negative spectrum."""
    grid = AngularGrid(np.linspace(-0.6, 0.6, n_grid))
    bank = FrequencyBank(np.linspace(1.0, 1.6, n_freqs))
    geometry = ArrayGeometry.uniform_linear(n_sensors)
    model = build_measurement_model(geometry, grid, bank)
    phi = rng.uniform(0.1, 1.0, size=(n_freqs, n_times, n_grid))
    R = np.empty((n_freqs, n_times, n_sensors, n_sensors), dtype=complex)
    for f in range(n_freqs):
        for t in range(n_times):
            R[f, t] = devectorize_covariance(model.G[f] @ phi[f, t])
    data = CovarianceSequence(R)
    return Problem(model=model, data=data, r=vectorize_sequence(data.R), phi=phi)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_problem(rng):
    return make_problem(rng, n_grid=3, n_times=2, n_freqs=2)


# dense tensor oracles, small instances only

def dense_plan(scale: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Full T-mode tensor diag(s_1) K diag(s_2) K ... for scale of shape (T, N)."""
    M = scale[0].copy()
    for t in range(1, scale.shape[0]):
        M = M[..., None] * kernel
        M = M * scale[t]
    return M


def dense_cost(cost: np.ndarray, n_times: int) -> np.ndarray:
    n = cost.shape[0]
    C = np.zeros(n)
    for _ in range(1, n_times):
        C = C[..., None] + cost
    return C


def dense_marginal(M: np.ndarray, t: int) -> np.ndarray:
    axes = tuple(a for a in range(M.ndim) if a != t)
    return M.sum(axis=axes) if axes else M


def dense_marginals(u: np.ndarray, v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    F, T, _ = u.shape
    out = np.empty_like(u)
    for f in range(F):
        M = dense_plan(u[f] * v[f], kernel)
        for t in range(T):
            out[f, t] = dense_marginal(M, t)
    return out


def dense_dual(u, v, lam, kernel, epsilon, gamma, r) -> float:
    mass = sum(dense_plan(u[f] * v[f], kernel).sum() for f in range(u.shape[0]))
    return epsilon * mass + np.sum(lam ** 2) / (2 * gamma) - np.sum(lam * r)


def primal_objective(u, v, cost, kernel, epsilon, gamma, eta, G, r) -> float:
    """Transport cost plus entropy, data misfit and group-sparsity penalty of the plan."""
    F, T, _ = u.shape
    C = dense_cost(cost, T)
    value = 0.0
    phi = np.empty_like(u)
    for f in range(F):
        M = dense_plan(u[f] * v[f], kernel)
        value += np.sum(C * M) + epsilon * np.sum(M * np.log(M) - M)
        for t in range(T):
            phi[f, t] = dense_marginal(M, t)
    fitted = np.einsum('fdn,ftn->ftd', G, phi)
    value += 0.5 * gamma * np.sum((r - fitted) ** 2)
    value += eta * np.sum(phi.max(axis=0))
    return float(value)
