import math

import numpy as np
import numpy.testing as npt
import pytest

from services.core_types import (
    AngularGrid,
    CovarianceSequence,
    FrequencyBank,
    NewtonParams,
    SolverParams,
    SpatioTemporalSpectrum,
    spatial_average,
    temporal_average,
)


def _spectrum(phi):
    phi = np.asarray(phi, dtype=float)
    F, _, N = phi.shape
    return SpatioTemporalSpectrum(phi=phi, grid=AngularGrid.uniform(N, -1.0, 1.0),
                                  bank=FrequencyBank.uniform(F, 0.5, 2.5))


def test_spatial_average_single_frequency_is_identity():
    phi = np.arange(12, dtype=float).reshape(1, 3, 4)
    npt.assert_array_equal(spatial_average(_spectrum(phi)), phi[0])


def test_spatial_average_of_basis_vectors():
    phi = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    npt.assert_array_equal(spatial_average(_spectrum(phi)), [[0.5, 0.5]])


def test_spatial_average_matches_reference_and_keeps_mass(rng):
    phi = rng.uniform(size=(5, 3, 7))
    out = spatial_average(_spectrum(phi))
    reference = np.zeros((3, 7))
    for f in range(5):
        reference += phi[f]
    npt.assert_allclose(out, reference / 5, rtol=1e-14)
    npt.assert_allclose(out.sum(axis=1), phi.sum(axis=(0, 2)) / 5, rtol=1e-14)


def test_temporal_average():
    phi = np.zeros((2, 2, 3))
    phi[0, 0] = [1.0, 2.0, 3.0]
    phi[0, 1] = [3.0, 0.0, 0.0]
    phi[1, :, 1] = 4.0
    npt.assert_allclose(temporal_average(_spectrum(phi)), [4.5, 4.0])


def test_spectrum_rejects_bad_input():
    with pytest.raises(ValueError, match="non-negative"):
        _spectrum(-np.ones((1, 1, 2)))
    with pytest.raises(ValueError, match="angles"):
        SpatioTemporalSpectrum(phi=np.ones((1, 1, 3)), grid=AngularGrid.uniform(4),
                               bank=FrequencyBank.uniform(1, 1.0, 1.0))
    with pytest.raises(ValueError, match="frequencies"):
        SpatioTemporalSpectrum(phi=np.ones((2, 1, 3)), grid=AngularGrid.uniform(3),
                               bank=FrequencyBank.uniform(1, 1.0, 1.0))


def test_spectrum_is_read_only():
    spectrum = _spectrum(np.ones((1, 1, 2)))
    with pytest.raises(ValueError):
        spectrum.phi[0, 0, 0] = 2.0


def test_angular_grid():
    grid = AngularGrid.from_degrees([-90.0, 0.0, 90.0])
    assert grid.n == 3
    assert grid.span == pytest.approx(math.pi)
    assert grid.spacing == pytest.approx(math.pi / 2)
    npt.assert_allclose(grid.degrees, [-90.0, 0.0, 90.0])
    assert grid.nearest_index(0.3) == 1
    assert AngularGrid.uniform(101).spacing == pytest.approx(math.radians(1.8))


@pytest.mark.parametrize("points", [[0.0, 0.0], [0.2, 0.1], [0.0, 2.0], [np.nan]])
def test_angular_grid_rejects(points):
    with pytest.raises(ValueError):
        AngularGrid(np.array(points))


def test_frequency_bank():
    bank = FrequencyBank.uniform(63, 0.5, 2.5)
    assert bank.size == 63
    assert bank.unit == "rad/sample"
    npt.assert_allclose(bank.omegas[[0, -1]], [0.5, 2.5])
    with pytest.raises(ValueError):
        FrequencyBank(np.array([1.0, -1.0]))


def test_covariance_sequence_symmetrizes_within_tolerance():
    R = np.array([[2.0, 1.0 + 1j], [1.0 - 1j, 3.0]])
    noisy = R.copy()
    noisy[0, 1] += 1e-12
    seq = CovarianceSequence(noisy[None, None])
    assert (seq.F, seq.T, seq.Q) == (1, 1, 2)
    npt.assert_allclose(seq.R[0, 0], seq.R[0, 0].conj().T, atol=0)
    npt.assert_allclose(seq.R[0, 0], R, atol=1e-12)


def test_covariance_sequence_rejects():
    with pytest.raises(ValueError, match="Hermitian"):
        CovarianceSequence(np.array([[[[1.0, 1.0], [0.0, 1.0]]]]))
    with pytest.raises(ValueError, match="shape"):
        CovarianceSequence(np.ones((2, 2, 3)))


def test_solver_params_defaults_and_epsilon():
    params = SolverParams()
    assert params.gamma == 1.0 and params.sparsity
    assert params.max_sweeps == 2000 and params.tol == 1e-6
    assert params.resolve_epsilon(AngularGrid.uniform(101)) == pytest.approx(0.01 * math.pi ** 2)
    assert SolverParams(epsilon=0.3).resolve_epsilon(AngularGrid.uniform(5)) == 0.3
    assert params.to_dict()['newton']['tol'] == 1e-10


@pytest.mark.parametrize("kwargs", [
    {'epsilon': 0.0},
    {'gamma': -1.0},
    {'eta': -0.1},
    {'on_newton_failure': 'ignore'},
    {'max_sweeps': 0},
])
def test_solver_params_rejects(kwargs):
    with pytest.raises(ValueError):
        SolverParams(**kwargs)


def test_newton_params_rejects_damping():
    with pytest.raises(ValueError):
        NewtonParams(damping=1.0)
