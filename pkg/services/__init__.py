from .core_types import (
    AngularGrid,
    FrequencyBank,
    NewtonParams,
    SolverParams,
    CovarianceSequence,
    SpatioTemporalSpectrum,
    spatial_average,
    temporal_average,
)
from .forward_model import (
    ArrayGeometry,
    MeasurementModel,
    steering_vector,
    steering_matrix,
    build_measurement_model,
    vectorize_covariance,
    devectorize_covariance,
    apply_forward,
    apply_adjoint,
)
from .water_filling import water_fill
from .gsot_solver import (
    CostModel,
    SolverState,
    SolveReport,
    NewtonResult,
    build_cost_model,
    init_state,
    update_messages,
    refresh_messages,
    marginal,
    update_lambda,
    update_psi,
    dual_objective,
    duality_gap,
    solve,
)
from .baselines import MvdrParams, mvdr_spectrum, mvdr_sequence
from .scenario_sim import (
    SourceTrajectory,
    ScenarioConfig,
    RmseTable,
    two_target_scenario,
    simulate_covariances,
    expected_covariances,
    draw_snapshots,
    pick_peaks,
    rmse_study,
)
from .ingest import IngestConfig, stft_covariances, read_wav, load_geometry_sidecar
from .errors import (
    GsotError,
    ConfigError,
    DataFormatError,
    NumericalRangeError,
    ConvergenceError,
    SingularCovarianceError,
)

__all__ = [
    'AngularGrid',
    'FrequencyBank',
    'NewtonParams',
    'SolverParams',
    'CovarianceSequence',
    'SpatioTemporalSpectrum',
    'spatial_average',
    'temporal_average',
    'ArrayGeometry',
    'MeasurementModel',
    'steering_vector',
    'steering_matrix',
    'build_measurement_model',
    'vectorize_covariance',
    'devectorize_covariance',
    'apply_forward',
    'apply_adjoint',
    'water_fill',
    'CostModel',
    'SolverState',
    'SolveReport',
    'NewtonResult',
    'build_cost_model',
    'init_state',
    'update_messages',
    'refresh_messages',
    'marginal',
    'update_lambda',
    'update_psi',
    'dual_objective',
    'duality_gap',
    'solve',
    'MvdrParams',
    'mvdr_spectrum',
    'mvdr_sequence',
    'SourceTrajectory',
    'ScenarioConfig',
    'RmseTable',
    'two_target_scenario',
    'simulate_covariances',
    'expected_covariances',
    'draw_snapshots',
    'pick_peaks',
    'rmse_study',
    'IngestConfig',
    'stft_covariances',
    'read_wav',
    'load_geometry_sidecar',
    'GsotError',
    'ConfigError',
    'DataFormatError',
    'NumericalRangeError',
    'ConvergenceError',
    'SingularCovarianceError'
]
