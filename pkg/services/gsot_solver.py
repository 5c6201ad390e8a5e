"""
Group-sparse multi-marginal optimal transport tracker.

The transport tensors M_f = U_f * K * V_f are never formed. Every quantity is
computed from the per-(f, t) scaling vectors u, v and the forward/backward
messages w_hat, w that contract the chain of kernels K on either side of t.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Any, List, Optional, Tuple
import logging
import time

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import wrightomega

from .core_types import (
    AngularGrid,
    CovarianceSequence,
    NewtonParams,
    SolverParams,
    SpatioTemporalSpectrum,
)
from .errors import ConvergenceError, NumericalRangeError
from .forward_model import MeasurementModel, vectorize_sequence
from .water_filling import water_fill

LOGGER = logging.getLogger("GSOT:SOLVER")

KERNEL_FLOOR = 1e-300
FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class CostModel:
    """Squared-angle transport cost and its Gibbs kernel exp(-C / epsilon)."""
    cost: np.ndarray
    kernel: np.ndarray
    epsilon: float
    scale: float = 1.0


def build_cost_model(grid: AngularGrid, epsilon: float, scale: float = 1.0) -> CostModel:
    """
    Build the pairwise cost c(theta_i, theta_j) = scale * (theta_i - theta_j)^2.

    Raises:
        NumericalRangeError: if the kernel underflows below 1e-300
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    diff = grid.points[:, None] - grid.points[None, :]
    cost = scale * diff ** 2
    kernel = np.exp(-cost / epsilon)
    smallest = float(kernel.min())
    if smallest < KERNEL_FLOOR:
        raise NumericalRangeError(
            f"Transport kernel underflows (min entry {smallest:.3e} at epsilon={epsilon:.3e}, "
            f"max cost {cost.max():.3e}); increase epsilon or lower cost_scale"
        )
    cost.setflags(write=False)
    kernel.setflags(write=False)
    return CostModel(cost=cost, kernel=kernel, epsilon=float(epsilon), scale=float(scale))


@dataclass
class SolverState:
    """
    Factored dual iterate. All per-(f, t) vectors have shape (F, T, N) except
    lam, which has shape (F, T, 2Q^2).
    """
    lam: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w_hat: np.ndarray
    w: np.ndarray
    xi: np.ndarray
    cost: CostModel
    forward: bool = True
    sweeps: int = 0

    @classmethod
    def initial(cls, n_freqs: int, n_times: int, n_grid: int, n_data: int, cost: CostModel) -> "SolverState":
        shape = (n_freqs, n_times, n_grid)
        state = cls(
            lam=np.zeros((n_freqs, n_times, n_data)),
            psi=np.zeros(shape),
            u=np.ones(shape),
            v=np.ones(shape),
            w_hat=np.ones(shape),
            w=np.ones(shape),
            xi=np.ones(shape),
            cost=cost,
        )
        refresh_messages(state)
        return state

    @property
    def epsilon(self) -> float:
        return self.cost.epsilon

    @property
    def n_freqs(self) -> int:
        return self.u.shape[0]

    @property
    def n_times(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class NewtonResult:
    lam: np.ndarray
    u: np.ndarray
    iterations: int
    residual: float
    converged: bool


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    final_change: float = float('inf')
    epsilon: float = float('nan')
    objective_trace: List[float] = field(default_factory=list)
    sweep_objectives: List[float] = field(default_factory=list)
    sweep_times: List[float] = field(default_factory=list)
    newton_iterations: List[int] = field(default_factory=list)
    newton_failures: int = 0
    max_newton_residual: float = 0.0
    max_psi_violation: float = 0.0
    max_objective_increase: float = 0.0
    duality_gap: float = float('nan')
    params: Dict[str, Any] = field(default_factory=dict)

    def decrease_ratios(self) -> np.ndarray:
        """Ratios of consecutive per-sweep objective decreases."""
        objectives = np.asarray(self.sweep_objectives, dtype=float)
        if objectives.size < 3:
            return np.zeros(0)
        drops = -np.diff(objectives)
        prev, cur = drops[:-1], drops[1:]
        valid = prev > 0
        return cur[valid] / prev[valid]

    def linear_rate_fraction(self) -> float:
        ratios = self.decrease_ratios()
        if ratios.size == 0:
            return 1.0
        return float(np.mean(ratios < 1.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'iterations': self.iterations,
            'converged': self.converged,
            'final_change': self.final_change,
            'epsilon': self.epsilon,
            'duality_gap': self.duality_gap,
            'newton_iterations': list(self.newton_iterations),
            'newton_failures': self.newton_failures,
            'max_newton_residual': self.max_newton_residual,
            'max_psi_violation': self.max_psi_violation,
            'max_objective_increase': self.max_objective_increase,
            'linear_rate_fraction': self.linear_rate_fraction(),
            'sweep_objectives': list(self.sweep_objectives),
            'sweep_times': list(self.sweep_times),
            'objective_trace': list(self.objective_trace),
            'params': self.params,
        }


def _freq_index(f: Optional[int]):
    return slice(None) if f is None else f


def update_messages(state: SolverState, f: Optional[int], t: int, direction: str) -> None:
    """
    Refresh the stale message at time t and recombine xi = w * w_hat.

    Args:
        state: Solver state, updated in place
        f: Frequency index, or None for all frequencies
        t: Time index (0-based)
        direction: "forward" refreshes w_hat from t-1, "backward" refreshes w from t+1
    """
    K = state.cost.kernel
    fi = _freq_index(f)
    if direction == FORWARD:
        if t == 0:
            state.w_hat[fi, 0] = 1.0
        else:
            state.w_hat[fi, t] = (state.u[fi, t - 1] * state.v[fi, t - 1] * state.w_hat[fi, t - 1]) @ K
    elif direction == BACKWARD:
        if t == state.n_times - 1:
            state.w[fi, t] = 1.0
        else:
            state.w[fi, t] = (state.u[fi, t + 1] * state.v[fi, t + 1] * state.w[fi, t + 1]) @ K.T
    else:
        raise ValueError(f"Unknown sweep direction {direction!r}")
    state.xi[fi, t] = state.w[fi, t] * state.w_hat[fi, t]


def refresh_messages(state: SolverState) -> None:
    """Recompute every message from the current scaling vectors."""
    T = state.n_times
    for t in range(T):
        update_messages(state, None, t, FORWARD)
    for t in reversed(range(T)):
        update_messages(state, None, t, BACKWARD)


def marginal(state: SolverState, f: int, t: int) -> np.ndarray:
    """P^(t)(M_f) = u * v * xi."""
    return state.u[f, t] * state.v[f, t] * state.xi[f, t]


def all_marginals(state: SolverState) -> np.ndarray:
    return state.u * state.v * state.xi


def _newton_lambda(
    G: np.ndarray,
    r: np.ndarray,
    weights: np.ndarray,
    lam0: np.ndarray,
    epsilon: float,
    gamma: float,
    newton: NewtonParams,
) -> NewtonResult:
    # root of G (exp(G^T lam / eps) * weights) + lam / gamma - r
    def residual(lam):
        with np.errstate(over='ignore', invalid='ignore'):
            u = np.exp(G.T @ lam / epsilon)
            return G @ (u * weights) + lam / gamma - r, u

    lam = lam0.copy()
    res, u = residual(lam)
    norm = float(np.linalg.norm(res))
    if not np.isfinite(norm):
        lam = np.zeros_like(lam0)
        res, u = residual(lam)
        norm = float(np.linalg.norm(res))

    identity = np.eye(G.shape[0]) / gamma
    iterations = 0
    while norm > newton.tol and iterations < newton.max_iter:
        jac = (G * (u * weights / epsilon)) @ G.T + identity
        try:
            step = cho_solve(cho_factor(jac, lower=True), res)
        except (LinAlgError, ValueError) as e:
            raise NumericalRangeError(f"Newton system could not be factorized: {e}") from e

        size = 1.0
        accepted = False
        for _ in range(newton.max_backtracks):
            cand = lam - size * step
            res_c, u_c = residual(cand)
            norm_c = float(np.linalg.norm(res_c))
            if np.isfinite(norm_c) and norm_c < norm:
                lam, res, u, norm = cand, res_c, u_c, norm_c
                accepted = True
                break
            size *= newton.damping
        iterations += 1
        if not accepted:
            break

    return NewtonResult(lam=lam, u=u, iterations=iterations, residual=norm, converged=norm <= newton.tol)


def lambda_residual(G: np.ndarray, r: np.ndarray, weights: np.ndarray, lam: np.ndarray,
                    epsilon: float, gamma: float) -> np.ndarray:
    """Left-hand side of the lambda stationarity condition."""
    return G @ (np.exp(G.T @ lam / epsilon) * weights) + lam / gamma - r


def lambda_jacobian(G: np.ndarray, weights: np.ndarray, lam: np.ndarray,
                    epsilon: float, gamma: float) -> np.ndarray:
    """Jacobian of lambda_residual with respect to lam."""
    u = np.exp(G.T @ lam / epsilon)
    return (G * (u * weights / epsilon)) @ G.T + np.eye(G.shape[0]) / gamma


def update_lambda(
    state: SolverState,
    model: MeasurementModel,
    r: np.ndarray,
    params: SolverParams,
    f: int,
    t: int,
) -> NewtonResult:
    """
    Exact minimization over lambda_f^(t), warm-started at the current value.

    Args:
        state: Solver state, lam and u at (f, t) are updated in place
        model: Measurement model providing G_f
        r: Vectorized covariance r_f^(t)
        params: Solver parameters
        f: Frequency index
        t: Time index

    Returns:
        NewtonResult of the inner solve

    Raises:
        ConvergenceError: if Newton fails and params.on_newton_failure == "raise"
    """
    # lam stays in the span of the Hermitian basis: the orthogonal part of the
    # stationarity condition reads lam_perp / gamma = 0 since r and G_f lie in it
    basis = model.basis
    weights = state.v[f, t] * state.xi[f, t]
    reduced = _newton_lambda(model.G_hermitian[f], basis.T @ r, weights, basis.T @ state.lam[f, t],
                             state.epsilon, params.gamma, params.newton)
    result = replace(reduced, lam=basis @ reduced.lam)
    if not result.converged:
        message = (f"Newton did not reach tol {params.newton.tol:.1e} at (f={f}, t={t}) "
                   f"after {result.iterations} steps, residual {result.residual:.3e}")
        if params.on_newton_failure == "raise":
            raise ConvergenceError(message, residual=result.residual)
        LOGGER.warning(message)
    state.lam[f, t] = result.lam
    state.u[f, t] = result.u
    return result


def update_psi(state: SolverState, params: SolverParams, t: int) -> float:
    """
    Exact minimization over psi_f^(t) for all f by water-filling per grid index.

    Returns:
        Largest violation of max_i sum_f |psi_{f,i}| <= eta (0 when feasible)
    """
    if not params.sparsity:
        return 0.0
    z = state.u[:, t] * state.xi[:, t]
    if not np.all(np.isfinite(z)):
        raise NumericalRangeError(f"Non-finite water-filling input at t={t}; epsilon {state.epsilon:g} is too small")
    x = water_fill(z, params.eta / state.epsilon)
    state.psi[:, t] = -state.epsilon * x
    state.v[:, t] = np.exp(-x)
    used = np.abs(state.psi[:, t]).sum(axis=0).max()
    return max(0.0, float(used - params.eta))


def balance_mass(state: SolverState, model: MeasurementModel, r: np.ndarray, params: SolverParams) -> None:
    """
    Exact minimization along lam_f^(t) + c_f^(t) * vec(I) / Q for all (f, t).

    Steering vectors have unit-modulus entries, so G_f^T vec(I) / Q = 1 and the
    shift scales u_f^(t) by exp(c / epsilon). Only the sum over t of the shifts
    changes the transport term, which makes the exchange of mass between time
    steps nearly flat for the lambda blocks. The optimal shifts solve
    x + log x = L in closed form (Wright omega function) per frequency.

    Args:
        state: Solver state with consistent messages; lam, u and the messages
            are updated in place
        model: Measurement model
        r: Vectorized data of shape (F, T, 2Q^2)
        params: Solver parameters (gamma)
    """
    Q = model.n_sensors
    direction = np.zeros(model.G.shape[1])
    direction[np.arange(Q) * (Q + 1)] = 1.0 / Q
    norm2 = 1.0 / Q
    eps, gamma, T = state.epsilon, params.gamma, state.n_times

    mass = all_marginals(state)[:, 0].sum(axis=-1)
    if not np.all(mass > 0):
        raise NumericalRangeError("Transport mass vanished; epsilon is too small for this grid")
    slope = gamma * (r @ direction) - state.lam @ direction  # (F, T)
    level = np.log(T * gamma * mass / (norm2 * eps)) + slope.sum(axis=1) / (norm2 * eps)
    x = np.real(wrightomega(level))
    shift = slope / norm2 - (eps * x / T)[:, None]

    state.lam += shift[..., None] * direction
    state.u *= np.exp(shift / eps)[..., None]
    refresh_messages(state)


def dual_objective(state: SolverState, params: SolverParams, r: np.ndarray, t: int = 0) -> float:
    """
    Dual objective evaluated through the message identity at time t.

    Args:
        state: Solver state whose messages at t are consistent
        params: Solver parameters (gamma)
        r: Vectorized data of shape (F, T, 2Q^2)
        t: Time index used for the transport term
    """
    transport = state.epsilon * float(np.sum(state.u[:, t] * state.v[:, t] * state.xi[:, t]))
    quadratic = float(np.sum(state.lam ** 2)) / (2.0 * params.gamma) - float(np.sum(state.lam * r))
    return transport + quadratic


def duality_gap(state: SolverState, model: MeasurementModel, r: np.ndarray, params: SolverParams) -> float:
    """
    Primal value of the plan implied by the duals minus the dual value.

    Requires consistent messages (see refresh_messages). The gap splits into a
    data-fit mismatch term and a complementarity term for the sparsity penalty,
    both non-negative and zero exactly at the optimum.
    """
    phi = all_marginals(state)
    fitted = np.einsum('fdn,ftn->ftd', model.G, phi)
    gamma = params.gamma
    fit_gap = float(np.sum((gamma * (r - fitted) - state.lam) ** 2)) / (2.0 * gamma)
    eta = params.eta if params.sparsity else 0.0
    sparse_gap = eta * float(np.sum(phi.max(axis=0))) + float(np.sum(state.psi * phi))
    return fit_gap + sparse_gap


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """Largest entry change, relative to the peak of its own (f, t) marginal."""
    peak = np.max(np.abs(old), axis=-1, keepdims=True)
    peak = np.where(peak > 0, peak, np.finfo(float).tiny)
    return float(np.max(np.abs(new - old) / peak))


def _check_inputs(data: CovarianceSequence, model: MeasurementModel) -> None:
    if data.n_freqs != model.n_freqs:
        raise ValueError(f"Data has {data.n_freqs} frequencies, model has {model.n_freqs}")
    if data.n_sensors != model.n_sensors:
        raise ValueError(f"Data has {data.n_sensors} sensors, model has {model.n_sensors}")


def init_state(data: CovarianceSequence, model: MeasurementModel, params: SolverParams) -> SolverState:
    """Interior starting point lambda = 0, psi = 0 with consistent messages."""
    _check_inputs(data, model)
    epsilon = params.resolve_epsilon(model.grid)
    cost = build_cost_model(model.grid, epsilon, params.cost_scale)
    return SolverState.initial(data.n_freqs, data.n_times, model.grid.n, model.G.shape[1], cost)


def _record_objective(report: SolveReport, value: float) -> None:
    if report.objective_trace:
        last = report.objective_trace[-1]
        increase = (value - last) / max(1.0, abs(last))
        report.max_objective_increase = max(report.max_objective_increase, increase)
    report.objective_trace.append(value)


def run_sweep(
    state: SolverState,
    model: MeasurementModel,
    r: np.ndarray,
    params: SolverParams,
    report: SolveReport,
) -> None:
    """One full forward or backward sweep over t, alternating with every call."""
    direction = FORWARD if state.forward else BACKWARD
    times = range(state.n_times) if state.forward else reversed(range(state.n_times))
    newton_steps = 0

    def record(t):
        if params.record_trace:
            _record_objective(report, dual_objective(state, params, r, t))

    for t in times:
        update_messages(state, None, t, direction)
        for f in range(state.n_freqs):
            result = update_lambda(state, model, r[f, t], params, f, t)
            newton_steps += result.iterations
            report.max_newton_residual = max(report.max_newton_residual, result.residual)
            if not result.converged:
                report.newton_failures += 1
        record(t)
        violation = update_psi(state, params, t)
        report.max_psi_violation = max(report.max_psi_violation, violation)
        if params.sparsity:
            record(t)

    state.forward = not state.forward
    state.sweeps += 1
    report.newton_iterations.append(newton_steps)


def solve(
    data: CovarianceSequence,
    model: MeasurementModel,
    params: SolverParams,
    grid: Optional[AngularGrid] = None,
) -> Tuple[SpatioTemporalSpectrum, SolveReport]:
    """
    Estimate the spatio-temporal spectrum by dual block coordinate descent.

    Args:
        data: Covariance sequence R_f^(t)
        model: Measurement model built on the same bank and array
        params: Solver parameters
        grid: Angular grid; defaults to the grid of the model

    Returns:
        Tuple of the estimated spectrum and a SolveReport

    Raises:
        NumericalRangeError: on kernel underflow or non-finite iterates
        ConvergenceError: on non-convergence when configured to raise
    """
    if grid is not None and not np.array_equal(grid.points, model.grid.points):
        raise ValueError("Grid does not match the grid of the measurement model")
    state = init_state(data, model, params)
    r = vectorize_sequence(data.R)
    report = SolveReport(epsilon=state.epsilon, params=params.to_dict())

    LOGGER.info("Solving F=%d T=%d N=%d Q=%d with epsilon=%.4g gamma=%.4g eta=%.4g%s",
                data.n_freqs, data.n_times, model.grid.n, data.n_sensors,
                state.epsilon, params.gamma, params.eta, "" if params.sparsity else " (sparsity off)")

    previous = all_marginals(state)
    objective = dual_objective(state, params, r)
    report.sweep_objectives.append(objective)
    if params.record_trace:
        report.objective_trace.append(objective)

    while state.sweeps < params.max_sweeps:
        started = time.perf_counter()
        run_sweep(state, model, r, params, report)
        refresh_messages(state)
        if params.balance_mass:
            balance_mass(state, model, r, params)
            if params.record_trace:
                _record_objective(report, dual_objective(state, params, r))
        current = all_marginals(state)
        if not np.all(np.isfinite(current)):
            raise NumericalRangeError(f"Non-finite marginals after sweep {state.sweeps}")
        report.final_change = _relative_change(current, previous)
        report.sweep_objectives.append(dual_objective(state, params, r))
        report.sweep_times.append(time.perf_counter() - started)
        previous = current
        LOGGER.debug("Sweep %d: change %.3e objective %.10g", state.sweeps,
                     report.final_change, report.sweep_objectives[-1])
        if report.final_change <= params.tol:
            report.converged = True
            break

    report.iterations = state.sweeps
    report.duality_gap = duality_gap(state, model, r, params)

    if not report.converged:
        message = (f"Solver stopped after {state.sweeps} sweeps with relative change "
                   f"{report.final_change:.3e} > tol {params.tol:.1e}")
        if params.on_nonconvergence == "raise":
            raise ConvergenceError(message, residual=report.final_change)
        LOGGER.warning(message)
    else:
        LOGGER.info("Converged after %d sweeps (duality gap %.3e)", state.sweeps, report.duality_gap)

    spectrum = SpatioTemporalSpectrum(phi=previous, grid=model.grid, bank=model.bank)
    return spectrum, report
