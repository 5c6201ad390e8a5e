"""
Closed-form solution of the psi block.

For every grid index the psi block reduces to

    minimize_x  sum_f z_f exp(-x_f)   subject to  ||x||_1 <= budget

with z >= 0. The minimizer is x_f = max(log z_f - log nu, 0) where nu is the
level at which the allocation exhausts the budget. Sorting z once gives the
level in O(F log F).
"""
import numpy as np


def water_fill(z: np.ndarray, budget: float) -> np.ndarray:
    """
    Allocate a budget over the rows of z, independently for every column.

    Args:
        z: Non-negative array of shape (F,) or (F, N)
        budget: Non-negative total allocation per column (eta / epsilon)

    Returns:
        Array x with the shape of z, x >= 0, columns summing to budget when
        they hold at least one positive entry, zero columns otherwise
    """
    z = np.asarray(z, dtype=float)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[:, None]
    if z.ndim != 2:
        raise ValueError(f"Expected a vector or matrix, got shape {z.shape}")
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise ValueError("Water-filling weights must be finite and non-negative")
    if budget < 0:
        raise ValueError(f"Budget must be non-negative, got {budget}")

    F = z.shape[0]
    x = np.zeros_like(z)
    if budget == 0 or z.size == 0:
        return x[:, 0] if squeeze else x

    # stable ascending sort; zeros land first and never receive budget
    order = np.argsort(z, axis=0, kind='stable')
    zs = np.take_along_axis(z, order, axis=0)
    active = zs > 0
    logs = np.where(active, np.log(np.where(active, zs, 1.0)), 0.0)

    suffix_sum = np.cumsum(logs[::-1], axis=0)[::-1]
    suffix_count = np.cumsum(active[::-1], axis=0)[::-1]

    # g at each sorted candidate level; inactive entries play the role of z_0
    g = suffix_sum - suffix_count * logs - budget
    g = np.where(active, g, np.inf)
    breakpoint = np.sum(g > 0, axis=0)

    has_mass = breakpoint < F
    cols = np.nonzero(has_mass)[0]
    if cols.size:
        k = breakpoint[cols]
        log_nu = (suffix_sum[k, cols] - budget) / (F - k)
        alloc = np.where(active[:, cols], np.maximum(logs[:, cols] - log_nu, 0.0), 0.0)
        xs = np.zeros_like(z)
        xs[:, cols] = alloc
        np.put_along_axis(x, order, xs, axis=0)
    return x[:, 0] if squeeze else x


def water_level(z: np.ndarray, budget: float) -> float:
    """Level nu of a single allocation (inf when z has no positive entry)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    x = water_fill(z, budget)
    spent = x > 0
    if not np.any(z > 0):
        return float('inf')
    if not np.any(spent):
        return float(z.max())
    idx = np.argmax(spent)
    return float(z[idx] * np.exp(-x[idx]))
