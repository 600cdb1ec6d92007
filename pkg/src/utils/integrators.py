"""
Fixed-grid explicit Runge-Kutta stepping and grid interpolation helpers.

All path data lives on uniform grids, so the classical RK4 stages only ever
need values at grid nodes and at grid midpoints:

    k1 = F(t_k,       y)
    k2 = F(t_k + h/2, y + h/2 k1)
    k3 = F(t_k + h/2, y + h/2 k2)
    k4 = F(t_k + h,   y + h k3)
    y  <- y + h/6 (k1 + 2 k2 + 2 k3 + k4)
"""

import numpy as np
from scipy.interpolate import CubicSpline

NODE, MIDPOINT, NEXT_NODE = 0, 1, 2


def uniform_nodes(count):
    return np.linspace(0.0, 1.0, count)


def midpoint_values(values, interpolation='cubic', axis=0):
    """
    Values at the midpoints of a uniform grid on [0, 1].

    Args:
        values: Samples at the grid nodes along `axis`
        interpolation: 'cubic' (not-a-knot spline, O(h^4)) or 'linear'
        axis: Grid axis

    Returns:
        numpy.ndarray: Samples at the n-1 midpoints along `axis`
    """
    values = np.asarray(values, dtype=float)
    count = values.shape[axis]
    if interpolation not in ('cubic', 'linear'):
        raise ValueError(f"Unknown interpolation {interpolation!r}")
    if interpolation == 'linear' or count < 4:
        lower = np.take(values, np.arange(count - 1), axis=axis)
        upper = np.take(values, np.arange(1, count), axis=axis)
        return 0.5 * (lower + upper)
    nodes = uniform_nodes(count)
    midpoints = 0.5 * (nodes[:-1] + nodes[1:])
    return CubicSpline(nodes, values, axis=axis)(midpoints)


def resample(values, times, axis=0):
    """Cubic-spline values of node samples at arbitrary times in [0, 1]."""
    values = np.asarray(values, dtype=float)
    nodes = uniform_nodes(values.shape[axis])
    return CubicSpline(nodes, values, axis=axis)(np.asarray(times, dtype=float))


def grid_derivative(values, step, axis=0):
    """Second-order differences: central inside, one-sided at both ends."""
    return np.gradient(np.asarray(values, dtype=float), step, axis=axis, edge_order=2)


def rk4_fixed_grid(rhs, y0, step, n_steps, post_step=None):
    """
    Integrate y' = rhs on a uniform grid with classical RK4.

    Args:
        rhs: Callable rhs(k, stage, y) where stage is NODE (t_k), MIDPOINT
            (t_k + h/2) or NEXT_NODE (t_{k+1})
        y0: Initial state (any array shape)
        step: Grid spacing h
        n_steps: Number of steps
        post_step: Optional callable post_step(k, y) applied after each step
            (used for projections back onto a manifold)

    Returns:
        numpy.ndarray: States at all n_steps + 1 nodes, shape (n_steps + 1, *y0.shape)
    """
    y = np.array(y0, dtype=float)
    trajectory = np.empty((n_steps + 1,) + y.shape)
    trajectory[0] = y
    half = 0.5 * step
    for k in range(n_steps):
        k1 = rhs(k, NODE, y)
        k2 = rhs(k, MIDPOINT, y + half * k1)
        k3 = rhs(k, MIDPOINT, y + half * k2)
        k4 = rhs(k, NEXT_NODE, y + step * k3)
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if post_step is not None:
            y = post_step(k, y)
        trajectory[k + 1] = y
    return trajectory


class StageData:
    """
    Node and midpoint samples of a curve, indexed the way rk4_fixed_grid asks.

    The grid axis is the first axis of `values`.
    """

    def __init__(self, values, interpolation='cubic'):
        self.nodes = np.asarray(values, dtype=float)
        self.midpoints = midpoint_values(self.nodes, interpolation=interpolation, axis=0)

    def at(self, k, stage):
        if stage == NODE:
            return self.nodes[k]
        if stage == MIDPOINT:
            return self.midpoints[k]
        return self.nodes[k + 1]


def five_point_derivative(values, step):
    """
    Fourth-order differences along the first axis: the central five-point
    stencil inside and one-sided five-point stencils on the two outer nodes
    at each end. Needs at least 5 samples.
    """
    f = np.asarray(values, dtype=float)
    if f.shape[0] < 5:
        raise ValueError(f"Five-point differences need at least 5 samples, got {f.shape[0]}")
    d = np.empty_like(f)
    d[2:-2] = f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]
    d[0] = -25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]
    d[1] = -3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]
    d[-2] = 3.0 * f[-1] + 10.0 * f[-2] - 18.0 * f[-3] + 6.0 * f[-4] - f[-5]
    d[-1] = 25.0 * f[-1] - 48.0 * f[-2] + 36.0 * f[-3] - 16.0 * f[-4] + 3.0 * f[-5]
    return d / (12.0 * step)
