"""Numerical studies of the controlled RK4 solver: convergence order and the linear-field check."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .cde import CdeParams, solve_cde
from .paths import ObservationSequence, build_path


def smooth_problem(seed: int, hidden: int = 4, channels: int = 2, n_obs: int = 4, scheme: str = "natural_cubic"):
    """Random CDE with a smooth field ``tanh(z A + c)`` driven by a random path."""
    rng = np.random.default_rng(seed)
    params = CdeParams.init(channels, hidden, width=8, rng=rng)
    a = Tensor(rng.normal(size=(hidden, hidden * channels)))
    c = Tensor(rng.normal(size=hidden * channels))

    def field(z):
        return ops.tanh(ops.linear(z, a, c)).reshape(z.shape[:-1] + (hidden, channels))

    times = np.cumsum(rng.uniform(0.5, 1.5, n_obs))
    path = build_path(ObservationSequence.create(times, rng.normal(size=(n_obs, channels - 1))), scheme)
    return params, field, path


def convergence_order(seed: int, coarse: int = 16, reference: int = 1024) -> float:
    """log2 of the error ratio between ``coarse`` and ``2*coarse`` substeps per interval."""
    params, field, path = smooth_problem(seed)
    end = [path.knots[-1]]

    def final(n):
        return solve_cde(params, path, end, substeps=n, field=field).states.data[-1]

    ref = final(reference)
    e1 = np.linalg.norm(final(coarse) - ref)
    e2 = np.linalg.norm(final(2 * coarse) - ref)
    return float(np.log2(e1 / e2))


def linear_field_error(seed: int, scheme: str, hidden: int = 5, channels: int = 3, n_obs: int = 6) -> float:
    """Max |z(T) - (z0 + M (X(T) - X(t0)))| for a constant field M."""
    rng = np.random.default_rng(seed)
    params = CdeParams.init(channels, hidden, width=8, rng=rng)
    m = np.tanh(rng.normal(size=(hidden, channels)))
    last_w, last_b = params.field[-1]
    last_w.data[...] = 0.0
    last_b.data[...] = np.arctanh(m).reshape(-1)
    times = np.cumsum(rng.uniform(0.2, 3.0, n_obs))
    path = build_path(ObservationSequence.create(times, rng.normal(size=(n_obs, channels - 1))), scheme)
    traj = solve_cde(params, path, [times[-1]])
    z0 = (np.concatenate([[times[0]], path.knot_values[0, 1:]]) @ params.init_w.data) + params.init_b.data
    expected = z0 + m @ (path.knot_values[-1] - path.knot_values[0])
    return float(np.max(np.abs(traj.states.data[-1] - expected)))
