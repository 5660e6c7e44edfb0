"""Neural CDE trunk: initial map, vector field, RK4 controlled integration, readout.

The hidden state obeys ``dz = f(z) dX``; integrating over the path parameter
``s`` this is ``dz/ds = f(z) @ dX/ds``.  Each knot interval is split into a
fixed number of RK4 steps (knots are always step boundaries) and the whole
solve is recorded on the tape, so gradients are exact for the discretization.
Several paths are integrated together, one row of the state per path; paths
with fewer steps are padded with zero increments, which leaves their state
untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .errors import DivergenceError, DimensionError
from .layers import dense, mlp
from .paths import ControlPath
from .training import History, fit

DEFAULT_SUBSTEPS = 4


@dataclass
class CdeParams:
    channels: int   # path channels including time
    hidden: int
    width: int
    init_w: Tensor  # [channels, hidden]
    init_b: Tensor
    field: list[tuple[Tensor, Tensor]]
    readout_w: Tensor | None  # [hidden, 1]
    readout_b: Tensor | None

    @classmethod
    def init(cls, channels: int, hidden: int = 16, width: int = 64,
             rng: np.random.Generator | None = None) -> "CdeParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        iw, ib = dense(rng, channels, hidden)
        field = [dense(rng, hidden, width), dense(rng, width, width),
                 dense(rng, width, hidden * channels)]
        rw, rb = dense(rng, hidden, 1)
        return cls(channels, hidden, width, iw, ib, field, rw, rb)

    def tensors(self, prefix: str = "cde") -> dict[str, Tensor]:
        out = {f"{prefix}.init.w": self.init_w, f"{prefix}.init.b": self.init_b}
        for i, (w, b) in enumerate(self.field):
            out[f"{prefix}.field.{i}.w"] = w
            out[f"{prefix}.field.{i}.b"] = b
        if self.readout_w is not None:
            out[f"{prefix}.readout.w"] = self.readout_w
            out[f"{prefix}.readout.b"] = self.readout_b
        return out

    def trunk_tensors(self, prefix: str = "cde") -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors(prefix).items() if ".readout." not in k}


@dataclass
class CdeTrajectory:
    times: np.ndarray
    states: Tensor  # [T, hidden], row i is z(times[i])

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i: int) -> Tensor:
        return ops.take(self.states, [i]).reshape(self.states.shape[1])


def initial_map(params: CdeParams, t0, x0=None) -> Tensor:
    """z0 = W [t0; x0] + b.  Either pass ``(t0, x0)`` or a ready [..., channels] array as ``t0``."""
    if x0 is not None:
        inp = np.concatenate([[float(t0)], np.asarray(x0, dtype=np.float64).reshape(-1)])
    else:
        inp = t0.data if isinstance(t0, Tensor) else np.asarray(t0, dtype=np.float64)
    if inp.shape[-1] != params.channels:
        raise DimensionError(f"initial map expects {params.channels} channels, got {inp.shape[-1]}")
    return ops.linear(Tensor(inp), params.init_w, params.init_b)


def vector_field_eval(params: CdeParams, z: Tensor) -> Tensor:
    """f(z) reshaped to [..., hidden, channels]; entries lie in (-1, 1)."""
    out = mlp(z, params.field, final=ops.tanh)
    return out.reshape(z.shape[:-1] + (params.hidden, params.channels))


# ------------------------------------------------------------------ planning

@dataclass
class SolvePlan:
    """Precomputed RK4 control increments for a batch of paths."""
    x0: np.ndarray            # [B, C] path value at the start
    increments: np.ndarray    # [S, 3, B, C, 1] stage increments dX/ds * ds at start/mid/end
    eval_steps: list[np.ndarray]  # per path: step index (0..S) of each evaluation point
    eval_times: list[np.ndarray]

    @property
    def batch(self) -> int:
        return self.x0.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def _path_steps(path: ControlPath, eval_params: np.ndarray, substeps: int):
    """Step list (interval, u0, u1) and the step index reached at each eval parameter."""
    k = path.knots
    steps: list[tuple[int, float, float]] = []
    bounds = [k[0]]
    inner = np.unique(eval_params)
    for j in range(path.n_intervals):
        lo, hi = k[j], k[j + 1]
        pts = np.linspace(lo, hi, substeps + 1)
        extra = inner[(inner > lo) & (inner < hi)]
        if extra.size:
            pts = np.union1d(pts, extra)
        us = (pts - lo) / (hi - lo)
        us[-1] = 1.0
        for i in range(len(pts) - 1):
            steps.append((j, us[i], us[i + 1]))
            bounds.append(pts[i + 1])
    bounds = np.asarray(bounds)
    idx = np.empty(eval_params.size, dtype=np.intp)
    for i, p in enumerate(eval_params):
        if p <= k[0]:
            idx[i] = 0
        elif p >= k[-1]:
            idx[i] = len(steps)
        else:
            idx[i] = int(np.flatnonzero(bounds == p)[0])
    return steps, idx


def plan_solve(paths: list[ControlPath], eval_times: list, substeps: int = DEFAULT_SUBSTEPS,
               times_are_params: bool = False) -> SolvePlan:
    """Build the step grid for each path.

    ``eval_times`` are physical times mapped through ``path.param_of_time``
    (for rectilinear paths: the point where that time's data is absorbed),
    unless ``times_are_params`` is set.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    per_path = []
    for path, times in zip(paths, eval_times):
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if np.any(np.diff(times) < 0):
            raise ValueError("evaluation times must be non-decreasing")
        params = times if times_are_params else np.array([path.param_of_time(t) for t in times])
        per_path.append(_path_steps(path, params, substeps))
    n_steps = max((len(s) for s, _ in per_path), default=0)
    b = len(paths)
    c = paths[0].n_channels if paths else 0
    inc = np.zeros((n_steps, 3, b, c, 1))
    x0 = np.zeros((b, c))
    for bi, (path, (steps, _)) in enumerate(zip(paths, per_path)):
        if path.n_channels != c:
            raise DimensionError("all paths in a batch need the same channel count")
        x0[bi] = path.knot_values[0]
        if not steps:
            continue
        js = np.array([s[0] for s in steps])
        u0 = np.array([s[1] for s in steps])
        u1 = np.array([s[2] for s in steps])
        du = (u1 - u0)[:, None]
        for stage, u in enumerate((u0, 0.5 * (u0 + u1), u1)):
            _, bb, cc, dd = np.moveaxis(path.coeffs[js], -1, 0)  # each [n, C]
            uu = u[:, None]
            inc[: len(steps), stage, bi, :, 0] = (bb + uu * (2.0 * cc + 3.0 * uu * dd)) * du
    return SolvePlan(x0, inc, [i for _, i in per_path],
                     [np.asarray(t, dtype=np.float64).reshape(-1) for t in eval_times])


# ------------------------------------------------------------------- solving

def _apply(field, z: Tensor, dx: np.ndarray) -> Tensor:
    return ops.matmul(field(z), Tensor(dx)).reshape(z.shape)  # [B, h, C] @ [B, C, 1] -> [B, h]


def integrate(params: CdeParams, plan: SolvePlan, field=None) -> Tensor:
    """Run RK4 over the plan; returns every state stacked as [S+1, B, hidden].

    ``field`` overrides the learned vector field with any callable mapping
    z [B, h] to [B, h, C] (used for solver studies on smooth fields).
    """
    f = field if field is not None else (lambda z: vector_field_eval(params, z))
    z = initial_map(params, plan.x0)
    states = [z]
    for k in range(plan.n_steps):
        v1, v2, v4 = plan.increments[k]
        k1 = _apply(f, z, v1)
        k2 = _apply(f, z + k1 * 0.5, v2)
        k3 = _apply(f, z + k2 * 0.5, v2)
        k4 = _apply(f, z + k3, v4)
        z = z + (k1 + k4) * (1.0 / 6.0) + (k2 + k3) * (1.0 / 3.0)
        if np.isnan(z.data).any():
            raise DivergenceError(f"NaN in CDE state at solver step {k}", step=k)
        states.append(z)
    return ops.stack(states, axis=0)


def gather_evals(all_states: Tensor, plan: SolvePlan, pad_to: int | None = None) -> Tensor:
    """Pick the states at the evaluation points -> [B, T, hidden].

    Rows are padded at the end (repeating the last state) up to ``pad_to``.
    """
    s1, b, h = all_states.shape
    t = pad_to if pad_to is not None else max(len(e) for e in plan.eval_steps)
    idx = np.empty((b, t), dtype=np.intp)
    for bi, steps in enumerate(plan.eval_steps):
        steps = steps if len(steps) else np.array([0])
        row = np.concatenate([steps, np.full(t - len(steps), steps[-1])]) if len(steps) < t else steps[:t]
        idx[bi] = row * b + bi
    flat = all_states.reshape(s1 * b, h)
    return ops.take(flat, idx.reshape(-1)).reshape(b, t, h)


def solve_cde(params: CdeParams, path: ControlPath, eval_times, substeps: int = DEFAULT_SUBSTEPS,
              times_are_params: bool = False, field=None) -> CdeTrajectory:
    plan = plan_solve([path], [eval_times], substeps, times_are_params)
    states = gather_evals(integrate(params, plan, field), plan)
    return CdeTrajectory(plan.eval_times[0], states.reshape(states.shape[1], params.hidden))


def readout_forecast(params: CdeParams, traj: CdeTrajectory | Tensor) -> Tensor:
    """Affine readout, one scalar per evaluation time."""
    states = traj.states if isinstance(traj, CdeTrajectory) else traj
    if params.readout_w is None:
        raise ValueError("forecasting head has been detached from these parameters")
    out = ops.linear(states, params.readout_w, params.readout_b)
    return out.reshape(out.shape[:-1])


# --------------------------------------------------------------- pretraining

@dataclass
class SeriesExample:
    """One patient's structured series: control path, prediction times, targets."""
    path: ControlPath
    eval_times: np.ndarray
    targets: np.ndarray


def batch_forecast(params: CdeParams, plan: SolvePlan) -> Tensor:
    """Readout at every real evaluation point of the plan, flattened path by path."""
    lengths = [len(e) for e in plan.eval_steps]
    t = max(lengths)
    preds = readout_forecast(params, gather_evals(integrate(params, plan), plan, t))  # [B, T]
    keep = np.concatenate([bi * t + np.arange(n) for bi, n in enumerate(lengths)])
    return ops.take(preds.reshape(-1), keep)


def pretrain(params: CdeParams, examples: list[SeriesExample], epochs: int = 200, lr: float = 1e-3,
             clip: float | None = 1.0, substeps: int = DEFAULT_SUBSTEPS,
             val_examples: list[SeriesExample] | None = None) -> tuple[CdeParams, History]:
    """Fit trunk + forecasting head by MSE on next-observation targets (in place)."""
    plan = plan_solve([e.path for e in examples], [e.eval_times for e in examples], substeps)
    target = np.concatenate([e.targets for e in examples])
    val_fn = None
    if val_examples:
        vplan = plan_solve([e.path for e in val_examples], [e.eval_times for e in val_examples], substeps)
        vtarget = np.concatenate([e.targets for e in val_examples])

        def val_fn():
            return float(np.mean((batch_forecast(params, vplan).data - vtarget) ** 2))

    hist = fit(params.tensors(), lambda _: ops.mse(batch_forecast(params, plan), target),
               epochs, lr=lr, clip=clip, val_fn=val_fn)
    return params, hist


def detach_readout(params: CdeParams) -> CdeParams:
    """Copy of the trunk (bit-exact) without the forecasting head."""
    copy = lambda t: Tensor(t.data.copy(), requires_grad=True)  # noqa: E731
    return CdeParams(params.channels, params.hidden, params.width, copy(params.init_w),
                     copy(params.init_b), [(copy(w), copy(b)) for w, b in params.field], None, None)


__all__ = [
    "CdeParams", "CdeTrajectory", "SeriesExample", "SolvePlan", "batch_forecast", "detach_readout",
    "gather_evals", "initial_map", "integrate", "plan_solve", "pretrain", "readout_forecast",
    "solve_cde", "vector_field_eval",
]
