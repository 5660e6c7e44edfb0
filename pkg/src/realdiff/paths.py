"""Control paths built from irregular, partially observed sequences.

A path is stored as one cubic per knot interval and per channel,
``a + b*u + c*u**2 + d*u**3`` with ``u`` in [0, 1] the normalized position
inside the interval.  Channel 0 is always the observation time.

Schemes:

* ``linear``            piecewise linear.
* ``hermite_backward``  cubic Hermite, knot slopes are backward differences
                        (first slope 0); the piece on [t_i, t_{i+1}] only sees
                        data at times <= t_{i+1}.
* ``natural_cubic``     global natural spline; not causal.
* ``rectilinear``       every new observation adds a segment that advances
                        time with values frozen, then one that moves the
                        values with time frozen.  The path parameter advances
                        by 1 per segment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BuildError

SCHEMES = ("linear", "hermite_backward", "natural_cubic", "rectilinear")
CAUSAL_SCHEMES = ("hermite_backward", "rectilinear")


@dataclass(frozen=True)
class ObservationSequence:
    times: np.ndarray   # (n,)
    values: np.ndarray  # (n, c); entries where mask is False are ignored
    mask: np.ndarray    # (n, c) bool, True = observed

    @classmethod
    def create(cls, times, values, mask=None) -> "ObservationSequence":
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if mask is None:
            mask = np.isfinite(values)
        mask = np.asarray(mask, dtype=bool)
        if times.size < 1:
            raise BuildError("observation sequence is empty")
        if values.shape[0] != times.size or mask.shape != values.shape or values.shape[1] < 1:
            raise BuildError(f"values {values.shape} / mask {mask.shape} do not match {times.size} times")
        if np.any(np.diff(times) <= 0):
            raise BuildError("observation times must be strictly increasing")
        values = np.where(mask, values, np.nan)
        return cls(times, values, mask)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ControlPath:
    scheme: str
    knots: np.ndarray        # (K+1,) path-parameter knots
    knot_values: np.ndarray  # (K+1, c+1) exact values at the knots
    coeffs: np.ndarray       # (K, c+1, 4)
    obs_times: np.ndarray    # (n,) physical observation times
    obs_params: np.ndarray   # (n,) path parameter where observation i is fully absorbed

    @property
    def n_channels(self) -> int:
        return self.knot_values.shape[1]

    @property
    def n_intervals(self) -> int:
        return self.coeffs.shape[0]

    def interval_of(self, s: float) -> int:
        j = int(np.searchsorted(self.knots, s, side="right")) - 1
        return min(max(j, 0), max(self.n_intervals - 1, 0))

    def eval_point(self, s: float) -> np.ndarray:
        """Path value (time channel first) at path parameter ``s``; clamped outside."""
        k = self.knots
        if s <= k[0] or self.n_intervals == 0:
            return self.knot_values[0].copy() if s <= k[0] else self.knot_values[-1].copy()
        if s >= k[-1]:
            return self.knot_values[-1].copy()
        j = self.interval_of(s)
        if s == k[j]:
            return self.knot_values[j].copy()
        u = (s - k[j]) / (k[j + 1] - k[j])
        a, b, c, d = np.moveaxis(self.coeffs[j], -1, 0)
        return a + u * (b + u * (c + u * d))

    def eval_derivative(self, s: float) -> np.ndarray:
        """dX/ds; right-hand at knots, left-hand at the final knot, zero outside."""
        k = self.knots
        if self.n_intervals == 0 or s < k[0] or s > k[-1]:
            return np.zeros(self.n_channels)
        j = self.n_intervals - 1 if s == k[-1] else self.interval_of(s)
        u = (s - k[j]) / (k[j + 1] - k[j])
        return self.interval_derivative(j, np.array([u]))[0]

    def interval_derivative(self, j: int, u: np.ndarray) -> np.ndarray:
        """dX/ds of interval ``j``'s own cubic at local positions ``u`` -> (len(u), c+1)."""
        u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
        _, b, c, d = np.moveaxis(self.coeffs[j], -1, 0)
        return (b + u * (2.0 * c + 3.0 * u * d)) / (self.knots[j + 1] - self.knots[j])

    def param_of_time(self, t: float) -> float:
        """Path parameter at which everything observed up to time ``t`` is absorbed."""
        if self.scheme != "rectilinear":
            return float(t)
        ts, ps = self.obs_times, self.obs_params
        if t <= ts[0]:
            return float(ps[0])
        if t >= ts[-1]:
            return float(ps[-1])
        i = int(np.searchsorted(ts, t, side="left"))
        if ts[i] == t:
            return float(ps[i])
        return float(ps[i - 1] + (t - ts[i - 1]) / (ts[i] - ts[i - 1]))

    def reparameterized(self, scale: float, shift: float = 0.0) -> "ControlPath":
        """Same image, knots mapped by ``s -> scale*s + shift`` (scale > 0)."""
        return ControlPath(self.scheme, self.knots * scale + shift, self.knot_values, self.coeffs,
                           self.obs_times, self.obs_params * scale + shift)


def _hermite_coeffs(y0, y1, m0, m1, h):
    """Cubic coefficients in u = (t - t0)/h from end values and d/dt slopes."""
    b = m0 * h
    c = 3.0 * (y1 - y0) - (2.0 * m0 + m1) * h
    d = 2.0 * (y0 - y1) + (m0 + m1) * h
    return np.stack([y0, b, c, d], axis=-1)


def _piece_slopes(tau: np.ndarray, y: np.ndarray, scheme: str) -> tuple[np.ndarray, np.ndarray]:
    """Left/right end slopes of each piece between consecutive observed points."""
    secant = np.diff(y) / np.diff(tau)
    if scheme == "linear":
        return secant, secant
    if scheme == "hermite_backward":
        knot = np.concatenate([[0.0], secant])
        return knot[:-1], knot[1:]
    if scheme == "natural_cubic":
        if tau.size == 2:
            return secant, secant
        knot = CubicSpline(tau, y, bc_type="natural").derivative()(tau)
        return knot[:-1], knot[1:]
    raise BuildError(f"unknown scheme {scheme!r}")


def _channel_on_grid(times, obs_mask, y_all, scheme):
    """Knot values and per-interval end slopes of one channel on the full time grid.

    The channel is interpolated through its own observed points only; past its
    last observation it is held constant.
    """
    tau = times[obs_mask]
    y = y_all[obs_mask]
    n = times.size
    vals = np.empty(n)
    m_left = np.zeros(n - 1)
    m_right = np.zeros(n - 1)
    if tau.size == 1:
        vals[:] = y[0]
        return vals, m_left, m_right
    sl, sr = _piece_slopes(tau, y, scheme)
    if tau.size == n:
        return y.copy(), sl, sr
    coeffs = _hermite_coeffs(y[:-1], y[1:], sl, sr, np.diff(tau))  # (P, 4)

    def piece_eval(k, t):
        h = tau[k + 1] - tau[k]
        u = (t - tau[k]) / h
        a, b, c, d = coeffs[k]
        return a + u * (b + u * (c + u * d)), (b + u * (2 * c + 3 * u * d)) / h

    last = tau[-1]
    for i, t in enumerate(times):
        if obs_mask[i]:
            vals[i] = y_all[i]
        elif t > last:
            vals[i] = y[-1]
        else:
            k = int(np.searchsorted(tau, t, side="right")) - 1
            vals[i] = piece_eval(k, t)[0]
    for j in range(n - 1):
        if times[j] >= last:
            continue
        k = int(np.searchsorted(tau, times[j], side="right")) - 1
        m_left[j] = piece_eval(k, times[j])[1]
        m_right[j] = piece_eval(k, times[j + 1])[1]
    return vals, m_left, m_right


def forward_fill(obs: ObservationSequence) -> tuple[np.ndarray, np.ndarray]:
    """Carry the latest observed value forward; also return time since previous row."""
    if not obs.mask[0].all():
        raise BuildError("first observation must be fully observed")
    out = obs.values.copy()
    for i in range(1, out.shape[0]):
        miss = ~obs.mask[i]
        out[i, miss] = out[i - 1, miss]
    deltas = np.concatenate([[0.0], np.diff(obs.times)])
    return out, deltas


def _check(obs: ObservationSequence, scheme: str) -> None:
    if scheme not in SCHEMES:
        raise BuildError(f"unknown interpolation scheme {scheme!r}; expected one of {SCHEMES}")
    empty = np.flatnonzero(~obs.mask.any(axis=0))
    if empty.size:
        raise BuildError(f"channel {int(empty[0])} has no observed values")
    if not obs.mask[0].all():
        raise BuildError("first observation must have every channel observed")


def build_path(obs: ObservationSequence, scheme: str) -> ControlPath:
    _check(obs, scheme)
    times = obs.times
    n, c = obs.values.shape
    if scheme == "rectilinear":
        return _rectilinear(obs)
    if n == 1:
        kv = np.concatenate([[times[0]], obs.values[0]])[None, :]
        return ControlPath(scheme, times.copy(), kv, np.zeros((0, c + 1, 4)), times.copy(), times.copy())
    vals = np.empty((n, c + 1))
    m_left = np.empty((n - 1, c + 1))
    m_right = np.empty((n - 1, c + 1))
    full = np.ones(n, dtype=bool)
    vals[:, 0], m_left[:, 0], m_right[:, 0] = _channel_on_grid(times, full, times, scheme)
    for ch in range(c):
        v, ml, mr = _channel_on_grid(times, obs.mask[:, ch], obs.values[:, ch], scheme)
        vals[:, ch + 1], m_left[:, ch + 1], m_right[:, ch + 1] = v, ml, mr
    h = np.diff(times)[:, None]
    coeffs = _hermite_coeffs(vals[:-1], vals[1:], m_left, m_right, h)
    return ControlPath(scheme, times.copy(), vals, coeffs, times.copy(), times.copy())


def _rectilinear(obs: ObservationSequence) -> ControlPath:
    filled, _ = forward_fill(obs)
    times = obs.times
    n, c = filled.shape
    kv = np.empty((2 * n - 1, c + 1))
    kv[0::2, 0] = times
    kv[0::2, 1:] = filled
    kv[1::2, 0] = times[1:]
    kv[1::2, 1:] = filled[:-1]
    knots = np.arange(2 * n - 1, dtype=np.float64)
    coeffs = np.zeros((2 * n - 2, c + 1, 4))
    coeffs[:, :, 0] = kv[:-1]
    coeffs[:, :, 1] = kv[1:] - kv[:-1]
    return ControlPath("rectilinear", knots, kv, coeffs, times.copy(), knots[0::2].copy())
