"""Switching-time parametrization on a transformed time axis.

Segment ``j`` of the transformed axis is the unit interval ``[j, j+1]`` and
maps affinely onto ``[t_j, t_{j+1}]`` with ``t_0 = t0`` and ``t_{K+1} = tf``.
Dynamics and stage costs on segment ``j`` are scaled by its physical length
``sigma_j``.  Switching-time arrays may carry leading batch axes ``(..., K)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError


@dataclass(frozen=True)
class TransformedGrid:
    K: int
    dthat: float

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("switch count must be non-negative")
        if not self.dthat > 0:
            raise ValueError("dthat must be positive")
        per = 1.0 / self.dthat
        if abs(per - round(per)) > 1e-9 * per:
            raise ValueError(f"1/dthat = {per} is not an integer; segments would not align")

    @classmethod
    def from_step(cls, K, dthat):
        """Build a grid, nudging ``dthat`` so every segment holds whole steps."""
        per = max(1, int(round(1.0 / dthat)))
        adjusted = 1.0 / per
        if abs(adjusted - dthat) > 1e-12 * dthat:
            warnings.warn(f"dthat adjusted from {dthat} to {adjusted} to align segments", stacklevel=2)
        return cls(int(K), adjusted)

    @property
    def steps_per_segment(self):
        return int(round(1.0 / self.dthat))

    @property
    def Nprime(self):
        return (self.K + 1) * self.steps_per_segment

    def that(self, khat):
        return np.asarray(khat) * self.dthat


def switch_vector(times, t0, tf, margin=0.0):
    """Validate an ordered switching-time vector."""
    sw = np.atleast_1d(np.asarray(times, dtype=float))
    bounds = np.concatenate([[t0], sw, [tf]])
    gaps = np.diff(bounds)
    if not np.all(np.isfinite(sw)) or np.any(gaps <= 0):
        raise ValueError(f"switching times {sw.tolist()} are not strictly inside ({t0}, {tf}) and ordered")
    if margin > 0 and np.any(gaps < margin * (1 - 1e-12)):
        raise ValueError(f"switching times {sw.tolist()} violate margin {margin}")
    return sw


def _bounds(t0, tf, sw):
    sw = np.asarray(sw, dtype=float)
    lead = sw.shape[:-1]
    return np.concatenate([np.full(lead + (1,), float(t0)), sw, np.full(lead + (1,), float(tf))], axis=-1)


def segment_scales(t0, tf, sw):
    """Physical length of every segment, shape ``(..., K+1)``."""
    return np.diff(_bounds(t0, tf, sw), axis=-1)


def segment_scale(t0, tf, sw, j):
    K = np.shape(sw)[-1]
    if not 0 <= j <= K:
        raise ValueError(f"segment index {j} outside [0, {K}]")
    return segment_scales(t0, tf, sw)[..., j]


def map_time(t0, tf, sw, that):
    """Physical time for transformed time ``that`` in ``[0, K+1]``."""
    sw = np.asarray(sw, dtype=float)
    K = sw.shape[-1]
    that = np.asarray(that, dtype=float)
    if np.any(that < 0) or np.any(that > K + 1):
        raise ValueError(f"transformed time outside [0, {K + 1}]")
    bounds = _bounds(t0, tf, sw)
    j = np.minimum(np.floor(that).astype(int), K)
    shape = np.broadcast_shapes(bounds.shape[:-1], j.shape)
    b = np.broadcast_to(bounds, shape + bounds.shape[-1:])
    jj = np.broadcast_to(j, shape)[..., None]
    start = np.take_along_axis(b, jj, axis=-1)[..., 0]
    stop = np.take_along_axis(b, jj + 1, axis=-1)[..., 0]
    return start + (stop - start) * (that - j)


def active_segment(grid, khat):
    """Segment index for step ``khat``; the terminal index belongs to the last segment."""
    if not 0 <= khat <= grid.Nprime:
        raise ValueError(f"step {khat} outside [0, {grid.Nprime}]")
    return min(khat // grid.steps_per_segment, grid.K)


def active_mode(p, grid, khat):
    j = active_segment(grid, khat)
    return j, p.sequence[j]


def grid_times(p, grid, sw, khat=None):
    """Physical times of grid indices (all of them when ``khat`` is None).

    Uses integer step arithmetic so segment boundaries land exactly on the
    switching times.
    """
    bounds = _bounds(p.t0, p.tf, sw)
    per = grid.steps_per_segment
    ks = np.arange(grid.Nprime + 1) if khat is None else np.asarray(khat)
    j = np.minimum(ks // per, grid.K)
    frac = (ks - j * per) / per
    start = bounds[..., j]
    stop = bounds[..., j + 1]
    return start + (stop - start) * frac


def step_size(p, grid, sw, khat):
    """Euler step in physical time at ``khat``: ``sigma_j * dthat``."""
    j = active_segment(grid, khat)
    return segment_scales(p.t0, p.tf, sw)[..., j] * grid.dthat


def advance(p, grid, sw, khat, x, u):
    """Euler step without the finiteness guard."""
    _, v = active_mode(p, grid, khat)
    h = np.asarray(step_size(p, grid, sw, khat))
    x = np.asarray(x, dtype=float)
    return x + p.mode(v).derivative(x, u) * h[..., None]


def discrete_step(p, grid, sw, khat, x, u):
    """One Euler step of the transformed dynamics from index ``khat``."""
    if not 0 <= khat < grid.Nprime:
        raise ValueError(f"no dynamics step from index {khat}")
    out = advance(p, grid, sw, khat, x, u)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite state after step {khat}", khat=khat, x=x)
    return out


def step_jacobian(p, grid, sw, khat, x, u):
    """``d x_{k+1} / d x_k`` with the control held fixed."""
    j, v = active_mode(p, grid, khat)
    mode = p.mode(v)
    h = np.asarray(step_size(p, grid, sw, khat))
    jac = mode.drift_jacobian(x) + mode.input_jacobian_term(x, u)
    return np.eye(p.n) + jac * h[..., None, None]


def sample_switch_vectors(rng, size, t0, tf, K, margin):
    """Uniform ordered switching vectors with every gap at least ``margin``."""
    room = (tf - t0) - (K + 1) * margin
    if room <= 0:
        raise ValueError("switch margin leaves no room for switching times")
    u = np.sort(rng.uniform(0.0, room, size=(size, K)), axis=-1)
    return t0 + margin * np.arange(1, K + 1) + u


__all__ = [
    "TransformedGrid", "switch_vector", "segment_scales", "segment_scale", "map_time",
    "active_segment", "active_mode", "grid_times", "step_size", "advance", "discrete_step",
    "step_jacobian", "sample_switch_vectors",
]
