"""Closed-loop simulation on the transformed grid and on-trajectory costates."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .model import reference_at
from .transform import active_mode, advance, grid_times, step_jacobian, step_size


def stage_cost(p, grid, sw, khat, x, u, r=None):
    """Scaled running cost at step ``khat``; batched over leading axes."""
    if not 0 <= khat < grid.Nprime:
        raise ValueError(f"no stage cost at index {khat}")
    if r is None:
        r = reference_at(p, grid_times(p, grid, sw, khat), sw)
    h = np.asarray(step_size(p, grid, sw, khat))
    e = np.asarray(x, dtype=float) - r
    u = np.asarray(u, dtype=float)
    q = np.einsum("...i,ij,...j->...", e, p.cost.Qbar, e)
    rr = np.einsum("...i,ij,...j->...", u, p.cost.Rbar, u)
    return 0.5 * (q + rr) * h


def terminal_cost(p, x, r):
    e = np.asarray(x, dtype=float) - r
    return np.einsum("...i,ij,...j->...", e, p.cost.S, e)


class ZeroPolicy:
    kind = "zero-control"

    def __call__(self, p, grid, sw, khat, x):
        return np.zeros(np.shape(x)[:-1] + (p.m,))


class CostatePolicy:
    """Feedback from a trained costate network: ``u = -Rbar^-1 g(x)^T lambda_hat``."""

    kind = "costate-feedback"

    def __init__(self, net):
        self.net = net

    def __call__(self, p, grid, sw, khat, x):
        lam = self.net.predict(khat, sw, x)
        return control_from_costate(p, grid, khat, x, lam)


class CallablePolicy:
    kind = "custom"

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, p, grid, sw, khat, x):
        return np.asarray(self.fn(p, grid, sw, khat, x), dtype=float)


def control_from_costate(p, grid, khat, x, lam):
    """Stationarity of the scaled Hamiltonian; the step length cancels."""
    if not np.all(np.isfinite(lam)):
        raise DivergenceError(f"non-finite costate at step {khat}", khat=khat, x=x)
    _, v = active_mode(p, grid, khat)
    g = p.mode(v).input_map(x)
    gl = np.einsum("...ij,...i->...j", g, lam)
    if p.m == 1:
        return -gl / p.cost.Rbar[0, 0]
    return -np.linalg.solve(p.cost.Rbar, gl[..., None])[..., 0]


@dataclass(frozen=True)
class Trajectory:
    sw: np.ndarray
    that_grid: np.ndarray
    t_grid: np.ndarray
    segments: np.ndarray
    modes: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    refs: np.ndarray
    stage_costs: np.ndarray
    terminal_cost: float
    total_cost: float

    def rms_error(self, coord, that_range=None):
        e = self.states[:, coord] - self.refs[:, coord]
        if that_range is not None:
            lo, hi = that_range
            e = e[(self.that_grid >= lo) & (self.that_grid <= hi)]
        return float(np.sqrt(np.mean(e * e)))

    def to_csv(self, path, header_comment=None):
        n, m = self.states.shape[1], self.controls.shape[1]
        cols = (["khat", "that", "t", "segment", "mode"] + [f"x{i + 1}" for i in range(n)]
                + [f"r{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + ["stage_cost"])
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            N = self.controls.shape[0]
            for k in range(N + 1):
                u = [repr(float(c)) for c in self.controls[k]] if k < N else [""] * m
                cost = self.stage_costs[k] if k < N else self.terminal_cost
                w.writerow([k, repr(float(self.that_grid[k])), repr(float(self.t_grid[k])),
                            int(self.segments[k]), int(self.modes[k])]
                           + [repr(float(a)) for a in self.states[k]]
                           + [repr(float(a)) for a in self.refs[k]] + u + [repr(float(cost))])


def _grid_meta(p, grid):
    ks = np.arange(grid.Nprime + 1)
    segs = np.minimum(ks // grid.steps_per_segment, grid.K)
    modes = np.array(p.sequence)[segs]
    return ks, segs, modes


def rollout_batch(p, grid, sw, policy, x0, limit=None):
    """Simulate several (switching vector, initial state) pairs at once.

    Returns ``(states, controls, stage_costs, terminal, refs, t_grid,
    diverged, diverged_at)`` with a leading batch axis.  Diverged rows are
    frozen at their last finite state and flagged instead of raising;
    ``diverged_at`` is the step index of the failure or -1.
    """
    sw = np.atleast_2d(np.asarray(sw, dtype=float))
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    B = max(sw.shape[0], x.shape[0])
    sw = np.broadcast_to(sw, (B, sw.shape[1]))
    x = np.broadcast_to(x, (B, p.n)).copy()
    limit = 1e3 * p.omega.diameter if limit is None else limit
    N = grid.Nprime
    t_grid = grid_times(p, grid, sw)
    refs = reference_at(p, t_grid, sw[:, None, :] if p.mode_references else None)
    states = np.empty((B, N + 1, p.n))
    controls = np.empty((B, N, p.m))
    costs = np.empty((B, N))
    diverged = np.zeros(B, dtype=bool)
    diverged_at = np.full(B, -1)
    states[:, 0] = x
    for k in range(N):
        u = policy(p, grid, sw, k, x)
        u = np.where(diverged[:, None], 0.0, u)
        costs[:, k] = stage_cost(p, grid, sw, k, x, u, refs[:, k])
        controls[:, k] = u
        with np.errstate(all="ignore"):
            nxt = advance(p, grid, sw, k, x, u)
        bad = ~np.all(np.isfinite(nxt), axis=1) | (np.max(np.abs(np.nan_to_num(nxt, nan=np.inf)), axis=1) > limit)
        newly = bad & ~diverged
        diverged_at[newly] = k
        diverged |= bad
        x = np.where(diverged[:, None], x, nxt)
        states[:, k + 1] = x
    term = terminal_cost(p, x, refs[:, N])
    return states, controls, costs, term, refs, t_grid, diverged, diverged_at


def rollout(p, grid, sw, policy, x0, limit=None):
    """Closed-loop trajectory for one switching vector and initial state."""
    sw = np.atleast_1d(np.asarray(sw, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < p.omega.state_lo) or np.any(x0 > p.omega.state_hi):
        warnings.warn(f"initial state {x0.tolist()} lies outside omega", stacklevel=2)
    states, controls, costs, term, refs, t_grid, diverged, at = rollout_batch(
        p, grid, sw[None], policy, x0[None], limit)
    if diverged[0]:
        k = int(at[0])
        raise DivergenceError(f"trajectory diverged after step {k} (policy not admissible)",
                              khat=k, x=states[0, k])
    ks, segs, modes = _grid_meta(p, grid)
    terminal = float(term[0])
    return Trajectory(sw=sw, that_grid=grid.that(ks), t_grid=t_grid[0], segments=segs, modes=modes,
                      states=states[0], controls=controls[0], refs=refs[0], stage_costs=costs[0],
                      terminal_cost=terminal, total_cost=float(np.sum(costs[0]) + terminal))


def exact_costates_along(traj, p, grid, sw=None):
    """Backward costate recursion along a stored trajectory, controls frozen."""
    sw = traj.sw if sw is None else np.atleast_1d(np.asarray(sw, dtype=float))
    N = grid.Nprime
    lam = np.empty((N + 1, p.n))
    lam[N] = p.terminal_factor * p.cost.S @ (traj.states[N] - traj.refs[N])
    for k in range(N - 1, -1, -1):
        h = float(step_size(p, grid, sw, k))
        jac = step_jacobian(p, grid, sw, k, traj.states[k], traj.controls[k])
        lam[k] = p.cost.Qbar @ (traj.states[k] - traj.refs[k]) * h + jac.T @ lam[k + 1]
    return lam


__all__ = [
    "stage_cost", "terminal_cost", "ZeroPolicy", "CostatePolicy", "CallablePolicy",
    "control_from_costate", "Trajectory", "rollout", "rollout_batch", "exact_costates_along",
]
