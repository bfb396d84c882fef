"""Exact affine costates for all-linear problems, plus finite-difference checks.

For linear modes and quadratic cost the costate is affine in the state,
``lambda_k = Theta_k x_k + theta_k``.  The recursion below closes the
SNAC costate recursion under that ansatz using the same Euler-discretized
matrices and terminal factor as the trainer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ProblemValidationError
from .model import is_linear, reference_at
from .rollout import rollout
from .transform import active_mode, grid_times, step_size


@dataclass(frozen=True)
class AffineCostateSolution:
    Theta: np.ndarray  # (N'+1, n, n)
    theta: np.ndarray  # (N'+1, n)
    gain: np.ndarray  # (N', m, n): u_k = -gain_k x - offset_k
    offset: np.ndarray  # (N', m)
    next_map: np.ndarray  # (N', n, n): lambda_{k+1} = next_map_k x_k + next_offset_k
    next_offset: np.ndarray  # (N', n)


def _check_condition(M, k):
    cond = np.linalg.cond(M)
    if cond > 1e12:
        warnings.warn(f"ill-conditioned costate solve at step {k} (cond {cond:.2e})", stacklevel=3)


def lq_solve(p, grid, sw) -> AffineCostateSolution:
    """Backward affine costate recursion for a fixed switching vector."""
    if not is_linear(p):
        raise ProblemValidationError("oracle requires linear modes")
    sw = np.atleast_1d(np.asarray(sw, dtype=float))
    n, m, N = p.n, p.m, grid.Nprime
    refs = reference_at(p, grid_times(p, grid, sw), sw)
    cS = p.terminal_factor
    Theta = np.empty((N + 1, n, n))
    theta = np.empty((N + 1, n))
    gain = np.empty((N, m, n))
    offset = np.empty((N, m))
    next_map = np.empty((N, n, n))
    next_offset = np.empty((N, n))
    Theta[N] = cS * p.cost.S
    theta[N] = -cS * p.cost.S @ refs[N]
    eye = np.eye(n)
    Rinv_bar = np.linalg.inv(p.cost.Rbar)
    for k in range(N - 1, -1, -1):
        _, v = active_mode(p, grid, k)
        mode = p.mode(v)
        h = float(step_size(p, grid, sw, k))
        Ak = eye + mode.A * h
        Bk = mode.B * h
        Qk = p.cost.Qbar * h
        Rk_inv = Rinv_bar / h
        G = Bk @ Rk_inv @ Bk.T
        I_TG = eye + Theta[k + 1] @ G
        _check_condition(I_TG, k)
        # lambda_{k+1} = M (Theta_{k+1} A_k x + theta_{k+1})
        M = np.linalg.solve(I_TG, eye)
        next_map[k] = M @ Theta[k + 1] @ Ak
        next_offset[k] = M @ theta[k + 1]
        Th = Qk + Ak.T @ next_map[k]
        asym = np.max(np.abs(Th - Th.T))
        if asym > 1e-10 * max(1.0, np.max(np.abs(Th))):
            raise ArithmeticError(f"Theta_{k} lost symmetry ({asym:.3g})")
        Theta[k] = 0.5 * (Th + Th.T)
        theta[k] = -Qk @ refs[k] + Ak.T @ next_offset[k]
        gain[k] = Rk_inv @ Bk.T @ next_map[k]
        offset[k] = Rk_inv @ Bk.T @ next_offset[k]
    return AffineCostateSolution(Theta, theta, gain, offset, next_map, next_offset)


def oracle_costate(sol, khat, x):
    """``lambda_k(x) = Theta_k x + theta_k``."""
    return np.asarray(x, dtype=float) @ sol.Theta[khat].T + sol.theta[khat]


def oracle_next_costate(sol, khat, x):
    """Costate one step ahead as a function of the current state (what the SNAC predicts)."""
    return np.asarray(x, dtype=float) @ sol.next_map[khat].T + sol.next_offset[khat]


class OraclePolicy:
    """Optimal affine feedback for one fixed switching vector."""

    kind = "custom"

    def __init__(self, sol):
        self.sol = sol

    def __call__(self, p, grid, sw, khat, x):
        return -(np.asarray(x) @ self.sol.gain[khat].T) - self.sol.offset[khat]


class LinearFeedbackPolicy:
    """``u = -K_k x - k_k``; used for perturbed-gain optimality spot checks."""

    kind = "custom"

    def __init__(self, gain, offset):
        self.gain = np.asarray(gain)
        self.offset = np.asarray(offset)

    def __call__(self, p, grid, sw, khat, x):
        return -(np.asarray(x) @ self.gain[khat].T) - self.offset[khat]


def fd_value_gradient(p, grid, sw, policy, x0, h=1e-4, cost_fn=None):
    """Central differences of closed-loop total cost with respect to ``x0``.

    ``cost_fn(x0) -> J`` replaces the rollout when given.
    """
    x0 = np.asarray(x0, dtype=float)
    if h <= 0:
        raise ValueError("step must be positive")
    if cost_fn is None:
        def cost_fn(z):
            return rollout(p, grid, sw, policy, z).total_cost
    grad = np.empty(x0.size)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        grad[i] = (cost_fn(x0 + e) - cost_fn(x0 - e)) / (2 * h)
    return grad


def lq_solve_batch(p, grid, sws):
    """``lq_solve`` vectorized over switching vectors; returns ``(next_map, next_offset)``.

    Shapes are ``(N', B, n, n)`` and ``(N', B, n)``.
    """
    if not is_linear(p):
        raise ProblemValidationError("oracle requires linear modes")
    sws = np.atleast_2d(np.asarray(sws, dtype=float))
    B, n, N = sws.shape[0], p.n, grid.Nprime
    refs = reference_at(p, grid_times(p, grid, sws), sws[:, None, :] if p.mode_references else None)
    eye = np.eye(n)
    Rinv_bar = np.linalg.inv(p.cost.Rbar)
    Theta = np.broadcast_to(p.terminal_factor * p.cost.S, (B, n, n)).copy()
    theta = -p.terminal_factor * refs[:, N] @ p.cost.S.T
    next_map = np.empty((N, B, n, n))
    next_offset = np.empty((N, B, n))
    for k in range(N - 1, -1, -1):
        _, v = active_mode(p, grid, k)
        mode = p.mode(v)
        h = np.asarray(step_size(p, grid, sws, k))[:, None, None]
        Ak = eye + mode.A * h
        # B_k R_k^-1 B_k^T = h * B Rbar^-1 B^T
        G = mode.B @ Rinv_bar @ mode.B.T * h
        M = np.linalg.solve(eye + Theta @ G, np.broadcast_to(eye, (B, n, n)))
        next_map[k] = M @ Theta @ Ak
        next_offset[k] = np.einsum("bij,bj->bi", M, theta)
        Th = p.cost.Qbar * h + np.swapaxes(Ak, 1, 2) @ next_map[k]
        Theta = 0.5 * (Th + np.swapaxes(Th, 1, 2))
        theta = -(refs[:, k] @ p.cost.Qbar.T) * h[:, :, 0] + np.einsum("bji,bj->bi", Ak, next_offset[k])
    return next_map, next_offset


@dataclass
class OracleCheckReport:
    per_step_max: np.ndarray  # floored relative error per step
    overall: float
    pointwise_max: float  # plain ||err|| / ||lambda||, for information
    worst_step: int
    tolerance: float

    @property
    def passed(self):
        return bool(self.overall <= self.tolerance)

    def summary(self):
        return {"passed": self.passed, "tolerance": self.tolerance, "max_relative_error": self.overall,
                "worst_step": self.worst_step, "max_pointwise_relative_error": self.pointwise_max,
                "median_step_error": float(np.median(self.per_step_max))}


def compare_with_oracle(net, p, grid, npoints=100, seed=2024, tol=1e-3):
    """Held-out comparison of network predictions against exact costates.

    At each step ``npoints`` fresh states are paired with ``npoints``
    switching vectors.  The error of a prediction is divided by
    ``max(||lambda||, rms_k)`` where ``rms_k`` is the RMS costate norm over
    the step's points, so isolated near-zero costates do not dominate.
    """
    from .transform import sample_switch_vectors

    rng = np.random.default_rng(seed)
    sws = sample_switch_vectors(rng, npoints, p.t0, p.tf, p.K, p.switch_margin)
    next_map, next_offset = lq_solve_batch(p, grid, sws)
    per_step = np.empty(grid.Nprime)
    pointwise = 0.0
    for k in range(grid.Nprime):
        x = rng.uniform(p.omega.state_lo, p.omega.state_hi, size=(npoints, p.n))
        exact = np.einsum("bij,bj->bi", next_map[k], x) + next_offset[k]
        pred = net.predict(k, sws, x)
        err = np.linalg.norm(pred - exact, axis=1)
        nrm = np.linalg.norm(exact, axis=1)
        floor = np.maximum(nrm, np.sqrt(np.mean(nrm * nrm)))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(err == 0, 0.0, err / floor)
            pw = np.where(err == 0, 0.0, err / nrm)
        per_step[k] = rel.max()
        pointwise = max(pointwise, float(pw.max()))
    worst = int(np.argmax(per_step))
    return OracleCheckReport(per_step, float(per_step[worst]), pointwise, worst, tol)
