"""Single-network adaptive critic: per-step costate regressors trained backward.

The network for step ``k`` maps the current state (and the switching times)
to the costate one step ahead, ``lambda_{k+1} ~ W_k.T @ phi(tsw, x_k)``.
Training walks ``k = N'-1, ..., 0``; each step iterates
resample -> targets -> least squares until the weights stop moving.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import PolynomialBasis, enumerate_monomials, eval_basis
from .errors import DivergenceError, UnderdeterminedFitError
from .model import Omega, reference_at, require_valid
from .rollout import control_from_costate
from .transform import advance, grid_times, sample_switch_vectors, step_jacobian, step_size

log = logging.getLogger(__name__)


@dataclass
class CostateNetwork:
    basis: PolynomialBasis
    grid: object
    n: int
    weights: np.ndarray = None  # (N', m_lambda, n)
    trained: np.ndarray = None  # (N',) bool

    def __post_init__(self):
        N = self.grid.Nprime
        if self.weights is None:
            self.weights = np.zeros((N, self.basis.m_lambda, self.n))
        if self.trained is None:
            self.trained = np.zeros(N, dtype=bool)

    def predict(self, khat, tsw, x):
        """Next-step costate ``W_k.T @ phi(tsw, x)``; batched over leading axes."""
        if not 0 <= khat < self.grid.Nprime:
            raise IndexError(f"no network for step {khat}")
        if not self.trained[khat]:
            raise RuntimeError(f"network for step {khat} is not trained")
        return eval_basis(self.basis, tsw, x) @ self.weights[khat]

    def scaled(self, c):
        """Network whose predictions are ``c`` times this one's."""
        return CostateNetwork(self.basis, self.grid, self.n, self.weights * c, self.trained.copy())

    def step_changes(self):
        """Frobenius norm of ``W_k - W_{k+1}`` for ``k = 0..N'-2``."""
        return np.linalg.norm((self.weights[:-1] - self.weights[1:]).reshape(self.grid.Nprime - 1, -1), axis=1)


@dataclass
class TrainConfig:
    eta: int = 1000
    gamma: float = 1e-6  # inner loop stops when ||dW||_F <= gamma * (1 + ||W||_F)
    max_inner: int = 50
    seed: int = 0
    ridge: Optional[float] = None  # None -> 1e-9 * eta
    degree: int = 3
    resample: bool = True
    omega: Optional[Omega] = None  # overrides the problem's sampling box

    @property
    def ridge_value(self):
        return 1e-9 * self.eta if self.ridge is None else float(self.ridge)


@dataclass
class TrainReport:
    inner_iterations: np.ndarray
    final_change: np.ndarray
    residual_rms: np.ndarray
    target_rms: np.ndarray
    capped: np.ndarray
    discarded: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)  # (khat, iteration, change, residual_rms)

    @property
    def converged(self):
        return ~self.capped

    def summary(self):
        return {
            "steps": int(self.inner_iterations.size),
            "capped_steps": int(self.capped.sum()),
            "mean_inner_iterations": float(self.inner_iterations.mean()),
            "max_inner_iterations": int(self.inner_iterations.max()),
            "max_residual_rms": float(self.residual_rms.max()),
            "mean_relative_residual": float(np.mean(self.residual_rms / np.maximum(self.target_rms, 1e-300))),
            "discarded_samples": int(self.discarded),
            "wall_time_s": float(self.wall_time),
        }


def _box(p, cfg):
    om = cfg.omega or p.omega
    return om.state_lo, om.state_hi


def sample_batch(cfg, p, rng, size=None):
    """Uniform switching vectors (with margins) and states from the box."""
    size = cfg.eta if size is None else size
    lo, hi = _box(p, cfg)
    tsw = sample_switch_vectors(rng, size, p.t0, p.tf, p.K, p.switch_margin)
    x = rng.uniform(lo, hi, size=(size, p.n))
    return tsw, x


def _targets(net, p, grid, khat, tsw, x, phi, W):
    """Right-hand side of the costate recursion one step ahead (batched)."""
    lam_next = phi @ W
    u = control_from_costate(p, grid, khat, x, lam_next)
    with np.errstate(all="ignore"):
        x1 = advance(p, grid, tsw, khat, x, u)
    ok = np.all(np.isfinite(x1), axis=1)
    x1 = np.where(ok[:, None], x1, 0.0)
    r1 = reference_at(p, grid_times(p, grid, tsw, khat + 1), tsw)
    e1 = x1 - r1
    if khat == grid.Nprime - 1:
        return p.terminal_factor * e1 @ p.cost.S.T, ok
    lam2 = net.predict(khat + 1, tsw, x1)
    u1 = control_from_costate(p, grid, khat + 1, x1, lam2)
    jac = step_jacobian(p, grid, tsw, khat + 1, x1, u1)
    h1 = np.asarray(step_size(p, grid, tsw, khat + 1))
    target = (e1 @ p.cost.Qbar.T) * h1[:, None] + np.einsum("lji,lj->li", jac, lam2)
    return target, ok & np.all(np.isfinite(target), axis=1)


def costate_target(net, p, grid, khat, tsw, x, W=None):
    """Training target for step ``khat`` at one or more samples.

    ``W`` is the current iterate for step ``khat``; by default the stored
    weights are used.
    """
    tsw = np.atleast_2d(np.asarray(tsw, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    W = net.weights[khat] if W is None else W
    target, ok = _targets(net, p, grid, khat, tsw, x, eval_basis(net.basis, tsw, x), W)
    if not np.all(ok):
        raise DivergenceError(f"propagation from step {khat} is not finite", khat=khat, x=x[~ok])
    return target


def least_squares_fit(phi, targets, ridge=0.0):
    """Ridge-regularized least squares via an orthogonal (SVD) solve.

    Returns ``(W, residual_rms)``.
    """
    phi = np.asarray(phi, dtype=float)
    targets = np.asarray(targets, dtype=float)
    eta, m = phi.shape
    if ridge > 0:
        A = np.vstack([phi, np.sqrt(ridge) * np.eye(m)])
        b = np.vstack([targets, np.zeros((m, targets.shape[1]))])
    else:
        if eta < m:
            raise UnderdeterminedFitError(f"fit underdetermined: {eta} samples for {m} basis functions")
        A, b = phi, targets
    W, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if ridge == 0 and rank < m:
        raise UnderdeterminedFitError(
            f"fit underdetermined: design matrix rank {rank} < {m}; use ridge > 0 or more samples")
    resid = phi @ W - targets
    return W, float(np.sqrt(np.mean(resid * resid)))


def _resample_bad(cfg, p, rng, tsw, x, ok, recompute, khat):
    """Redraw failed samples, at most 10 rounds."""
    discarded = 0
    for _ in range(10):
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            return discarded
        discarded += bad.size
        t_new, x_new = sample_batch(cfg, p, rng, bad.size)
        tsw[bad], x[bad] = t_new, x_new
        ok = recompute(bad)
    if not np.all(ok):
        raise DivergenceError(f"samples at step {khat} keep diverging after 10 redraws", khat=khat)
    return discarded


def train(p, grid, cfg: TrainConfig, basis=None, progress=None):
    """Run the backward training sweep; returns ``(network, report)``."""
    require_valid(p)
    if p.K != grid.K:
        raise ValueError(f"grid has {grid.K} switches, problem has {p.K}")
    basis = basis or enumerate_monomials(p.K + p.n, cfg.degree)
    if cfg.eta < basis.m_lambda:
        raise UnderdeterminedFitError(f"fit underdetermined: eta={cfg.eta} < m_lambda={basis.m_lambda}")
    rng = np.random.default_rng(cfg.seed)
    net = CostateNetwork(basis, grid, p.n)
    N = grid.Nprime
    report = TrainReport(np.zeros(N, dtype=int), np.zeros(N), np.zeros(N), np.zeros(N), np.zeros(N, dtype=bool))
    ridge = cfg.ridge_value
    start = time.perf_counter()
    tsw = x = phi = None
    for k in range(N - 1, -1, -1):
        W = np.zeros((basis.m_lambda, p.n))
        residuals, changes = [], []
        for it in range(1, cfg.max_inner + 1):
            if cfg.resample or tsw is None:
                tsw, x = sample_batch(cfg, p, rng)
                phi = eval_basis(basis, tsw, x)
            target, ok = _targets(net, p, grid, k, tsw, x, phi, W)
            if not np.all(ok):
                def recompute(idx, k=k, W=W):
                    phi[idx] = eval_basis(basis, tsw[idx], x[idx])
                    t_idx, ok_idx = _targets(net, p, grid, k, tsw[idx], x[idx], phi[idx], W)
                    target[idx] = t_idx
                    full = np.ones(len(x), dtype=bool)
                    full[idx] = ok_idx
                    return full
                report.discarded += _resample_bad(cfg, p, rng, tsw, x, ok, recompute, k)
            W_new, res = least_squares_fit(phi, target, ridge)
            change = float(np.linalg.norm(W_new - W))
            W = W_new
            residuals.append(res)
            report.history.append((k, it, change, res))
            if change <= cfg.gamma * (1.0 + float(np.linalg.norm(W))):
                break
            changes.append(change)
            # the residual of the zero-policy first iterate is not a baseline:
            # only sustained joint growth of residual and weight change counts.
            # Resampling noise produces short monotone runs by chance, so the
            # residual must also have doubled over the window.
            if len(residuals) >= 6:
                r_tail, c_tail = residuals[-6:], changes[-6:]
                if (all(b > a for a, b in zip(r_tail, r_tail[1:]))
                        and all(b > a for a, b in zip(c_tail, c_tail[1:]))
                        and r_tail[-1] > 2.0 * r_tail[0]):
                    raise DivergenceError(f"inner loop at step {k} diverges: residual grew to {r_tail[-1]:.3g}",
                                          khat=k)
        else:
            report.capped[k] = True
        net.weights[k] = W
        net.trained[k] = True
        report.inner_iterations[k] = it
        report.final_change[k] = change
        report.residual_rms[k] = residuals[-1]
        report.target_rms[k] = float(np.sqrt(np.mean(target * target)))
        if progress is not None:
            progress(k)
    report.wall_time = time.perf_counter() - start
    if report.capped.any():
        log.warning("%d of %d steps hit max_inner=%d", int(report.capped.sum()), N, cfg.max_inner)
    return net, report


__all__ = [
    "CostateNetwork", "TrainConfig", "TrainReport", "sample_batch", "costate_target",
    "least_squares_fit", "train",
]
