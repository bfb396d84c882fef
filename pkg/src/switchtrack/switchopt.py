"""Switching-time selection from a trained costate network.

* Method 1: scalar constrained minimization (golden section) of the
  closed-loop cost as a function of the switching time.
* Method 2: integrate the step-0 costate field into a value polynomial and
  minimize it in the switching time at the given initial state.
* Method 3: exhaustive sweep over candidate switching vectors.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import curl_defect, integrate_costate_field, minimize_univariate_poly, univariate_coefficients
from .rollout import CostatePolicy, rollout_batch

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ValueCurve:
    candidates: np.ndarray  # (C, K)
    J: np.ndarray
    feasible: np.ndarray
    method: str

    @property
    def argmin_index(self):
        J = np.where(self.feasible, self.J, np.inf)
        if not np.isfinite(J).any():
            raise ArithmeticError("no feasible candidate")
        # np.argmin returns the first minimum, i.e. the smallest switching time
        return int(np.argmin(J))

    @property
    def argmin(self):
        return self.candidates[self.argmin_index]

    @property
    def min_value(self):
        return float(self.J[self.argmin_index])

    def to_csv(self, path, header_comment=None):
        K = self.candidates.shape[1]
        best = self.argmin_index
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow([f"t{j + 1}" for j in range(K)] + ["J", "feasible", "argmin"])
            for i, (c, J, ok) in enumerate(zip(self.candidates, self.J, self.feasible)):
                w.writerow([repr(float(t)) for t in c] + [repr(float(J)), int(bool(ok)), int(i == best)])


def candidate_grid(p, npoints, lo=None, hi=None):
    """Uniform candidates; for several switches, ordered tuples from a per-axis grid."""
    blo, bhi = p.switch_bounds()
    lo = blo if lo is None else max(lo, blo)
    hi = bhi if hi is None else min(hi, bhi)
    axis = np.linspace(lo, hi, npoints)
    if p.K == 1:
        return axis[:, None]
    eps = p.switch_margin
    rows = [c for c in itertools.combinations(axis, p.K) if np.all(np.diff(c) >= eps)]
    return np.array(rows, dtype=float).reshape(-1, p.K)


def evaluate_candidates(net, p, grid, x0, candidates, policy=None):
    """Closed-loop cost for every candidate; diverged rollouts are infeasible."""
    policy = policy or CostatePolicy(net)
    cands = np.atleast_2d(np.asarray(candidates, dtype=float))
    with np.errstate(all="ignore"):
        _, _, costs, term, _, _, diverged, _ = rollout_batch(p, grid, cands, policy, np.asarray(x0, float)[None])
    J = costs.sum(axis=1) + term
    feasible = ~diverged & np.isfinite(J)
    if not feasible.all():
        warnings.warn(f"{int((~feasible).sum())} candidate rollouts diverged", stacklevel=2)
    return J, feasible


def method3_sweep(net, p, grid, x0, candidates=None, npoints=30, lo=None, hi=None, policy=None):
    if candidates is None:
        candidates = candidate_grid(p, npoints, lo, hi)
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    J, feasible = evaluate_candidates(net, p, grid, x0, candidates, policy)
    return ValueCurve(candidates, J, feasible, "method3")


def golden_section(f, lo, hi, tol):
    """Golden-section search on ``[lo, hi]``; returns ``(x_best, f_best, history)``."""
    history = []

    def fx(x):
        y = float(f(x))
        history.append((x, y))
        return y

    a, b = float(lo), float(hi)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fx(c), fx(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fx(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fx(d)
    # endpoints: the minimum may sit on the boundary, and the unimodality
    # check needs the whole bracket
    fx(float(lo))
    fx(float(hi))
    best = min(history, key=lambda item: (item[1], item[0]))
    return best[0], best[1], history


def _valley_shaped(history, rtol=1e-9):
    """Sampled values decrease to a single minimum and increase afterwards."""
    pts = sorted(history)
    ys = np.array([y for _, y in pts])
    if not np.all(np.isfinite(ys)):
        return False
    slack = rtol * max(1.0, float(np.max(np.abs(ys))))
    i = int(np.argmin(ys))
    left_ok = np.all(np.diff(ys[: i + 1]) <= slack)
    right_ok = np.all(np.diff(ys[i:]) >= -slack)
    return bool(left_ok and right_ok)


@dataclass
class ScalarSearchResult:
    x: float
    value: float
    evaluations: int
    fallback: bool
    history: list = field(default_factory=list)


def minimize_scalar_objective(f, lo, hi, tol, fallback_points=64):
    """Golden section, with a grid fallback when the samples are not unimodal."""
    x, y, history = golden_section(f, lo, hi, tol)
    if _valley_shaped(history):
        return ScalarSearchResult(x, y, len(history), False, history)
    warnings.warn("objective is not unimodal on the bracket; falling back to a grid sweep", stacklevel=2)
    xs = np.linspace(lo, hi, fallback_points)
    ys = np.array([float(f(t)) for t in xs])
    ys = np.where(np.isfinite(ys), ys, np.inf)
    i = int(np.argmin(ys))
    return ScalarSearchResult(float(xs[i]), float(ys[i]), len(history) + fallback_points, True,
                              history + list(zip(xs.tolist(), ys.tolist())))


def _cost_objective(net, p, grid, x0, policy=None):
    policy = policy or CostatePolicy(net)

    def J(sw):
        with np.errstate(all="ignore"):
            _, _, costs, term, _, _, diverged, _ = rollout_batch(
                p, grid, np.atleast_2d(sw), policy, np.asarray(x0, float)[None])
        return np.inf if diverged[0] else float(costs.sum() + term[0])

    return J


def method1_scalar(net, p, grid, x0, lo=None, hi=None, tol=None, policy=None, max_sweeps=20):
    """Minimize closed-loop cost over switching times.

    Returns ``(switch_vector, ScalarSearchResult)``; for several switches the
    result describes the last coordinate search.
    """
    blo, bhi = p.switch_bounds()
    lo = blo if lo is None else lo
    hi = bhi if hi is None else hi
    tol = 1e-3 * p.horizon if tol is None else tol
    J = _cost_objective(net, p, grid, x0, policy)
    if p.K == 1:
        res = minimize_scalar_objective(lambda t: J([t]), lo, hi, tol)
        return np.array([res.x]), res
    eps = p.switch_margin
    sw = np.linspace(lo, hi, p.K + 2)[1:-1]
    res = None
    for _ in range(max_sweeps):
        prev = sw.copy()
        for j in range(p.K):
            a = lo if j == 0 else sw[j - 1] + eps
            b = hi if j == p.K - 1 else sw[j + 1] - eps

            def along(t, j=j):
                trial = sw.copy()
                trial[j] = t
                return J(trial)

            res = minimize_scalar_objective(along, a, b, tol)
            sw[j] = res.x
        if np.max(np.abs(sw - prev)) <= tol:
            break
    return sw, res


@dataclass
class Method2Result:
    value_poly: object  # PolynomialExpression in (t_1, x)
    curve: np.ndarray  # ascending coefficients of V(t_1) at x0
    t_star: float
    curl_defect: float
    curl_defect_relative: float


def method2_analytic(net, p, grid, x0, lo=None, hi=None):
    """Integrate the step-0 costate field and minimize the value polynomial.

    The integration constant (a function of the switching time alone) is
    taken as zero, so the argmin is only meaningful when Method 3 agrees.
    """
    if p.K != 1:
        raise NotImplementedError("analytic switching-time minimization supports one switch")
    blo, bhi = p.switch_bounds()
    lo = blo if lo is None else lo
    hi = bhi if hi is None else hi
    W0 = net.weights[0]
    V = integrate_costate_field(net.basis, W0)
    Vx0 = V
    for i, xi in enumerate(np.asarray(x0, dtype=float)):
        Vx0 = Vx0.substitute(p.K + i, xi)
    coefs = univariate_coefficients(Vx0, 0)
    t_star, _ = minimize_univariate_poly(coefs, lo, hi)
    defect, rel = curl_defect(net.basis, W0)
    return Method2Result(V, coefs, float(t_star), defect, rel)


def write_polynomial(path, poly, header_comment=None):
    """Plain-text monomial list: ``coefficient,e_1,...,e_nvars`` per line."""
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for coef, exps in poly.ordered_terms():
            fh.write(",".join([repr(float(coef))] + [str(e) for e in exps]) + "\n")


def format_polynomial(poly, names):
    parts = []
    for coef, exps in poly.ordered_terms()[::-1]:
        mono = "*".join(f"{nm}^{e}" if e > 1 else nm for nm, e in zip(names, exps) if e)
        parts.append(f"{coef:+.4g}" + (f"*{mono}" if mono else ""))
    return " ".join(parts) if parts else "0"
