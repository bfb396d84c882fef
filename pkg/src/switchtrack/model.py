"""Switched tracking problem definition: modes, reference, cost, validation.

All evaluators accept batched states of shape ``(..., n)``; the leading axes
are carried through unchanged.  Mode indices in a sequence are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteError, ProblemValidationError

LINEAR = "linear"
VANDERPOL = "vanderpol"
CUSTOM = "custom"

SINUSOID = "sinusoid"
CUSTOM_ODE = "custom-ode"


def _fd_step(x):
    return 1e-5 * np.maximum(1.0, np.abs(x))


def _apply_rows(fn, x, out_shape):
    """Evaluate a single-vector callable over the leading axes of ``x``."""
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty((flat.shape[0],) + out_shape)
    for i, row in enumerate(flat):
        out[i] = np.asarray(fn(row), dtype=float).reshape(out_shape)
    return out.reshape(lead + out_shape)


@dataclass(frozen=True)
class ModeDynamics:
    """One subsystem ``xdot = drift(x) + input_map(x) @ u`` in physical time.

    Use the :meth:`linear`, :meth:`vanderpol` and :meth:`custom` constructors.
    """

    kind: str
    n: int
    m: int
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    drift_fn: Optional[Callable] = None
    input_fn: Optional[Callable] = None
    drift_jac_fn: Optional[Callable] = None
    input_jac_fn: Optional[Callable] = None

    @classmethod
    def linear(cls, A, B):
        A = np.array(A, dtype=float)
        B = np.array(B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ProblemValidationError(f"inconsistent linear mode shapes A{A.shape} B{B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        return cls(LINEAR, A.shape[0], B.shape[1], A=A, B=B)

    @classmethod
    def vanderpol(cls):
        """Unit-damping Van der Pol oscillator with the input on the velocity."""
        return cls(VANDERPOL, 2, 1)

    @classmethod
    def custom(cls, drift, input_map, n, m, drift_jacobian=None, input_jacobian=None):
        """Wrap user callables acting on a single state vector.

        ``input_jacobian(x, u)`` must return ``sum_i u_i d g[:, i] / dx``.
        Missing Jacobians fall back to central finite differences.
        """
        return cls(CUSTOM, int(n), int(m), drift_fn=drift, input_fn=input_map,
                   drift_jac_fn=drift_jacobian, input_jac_fn=input_jacobian)

    @property
    def jacobian_source(self):
        if self.kind != CUSTOM:
            return "analytic"
        if self.drift_jac_fn is not None and self.input_jac_fn is not None:
            return "analytic"
        return "finite-difference"

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == LINEAR:
            return x @ self.A.T
        if self.kind == VANDERPOL:
            x1, x2 = x[..., 0], x[..., 1]
            return np.stack([x2, (1.0 - x1 * x1) * x2 - x1], axis=-1)
        return _apply_rows(self.drift_fn, x, (self.n,))

    def input_map(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if self.kind == LINEAR:
            return np.broadcast_to(self.B, lead + self.B.shape)
        if self.kind == VANDERPOL:
            return np.broadcast_to(np.array([[0.0], [1.0]]), lead + (2, 1))
        return _apply_rows(self.input_fn, x, (self.n, self.m))

    def drift_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if self.kind == LINEAR:
            return np.broadcast_to(self.A, lead + self.A.shape)
        if self.kind == VANDERPOL:
            x1, x2 = x[..., 0], x[..., 1]
            jac = np.zeros(lead + (2, 2))
            jac[..., 0, 1] = 1.0
            jac[..., 1, 0] = -2.0 * x1 * x2 - 1.0
            jac[..., 1, 1] = 1.0 - x1 * x1
            return jac
        if self.drift_jac_fn is not None:
            return _apply_rows(self.drift_jac_fn, x, (self.n, self.n))
        return _central_jacobian(self.drift, x, self.n)

    def input_jacobian_term(self, x, u):
        """``sum_i u_i * d g[:, i] / dx`` as an ``(..., n, n)`` array."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        if self.kind in (LINEAR, VANDERPOL):
            return np.zeros(lead + (self.n, self.n))
        x, u = np.broadcast_to(x, lead + x.shape[-1:]), np.broadcast_to(u, lead + u.shape[-1:])
        if self.input_jac_fn is not None:
            xu = np.concatenate([x, u], axis=-1)
            n = self.n
            return _apply_rows(lambda row: self.input_jac_fn(row[:n], row[n:]), xu, (n, n))

        def gu(xx):
            return np.einsum("...ij,...j->...i", self.input_map(xx), u)

        return _central_jacobian(gu, x, self.n)

    def derivative(self, x, u):
        g = self.input_map(x)
        return self.drift(x) + np.einsum("...ij,...j->...i", g, np.asarray(u, dtype=float))


def _central_jacobian(fn, x, n_out):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    jac = np.empty(x.shape[:-1] + (n_out, n))
    h = _fd_step(x)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        hj = h[..., j : j + 1]
        jac[..., :, j] = (fn(x + hj * e) - fn(x - hj * e)) / (2.0 * hj)
    return jac


@dataclass(frozen=True)
class ReferenceModel:
    """Reference signal, always evaluated in physical time.

    ``r0`` is the reference value at the start of the horizon.  The sinusoid
    kind has derivative ``(sin(pi t), pi cos(pi t))`` and is integrated in
    closed form; the custom kind integrates a user derivative with explicit
    Euler on a fixed table over ``span`` and interpolates linearly.
    """

    kind: str
    r0: np.ndarray
    derivative_fn: Optional[Callable] = None
    span: Optional[tuple] = None
    steps: int = 20000
    _table: Optional[tuple] = field(default=None, repr=False, compare=False)

    @classmethod
    def sinusoid(cls, r0=(0.0, 0.0)):
        r0 = np.array(r0, dtype=float)
        if r0.shape != (2,):
            raise ProblemValidationError("sinusoid reference is two-dimensional")
        r0.setflags(write=False)
        return cls(SINUSOID, r0)

    @classmethod
    def custom_ode(cls, derivative, r0, span, steps=20000):
        r0 = np.array(r0, dtype=float)
        r0.setflags(write=False)
        ref = cls(CUSTOM_ODE, r0, derivative_fn=derivative, span=(float(span[0]), float(span[1])),
                  steps=int(steps))
        ta, tb = ref.span
        grid = np.linspace(ta, tb, ref.steps + 1)
        rates = np.array([np.asarray(derivative(t), dtype=float) for t in grid[:-1]])
        cum = np.vstack([np.zeros(r0.size), np.cumsum(rates * np.diff(grid)[:, None], axis=0)])
        object.__setattr__(ref, "_table", (grid, cum))
        return ref

    @property
    def n(self):
        return self.r0.size

    def _antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == SINUSOID:
            return np.stack([-np.cos(np.pi * t) / np.pi, np.sin(np.pi * t)], axis=-1)
        grid, cum = self._table
        return np.stack([np.interp(t, grid, cum[:, i]) for i in range(cum.shape[1])], axis=-1)

    def increment(self, ta, tb):
        """Integral of the reference derivative over ``[ta, tb]``."""
        return self._antiderivative(tb) - self._antiderivative(ta)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == SINUSOID:
            return np.stack([np.sin(np.pi * t), np.pi * np.cos(np.pi * t)], axis=-1)
        return _apply_rows(lambda tt: self.derivative_fn(tt[0]), t[..., None], (self.n,))


@dataclass(frozen=True)
class CostSpec:
    S: np.ndarray
    Qbar: np.ndarray
    Rbar: np.ndarray

    def __post_init__(self):
        for name in ("S", "Qbar", "Rbar"):
            a = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def scaled(self, c):
        return CostSpec(self.S * c, self.Qbar * c, self.Rbar * c)


@dataclass(frozen=True)
class Omega:
    """Sampling box for states plus the switching-time margin."""

    state_lo: np.ndarray
    state_hi: np.ndarray
    switch_margin: Optional[float] = None

    def __post_init__(self):
        for name in ("state_lo", "state_hi"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.state_hi - self.state_lo))


@dataclass(frozen=True)
class SwitchedTrackingProblem:
    modes: tuple
    sequence: tuple
    t0: float
    tf: float
    cost: CostSpec
    reference: ReferenceModel
    omega: Omega
    terminal_factor: float = 1.0
    # Optional per-mode reference dynamics keyed by 1-based mode index; the
    # reference stays continuous across switches.
    mode_references: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "sequence", tuple(int(v) for v in self.sequence))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))

    @property
    def n(self):
        return self.modes[0].n

    @property
    def m(self):
        return self.modes[0].m

    @property
    def K(self):
        return len(self.sequence) - 1

    @property
    def horizon(self):
        return self.tf - self.t0

    @property
    def switch_margin(self):
        if self.omega.switch_margin is not None:
            return float(self.omega.switch_margin)
        return 1e-3 * self.horizon

    def mode(self, v):
        return self.modes[v - 1]

    def segment_mode(self, j):
        return self.sequence[j]

    def switch_bounds(self):
        eps = self.switch_margin
        return self.t0 + eps, self.tf - eps

    def with_cost(self, cost):
        return SwitchedTrackingProblem(self.modes, self.sequence, self.t0, self.tf, cost,
                                       self.reference, self.omega, self.terminal_factor,
                                       self.mode_references)


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    jacobian_sources: dict = field(default_factory=dict)

    def add(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))

    @property
    def ok(self):
        return all(passed for _, passed, _ in self.checks)

    @property
    def failures(self):
        return [(name, detail) for name, passed, detail in self.checks if not passed]

    def __str__(self):
        lines = [f"{'PASS' if p else 'FAIL'} {name}" + (f": {d}" if d else "") for name, p, d in self.checks]
        return "\n".join(lines)


def _definiteness(M, strict):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False, "not square"
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        return False, "not symmetric"
    eig = np.linalg.eigvalsh(M)
    tol = 1e-12 * scale
    if strict and eig.min() <= tol:
        return False, f"min eigenvalue {eig.min():.3g}"
    if not strict and eig.min() < -tol:
        return False, f"min eigenvalue {eig.min():.3g}"
    return True, ""


def validate_problem(p: SwitchedTrackingProblem) -> ValidationReport:
    """Check every problem invariant.

    Non-finite matrices and modes with a nonzero drift at the origin raise
    :class:`ProblemValidationError`; everything else is reported.
    """
    report = ValidationReport()
    for name, arr in (("S", p.cost.S), ("Qbar", p.cost.Qbar), ("Rbar", p.cost.Rbar),
                      ("state_lo", p.omega.state_lo), ("state_hi", p.omega.state_hi)):
        if not np.all(np.isfinite(arr)):
            raise ProblemValidationError(f"{name} has non-finite entries")
    for idx, mode in enumerate(p.modes, start=1):
        for arr in (mode.A, mode.B):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ProblemValidationError(f"mode {idx} has non-finite matrix entries")

    n, m = p.n, p.m
    dims_ok = (
        all(md.n == n and md.m == m for md in p.modes)
        and p.cost.S.shape == (n, n) and p.cost.Qbar.shape == (n, n) and p.cost.Rbar.shape == (m, m)
        and p.reference.n == n and p.omega.state_lo.shape == (n,) and p.omega.state_hi.shape == (n,)
    )
    report.add("dimensions consistent", dims_ok, "" if dims_ok else f"n={n}, m={m}")
    report.add("t0 < tf", p.t0 < p.tf, f"t0={p.t0}, tf={p.tf}")
    seq_ok = len(p.sequence) >= 1 and all(1 <= v <= len(p.modes) for v in p.sequence)
    report.add("sequence entries valid", seq_ok, f"sequence={list(p.sequence)}, M={len(p.modes)}")
    margin = p.switch_margin
    room = p.horizon - (p.K + 1) * margin
    report.add("switch margin feasible", margin >= 0 and room > 0, f"margin={margin}")

    ok, why = _definiteness(p.cost.S, strict=False)
    report.add("S positive semi-definite", ok, why)
    ok, why = _definiteness(p.cost.Qbar, strict=False)
    report.add("Qbar positive semi-definite", ok, why)
    ok, why = _definiteness(p.cost.Rbar, strict=True)
    report.add("Rbar positive definite", ok, why if ok else f"Rbar not positive definite ({why})")
    report.add("terminal factor positive", p.terminal_factor > 0, f"{p.terminal_factor}")

    if not dims_ok:
        return report

    box_ok = bool(np.all(p.omega.state_lo < p.omega.state_hi))
    report.add("omega bounds ordered", box_ok)
    report.add("omega contains origin",
               bool(np.all(p.omega.state_lo <= 0) and np.all(p.omega.state_hi >= 0)))

    rng = np.random.default_rng(0)
    samples = rng.uniform(p.omega.state_lo, p.omega.state_hi, size=(64, n))
    samples = np.vstack([samples, p.omega.state_lo, p.omega.state_hi])
    u_samples = rng.standard_normal((samples.shape[0], m))
    for idx, mode in enumerate(p.modes, start=1):
        f0 = mode.drift(np.zeros(n))
        if not np.all(np.isfinite(f0)) or np.max(np.abs(f0)) > 1e-12:
            raise ProblemValidationError(f"mode {idx}: drift at origin is {f0}, expected 0")
        vals = [mode.derivative(samples, u_samples), mode.drift_jacobian(samples),
                mode.input_jacobian_term(samples, u_samples)]
        finite = all(np.all(np.isfinite(v)) for v in vals)
        report.add(f"mode {idx} evaluators finite on omega", finite)
        report.jacobian_sources[idx] = mode.jacobian_source
    ts = np.linspace(p.t0, p.tf, 101)
    refs = p.reference.increment(p.t0, ts)
    report.add("reference finite on horizon", bool(np.all(np.isfinite(refs))))
    return report


def require_valid(p):
    report = validate_problem(p)
    if not report.ok:
        name, detail = report.failures[0]
        raise ProblemValidationError(f"{name}: {detail}" if detail else name)
    return report


def eval_mode(p, v, x, u):
    """Physical-time derivative of mode ``v`` (1-based) at ``(x, u)``."""
    out = p.mode(v).derivative(x, u)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"mode {v} derivative is not finite", x=x, u=u, v=v)
    return out


def mode_jacobians(p, v, x, u):
    mode = p.mode(v)
    return mode.drift_jacobian(x), mode.input_jacobian_term(x, u)


def reference_at(p, t, sw=None):
    """Reference value at physical time ``t`` (scalar or array).

    ``sw`` is only needed when per-mode reference dynamics are configured.
    """
    t = np.asarray(t, dtype=float)
    lo, hi = p.t0, p.tf
    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    if np.any(t < lo - slack) or np.any(t > hi + slack):
        raise ValueError(f"time outside horizon [{lo}, {hi}]")
    if not p.mode_references:
        return p.reference.r0 + p.reference.increment(p.t0, t)
    if sw is None:
        raise ValueError("per-mode references need the switching times")
    sw = np.asarray(sw, dtype=float)
    bounds = np.concatenate([np.broadcast_to(p.t0, sw.shape[:-1] + (1,)), sw,
                             np.broadcast_to(p.tf, sw.shape[:-1] + (1,))], axis=-1)
    out = np.broadcast_to(p.reference.r0, np.broadcast_shapes(t.shape, sw.shape[:-1]) + (p.n,)).copy()
    for j, v in enumerate(p.sequence):
        ref = p.mode_references.get(v, p.reference)
        a = bounds[..., j]
        b = bounds[..., j + 1]
        upper = np.clip(t, a, b)
        out += np.where((t > a)[..., None], ref.increment(a, upper), 0.0)
    return out


def vdp_problem(t1_bounds=(0.0, 3.0), r0=(0.0, 0.0), terminal_factor=1.0, dthat=0.001,
                switch_margin=None):
    """The two-mode Van der Pol / linear benchmark problem."""
    t0, tf = t1_bounds
    linear = ModeDynamics.linear([[0.0, 1.0], [2.0, -1.0]], [[0.0], [1.0]])
    cost = CostSpec(S=np.diag([1e5, 1e5]), Qbar=np.diag([1e5, 1e7]), Rbar=[[1.0 / dthat]])
    omega = Omega([-4.0, -4.0], [4.0, 4.0], switch_margin)
    return SwitchedTrackingProblem((ModeDynamics.vanderpol(), linear), (1, 2), t0, tf, cost,
                                   ReferenceModel.sinusoid(r0), omega, terminal_factor)


def is_linear(p):
    return all(md.kind == LINEAR for md in p.modes)


__all__ = [
    "ModeDynamics", "ReferenceModel", "CostSpec", "Omega", "SwitchedTrackingProblem",
    "ValidationReport", "validate_problem", "require_valid", "eval_mode", "mode_jacobians",
    "reference_at", "vdp_problem", "is_linear",
]
