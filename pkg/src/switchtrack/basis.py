"""Polynomial features over (switching times, state) and their symbolic calculus.

Variables are ordered ``(t_1, ..., t_K, x_1, ..., x_n)``.  Monomials are
sorted by total degree, then in descending lexicographic order of their
exponent tuples, so ``t_1`` precedes ``x_1`` among the linear terms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolynomialBasis:
    nvars: int
    degree: int
    exponents: np.ndarray  # (m_lambda, nvars) integer table

    def __post_init__(self):
        e = np.array(self.exponents, dtype=np.int64).reshape(-1, self.nvars)
        e.setflags(write=False)
        object.__setattr__(self, "exponents", e)

    @property
    def m_lambda(self):
        return self.exponents.shape[0]

    def index(self, exps):
        """Position of a monomial given as an exponent tuple."""
        matches = np.flatnonzero(np.all(self.exponents == np.asarray(exps), axis=1))
        if matches.size == 0:
            raise KeyError(f"monomial {tuple(exps)} not in basis")
        return int(matches[0])


def _canonical_order(exps):
    return sorted(exps, key=lambda e: (sum(e), tuple(-x for x in e)))


def enumerate_monomials(nvars, d):
    """Every monomial in ``nvars`` variables with total degree at most ``d``."""
    if nvars < 1 or d < 1:
        raise ValueError("need nvars >= 1 and degree >= 1")
    exps = [e for e in itertools.product(range(d + 1), repeat=nvars) if sum(e) <= d]
    return PolynomialBasis(nvars, d, np.array(_canonical_order(exps)))


def basis_from_table(table):
    table = np.asarray(table, dtype=np.int64)
    ordered = np.array(_canonical_order([tuple(r) for r in table.tolist()]), dtype=np.int64)
    if ordered.shape != table.shape or not np.array_equal(ordered, table):
        raise ValueError("exponent table is not in canonical order")
    if len({tuple(r) for r in table.tolist()}) != table.shape[0]:
        raise ValueError("exponent table has repeated monomials")
    return PolynomialBasis(table.shape[1], int(table.sum(axis=1).max()), table)


def eval_basis(basis, tsw, x):
    """Feature vector(s) ``phi(tsw, x)``; leading batch axes broadcast."""
    return eval_monomials(basis, _stack_inputs(tsw, x))


def _stack_inputs(tsw, x):
    tsw = np.atleast_1d(np.asarray(tsw, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lead = np.broadcast_shapes(tsw.shape[:-1], x.shape[:-1])
    return np.concatenate([np.broadcast_to(tsw, lead + tsw.shape[-1:]),
                           np.broadcast_to(x, lead + x.shape[-1:])], axis=-1)


def eval_monomials(basis, z):
    """Evaluate all monomials at points ``z`` of shape ``(..., nvars)``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.nvars:
        raise ValueError(f"expected {basis.nvars} variables, got {z.shape[-1]}")
    d = int(basis.exponents.max(initial=0))
    powers = np.ones(z.shape + (d + 1,))
    for p in range(1, d + 1):
        powers[..., p] = powers[..., p - 1] * z
    out = np.ones(z.shape[:-1] + (basis.m_lambda,))
    for v in range(basis.nvars):
        out *= powers[..., v, :][..., basis.exponents[:, v]]
    return out


@dataclass(frozen=True)
class PolynomialExpression:
    """Sparse polynomial: mapping exponent tuple -> coefficient."""

    nvars: int
    terms: dict

    @classmethod
    def from_pairs(cls, nvars, pairs):
        acc = {}
        for coef, exps in pairs:
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError("exponent tuple length mismatch")
            acc[exps] = acc.get(exps, 0.0) + float(coef)
        return cls(nvars, {e: c for e, c in acc.items() if c != 0.0})

    @classmethod
    def zero(cls, nvars):
        return cls(nvars, {})

    def __add__(self, other):
        return PolynomialExpression.from_pairs(
            self.nvars, [(c, e) for e, c in self.terms.items()] + [(c, e) for e, c in other.terms.items()])

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        return PolynomialExpression(self.nvars, {e: v * c for e, v in self.terms.items() if v * c != 0.0})

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        total = np.zeros(z.shape[:-1])
        for e, c in self.terms.items():
            total = total + c * np.prod(z ** np.array(e), axis=-1)
        return total

    def coefficient(self, exps):
        return self.terms.get(tuple(exps), 0.0)

    @property
    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def ordered_terms(self):
        return [(self.terms[e], e) for e in _canonical_order(list(self.terms))]

    def derivative(self, var):
        pairs = []
        for e, c in self.terms.items():
            if e[var] > 0:
                ne = list(e)
                ne[var] -= 1
                pairs.append((c * e[var], ne))
        return PolynomialExpression.from_pairs(self.nvars, pairs)

    def substitute(self, var, value):
        """Fix variable ``var``; the variable stays in the tuple with exponent 0."""
        pairs = []
        for e, c in self.terms.items():
            ne = list(e)
            ne[var] = 0
            pairs.append((c * float(value) ** e[var], ne))
        return PolynomialExpression.from_pairs(self.nvars, pairs)

    def restrict(self, keep):
        """Drop variables not in ``keep`` (they must have exponent 0 everywhere)."""
        for e in self.terms:
            if any(e[i] for i in range(self.nvars) if i not in keep):
                raise ValueError("cannot drop a variable that still appears")
        return PolynomialExpression.from_pairs(len(keep), [(c, [e[i] for i in keep]) for e, c in self.terms.items()])

    def coefficient_norm(self):
        return float(np.sqrt(sum(c * c for c in self.terms.values())))


def field_components(basis, W):
    """The ``n`` polynomials ``(W.T @ phi)_i`` as expressions."""
    W = np.asarray(W, dtype=float)
    comps = []
    for i in range(W.shape[1]):
        comps.append(PolynomialExpression.from_pairs(
            basis.nvars, [(W[l, i], basis.exponents[l]) for l in range(basis.m_lambda) if W[l, i] != 0.0]))
    return comps


def _antiderivative(poly, var):
    pairs = []
    for e, c in poly.terms.items():
        ne = list(e)
        ne[var] += 1
        pairs.append((c / ne[var], ne))
    return PolynomialExpression.from_pairs(poly.nvars, pairs)


def _line_integral(comps, x_vars, order):
    """Integrate a gradient field from the origin along axis-aligned legs.

    ``order`` lists state positions in the order they are moved away from 0.
    """
    nvars = comps[0].nvars
    total = PolynomialExpression.zero(nvars)
    for step, i in enumerate(order):
        later = order[step + 1:]
        comp = comps[i]
        # coordinates not yet moved sit at zero on this leg
        comp = PolynomialExpression.from_pairs(
            nvars, [(c, e) for e, c in comp.terms.items() if all(e[x_vars[j]] == 0 for j in later)])
        total = total + _antiderivative(comp, x_vars[i])
    return total


def integrate_costate_field(basis, W, n=None, order=None):
    """Value polynomial ``V(tsw, x)`` whose x-gradient is the field ``W.T @ phi``.

    The switching times are kept symbolic.  Integration starts at ``x = 0``,
    so ``V`` has no term that is constant in ``x``.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[1] if n is None else n
    K = basis.nvars - n
    x_vars = [K + i for i in range(n)]
    order = list(range(n)) if order is None else list(order)
    return _line_integral(field_components(basis, W), x_vars, order)


def curl_defect(basis, W):
    """Path dependence of the integrated field.

    Returns ``(defect, relative)`` where ``defect`` is the coefficient norm of
    the difference between forward and reversed axis-order integrals and
    ``relative`` divides it by the larger of the two integrals' norms.
    """
    n = np.asarray(W).shape[1]
    fwd = integrate_costate_field(basis, W)
    rev = integrate_costate_field(basis, W, order=list(reversed(range(n))))
    defect = (fwd - rev).coefficient_norm()
    scale = max(fwd.coefficient_norm(), rev.coefficient_norm())
    return defect, defect / scale if scale > 0 else 0.0


def gradient_weights(basis, V, n):
    """Weights ``W`` with ``W.T @ phi = grad_x V``; ``V`` must fit the basis."""
    K = basis.nvars - n
    W = np.zeros((basis.m_lambda, n))
    for i in range(n):
        for coef, exps in V.derivative(K + i).ordered_terms():
            W[basis.index(exps), i] = coef
    return W


def univariate_coefficients(poly, var=0):
    """Ascending coefficient array of a polynomial in a single variable."""
    others = [i for i in range(poly.nvars) if i != var]
    deg = max((e[var] for e in poly.terms), default=0)
    coefs = np.zeros(deg + 1)
    for e, c in poly.terms.items():
        if any(e[i] for i in others):
            raise ValueError("polynomial depends on more than one variable")
        coefs[e[var]] += c
    return coefs


def minimize_univariate_poly(poly, lo, hi, var=0):
    """Global minimizer over ``[lo, hi]`` from stationary points and endpoints.

    Ties go to the smallest argument.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    coefs = univariate_coefficients(poly, var) if isinstance(poly, PolynomialExpression) else np.asarray(poly, float)
    P = np.polynomial.Polynomial(coefs)
    candidates = [lo, hi]
    if P.degree() >= 2:
        for root in P.deriv().roots():
            if abs(root.imag) <= 1e-9 * max(1.0, abs(root.real)) and lo < root.real < hi:
                candidates.append(float(root.real))
    candidates.sort()
    values = [P(c) for c in candidates]
    best = int(np.argmin(values))
    return candidates[best], float(values[best])
