import numpy as np
import pytest

from switchtrack.basis import PolynomialExpression, enumerate_monomials, gradient_weights
from switchtrack.rollout import CostatePolicy, ZeroPolicy, rollout
from switchtrack.snac import CostateNetwork
from switchtrack.switchopt import (ValueCurve, candidate_grid, golden_section, method1_scalar, method2_analytic,
                                   method3_sweep, minimize_scalar_objective)
from switchtrack.transform import TransformedGrid

from conftest import lq_problem


def test_golden_section_on_parabola():
    res = minimize_scalar_objective(lambda t: (t - 1.5) ** 2, 0.0, 3.0, 1e-3)
    assert abs(res.x - 1.5) <= 1e-3 and not res.fallback


def test_monotone_objective_hits_boundary():
    assert minimize_scalar_objective(lambda t: t, 0.0, 3.0, 1e-3).x == 0.0
    assert minimize_scalar_objective(lambda t: -t, 0.0, 3.0, 1e-3).x == 3.0


def test_golden_history_records_every_evaluation():
    calls = []
    x, y, hist = golden_section(lambda t: calls.append(t) or (t - 1.0) ** 2, 0.0, 2.0, 1e-2)
    assert len(hist) == len(calls) and y == (x - 1.0) ** 2


def test_non_unimodal_objective_falls_back_to_grid():
    with pytest.warns(UserWarning, match="not unimodal"):
        res = minimize_scalar_objective(lambda t: np.sin(5 * t) + 0.1 * t, 0.0, 3.0, 1e-3)
    assert res.fallback
    grid = np.linspace(0.0, 3.0, 64)
    assert res.value == pytest.approx(np.min(np.sin(5 * grid) + 0.1 * grid))


def test_value_curve_ties_and_infeasible():
    c = np.arange(5.0)[:, None]
    curve = ValueCurve(c, np.array([0.5, 3.0, 1.0, 1.0, 2.0]), np.array([False, True, True, True, True]), "method3")
    assert curve.argmin_index == 2 and curve.min_value == 1.0
    with pytest.raises(ArithmeticError):
        ValueCurve(c, np.ones(5), np.zeros(5, bool), "method3").argmin_index


def test_candidate_grid_orders_multiple_switches():
    p = lq_problem(sequence=(1, 2, 1))
    c = candidate_grid(p, 6)
    assert c.shape[1] == 2 and len(c) == 15
    assert np.all(np.diff(c, axis=1) >= p.switch_margin)


@pytest.fixture(scope="module")
def curve(small_lq):
    p, g, net, _ = small_lq
    x0 = np.array([0.5, -0.5])
    return p, g, net, x0, method3_sweep(net, p, g, x0, npoints=30)


def test_sweep_values_are_reproducible_by_single_rollouts(curve):
    p, g, net, x0, c = curve
    assert c.J.shape == (30,) and c.feasible.all()
    for i in (0, c.argmin_index, 29):
        J = rollout(p, g, c.candidates[i], CostatePolicy(net), x0).total_cost
        assert abs(J - c.J[i]) <= 1e-12 * abs(J)


def test_single_candidate_sweep(curve):
    p, g, net, x0, _ = curve
    one = method3_sweep(net, p, g, x0, candidates=[[0.21]])
    assert one.argmin_index == 0 and one.candidates.shape == (1, 1)


def test_cost_scaling_is_equivariant(curve):
    p, g, net, x0, c = curve
    scaled = method3_sweep(net.scaled(10.0), p.with_cost(p.cost.scaled(10.0)), g, x0, npoints=30)
    np.testing.assert_allclose(scaled.J, 10.0 * c.J, rtol=1e-10)
    assert scaled.argmin_index == c.argmin_index


def test_method1_agrees_with_sweep(curve):
    p, g, net, x0, c = curve
    sw, res = method1_scalar(net, p, g, x0)
    spacing = c.candidates[1, 0] - c.candidates[0, 0]
    assert res.value <= c.min_value * (1 + 1e-9) or abs(sw[0] - c.argmin[0]) <= spacing


def test_method2_on_conservative_field():
    # V(t, x) = (x1^2 + x2^2)(t - 1.2)^2 + x1 t; at x0 = (1, 0) the minimum is t = 0.7
    V = PolynomialExpression.from_pairs(3, [
        (1.44, (0, 2, 0)), (-2.4, (1, 2, 0)), (1.0, (2, 2, 0)),
        (1.44, (0, 0, 2)), (-2.4, (1, 0, 2)), (1.0, (2, 0, 2)),
        (1.0, (1, 1, 0)),
    ])
    b = enumerate_monomials(3, 4)
    g = TransformedGrid(1, 0.1)
    net = CostateNetwork(b, g, 2)
    net.weights[0] = gradient_weights(b, V, 2)
    net.trained[:] = True
    res = method2_analytic(net, lq_problem(tf=3.0), g, [1.0, 0.0], lo=0.0, hi=3.0)
    assert res.t_star == pytest.approx(0.7, abs=1e-9)
    assert res.curl_defect_relative <= 1e-12


def test_method2_rejects_multiple_switches():
    p = lq_problem(sequence=(1, 2, 1))
    g = TransformedGrid(2, 0.1)
    net = CostateNetwork(enumerate_monomials(4, 3), g, 2)
    with pytest.raises(NotImplementedError, match="one switch"):
        method2_analytic(net, p, g, [0.0, 0.0])


def test_coordinate_descent_with_two_switches():
    p = lq_problem(A1=[[0.0, 1.0], [1.0, 0.0]], sequence=(1, 2, 1), q=1.0)
    g = TransformedGrid(2, 0.02)
    x0 = np.array([0.8, 0.0])
    pol = ZeroPolicy()
    sw, res = method1_scalar(None, p, g, x0, policy=pol, tol=1e-4)
    assert np.all(np.diff(np.concatenate([[p.t0], sw, [p.tf]])) >= p.switch_margin - 1e-12)
    dense = method3_sweep(None, p, g, x0, npoints=40, policy=pol)
    J = rollout(p, g, sw, pol, x0).total_cost
    assert J <= dense.min_value * (1 + 1e-6)
