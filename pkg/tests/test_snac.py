import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from switchtrack.basis import enumerate_monomials, eval_basis
from switchtrack.errors import UnderdeterminedFitError
from switchtrack.model import CostSpec, ModeDynamics, Omega, ReferenceModel, SwitchedTrackingProblem
from switchtrack.oracle import compare_with_oracle, lq_solve, oracle_next_costate
from switchtrack.snac import CostateNetwork, TrainConfig, costate_target, least_squares_fit, sample_batch, train
from switchtrack.transform import TransformedGrid

from conftest import lq_problem


def single_mode(A=((0.0, 1.0), (-1.0, -0.5)), tf=0.4, q=1.0, s=1.0, r=5.0, reference=None):
    p = lq_problem(A1=A, tf=tf, q=q, s=s, r=r, reference=reference)
    return SwitchedTrackingProblem(p.modes[:1], (1,), p.t0, p.tf, p.cost, p.reference, p.omega)


# least squares ---------------------------------------------------------------

def test_zero_targets_give_zero_weights():
    phi = np.random.default_rng(0).normal(size=(50, 6))
    W, res = least_squares_fit(phi, np.zeros((50, 2)))
    assert not W.any() and res == 0.0


@given(st.integers(0, 2 ** 31 - 1))
def test_exact_recovery_of_representable_targets(seed):
    rng = np.random.default_rng(seed)
    b = enumerate_monomials(3, 3)
    phi = eval_basis(b, rng.uniform(0, 3, (200, 1)), rng.uniform(-4, 4, (200, 2)))
    W_true = rng.normal(size=(b.m_lambda, 2))
    W, res = least_squares_fit(phi, phi @ W_true)
    np.testing.assert_allclose(W, W_true, atol=1e-8)
    assert res <= 1e-8 * np.sqrt(np.mean((phi @ W_true) ** 2))


def test_agrees_with_normal_equations():
    rng = np.random.default_rng(2)
    phi = rng.uniform(-1, 1, (300, 10))
    Y = rng.normal(size=(300, 2))
    W, _ = least_squares_fit(phi, Y)
    W_ne = np.linalg.solve(phi.T @ phi, phi.T @ Y)
    assert np.max(np.abs(W - W_ne)) <= 1e-10 * max(1.0, np.abs(W_ne).max())
    ridge = 0.3
    W, _ = least_squares_fit(phi, Y, ridge)
    W_ne = np.linalg.solve(phi.T @ phi + ridge * np.eye(10), phi.T @ Y)
    assert np.max(np.abs(W - W_ne)) <= 1e-10 * max(1.0, np.abs(W_ne).max())


def test_underdetermined_without_ridge():
    with pytest.raises(UnderdeterminedFitError, match="fit underdetermined"):
        least_squares_fit(np.ones((5, 10)), np.ones((5, 2)))
    with pytest.raises(UnderdeterminedFitError, match="rank"):
        least_squares_fit(np.ones((40, 3)), np.ones((40, 2)))


def test_train_rejects_small_batch():
    with pytest.raises(UnderdeterminedFitError, match="fit underdetermined"):
        train(lq_problem(), TransformedGrid(1, 0.1), TrainConfig(eta=15))


# targets ---------------------------------------------------------------------

def _zero_problem(S):
    zero_ref = ReferenceModel.custom_ode(lambda t: np.zeros(2), [0.0, 0.0], (0.0, 2.0), steps=4)
    m = ModeDynamics.linear(np.zeros((2, 2)), [[0.0], [1.0]])
    return SwitchedTrackingProblem((m, m), (1, 2), 0.0, 1.0, CostSpec(S, np.eye(2), [[1.0]]), zero_ref,
                                   Omega([-1, -1], [1, 1]))


def test_terminal_target_examples():
    p = _zero_problem(1e5 * np.eye(2))
    g = TransformedGrid(1, 0.1)
    net = CostateNetwork(enumerate_monomials(3, 3), g, 2)
    last = g.Nprime - 1
    np.testing.assert_allclose(costate_target(net, p, g, last, [0.5], [0.01, 0.0]), [[1000.0, 0.0]])
    assert not costate_target(net, p, g, last, [0.5], [0.0, 0.0]).any()


def test_no_tracking_weight_trains_to_zero():
    p = lq_problem(q=0.0, s=0.0)
    _, report = train(p, TransformedGrid(1, 0.1), TrainConfig(eta=60, seed=1))
    assert np.all(report.inner_iterations == 1)
    assert np.all(report.final_change == 0.0)


def test_targets_match_oracle_recursion():
    # encode the oracle's next-step map exactly in an affine network; the
    # one-step target must then reproduce the oracle at the previous step
    p = single_mode()
    g = TransformedGrid(0, 0.02)
    sol = lq_solve(p, g, np.zeros(0))
    b = enumerate_monomials(2, 3)
    net = CostateNetwork(b, g, 2)
    for k in range(g.Nprime):
        net.weights[k, b.index((0, 0))] = sol.next_offset[k]
        net.weights[k, b.index((1, 0))] = sol.next_map[k][:, 0]
        net.weights[k, b.index((0, 1))] = sol.next_map[k][:, 1]
    net.trained[:] = True
    x = np.random.default_rng(0).uniform(-1, 1, (30, 2))
    for k in (0, 7, g.Nprime - 1):
        tgt = costate_target(net, p, g, k, np.zeros((30, 0)), x)
        exact = oracle_next_costate(sol, k, x)
        assert np.max(np.abs(tgt - exact)) <= 1e-10 * np.abs(exact).max()


# sampling and training -------------------------------------------------------

def test_sample_batch_deterministic_and_in_box():
    p = lq_problem()
    cfg = TrainConfig(eta=500)
    a = sample_batch(cfg, p, np.random.default_rng(9))
    b = sample_batch(cfg, p, np.random.default_rng(9))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    tsw, x = a
    assert np.all(np.abs(x) <= 1.0)
    assert np.all((tsw >= p.t0 + p.switch_margin) & (tsw <= p.tf - p.switch_margin))


def test_predict_before_training():
    net = CostateNetwork(enumerate_monomials(3, 3), TransformedGrid(1, 0.1), 2)
    with pytest.raises(RuntimeError, match="not trained"):
        net.predict(3, [0.2], [0.0, 0.0])
    with pytest.raises(IndexError):
        net.predict(20, [0.2], [0.0, 0.0])


def test_training_is_bit_identical_for_a_seed():
    p, g = lq_problem(), TransformedGrid(1, 0.05)
    cfg = TrainConfig(eta=80, gamma=1e-4, seed=12)
    a, _ = train(p, g, cfg)
    b, _ = train(p, g, cfg)
    assert a.weights.tobytes() == b.weights.tobytes()
    c, _ = train(p, g, TrainConfig(eta=80, gamma=1e-4, seed=13))
    assert c.weights.tobytes() != a.weights.tobytes()


def test_single_segment_costate_is_representable():
    # without switches the exact next-step costate is affine in the state
    p = single_mode()
    g = TransformedGrid(0, 0.02)
    net, report = train(p, g, TrainConfig(eta=100, gamma=1e-10, max_inner=60, seed=5, ridge=0.0))
    assert not report.capped.any()
    assert np.all(report.residual_rms <= 1e-6 * report.target_rms)
    rep = compare_with_oracle(net, p, g, npoints=50)
    assert rep.overall <= 1e-9


def test_fixed_batch_iteration_contracts():
    p = lq_problem()
    g = TransformedGrid(1, 0.05)
    _, report = train(p, g, TrainConfig(eta=200, gamma=1e-10, max_inner=40, seed=2, resample=False))
    hist = np.array(report.history)
    for k in np.unique(hist[:, 0]):
        ch = hist[hist[:, 0] == k, 2]
        # skip the first iterate, stop once at the floating-point floor
        ch = ch[1:]
        ch = ch[ch > 1e-12 * ch.max()] if ch.size else ch
        assert np.all(np.diff(ch) <= 1e-12 * ch.max()), (k, ch)


def test_trained_lq_matches_oracle(small_lq):
    p, g, net, _ = small_lq
    rep = compare_with_oracle(net, p, g)
    assert rep.passed, rep.summary()


def test_untrained_network_fails_oracle_check():
    p, g = lq_problem(), TransformedGrid(1, 0.05)
    net, _ = train(p, g, TrainConfig(eta=80, max_inner=1, seed=0))
    assert not compare_with_oracle(net, p, g).passed


def test_zero_tracking_weight_passes_oracle_check():
    p, g = lq_problem(q=0.0, s=0.0), TransformedGrid(1, 0.05)
    net, _ = train(p, g, TrainConfig(eta=80, seed=0))
    rep = compare_with_oracle(net, p, g)
    assert rep.passed and rep.overall == 0.0
