import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from switchtrack.model import CostSpec, ModeDynamics, Omega, ReferenceModel, SwitchedTrackingProblem, vdp_problem
from switchtrack.snac import TrainConfig, train
from switchtrack.transform import TransformedGrid

# derandomized so repeated runs of the suite see the same examples
settings.register_profile("fixed", derandomize=True, deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fixed")

ACCEPTANCE_KEY = pytest.StashKey[dict]()

DOUBLE_INTEGRATOR = [[0.0, 1.0], [0.0, 0.0]]
OSCILLATOR = [[0.0, 1.0], [-1.0, 0.0]]


def lq_problem(A1=DOUBLE_INTEGRATOR, A2=OSCILLATOR, tf=0.5, q=0.1, s=1.0, r=10.0, lim=1.0,
               terminal_factor=1.0, reference=None, sequence=(1, 2)):
    B = [[0.0], [1.0]]
    ref = reference or ReferenceModel.sinusoid()
    return SwitchedTrackingProblem(
        (ModeDynamics.linear(A1, B), ModeDynamics.linear(A2, B)), sequence, 0.0, tf,
        CostSpec(s * np.eye(2), q * np.eye(2), [[r]]), ref, Omega([-lim, -lim], [lim, lim]), terminal_factor)


@pytest.fixture
def vdp():
    return vdp_problem()


@pytest.fixture(scope="session")
def small_lq():
    """A coarse two-mode LQ problem with a trained network (consistent terminal factor)."""
    p = lq_problem(terminal_factor=2.0)
    grid = TransformedGrid(1, 0.02)
    net, report = train(p, grid, TrainConfig(eta=300, gamma=1e-4, seed=3))
    return p, grid, net, report


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: ``acceptance(criterion, passed, detail)``."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(criterion, passed, detail):
        store.setdefault(criterion, []).append((bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(store, key=lambda c: (int(c.split()[0]), c)):
        results = store[criterion]
        ok = all(p for p, _ in results)
        detail = "; ".join(d for _, d in results)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
