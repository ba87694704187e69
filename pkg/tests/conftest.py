import pytest

from ringlab.equilibria import solve_equilibrium
from ringlab.ring_dynamics import ModelParams


@pytest.fixture(scope="session")
def params():
    return ModelParams(alpha=5.0, kappa=1.5, chi=1000.0)


@pytest.fixture(scope="session")
def config(params):
    return solve_equilibrium(params, "I")


@pytest.fixture(scope="session")
def hamiltonian_params():
    # mutual_sign=+1: the field is the symplectic gradient of the ring Hamiltonian
    return ModelParams(alpha=5.0, kappa=1.5, chi=1000.0, mutual_sign=1)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def report(request):
    """Record one acceptance line; printed now and again in the run summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
