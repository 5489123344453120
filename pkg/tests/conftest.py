import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mildhjb.hamiltonian import HamiltonianSpec  # noqa: E402
from mildhjb.hjb_solver import HJBProblem, SolverConfig  # noqa: E402
from mildhjb.spectral_model import CostSpec, build_heat_model  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def scalar_heat():
    """One heat mode on (0, pi): a = 1, g = 1, b = sqrt(2/pi)."""
    return build_heat_model(1, math.pi, 0.0, 1)


@pytest.fixture(scope="session")
def ball():
    return HamiltonianSpec(control_kind="ball", radius=1.0, dim=1, l1_coeff=0.5)


@pytest.fixture(scope="session")
def zero_control():
    return HamiltonianSpec(control_kind="points", points=((0.0,),), l1_coeff=0.0)


@pytest.fixture(scope="session")
def cos_cost():
    return CostSpec("cosine", 1.0, (1.0,), 0.0)


@pytest.fixture(scope="session")
def benchmark(scalar_heat, cos_cost, ball):
    """Shared problem with operator caches for the scalar bounded-control benchmark."""
    return HJBProblem(scalar_heat, cos_cost, ball, SolverConfig())


@pytest.fixture(scope="session")
def heat_config():
    return ROOT / "configs" / "heat.toml"


def pytest_terminal_summary(terminalreporter):
    import _report

    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_report.LINES):
            terminalreporter.write_line(line)
