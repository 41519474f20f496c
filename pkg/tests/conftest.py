import numpy as np
import pytest

from passnet.linsys import LtiNode
from passnet.microgrid import CASE_DGU, DguParams, build_case_study
from passnet.synthesis import SynthesisOptions, build_cost_certificate, synthesize_node

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def dgu_node():
    return DguParams(**CASE_DGU).to_lti()


@pytest.fixture(scope="session")
def dgu_result(dgu_node):
    return synthesize_node(dgu_node, SynthesisOptions(lam=-8.0))


@pytest.fixture(scope="session")
def case_study():
    return build_case_study()


@pytest.fixture(scope="session")
def case_results(case_study, dgu_result):
    model = case_study[0]
    return {n: dgu_result for n in model.controlled_nodes}


@pytest.fixture(scope="session")
def case_gains(case_results):
    return {n: r.K for n, r in case_results.items()}


@pytest.fixture(scope="session")
def case_cert(case_study, case_results):
    return build_cost_certificate(case_study[0], case_results)


@pytest.fixture
def scalar_node():
    return LtiNode([[-1.0]], [[1.0]], [[1.0]], [[1.0]], ("x",))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
