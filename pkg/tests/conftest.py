import numpy as np
import pytest

from cdrsim.scenario import demo_scenario
from cdrsim.simulate import simulate

DEMO_SEED = 2026


@pytest.fixture(scope="session")
def demo():
    return demo_scenario()


@pytest.fixture(scope="session")
def demo_dataset(demo):
    return simulate(demo, DEMO_SEED, 0)


@pytest.fixture(scope="session")
def demo_posterior(demo_dataset):
    from cdrsim.bayes import BayesData, sample_posterior

    return sample_posterior(BayesData.from_dataset(demo_dataset), seed=DEMO_SEED)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mixing_sobol_result():
    from cdrsim.sensitivity import mixing_sobol

    return mixing_sobol(None, 2**16, np.random.default_rng(DEMO_SEED), n_boot=50)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
