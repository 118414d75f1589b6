import numpy as np
import pytest

from futureframes import synth

ACCEPTANCE = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bench3():
    """Benchmark scene with seed 3 (two sprites) plus its ground truth."""
    return synth.generate(synth.benchmark_spec(3))


@pytest.fixture(scope="session")
def static_scene():
    return synth.generate({"seed": 11, "sprites": {"count": 0}})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
