from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from approxfp import cnn, synthetic

settings.register_profile(
    "repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("repo")

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_NET = FIXTURES / "synthetic_net.afpw"

# synthetic stand-in test split, as written by ``approxfp make-synthetic``
SYNTH_TEST_SEED = 1
SYNTH_TEST_SHA256 = "dd1bec4087174704de4e3235333c3fa86af9a1a3394774b8b895f9932aa66ea3"


@pytest.fixture(scope="session")
def fixture_net() -> cnn.NetworkDef:
    return cnn.load_weights(FIXTURE_NET)


@pytest.fixture(scope="session")
def synth_test() -> cnn.Dataset:
    return synthetic.make_dataset(2000, SYNTH_TEST_SEED)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# ---- acceptance summary: one line per criterion after the run

ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if rep.when == "call" or key != "passed":
                outcomes[name] = "PASS" if key == "passed" else key.upper().replace("FAILED", "FAIL")
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(outcomes, key=lambda n: (int("".join(ch for ch in n.split("_")[2] if ch.isdigit())), n)):
        label = name.split("_")[2]
        status = "PASS" if outcomes[name] == "PASS" else "FAIL"
        detail = ACCEPTANCE.get(name, "")
        terminalreporter.write_line(f"criterion {label:<3} {status}  {name[len('test_criterion_'):]}  {detail}")
