import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_spec():
    from pgap.synthgen import OrchardSpec

    return OrchardSpec(rows=2, row_length=10.0, trees_per_row=5, points_per_tree=60, seed=3)


@pytest.fixture(scope="session")
def default_sequence():
    from pgap.synthgen import OrchardSpec, generate

    return generate(OrchardSpec())


@pytest.fixture(scope="session")
def small_sequence(small_spec):
    from pgap.synthgen import generate

    return generate(small_spec)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
