import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "graft", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "graft"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    from graft.graphdata import generate_synthetic

    return generate_synthetic("degree-parity", 40, seed=3)


@pytest.fixture(scope="session")
def tiny_backbone(tiny_dataset):
    from graft.backbone import BackboneConfig, BackboneWeights

    cfg = BackboneConfig(tiny_dataset.d_in, tiny_dataset.d_e, d=8, L=3, T=tiny_dataset.T)
    return BackboneWeights.init(cfg, np.random.default_rng(0)).freeze()


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and return the flag."""

    def emit(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} [{number}] {name}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
