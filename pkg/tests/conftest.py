import sys
from pathlib import Path

import numpy as np
import pytest

from coattendwg.model import ModelConfig, init_params

sys.path.insert(0, str(Path(__file__).parent))

TINY = ModelConfig(
    D=8, D_text=6, D_img=10, L=1, fusion_heads=2, refine_heads=2, experts=2,
    mf_depth=2, mf_kernel=3, num_classes=3, dropout=0.0, seed=0,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_params():
    return init_params(TINY)


@pytest.fixture
def tiny_batch(rng):
    return rng.standard_normal((2, 6)), rng.standard_normal((2, 10)), np.array([0, 2])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
