import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from microquant.raster import LabelMap  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def label_map(pixels, pixel_size=1.0):
    return LabelMap(np.asarray(pixels, dtype=np.uint8), pixel_size)


# acceptance criteria report one line each; collected here and echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
