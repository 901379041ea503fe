import numpy as np
import pytest

from boxzoom.geometry import BoundingBox, ImageSize

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def img100():
    return ImageSize(100.0, 100.0)


def random_box(rng, image: ImageSize, min_size: float = 3.0) -> BoundingBox:
    w = rng.uniform(min_size, image.width)
    h = rng.uniform(min_size, image.height)
    x = rng.uniform(0.0, image.width - w)
    y = rng.uniform(0.0, image.height - h)
    return BoundingBox.from_origin(x, y, w, h)
