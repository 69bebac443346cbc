import numpy as np
import pytest

from agripipe.raster import Band, BandKind, MultispectralImage


def random_image(rng, width=4, height=3, kinds=tuple(BandKind), invalid_fraction=0.0):
    bands = []
    for kind in kinds:
        values = rng.random((height, width)).astype(np.float32)
        valid = rng.random((height, width)) >= invalid_fraction
        bands.append(Band(kind, values, valid))
    return MultispectralImage(tuple(bands))


def constant_image(value, width=8, height=8, kinds=tuple(BandKind)):
    return MultispectralImage(tuple(Band(k, np.full((height, width), value)) for k in kinds))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
