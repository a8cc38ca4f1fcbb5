import numpy as np
import pytest

from gaitcontour import synth


def disk(size, radius, center=None):
    c = (size - 1) / 2 if center is None else center
    yy, xx = np.mgrid[:size, :size]
    return (xx - c) ** 2 + (yy - c) ** 2 <= radius ** 2


@pytest.fixture(scope="session")
def walker():
    return synth.generate_walker(synth.DEFAULT_IDENTITY, 8, seed=3)
