import numpy as np
import pytest

from flowseg import Frame, Mask, Sequence


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_frame(rng, h=16, w=16):
    return Frame(rng.random((h, w)))


def random_mask(rng, h=16, w=16, p=0.3):
    return Mask((rng.random((h, w)) < p).astype(np.uint8))


@pytest.fixture
def static_sequence(rng):
    """Ten identical textured frames."""
    frame = random_frame(rng, 32, 32)
    return Sequence(frames=[Frame(frame.data) for _ in range(10)], name="static")
