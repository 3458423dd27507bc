import numpy as np
import pytest

from cavat.rng import RngState


@pytest.fixture
def rng():
    return RngState(1234)


def random_binary_mask(rng: RngState, h: int, w: int, p_fg: float = 0.4) -> np.ndarray:
    u = rng.uniform((h, w))
    return (u < p_fg).astype(np.int64)
