import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_events(rng, n, *, width=64, height=48, duration_us=2_000_000):
    """Time-sorted random event rows (x, y, t_us, polarity)."""
    xs = rng.integers(0, width, n)
    ys = rng.integers(0, height, n)
    ts = np.sort(rng.integers(0, duration_us, n))
    ps = rng.integers(0, 2, n)
    return np.stack([xs, ys, ts, ps], axis=1).astype(np.int64)
