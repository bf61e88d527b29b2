import numpy as np
import pytest

from soilspec.dataset import SplitSpec, assemble_features, generate_synthetic, split_train_test


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(seed=1)


@pytest.fixture(scope="session")
def benchmark_split(synthetic):
    train, test = split_train_test(synthetic, SplitSpec(641, 691, 1))
    X, y = assemble_features(train)
    Xt, yt = assemble_features(test)
    return X, y, Xt, yt


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def make_linear_dataset(n=200, seed=0):
    """Dataset whose moisture is an exact linear function of the 116 features."""
    from soilspec.dataset import N_BANDS, Dataset, SpectralSample

    g = np.random.default_rng(seed)
    w = g.uniform(-1, 1, N_BANDS)
    samples = []
    for i in range(n):
        r = g.uniform(0.1, 0.9, N_BANDS)
        lwir = float(g.uniform(15, 35))
        samples.append(SpectralSample(r, lwir, float(60 + r @ w - 0.3 * lwir), plot_id=i % 4, record_id=i))
    return Dataset(tuple(samples))


@pytest.fixture(scope="session")
def linear_dataset():
    return make_linear_dataset()
