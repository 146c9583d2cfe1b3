import numpy as np
import pytest

from dpoptlab.linear_model import ClassStats, Dataset


def make_instance(n, d, c, seed=0):
    """Random small instance: uniform features, labels covering all classes."""
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
    rng.shuffle(labels)
    dataset = Dataset(features=rng.random((n, d)), labels=labels, num_classes=c)
    stats = ClassStats.from_labels(labels, c)
    return dataset, stats


@pytest.fixture
def small_instance():
    return make_instance(n=20, d=5, c=4, seed=7)


@pytest.fixture
def small_weights():
    rng = np.random.default_rng(11)
    return rng.standard_normal((4, 5)) * 0.5
