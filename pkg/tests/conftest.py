import numpy as np
import pytest

from semitgdr.core_model import DatasetBundle, StudyCollection, standardize


def random_collection(seed=0, sizes=(40, 35), p=6, q=2, aft=False, signal=True):
    rng = np.random.default_rng(seed)
    datasets = []
    for n in sizes:
        X = rng.standard_normal((n, p))
        E = rng.uniform(size=(n, q))
        y = rng.standard_normal(n)
        if signal:
            y = y + 2 * X[:, 0] - X[:, 1] + 1.5 * X[:, 0] * X[:, 1] + np.sin(4 * E[:, 0])
        if aft:
            t = np.exp(0.3 * y)
            c = rng.uniform(0, 3 * np.median(t), n)
            datasets.append(DatasetBundle(y=np.minimum(t, c), X=X, E=E, event=(t <= c).astype(int)))
        else:
            datasets.append(DatasetBundle(y=y, X=X, E=E))
    return StudyCollection(datasets, family="aft" if aft else "linear")


@pytest.fixture
def small_linear():
    return standardize(random_collection(0))


@pytest.fixture
def small_aft():
    return standardize(random_collection(1, aft=True))
