"""Session fixtures for the full-scale acceptance runs.

Training the two benchmark models is expensive, so they are built once per
session (lazily, only when an acceptance test asks for them) and shared.
Wall-clock timings are recorded so the pipeline-budget check can account for
everything it exercised.
"""

import time

import pytest

from qglime.graphs import generate_dataset
from qglime.training import TrainConfig, train

DATASET_SEED = 7
TRAIN_SEED = 11
EXPLAIN_SEED = 23


@pytest.fixture(scope="session")
def timings():
    return {}


@pytest.fixture(scope="session")
def case1_dataset():
    return generate_dataset("Case1", DATASET_SEED)


@pytest.fixture(scope="session")
def case2_dataset():
    return generate_dataset("Case2", DATASET_SEED)


@pytest.fixture(scope="session")
def case1_trained(case1_dataset, timings):
    start = time.perf_counter()
    model, report = train(case1_dataset, TrainConfig(epochs=50, seed=TRAIN_SEED))
    timings["case1_train"] = time.perf_counter() - start
    return model, report


@pytest.fixture(scope="session")
def case2_trained(case2_dataset, timings):
    start = time.perf_counter()
    model, report = train(case2_dataset, TrainConfig(epochs=50, seed=TRAIN_SEED))
    timings["case2_train"] = time.perf_counter() - start
    return model, report
