"""Shared fixtures: a small dataset and quickly-trained models."""

import pytest

from lgli.lpvl import LocalizerConfig, train_localizer
from lgli.model import ModelConfig
from lgli.scenes import Dataset, GenerationConfig, build_splits
from lgli.training import TrainConfig, train


@pytest.fixture(scope="session")
def tiny_dataset() -> Dataset:
    config = GenerationConfig(
        train_triplets=96, test_triplets=32, seed=7, min_objects=1, max_objects=4
    )
    return Dataset(build_splits(config))


@pytest.fixture(scope="session")
def default_dataset() -> Dataset:
    """The stock 2000/500 dataset used by the acceptance suite."""
    return Dataset(build_splits(GenerationConfig(seed=0)))


@pytest.fixture(scope="session")
def default_localizer(default_dataset):
    params, history = train_localizer(default_dataset, LocalizerConfig(seed=0))
    return params, history


@pytest.fixture(scope="session")
def tiny_localizer(tiny_dataset):
    params, history = train_localizer(
        tiny_dataset, LocalizerConfig(epochs=12, batch_size=16, seed=0)
    )
    return params, history


@pytest.fixture(scope="session")
def tiny_train_result(tiny_dataset, tiny_localizer):
    params, _ = tiny_localizer
    model_cfg = ModelConfig(seed=0, vocabulary=list(tiny_dataset.vocabulary))
    train_cfg = TrainConfig(epochs=2, batch_size=16, seed=0, loss_tol=None,
                            min_epochs=1)
    return train(tiny_dataset, model_cfg, train_cfg, localizer_params=params)


@pytest.fixture(scope="session")
def tiny_model(tiny_train_result):
    return tiny_train_result.best_model()
