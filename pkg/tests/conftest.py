from typing import Dict

import numpy as np
import pytest

from pyavrobust.attacks.config import AttackConfig, Budget
from pyavrobust.avmodels.network import AVModel, build_model, model_grid
from pyavrobust.avmodels.spec import ModelSpec
from pyavrobust.avmodels.training import TrainConfig, train_clean, train_grid
from pyavrobust.synthav.generator import GenConfig, generate_dataset
from pyavrobust.synthav.sample import AVDataset, AVSample, DatasetSplits

GEOMETRY = {
    "n_classes": 3,
    "feature_dim": 8,
    "channels": 1,
    "height": 8,
    "width": 8,
    "n_bins": 8,
}


@pytest.fixture(scope="session")
def gen_config() -> GenConfig:
    return GenConfig(
        n_classes=3,
        samples_per_class=10,
        n_frames=8,
        height=8,
        width=8,
        n_bins=8,
        seed=0,
    )


@pytest.fixture(scope="session")
def splits(gen_config) -> DatasetSplits:
    return generate_dataset(gen_config)


@pytest.fixture
def sample(splits) -> AVSample:
    return splits.train[0]


@pytest.fixture
def geometry() -> dict:
    return dict(GEOMETRY)


@pytest.fixture
def model() -> AVModel:
    return build_model(ModelSpec(**GEOMETRY), seed=0)


@pytest.fixture(scope="session")
def trained_model(splits) -> AVModel:
    model, _ = train_clean(
        build_model(ModelSpec(**GEOMETRY), seed=0),
        splits.train,
        TrainConfig(epochs=15, lr=0.05, batch=8, seed=0),
    )
    return model


@pytest.fixture(scope="session")
def small_grid() -> Dict[str, AVModel]:
    grid = model_grid(0, **GEOMETRY)
    return {model_id: grid[model_id] for model_id in ("VsA", "RcR")}


@pytest.fixture
def attack_config() -> AttackConfig:
    return AttackConfig(
        method="TMA",
        budget=Budget(eps_v=8 / 255, eps_a=8 / 255, steps=3),
        n_copies=3,
        seed=0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def eval_set(splits) -> AVDataset:
    """Validation and test clips together, nine clips of three classes."""
    return AVDataset.from_samples(list(splits.val) + list(splits.test))


@pytest.fixture(scope="session")
def trained_pair(splits) -> Dict[str, AVModel]:
    grid = model_grid(0, **GEOMETRY)
    pair = {model_id: grid[model_id] for model_id in ("VsA", "RcR")}
    trained, _ = train_grid(pair, splits.train, TrainConfig(epochs=15, batch=8, seed=0))
    return trained
