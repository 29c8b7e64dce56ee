"""
Shared fixtures: seeded generators, a tiny run configuration and a tiny dataset
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config.run_config import RunConfig  # noqa: E402
from src.data.storage import DatasetStore  # noqa: E402
from src.data.synth import dataset, scene_spec  # noqa: E402

TINY = {
    "data.size": 16,
    "data.count": 8,
    "data.tree_count_min": 1,
    "data.tree_count_max": 2,
    "data.tree_radius_min": 2.0,
    "data.tree_radius_max": 4.0,
    "data.change_patches": 2,
    "data.train_ratio": 0.5,
    "data.val_ratio": 0.25,
    "data.test_ratio": 0.25,
    "model.patch_size": 4,
    "model.embed_dim": 8,
    "model.encoder_channels": [8, 16],
    "model.proj_dim": 4,
    "model.gma_units": 1,
    "model.rh_channels": 8,
    "surm.k": 2,
    "surm.latent_dim": 2,
    "surm.samples": 2,
    "surm.le_hidden": 8,
    "surm.recon_hidden": 8,
    "train.epochs": 1,
    "train.batch_size": 2,
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=range(3))
def seeded_rng(request):
    return np.random.default_rng(request.param)


@pytest.fixture
def tiny_config(tmp_path):
    return RunConfig().with_overrides({
        **TINY,
        "paths.data": str(tmp_path / "data"),
        "paths.out": str(tmp_path / "run"),
    })


@pytest.fixture
def tiny_store(tiny_config):
    data = tiny_config.data
    dataset(
        scene_spec(tiny_config),
        data.count,
        (data.train_ratio, data.val_ratio, data.test_ratio),
        tiny_config.paths.data,
    )
    return DatasetStore(tiny_config.paths.data)
