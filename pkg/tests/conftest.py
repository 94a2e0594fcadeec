import hashlib
import os
from pathlib import Path

import numpy as np
import pytest

from evoattack.harness.datasets import load_mnist_idx
from evoattack.model_runtime import (
    Model,
    TrainConfig,
    dense_net,
    load_weights,
    save_weights,
    table2_cnn,
    train_fixture,
)

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("MNIST_DIR", ROOT / "data" / "mnist"))
CACHE_DIR = Path(os.environ.get("EVOATTACK_CACHE", ROOT / ".fixture_cache"))

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}

# Desk-scale victims. Training is deterministic, so weights are cached on disk
# keyed by everything that determines them.
FIXTURES = {
    "cnn": dict(arch="cnn", widths=(16, 32, 64), hidden=128, train_count=20000, epochs=3, seed=0),
    "dense_a": dict(arch="dense", widths=(128,), train_count=20000, epochs=5, seed=1),
    "dense_b": dict(arch="dense", widths=(128,), train_count=20000, epochs=5, seed=2),
}


def _mnist_path(key):
    path = MNIST_DIR / MNIST_FILES[key]
    if not path.exists():
        pytest.skip(f"MNIST not found at {path} (set MNIST_DIR)")
    return path


@pytest.fixture(scope="session")
def mnist_train():
    return load_mnist_idx(_mnist_path("train_images"), _mnist_path("train_labels"))


@pytest.fixture(scope="session")
def mnist_test():
    return load_mnist_idx(_mnist_path("test_images"), _mnist_path("test_labels"))


def build_fixture(name, train_data):
    params = FIXTURES[name]
    key = hashlib.sha1(repr(sorted(params.items())).encode()).hexdigest()[:10]
    path = CACHE_DIR / f"{name}_{key}.evoq"
    if path.exists():
        spec, weights = load_weights(path)
        return Model(spec, weights)
    if params["arch"] == "cnn":
        spec = table2_cnn(widths=params["widths"], hidden=params["hidden"])
    else:
        spec = dense_net(hidden=params["widths"])
    subset = train_data.subset(np.arange(params["train_count"]))
    weights = train_fixture(spec, subset, TrainConfig(epochs=params["epochs"], seed=params["seed"]))
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    save_weights(path, spec, weights)
    spec, weights = load_weights(path)
    return Model(spec, weights)


@pytest.fixture(scope="session")
def fixture_models(mnist_train):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = build_fixture(name, mnist_train)
        return cache[name]

    return get
