import os
from pathlib import Path

import pytest

DATA_DIR = Path(os.environ.get("RWMCGAN_DATA", "/root/data/mnist"))


def have_mnist():
    return (DATA_DIR / "train-images-idx3-ubyte").exists() and (DATA_DIR / "t10k-labels-idx1-ubyte").exists()


needs_mnist = pytest.mark.skipif(not have_mnist(), reason=f"MNIST IDX files not found in {DATA_DIR}")


@pytest.fixture(scope="session")
def data_dir():
    if not have_mnist():
        pytest.skip(f"MNIST IDX files not found in {DATA_DIR}")
    return DATA_DIR


@pytest.fixture(scope="session")
def mnist_splits(data_dir):
    from rwmcgan import mnist

    return mnist.load_split(data_dir, "train"), mnist.load_split(data_dir, "test")


@pytest.fixture(scope="session")
def trained_classifier(mnist_splits):
    """Gated classifier trained once per session (2 epochs, seed 0)."""
    import time

    from rwmcgan.metrics import train_classifier

    train, test = mnist_splits
    start = time.perf_counter()
    clf = train_classifier(train, test, epochs=2, seed=0, enforce_gate=False)
    clf.train_seconds = time.perf_counter() - start
    return clf
