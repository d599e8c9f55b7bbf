import numpy as np
import pytest

from advexplain.data import SyntheticSpec, synthetic_blobs
from advexplain.model import ModelSpec, Network, Weights, init_weights, train

TRAIN_SPEC = SyntheticSpec(classes=3, per_class=100, side=16, seed=7)
TEST_SPEC = SyntheticSpec(classes=3, per_class=34, side=16, seed=8)


def linear_net(W, b=None, input_shape=None) -> Network:
    W = np.asarray(W, dtype=np.float64)
    b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    spec = ModelSpec("linear-softmax", W.shape[1], (), W.shape[0])
    return Network(spec, Weights([W], [b]), input_shape or (W.shape[1],))


def random_image_net(kind="mlp-relu", shape=(1, 6, 6), hidden=(12, 8), classes=3, seed=0) -> Network:
    dim = int(np.prod(shape))
    spec = ModelSpec(kind, dim, hidden if kind == "mlp-relu" else (), classes)
    w = init_weights(spec, seed)
    rng = np.random.default_rng(seed)
    for b in w.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    return Network(spec, w, shape)


@pytest.fixture(scope="session")
def train_set():
    return synthetic_blobs(TRAIN_SPEC)


@pytest.fixture(scope="session")
def test_set():
    return synthetic_blobs(TEST_SPEC)


@pytest.fixture(scope="session")
def blob_training(train_set):
    """Reference MLP (64-32) trained for 500 epochs, with its loss history."""
    spec = ModelSpec("mlp-relu", 16 * 16, (64, 32), 3)
    history = []
    w = train(spec, train_set.images, train_set.labels, lr=0.05, epochs=500, seed=0, history=history)
    return Network(spec, w, (1, 16, 16)), history


@pytest.fixture(scope="session")
def blob_mlp(blob_training):
    return blob_training[0]


@pytest.fixture(scope="session")
def blob_linear(train_set):
    spec = ModelSpec("linear-softmax", 16 * 16, (), 3)
    w = train(spec, train_set.images, train_set.labels, lr=0.05, epochs=200, seed=0)
    return Network(spec, w, (1, 16, 16))


@pytest.fixture
def small_image_net():
    return random_image_net()


# --- acceptance verdicts ------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
