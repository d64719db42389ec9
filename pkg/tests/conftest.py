import numpy as np
import pytest

from qfm.flow_model import MlpField, TrainConfig, train
from qfm.synthetic import TOY_HIDDEN, TOY_LEARNING_RATE, TOY_RESOLUTION, toy_images

TOY_EPOCHS = 50


def toy_config(seed=0):
    return TrainConfig(learning_rate=TOY_LEARNING_RATE, batch_size=4, epochs=TOY_EPOCHS, seed=seed)


@pytest.fixture(scope="session")
def toy_dataset():
    return toy_images(64, TOY_RESOLUTION, seed=0)


@pytest.fixture(scope="session")
def toy_run(toy_dataset):
    net = MlpField.init(TOY_RESOLUTION, TOY_HIDDEN, seed=0)
    return train(net, toy_dataset, toy_config())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
