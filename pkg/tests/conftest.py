import numpy as np
import pytest
import torch

from can_ssl.data import synthetic_dataset
from can_ssl.model import HeadSpec, ModelSpec, TransformerSpec, init_model
from can_ssl.trainer import TrainConfig


def tiny_spec(image=4, patch=2, width=8, depth=1, heads=2, dec_depth=1):
    return ModelSpec(encoder=TransformerSpec(depth, width, heads, 2 * width),
                     decoder=TransformerSpec(dec_depth, width, heads, 2 * width),
                     head=HeadSpec(hidden_dim=16, hidden_layers=2, out_dim=4),
                     patch_size=patch, image_size=(image, image))


@pytest.fixture
def spec():
    return tiny_spec()


@pytest.fixture
def small_spec():
    """16 x 16 images, 4 x 4 patches (T=16), width 32."""
    return tiny_spec(image=16, patch=4, width=32, depth=1, heads=2)


@pytest.fixture
def model(spec):
    return init_model(spec, 0)


@pytest.fixture
def tiny_data():
    return synthetic_dataset(64, num_classes=4, image_size=16, seed=3)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(batch_size=16, total_epochs=2, warmup_epochs=1, base_lr=1e-2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
