import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ican.model import ModelConfig, init_weights  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw):
    base = dict(
        num_actions=3,
        channels=3,
        inst_dim=4,
        embed_dim=5,
        hidden=6,
        roi_size=2,
        raster=8,
        sp_channels1=2,
        sp_channels2=2,
        feature_stride=1.0,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_weights(tiny_cfg):
    return init_weights(tiny_cfg, seed=3)
