import numpy as np
import pytest
import torch

from hoicast import generate_synthetic, toy_config
from hoicast.model import build_model
from hoicast.training import train


@pytest.fixture()
def toy_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def session_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def dataset8(session_cfg):
    return [generate_synthetic(session_cfg.data, seed) for seed in range(8)]


@pytest.fixture(scope="session")
def holdout4(session_cfg):
    return [generate_synthetic(session_cfg.data, 100 + seed) for seed in range(4)]


@pytest.fixture(scope="session")
def staged_run(session_cfg, dataset8, tmp_path_factory):
    """One full three-stage training run shared by the slower tests."""
    out = tmp_path_factory.mktemp("staged_run")
    return train(dataset8, session_cfg, seed=7, out_dir=str(out))


def tiny_model(seed=0, **model_overrides):
    """Width-8 two-layer model on a two-joint skeleton, for gradient checks."""
    import dataclasses

    cfg = toy_config()
    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, joints=2, groups=0, past_len=3,
                                 future_len=3, surface_points=8, subset_size=2),
        model=dataclasses.replace(cfg.model, width=8, heads=2, encoder_layers=2,
                                  decoder_layers=2, contact_tokens=2,
                                  **model_overrides),
        diffusion=dataclasses.replace(cfg.diffusion, steps=10, kind="linear"),
    )
    return build_model(cfg, seed), cfg


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_default_dtype():
    torch.set_default_dtype(torch.float32)
    yield
