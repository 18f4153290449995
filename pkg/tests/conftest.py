import pytest
import torch

from stylefuse import Engine, ImageAsset, InjectionConfig, TransferJob


def rand_image(hw: int = 16, seed: int = 7, role: str = "content") -> ImageAsset:
    g = torch.Generator().manual_seed(seed)
    return ImageAsset(torch.rand(3, hw, hw, generator=g), role)


@pytest.fixture
def content_img() -> ImageAsset:
    return rand_image(16, 7, "content")


@pytest.fixture
def style_img() -> ImageAsset:
    return rand_image(16, 8, "style")


@pytest.fixture
def tiny_engine() -> Engine:
    return Engine.toy(seed=0, sample_steps=10)


@pytest.fixture
def tiny_config() -> InjectionConfig:
    return InjectionConfig(sample_steps=10)


@pytest.fixture
def tiny_job(content_img, style_img, tiny_config) -> TransferJob:
    return TransferJob(content=content_img, style=style_img, config=tiny_config)
