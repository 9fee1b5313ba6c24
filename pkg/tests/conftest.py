import numpy as np
import pytest
import torch

from rvoslite.data import load_manifest
from rvoslite.synthetic import GeneratorConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Two-video default dataset shared by read-only tests."""
    out = tmp_path_factory.mktemp("dataset")
    generate_synthetic_dataset(GeneratorConfig(n_videos=2, frames_per_video=10), 7, out)
    return out


@pytest.fixture(scope="session")
def manifest(dataset_dir):
    return load_manifest(dataset_dir)


@pytest.fixture(scope="session")
def square_dataset_dir(tmp_path_factory):
    """One grid-aligned square moving left; the overfit-friendly scene."""
    out = tmp_path_factory.mktemp("square_dataset")
    cfg = GeneratorConfig(n_videos=1, frames_per_video=6, min_objects=1,
                          max_objects=1, shapes=("square",), motions=("left",))
    generate_synthetic_dataset(cfg, 3, out)
    return out


@pytest.fixture(scope="session")
def square_manifest(square_dataset_dir):
    return load_manifest(square_dataset_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def random_mask(rng, h, w, p=0.4):
    return (rng.random((h, w)) < p).astype(np.uint8)
