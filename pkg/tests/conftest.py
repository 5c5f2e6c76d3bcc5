import numpy as np
import pytest

from tlbench.data import make_synthetic_dataset


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """Small separable 8-class image dataset shared across tests."""
    root = tmp_path_factory.mktemp("synth")
    manifest = make_synthetic_dataset(root, num_classes=8, per_class=40, size=32, seed=0)
    return manifest, root / "manifest.jsonl"


@pytest.fixture(scope="session")
def tagged_dataset(tmp_path_factory):
    """Synthetic dataset with robot/lighting condition tags (2x2 cells)."""
    root = tmp_path_factory.mktemp("tagged")
    tags = (
        {"robot": "dumbo", "lighting": "cloudy"},
        {"robot": "dumbo", "lighting": "night"},
        {"robot": "minnie", "lighting": "cloudy"},
        {"robot": "minnie", "lighting": "night"},
    )
    manifest = make_synthetic_dataset(
        root, num_classes=4, per_class=24, size=32, seed=1, tags_cycle=tags, name="tagged"
    )
    return manifest, root / "manifest.jsonl"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h=48, w=64, c=3):
    return rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)
