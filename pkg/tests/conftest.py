import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from ccreid.data import generate_toy_dataset, held_out_outfit_split  # noqa: E402


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(out, n_ids=4, outfits_per_id=2, images_per_outfit=4, image_size=(64, 32), seed=0)
    return out


@pytest.fixture(scope="session")
def toy_manifest(toy_dir):
    from ccreid.data import load_manifest
    return load_manifest(toy_dir / "all.tsv")


@pytest.fixture(scope="session")
def toy_splits(toy_manifest):
    return held_out_outfit_split(toy_manifest)


@pytest.fixture
def f64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)
