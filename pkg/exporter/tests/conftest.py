import numpy as np
import pytest
from PIL import Image


def make_image_folder(root, n_per_class=10, classes=("cat", "dog"), seed=0):
    """Class-per-folder PNGs with a class-dependent color tint."""
    rng = np.random.default_rng(seed)
    for label, cls in enumerate(classes):
        cls_dir = root / cls
        cls_dir.mkdir(parents=True)
        for i in range(n_per_class):
            arr = rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)
            arr[..., label % 3] = 255
            Image.fromarray(arr).save(cls_dir / f"img_{i:02d}.png")
    return root


@pytest.fixture(scope="session")
def toy_folder(tmp_path_factory):
    return make_image_folder(tmp_path_factory.mktemp("toy_images"))


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("weights")
