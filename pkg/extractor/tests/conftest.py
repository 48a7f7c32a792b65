import numpy as np
import pytest
from PIL import Image


def make_images(directory):
    """Three small deterministic images with different shapes and content."""
    directory.mkdir(parents=True, exist_ok=True)

    x = np.linspace(0, 255, 64, dtype=np.uint8)
    gradient = np.stack([np.tile(x, (48, 1))] * 3, axis=-1)
    gradient[:, :, 1] = gradient[::-1, :, 1]
    Image.fromarray(gradient).save(directory / "alpha.png")

    noise = np.random.RandomState(7).randint(0, 256, size=(75, 100, 3), dtype=np.uint8)
    Image.fromarray(noise).save(directory / "beta.png")

    solid = np.full((37, 53, 3), (20, 140, 230), dtype=np.uint8)
    solid[10:25, 15:40] = (250, 60, 30)
    Image.fromarray(solid).save(directory / "gamma.png")
    return ["alpha", "beta", "gamma"]


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory):
    directory = tmp_path_factory.mktemp("images")
    ids = make_images(directory)
    return directory, ids
