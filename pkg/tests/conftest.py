import pytest

from vgan.data import mnist_5k_to_idx


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """``(images, labels)`` IDX paths for the bundled 5,000-image MNIST sample."""
    return mnist_5k_to_idx(tmp_path_factory.mktemp("mnist"))


def write_config(path, **entries):
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))
    return str(path)
