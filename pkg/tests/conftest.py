import pytest

from depthdehaze.scene import build_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """10 scenes, 32x32, light-to-medium haze; T stays well above the guard."""
    d = tmp_path_factory.mktemp("tinydata")
    build_dataset(10, seed=7, dims=(32, 32), beta_range=(0.05, 0.10),
                  a_range=(0.70, 0.90), out_dir=d)
    return d / "manifest.json"


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """6 scenes, 24x24, for the ablation-lattice matrix."""
    d = tmp_path_factory.mktemp("microdata")
    build_dataset(6, seed=11, dims=(24, 24), beta_range=(0.06, 0.10),
                  a_range=(0.75, 0.90), out_dir=d)
    return d / "manifest.json"
