import numpy as np
import pytest

from longrecon.phantom import PhantomConfig, generate_phantom_pair, synthesize_coil_maps


@pytest.fixture(scope="session")
def small_case():
    """One longitudinal phantom at 64x64, 3 slices; reused across tests."""
    cfg = PhantomConfig(dims=(64, 64), n_slices=3, n_coils=4, seed=21)
    return generate_phantom_pair(cfg)


@pytest.fixture(scope="session")
def smooth_image(small_case):
    img = small_case.current_volume[1]
    return img / img.max()


@pytest.fixture(scope="session")
def coil_maps():
    return synthesize_coil_maps((64, 64), 4, seed=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
