import numpy as np
import pytest

from vidsr.synthetic import panning_clips, static_clip


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pan_clips():
    clips, velocities = panning_clips(3, (48, 48), 6, 2.0, seed=7)
    return clips, velocities


@pytest.fixture(scope="session")
def still():
    return static_clip((48, 48), 5, seed=3)


def smooth_image(rng, shape, sigma=1.5):
    """Random smooth field; keeps bilinear sampling away from kinks."""
    from scipy.ndimage import gaussian_filter
    return gaussian_filter(rng.standard_normal(shape), sigma)


@pytest.fixture(scope="session")
def trained_mc():
    """Motion compensation pretrained on synthetic translations (several minutes, shared)."""
    import recipes
    return recipes.train_translation_mc()


@pytest.fixture(scope="session")
def trained_e3():
    import recipes
    return recipes.train_e3()


@pytest.fixture(scope="session")
def joint_runs(trained_e3):
    import recipes
    return recipes.train_joint_from(trained_e3)
