import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fgpl.pipeline import Config, build_map, prepare_query
from fgpl.scene import fixed_translation_sampler, generate_scene

settings.register_profile("fgpl", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fgpl")

SMALL = Config(num_trans=64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def clean_setup():
    """A clean scene whose camera sits exactly on a pool translation."""
    base = generate_scene(seed=7)
    cmap = build_map(base.lines3d, SMALL)
    t = cmap.canonical_rotation.T @ cmap.translations[17]
    scene = generate_scene(pose_sampler=fixed_translation_sampler(t), seed=7)
    query = prepare_query(scene.lines2d, cmap, SMALL)
    return scene, cmap, query
