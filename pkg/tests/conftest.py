"""Shared fixtures: generated scenes, fixture paths, and scene helpers."""
import pathlib

import numpy as np
import pytest

from twinplan import scenes
from twinplan.scene import load_scene

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> pathlib.Path:
    return FIXTURES


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory) -> pathlib.Path:
    """Session directory of generated template scenes, one per (template, seed)."""
    return tmp_path_factory.mktemp("scenes")


@pytest.fixture(scope="session")
def make_scene(scene_dir):
    """Generate (and cache) a seeded template scene; returns its path."""

    def _make(template: str, seed: int) -> pathlib.Path:
        path = scene_dir / f"{template}-{seed}.scene"
        if not path.exists():
            scenes.gen_scene(template, seed, path)
        return path

    return _make


@pytest.fixture(scope="session")
def press_scene_path(fixtures_dir) -> pathlib.Path:
    return fixtures_dir / "press-button.scene"


@pytest.fixture()
def press_scene(press_scene_path):
    return load_scene(press_scene_path)


def random_pose(rng: np.random.Generator):
    from twinplan.geometry import Pose

    q = rng.standard_normal(4)
    return Pose(rng.uniform(-0.5, 0.5, 3), q / np.linalg.norm(q))
