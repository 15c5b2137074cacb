"""Shared fixtures: toy models, cameras, and session-scoped synthetic scenes
(generated once; several test modules read them)."""

from __future__ import annotations

import numpy as np
import pytest

from stillpose.bodymodel import PoseParams, ShapeParams
from stillpose.scene import Camera, load_sequence
from stillpose.synth import (
    crossing_scene,
    generate_synthetic,
    single_person_scene,
)
from stillpose.toy import make_box_model, make_toy_model

DENSE_TOY = dict(nring=12, trunk_stations=14, arm_stations=7)


@pytest.fixture(scope="session")
def toy_model():
    return make_toy_model()


@pytest.fixture(scope="session")
def box_model():
    return make_box_model()


@pytest.fixture(scope="session")
def dense_toy_model():
    return make_toy_model(**DENSE_TOY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def identity_camera():
    return Camera(np.eye(3), np.zeros(3), fx=1.0, fy=1.0, cx=0.0, cy=0.0,
                  width=640, height=480)


def orbit_test_camera(angle: float, width: int = 96, height: int = 96,
                      radius: float = 2.5, focal: float = 96.0) -> Camera:
    pos = np.array([radius * np.cos(angle), 1.0, radius * np.sin(angle)])
    forward = np.array([0.0, 1.0, 0.0]) - pos
    z = forward / np.linalg.norm(forward)
    down = np.array([0.0, -1.0, 0.0])
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return Camera(rot, -rot @ pos, focal, focal, (width - 1) / 2, (height - 1) / 2,
                  width, height)


@pytest.fixture(scope="session")
def clean_scene_dir(tmp_path_factory):
    """Zero-noise 12-frame single-person scene (dense toy)."""
    out = tmp_path_factory.mktemp("scene_clean") / "seq"
    generate_synthetic(single_person_scene(n_frames=12), seed=11, out_dir=out,
                       model=make_toy_model(**DENSE_TOY))
    return out


@pytest.fixture(scope="session")
def clean_sequence(clean_scene_dir):
    return load_sequence(clean_scene_dir)


@pytest.fixture(scope="session")
def crossing_scene_dir(tmp_path_factory):
    """Two crossing people plus a one-frame ghost, 10 frames."""
    out = tmp_path_factory.mktemp("scene_cross") / "seq"
    generate_synthetic(crossing_scene(n_frames=10, with_ghost=True), seed=7,
                       out_dir=out, model=make_toy_model(**DENSE_TOY))
    return out


def random_pose(rng, joint_count: int, scale: float = 0.3) -> PoseParams:
    return PoseParams(scale * rng.standard_normal((joint_count, 3)),
                      rng.standard_normal(3))


def random_shape(rng, dim: int, scale: float = 0.5) -> ShapeParams:
    return ShapeParams(scale * rng.standard_normal(dim))
