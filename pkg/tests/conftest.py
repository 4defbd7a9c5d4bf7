"""Shared test setup.

The thread-count cap must be fixed before numba is first imported so that
tests can request up to 16 render threads even on small CI machines; keep
this assignment ahead of any sonarforge import.
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "16")

import numpy as np
import pytest

from sonarforge.render import render
from sonarforge.scene import (
    Camera,
    DirectionalLight,
    Pose,
    SceneBuilder,
    SeabedSpec,
    TargetPrimitive,
    make_seabed,
)


def tiny_scene(kind="mud", seed=3, nodes=9, cell=1.0, width=32, height=32,
               target=None, target_yaw=0.0, yaw_deg=0.0, altitude=8.0,
               fov_deg=90.0):
    """Small scene used across tests: 8x8 m seabed, nadir camera above the
    grid centre, optional single target at the centre."""
    hf = make_seabed(SeabedSpec(kind=kind, seed=seed), nodes, nodes, cell)
    cx = cy = (nodes - 1) * cell / 2.0
    cam = Camera(position=(cx, cy, altitude), fov_deg=fov_deg,
                 width=width, height=height, yaw_deg=yaw_deg)
    b = SceneBuilder(hf, cam)
    if target is not None:
        b.place_target(target, Pose((cx, cy), yaw_deg=target_yaw))
    return b.build()


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the render kernels once up front so individual tests measure
    steady-state behaviour, not JIT compilation."""
    scene = tiny_scene(target=TargetPrimitive("sphere", {"radius": 0.5}))
    img = render(scene, threads=1)
    assert img.data.shape == (32, 32, 3)
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
