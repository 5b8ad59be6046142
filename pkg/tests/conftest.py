import numpy as np
import pytest

from flowland import (
    BoxObstacle,
    CameraIntrinsics,
    EgoState,
    Material,
    Scene,
    ScenePlane,
)


@pytest.fixture
def camera():
    return CameraIntrinsics(focal_length_px=96.0, image_width=96, image_height=96)


@pytest.fixture
def ground_material():
    return Material(base_color=(0.2, 0.5, 0.2), noise_amplitude=0.25)


@pytest.fixture
def obstacle_material():
    return Material(base_color=(0.7, 0.2, 0.2), noise_amplitude=0.25)


@pytest.fixture
def flat_scene(ground_material):
    return Scene(plane=ScenePlane(), materials={"ground": ground_material})


@pytest.fixture
def box_scene(ground_material, obstacle_material):
    """Level plane with one 0.9 m box offset from the origin."""
    return Scene(
        plane=ScenePlane(),
        materials={"ground": ground_material, "obstacle": obstacle_material},
        obstacles=(
            BoxObstacle(center_x=0.6, center_y=0.0, extent_x=1.0, extent_y=1.2,
                        height=0.9, material_id="obstacle"),
        ),
    )


@pytest.fixture
def lateral_ego():
    return EgoState(h=2.0, vx=0.6)


def constant_patch(color, w=5):
    """Channel-major flattened patch of a uniform color."""
    return np.repeat(np.asarray(color, dtype=float), w * w)
