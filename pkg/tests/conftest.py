import numpy as np
import pytest

from aedloc.scene import ArrayGeometry, CellGrid, SceneConfig


def make_scene(
    nx=2,
    ny=2,
    cell=(1.0, 1.0),
    arrays=None,
    classes=("knock", "buzz", "speech", "silence"),
    sample_rate=16000,
):
    grid = CellGrid(nx=nx, ny=ny, cell_size=cell)
    room = grid.extent
    if arrays is None:
        # two 2-mic arrays on opposite walls
        arrays = [
            ArrayGeometry(0, np.array([[0.02, room[1] * 0.4], [0.02, room[1] * 0.6]])),
            ArrayGeometry(1, np.array([[room[0] * 0.4, 0.02], [room[0] * 0.6, 0.02]])),
        ]
    return SceneConfig(
        room_size=room,
        arrays=tuple(arrays),
        grid=grid,
        classes=tuple(classes),
        sample_rate=sample_rate,
        max_simultaneous=2,
    )


@pytest.fixture
def tiny_scene():
    return make_scene()
