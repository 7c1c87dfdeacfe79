from pathlib import Path

import numpy as np
import pytest
from epicount.fixtures import measles_fixture, write_fixture
from epicount.panel import make_panel, make_spatial


@pytest.fixture(scope="session")
def measles():
    """
    The bundled 17-district, 104-week fixture. Simulating it takes a moment,
    so it is shared by the whole session.
    """
    return measles_fixture()


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory) -> dict[str, Path]:
    """
    Returns the paths of the fixture written as CLI input files.
    """
    return write_fixture(tmp_path_factory.mktemp("fixture"))


@pytest.fixture
def line_spatial():
    """
    Four areas on a line, one unit apart, each adjacent to the next.
    """
    areas = ["a", "b", "c", "d"]
    pos = np.arange(4.0)
    distances = np.abs(pos[:, None] - pos[None, :])
    adjacency = distances == 1.0
    return make_spatial(areas, distances, adjacency)


@pytest.fixture
def small_panel():
    """
    Four areas, eight time steps, constant populations and births.
    """
    counts = [
        [3, 5, 4, 6, 2, 3, 1, 2],
        [0, 1, 2, 4, 5, 3, 2, 1],
        [1, 0, 0, 1, 2, 4, 6, 3],
        [0, 0, 1, 0, 0, 1, 2, 5],
    ]
    births = np.full((4, 8), 20)
    return make_panel(
        ["a", "b", "c", "d"],
        counts,
        [1000, 2000, 1500, 800],
        period=4,
        births=births,
    )
