import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from prmlab.envs import CraftDag, GridNav


@pytest.fixture(scope="session")
def small_grid():
    """4x4 open grid, 6 plain tasks, horizon 6."""
    return GridNav.generate(4, 4, horizon=6, n_tasks=6, seed=11)


@pytest.fixture(scope="session")
def key_grid():
    """5x5 grid where every task needs the key detour, horizon 12."""
    return GridNav.generate(5, 5, horizon=12, n_tasks=8, seed=5, key_fraction=1.0)


@pytest.fixture(scope="session")
def craft_env():
    return CraftDag.generate(5, [3, 2], horizon=14, n_tasks=6, seed=9)


@pytest.fixture(scope="session")
def corridor():
    """1x5 corridor: key left of start, locked goal right. The expert must
    first move away from the goal."""
    return GridNav.from_layouts(
        5,
        1,
        [
            {
                "id": "corridor",
                "start": [1, 0],
                "goal": [3, 0],
                "key": [0, 0],
                "horizon": 6,
            }
        ],
    )
