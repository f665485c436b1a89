import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from nestedltr.core import ScalarizationWeights  # noqa: E402
from nestedltr.simulator import WorldConfig, build_world, table_world  # noqa: E402

W1 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.5)
W2 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.0)
UNIT = ScalarizationWeights(1.0, 1.0, 1.0, 1.0)

# criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_config():
    return WorldConfig(n_users=60, n_items=200, slate_size=8, l2_size=4, latent_dim=4, n_genres=3, n_languages=2)


@pytest.fixture(scope="session")
def small_world(small_config):
    return build_world(small_config, seed=7)


@pytest.fixture(scope="session")
def flat_world():
    """Small world without a second-level feed."""
    cfg = WorldConfig(n_users=60, n_items=200, slate_size=8, l2_size=0, latent_dim=4, n_genres=3, n_languages=2)
    return build_world(cfg, seed=7)


def three_item_world(seed=0):
    """One user, three items; each item's second-level list holds the other two."""
    l1 = np.array([[[0.5, 0.1, 0.2, 0.6],
                    [0.3, 0.2, 0.1, 0.3],
                    [0.7, 0.0, 0.4, 0.1]]])
    l2 = np.array([[[0.2, 0.3, 0.1, 0.0],
                    [0.6, 0.1, 0.3, 0.0],
                    [0.4, 0.5, 0.2, 0.0]]])
    attach = np.array([[1, 2], [2, 0], [0, 1]])
    return table_world(l1, l2, attach, slate_size=3, seed=seed)
