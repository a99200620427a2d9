import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from kinfeas.robot import load_robot


@pytest.fixture(scope="session")
def pr2():
    return load_robot("pr2_like")


@pytest.fixture(scope="session")
def hsr():
    return load_robot("hsr_like")


@pytest.fixture(scope="session")
def tiago():
    return load_robot("tiago_like")
