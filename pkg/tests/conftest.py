import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from modules.netmodel import build_ksrs  # noqa: E402
from modules.policy import derive_params  # noqa: E402


@pytest.fixture
def params():
    return derive_params(0.2)


@pytest.fixture
def spec(params):
    return build_ksrs(params)
