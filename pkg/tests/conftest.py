import sys
from datetime import datetime
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

T0 = datetime(2024, 7, 1)
EXAMPLE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "example.ini"


@pytest.fixture
def t0():
    return T0
