import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from llm_alloc.instance import generate_instance

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def mid_instance():
    return generate_instance((6, 6, 10), seed=7)


@pytest.fixture(scope="session")
def small_instance():
    return generate_instance((4, 4, 5), seed=42)
