import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from core import DEFAULT_SETTINGS  # noqa: E402


@pytest.fixture
def fast():
    """Fewer sample points and a coarser scan grid for the heavier checks."""
    return DEFAULT_SETTINGS.replace(sample_points=4, scan_points=96)


@pytest.fixture
def scenario_dir():
    return Path(__file__).resolve().parents[1] / "scenarios"
