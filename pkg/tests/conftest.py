"""Test configuration ensuring project modules are importable."""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Iterator

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))


from traffic_forecast import metrics


@pytest.fixture(autouse=True)
def reset_metrics() -> Iterator[None]:
    metrics.reset()
    yield
    metrics.reset()
