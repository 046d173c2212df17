"""
Shared pytest fixtures for the CrowdAttr test scripts.
"""

import os
import sys

import pytest

# Add parent directory to path to import app modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app.back.services.geometry import BBox  # noqa: E402
from app.back.services.nms_service import Detection  # noqa: E402
from app.back.services.synth_service import crowd_fixture  # noqa: E402
from app.back.workers import close_worker_pool  # noqa: E402


@pytest.fixture(autouse=True)
def _no_leftover_pool():
    yield
    close_worker_pool()


@pytest.fixture
def crowd():
    """The three-pedestrian scene with its four detections."""
    return crowd_fixture()


@pytest.fixture
def three_boxes():
    """A(.9), B(.8) with iou(A,B)=0.6, C(.7) with iou(A,C)=0.2 and iou(B,C)=0."""
    return [
        Detection(box=BBox(100, 0, 140, 100), score=0.9),
        Detection(box=BBox(110, 0, 150, 100), score=0.8),
        Detection(box=BBox(90, 0, 110, 100), score=0.7),
    ]
