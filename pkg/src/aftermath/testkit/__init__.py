"""Offline mocks and synthetic fixtures for the VLM and super-resolution services."""

from aftermath.testkit.fixtures import gen_fixture_scene, random_labels
from aftermath.testkit.mocks import (
    MockScript,
    MockServer,
    fixture_labels,
    serve_mock_sr,
    serve_mock_vlm,
    structured_reply,
)

__all__ = [
    "MockScript",
    "MockServer",
    "fixture_labels",
    "gen_fixture_scene",
    "random_labels",
    "serve_mock_sr",
    "serve_mock_vlm",
    "structured_reply",
]
