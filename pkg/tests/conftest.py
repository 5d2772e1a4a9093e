import subprocess

import numpy as np
import pytest

from aftermath.ingest import DecodeFailure, find_ffmpeg

from aftermath.testkit import MockScript, serve_mock_sr, serve_mock_vlm
from aftermath.vlm import VlmClient, VlmConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mock_vlm():
    """Factory: start a mock VLM for a script; stopped at teardown."""
    servers = []

    def start(script=None, mode="script"):
        server = serve_mock_vlm(script or MockScript(), mode=mode)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.stop()


@pytest.fixture
def sr_nearest():
    with serve_mock_sr("nearest") as server:
        yield server


@pytest.fixture
def sr_identity():
    with serve_mock_sr("identity") as server:
        yield server


@pytest.fixture
def client_for():
    def make(server, **kwargs):
        kwargs.setdefault("backoff_s", 0.0)
        return VlmClient(VlmConfig(endpoint_url=server.url, **kwargs))

    return make


@pytest.fixture(scope="session")
def ffmpeg():
    try:
        return find_ffmpeg()
    except DecodeFailure:
        pytest.skip("no ffmpeg available")


@pytest.fixture
def make_video(ffmpeg):
    """Write a lossless synthetic test-pattern clip."""

    def make(path, frames=30, fps=25, size="64x48"):
        subprocess.run(
            [ffmpeg, "-y", "-loglevel", "error", "-f", "lavfi", "-i", f"testsrc=size={size}:rate={fps}",
             "-frames:v", str(frames), "-c:v", "ffv1", str(path)],
            check=True,
        )
        return path

    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
