import json
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import requests

from aftermath.imaging import from_png_b64, png_b64
from aftermath.ingest import discover_xbd
from aftermath.protocol import parse_assessment_response
from aftermath.taxonomy import DamageCategory as D, XbdLabel
from aftermath.testkit import (
    MockScript,
    MockServer,
    fixture_labels,
    gen_fixture_scene,
    random_labels,
    serve_mock_sr,
    serve_mock_vlm,
)
from aftermath.testkit.mocks import DEFAULT_RESPONSE, vlm_app
from aftermath.vlm import Message, send


def chat(url, text, turns=1):
    msgs = [{"role": "user", "parts": [{"type": "text", "text": text}]}] * turns
    r = requests.post(f"{url}/chat", json={"model": "m", "temperature": 0, "messages": msgs}, timeout=5)
    r.raise_for_status()
    return r.json()["text"]


def test_script_lookup_and_default():
    script = MockScript({"a": "A", "b": ["B0", "B1"]}, default="D")
    assert script.respond("a") == "A"
    assert script.respond("zzz") == "D" and script.respond(None) == "D"
    assert [script.respond("b", t) for t in range(3)] == ["B0", "B1", "B1"]


def test_truthful_two_building_fixture(tmp_path, mock_vlm, client_for):
    gen_fixture_scene(tmp_path, 2, ["destroyed", "no-damage"], scene_id="fx")
    labels = fixture_labels(tmp_path)
    assert labels == {"fx/b0000": D(4), "fx/b0001": D(1)}
    client = client_for(mock_vlm(MockScript.truthful(labels)))
    for key, cat in labels.items():
        reply = send(client.new_session(), Message.user(f"[id:{key}] assess"))
        (a,) = parse_assessment_response(reply).assessments
        assert a.category is cat and a.structure_id == key.split("/")[1]


def test_unknown_prompt_default(mock_vlm):
    server = mock_vlm(MockScript({"x": "hit"}))
    assert chat(server.url, "no marker here") == DEFAULT_RESPONSE
    assert chat(server.url, "[id:x] go") == "hit"


def test_turn_indexed_replies(mock_vlm):
    server = mock_vlm(MockScript({"s": ["first", "second"]}))
    assert chat(server.url, "[id:s]", turns=1) == "first"
    assert chat(server.url, "[id:s]", turns=2) == "second"


def test_echo_mode(mock_vlm, client_for, rng):
    client = client_for(mock_vlm(mode="echo"))
    img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
    assert send(client.new_session(), Message.user("hi", [img, img])) == "parts=3"


def test_bad_requests(mock_vlm):
    server = mock_vlm()
    assert requests.post(f"{server.url}/chat", json={"x": 1}, timeout=5).status_code == 400
    assert requests.post(f"{server.url}/nope", json={}, timeout=5).status_code == 404
    assert requests.post(f"{server.url}/chat", data=b"{", timeout=5).status_code == 400
    assert requests.get(f"{server.url}/health", timeout=5).json() == {"status": "ok"}
    with pytest.raises(ValueError):
        vlm_app(MockScript(), "psychic")


def test_concurrent_requests_deterministic(mock_vlm):
    server = mock_vlm(MockScript({f"s{i}": f"r{i}" for i in range(20)}))
    with ThreadPoolExecutor(8) as pool:
        got = list(pool.map(lambda i: chat(server.url, f"[id:s{i}]"), range(20)))
    assert got == [f"r{i}" for i in range(20)]


def sr_post(url, px, scale):
    body = {"scale": scale, "frames": [{"index": 0, "png_base64": png_b64(px)}]}
    r = requests.post(f"{url}/enhance", json=body, timeout=5)
    return r


def test_sr_nearest_block_replication():
    px = np.array([[[10, 20, 30], [40, 50, 60]], [[70, 80, 90], [100, 110, 120]]], dtype=np.uint8)
    with serve_mock_sr("nearest") as server:
        out = from_png_b64(sr_post(server.url, px, 4).json()["frames"][0]["png_base64"])
    assert out.shape == (8, 8, 3)
    for y in range(8):
        for x in range(8):
            assert (out[y, x] == px[y // 4, x // 4]).all()


def test_sr_identity_scale_one_byte_identical(rng):
    px = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    with serve_mock_sr("identity") as server:
        doc = sr_post(server.url, px, 1).json()
    assert doc["frames"][0]["png_base64"] == png_b64(px)


def test_sr_bad_body():
    with serve_mock_sr() as server:
        assert requests.post(f"{server.url}/enhance", json={"frames": []}, timeout=5).status_code == 400


def test_port_in_use():
    with serve_mock_vlm() as a:
        port = a.httpd.server_address[1]
        with pytest.raises(OSError):
            MockServer(lambda p, b: (200, {}), port)


def test_fixture_two_buildings_round_trip(tmp_path):
    pair = gen_fixture_scene(tmp_path, 2, ["destroyed", "no-damage"], scene_id="fx")
    scene = pair.load()
    assert [b.truth_label for b in scene.buildings] == [XbdLabel.DESTROYED, XbdLabel.NO_DAMAGE]
    assert scene.pre[0].pixel_data != scene.post[0].pixel_data
    assert len(scene.pre) == 5


def test_fixture_empty_scene(tmp_path):
    scene = gen_fixture_scene(tmp_path, 0, []).load()
    assert scene.buildings == ()
    assert [p.scene_id for p in discover_xbd(tmp_path)] == [scene.scene_id]


def test_fixture_no_damage_leaves_building_unchanged(tmp_path):
    scene = gen_fixture_scene(tmp_path, 1, ["no-damage"]).load()
    assert scene.pre[0].pixel_data == scene.post[0].pixel_data


def test_fixture_deterministic(tmp_path):
    a = gen_fixture_scene(tmp_path / "a", 10, seed=3)
    b = gen_fixture_scene(tmp_path / "b", 10, seed=3)
    assert a.image_post.read_bytes() == b.image_post.read_bytes()
    assert a.label_post.read_text() == b.label_post.read_text()


def test_fixture_label_count_mismatch(tmp_path):
    with pytest.raises(ValueError):
        gen_fixture_scene(tmp_path, 2, ["destroyed"])


def test_random_labels():
    labels = random_labels(500, seed=1)
    assert XbdLabel.UN_CLASSIFIED not in labels and len(set(labels)) == 4
    assert XbdLabel.UN_CLASSIFIED in random_labels(500, seed=1, include_unclassified=True)


def test_fixture_command(tmp_path):
    out = subprocess.run([sys.executable, "-m", "aftermath.testkit", "fixture", "--out", str(tmp_path), "-n", "3"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip().endswith("_post_disaster.json")
    doc = json.loads((tmp_path / "labels" / "fixture-tornado_00000000_post_disaster.json").read_text())
    assert len(doc["features"]["xy"]) == 3
