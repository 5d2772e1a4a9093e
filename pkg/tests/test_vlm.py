import base64
import io
import json

import numpy as np
import pytest
from PIL import Image

from aftermath.testkit import MockScript
from aftermath.vlm import (
    ChatSession,
    EndpointUnavailable,
    HttpError,
    ImagePart,
    MalformedResponse,
    Message,
    VlmClient,
    VlmConfig,
    native_body,
    new_session,
    send,
)


def test_new_sessions_are_fresh():
    cfg = VlmConfig("http://unused")
    a, b = new_session(cfg), new_session(cfg)
    assert a.session_id != b.session_id
    assert a.transcript == [] and b.transcript == []
    assert a.transcript is not b.transcript


def test_thirty_sessions_distinct():
    client = VlmClient(VlmConfig("http://unused"))
    sessions = [client.new_session(f"scene{s}/rep{r}") for s in range(10) for r in range(3)]
    assert len({s.session_id for s in sessions}) == 30
    assert len({id(s.transcript) for s in sessions}) == 30


def test_text_prompt_ok(mock_vlm, client_for):
    server = mock_vlm(MockScript(default="OK"))
    session = client_for(server).new_session()
    assert send(session, Message.user("hello")) == "OK"
    assert len(session.transcript) == 2
    assert [m.role for m in session.transcript] == ["user", "assistant"]


def test_image_part_count(mock_vlm, client_for):
    server = mock_vlm(mode="echo")
    session = client_for(server).new_session()
    img = np.zeros((4, 4, 3), np.uint8)
    assert send(session, Message.user("describe", [img])) == "parts=2"


def test_transcript_grows_by_two_and_is_replayed(mock_vlm, client_for):
    server = mock_vlm(mode="echo")
    client = client_for(server)
    s1, s2 = client.new_session(), client.new_session()
    send(s1, Message.user("a"))
    send(s1, Message.user("b"))
    assert len(s1.transcript) == 4 and s2.transcript == []
    url, data, _ = client.build_request(s1, Message.user("c"))
    body = json.loads(data)
    assert [m["role"] for m in body["messages"]] == ["user", "assistant", "user", "assistant", "user"]


def test_oversized_image_downscaled():
    cfg = VlmConfig("http://unused", max_image_edge=2048)
    body = native_body(cfg, [Message.user("x", [np.zeros((4000, 8000, 3), np.uint8)])])
    png = base64.b64decode(body["messages"][0]["parts"][1]["png_base64"])
    with Image.open(io.BytesIO(png)) as im:
        assert im.size == (2048, 1024)


def test_request_bytes_deterministic(rng):
    cfg = VlmConfig("http://unused")
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    s = ChatSession("x", cfg)
    client = VlmClient(cfg)
    a = client.build_request(s, Message.user("p", [img]))[1]
    b = client.build_request(s, Message.user("p", [img.copy()]))[1]
    assert a == b


def test_wire_format_shape():
    cfg = VlmConfig("http://unused", model_name="m", temperature=0.0)
    body = native_body(cfg, [Message.user("hi", [np.zeros((1, 1, 3), np.uint8)])])
    assert set(body) == {"model", "temperature", "messages"}
    parts = body["messages"][0]["parts"]
    assert set(parts[0]) == {"text"} and set(parts[1]) == {"png_base64"}


def test_adapters_translate():
    msg = Message.user("hi", [np.zeros((1, 1, 3), np.uint8)])
    s = ChatSession("x", VlmConfig("http://h", adapter="openai"))
    url, data, extract = VlmClient(s.config).build_request(s, msg)
    body = json.loads(data)
    assert url == "http://h/v1/chat/completions"
    assert body["messages"][0]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert extract({"choices": [{"message": {"content": "ok"}}]}) == "ok"
    s = ChatSession("y", VlmConfig("http://h", adapter="ollama"))
    url, data, extract = VlmClient(s.config).build_request(s, msg)
    body = json.loads(data)
    assert url == "http://h/api/chat" and len(body["messages"][0]["images"]) == 1
    assert extract({"message": {"content": "ok"}}) == "ok"


def test_only_user_messages_sent():
    s = new_session(VlmConfig("http://unused"))
    with pytest.raises(ValueError):
        send(s, Message("assistant", ("x",)))
    with pytest.raises(ValueError):
        Message("assistant", ("x", ImagePart(np.zeros((1, 1, 3), np.uint8))))


def test_endpoint_unavailable_after_retries():
    client = VlmClient(VlmConfig("http://127.0.0.1:9", backoff_s=0.0, timeout_s=2))
    s = client.new_session()
    with pytest.raises(EndpointUnavailable):
        client.send(s, Message.user("x"))
    assert s.transcript == []


def test_http_error_and_malformed(mock_vlm, client_for):
    server = mock_vlm(MockScript(default="OK"))
    bad_path = VlmClient(VlmConfig(server.url, adapter="openai", backoff_s=0.0))
    with pytest.raises(HttpError) as err:
        bad_path.send(bad_path.new_session(), Message.user("x"))
    assert err.value.status == 404

    class Wrong(VlmClient):
        def build_request(self, session, message):
            url, data, _ = super().build_request(session, message)
            return url, data, lambda r: r["nope"]

    wrong = Wrong(VlmConfig(server.url, backoff_s=0.0))
    with pytest.raises(MalformedResponse):
        wrong.send(wrong.new_session(), Message.user("x"))


def test_config_validation():
    with pytest.raises(ValueError):
        VlmConfig("http://x", temperature=-1)
    with pytest.raises(ValueError):
        VlmConfig("http://x", adapter="grpc")
    assert VlmConfig("http://x").temperature == 0.0
