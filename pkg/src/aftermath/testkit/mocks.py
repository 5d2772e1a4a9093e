"""Deterministic in-process HTTP mocks of the VLM and SR services.

Both speak the same wire protocols as the real clients and answer purely from
request content, so repeated runs are byte-for-byte reproducible.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping

from aftermath.imaging import from_png_b64, nearest_upscale, png_b64
from aftermath.taxonomy import DamageCategory, XbdLabel, map_xbd_to_category

log = logging.getLogger(__name__)

FINGERPRINT_RE = re.compile(r"\[id:([^\]]+)\]")
DEFAULT_RESPONSE = "I could not identify the requested structure."


def structured_reply(building_id: str, category: DamageCategory, prose: str = "") -> str:
    block = {
        "structures": [
            {"id": building_id, "category": category.level,
             "rationale": f"Visible condition consistent with {category.title.lower()}.", "confidence": "high"}
        ],
        "distribution": {str(category.level): 1.0},
        "caveats": "",
    }
    prose = prose or f"The building shows {category.display_string().lower()}."
    return f"{prose}\n\n```json\n{json.dumps(block, indent=2)}\n```\n"


@dataclass
class MockScript:
    """Canned replies keyed by the ``[id:...]`` fingerprint embedded in prompts.

    A value may be a list, indexed by how many user turns the request carries
    (baseline, then comparison on the same session).
    """

    responses: dict[str, str | list[str]] = field(default_factory=dict)
    default: str = DEFAULT_RESPONSE

    def respond(self, fingerprint: str | None, turn: int = 0) -> str:
        value = self.responses.get(fingerprint) if fingerprint is not None else None
        if value is None:
            return self.default
        if isinstance(value, list):
            return value[min(turn, len(value) - 1)]
        return value

    @classmethod
    def truthful(cls, labels: Mapping[str, DamageCategory], **kwargs) -> "MockScript":
        """Replies for ``"<scene>/<building>"`` keys that name the true category."""
        responses = {key: structured_reply(key.rsplit("/", 1)[-1], cat) for key, cat in labels.items()}
        return cls(responses, **kwargs)


def fixture_labels(data_dir: str | Path) -> dict[str, DamageCategory]:
    """``{"scene/building": category}`` from every post-disaster label file under ``data_dir``."""
    out = {}
    for path in sorted(Path(data_dir).glob("**/*_post_disaster.json")):
        scene = path.name[: -len("_post_disaster.json")]
        for feat in json.loads(path.read_text())["features"]["xy"]:
            props = feat["properties"]
            cat = map_xbd_to_category(XbdLabel.parse(props["subtype"])) if props.get("subtype") else None
            if cat is not None:
                out[f"{scene}/{props['uid']}"] = cat
    return out


def _fingerprint(messages: list) -> tuple[str | None, int]:
    users = [m for m in messages if m.get("role") == "user"]
    if not users:
        return None, 0
    text = "\n".join(p.get("text", "") for p in users[-1].get("parts", []))
    m = FINGERPRINT_RE.search(text)
    return (m.group(1) if m else None), len(users) - 1


class _JsonHandler(BaseHTTPRequestHandler):
    server_version = "aftermath-mock/1"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _reply(self, status: int, doc: dict) -> None:
        body = json.dumps(doc, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self):
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length) or b"null")

    def do_GET(self):
        if self.path == "/health":
            self._reply(200, {"status": "ok"})
        else:
            self._reply(404, {"error": "not found"})

    def do_POST(self):
        try:
            body = self._body()
        except json.JSONDecodeError:
            self._reply(400, {"error": "invalid JSON"})
            return
        try:
            status, doc = self.server.app(self.path, body)
        except Exception as exc:  # noqa: BLE001 - a mock must never kill its thread
            log.exception("mock handler failed")
            status, doc = 500, {"error": str(exc)}
        self._reply(status, doc)


class MockServer:
    """A threaded HTTP server on localhost; usable as a context manager."""

    def __init__(self, app, port: int = 0, host: str = "127.0.0.1"):
        self.httpd = ThreadingHTTPServer((host, port), _JsonHandler)
        self.httpd.daemon_threads = True
        self.httpd.app = app
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def vlm_app(script: MockScript, mode: str = "script"):
    if mode not in ("script", "truthful", "echo"):
        raise ValueError(f"unknown mock VLM mode {mode!r}")

    def app(path: str, body):
        if path != "/chat":
            return 404, {"error": "not found"}
        if not isinstance(body, dict) or not isinstance(body.get("messages"), list):
            return 400, {"error": "expected {model, temperature, messages}"}
        messages = body["messages"]
        if mode == "echo":
            return 200, {"text": f"parts={len(messages[-1].get('parts', []))}"}
        fp, turn = _fingerprint(messages)
        return 200, {"text": script.respond(fp, turn)}

    return app


def sr_app(mode: str = "nearest"):
    if mode not in ("nearest", "identity"):
        raise ValueError(f"unknown mock SR mode {mode!r}")

    def app(path: str, body):
        if path != "/enhance":
            return 404, {"error": "not found"}
        try:
            scale = int(body["scale"])
            frames = body["frames"]
        except (KeyError, TypeError, ValueError):
            return 400, {"error": "expected {scale, frames}"}
        out = []
        for item in frames:
            px = from_png_b64(item["png_base64"])
            if mode == "nearest":
                px = nearest_upscale(px, scale)
            out.append({"index": item["index"], "png_base64": png_b64(px)})
        return 200, {"frames": out}

    return app


def serve_mock_vlm(script: MockScript | None = None, port: int = 0, mode: str = "script") -> MockServer:
    return MockServer(vlm_app(script or MockScript(), mode), port)


def serve_mock_sr(mode: str = "nearest", port: int = 0) -> MockServer:
    return MockServer(sr_app(mode), port)
