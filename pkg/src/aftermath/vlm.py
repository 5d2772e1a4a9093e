"""Minimal multimodal chat client with strictly isolated sessions.

The native wire format is ``POST /chat`` with
``{"model", "temperature", "messages": [{"role", "parts": [{"text"} | {"png_base64"}]}]}``
answered by ``{"text": ...}``.  Adapters translate that body at the edge for
hosted APIs (OpenAI-style chat completions, Ollama).
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import requests

from aftermath.enhance import with_retries
from aftermath.imaging import downscale_to_edge, png_b64

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class VlmError(Exception):
    pass


class EndpointUnavailable(VlmError):
    pass


class HttpError(VlmError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status} from VLM endpoint {detail}".rstrip())
        self.status = status


class MalformedResponse(VlmError):
    pass


class VlmTimeout(VlmError):
    pass


@dataclass(frozen=True)
class VlmConfig:
    endpoint_url: str
    model_name: str = "gemma3:27b"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    timeout_s: float = 300.0
    max_image_edge: int = 2048
    concurrency: int = 2
    retries: int = 2
    backoff_s: float = 1.0
    adapter: str = "native"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1 or self.max_image_edge < 1 or self.concurrency < 1:
            raise ValueError("max_output_tokens, max_image_edge and concurrency must be positive")
        if self.adapter not in ADAPTERS:
            raise ValueError(f"unknown adapter {self.adapter!r}; choose from {sorted(ADAPTERS)}")


@dataclass(frozen=True, eq=False)
class ImagePart:
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("image parts must be (H, W, 3) rasters")


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"bad role {self.role!r}")
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.role == "assistant" and any(not isinstance(p, str) for p in self.parts):
            raise ValueError("assistant messages carry text only")

    @classmethod
    def user(cls, text: str, images: Sequence[np.ndarray] = ()) -> "Message":
        return cls("user", (text, *(ImagePart(np.asarray(im)) for im in images)))

    @classmethod
    def system(cls, text: str) -> "Message":
        return cls("system", (text,))

    @property
    def text(self) -> str:
        return "\n".join(p for p in self.parts if isinstance(p, str))


@dataclass(eq=False)
class ChatSession:
    session_id: str
    config: VlmConfig
    transcript: list[Message] = field(default_factory=list)
    client: "VlmClient | None" = field(default=None, repr=False)


# --- wire format ---------------------------------------------------------------


def _encode_part(part: Part, max_edge: int) -> dict:
    if isinstance(part, str):
        return {"text": part}
    return {"png_base64": png_b64(downscale_to_edge(part.pixels, max_edge))}


def native_body(config: VlmConfig, messages: Sequence[Message]) -> dict:
    return {
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": [
            {"role": m.role, "parts": [_encode_part(p, config.max_image_edge) for p in m.parts]}
            for m in messages
        ],
    }


def _openai(config: VlmConfig, body: dict) -> tuple[str, dict, Callable[[dict], str]]:
    def content(parts):
        return [
            {"type": "text", "text": p["text"]} if "text" in p
            else {"type": "image_url", "image_url": {"url": "data:image/png;base64," + p["png_base64"]}}
            for p in parts
        ]

    out = {
        "model": body["model"],
        "temperature": body["temperature"],
        "max_tokens": config.max_output_tokens,
        "messages": [{"role": m["role"], "content": content(m["parts"])} for m in body["messages"]],
    }
    return "/v1/chat/completions", out, lambda r: r["choices"][0]["message"]["content"]


def _ollama(config: VlmConfig, body: dict) -> tuple[str, dict, Callable[[dict], str]]:
    messages = []
    for m in body["messages"]:
        messages.append({
            "role": m["role"],
            "content": "\n".join(p["text"] for p in m["parts"] if "text" in p),
            "images": [p["png_base64"] for p in m["parts"] if "png_base64" in p],
        })
    out = {
        "model": body["model"],
        "stream": False,
        "options": {"temperature": body["temperature"], "num_predict": config.max_output_tokens},
        "messages": messages,
    }
    return "/api/chat", out, lambda r: r["message"]["content"]


def _native(config: VlmConfig, body: dict) -> tuple[str, dict, Callable[[dict], str]]:
    return "/chat", body, lambda r: r["text"]


ADAPTERS = {"native": _native, "openai": _openai, "ollama": _ollama}


def request_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


# --- client ------------------------------------------------------------------------


class VlmClient:
    """Owns the endpoint config and the global in-flight request cap."""

    def __init__(self, config: VlmConfig):
        self.config = config
        self._slots = threading.BoundedSemaphore(config.concurrency)

    def new_session(self, label: str | None = None) -> ChatSession:
        return ChatSession(label or uuid.uuid4().hex, self.config, [], self)

    def build_request(self, session: ChatSession, message: Message) -> tuple[str, bytes, Callable[[dict], str]]:
        body = native_body(self.config, [*session.transcript, message])
        path, payload, extract = ADAPTERS[self.config.adapter](self.config, body)
        return self.config.endpoint_url.rstrip("/") + path, request_bytes(payload), extract

    def _exchange(self, url: str, data: bytes, extract) -> str:
        with self._slots:
            try:
                resp = requests.post(
                    url, data=data, headers={"Content-Type": "application/json"}, timeout=self.config.timeout_s
                )
            except requests.Timeout as exc:
                raise VlmTimeout(f"VLM endpoint timed out after {self.config.timeout_s}s") from exc
            except requests.RequestException as exc:
                raise EndpointUnavailable(f"VLM endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise HttpError(resp.status_code, resp.text[:200])
        try:
            text = extract(resp.json())
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected VLM response shape: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("VLM response text is not a string")
        return text

    def send(self, session: ChatSession, message: Message) -> str:
        if message.role != "user":
            raise ValueError("only user messages can be sent")
        url, data, extract = self.build_request(session, message)
        reply = with_retries(
            lambda: self._exchange(url, data, extract), self.config.retries, self.config.backoff_s, (VlmError,)
        )
        session.transcript.extend([message, Message("assistant", (reply,))])
        return reply


def new_session(config: VlmConfig, label: str | None = None, client: VlmClient | None = None) -> ChatSession:
    return (client or VlmClient(config)).new_session(label)


def send(session: ChatSession, message: Message) -> str:
    if session.client is None:
        session.client = VlmClient(session.config)
    return session.client.send(session, message)
