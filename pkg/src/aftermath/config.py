"""Run configuration: TOML file, then environment, then command-line flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import tomli
import tomli_w

from aftermath.enhance import EnhancementConfig
from aftermath.vlm import VlmConfig

ENV_VLM_URL = "AFTERMATH_VLM_URL"
ENV_SR_URL = "AFTERMATH_SR_URL"


class ConfigError(ValueError):
    pass


@dataclass
class IngestSection:
    stride: int = 10
    pseudo_count: int = 5
    pad: float = 0.25
    fps_override: float = 0.0


@dataclass
class EnhanceSection:
    backend: str = "bicubic"
    scale: int = 4
    service_url: str = ""
    timeout_s: float = 120.0
    window: int = 5
    max_in_flight: int = 2
    retries: int = 2
    backoff_s: float = 0.5
    cache_dir: str = ""


@dataclass
class VlmSection:
    endpoint: str = ""
    model: str = "gemma3:27b"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    timeout_s: float = 300.0
    max_image_edge: int = 2048
    repetitions: int = 1
    concurrency: int = 2
    retries: int = 2
    backoff_s: float = 1.0
    adapter: str = "native"
    frame_budget: int = 4


@dataclass
class RunSection:
    prompts_dir: str = ""
    out: str = "out"
    created_at: str = ""


@dataclass
class RunConfig:
    ingest: IngestSection = field(default_factory=IngestSection)
    enhance: EnhanceSection = field(default_factory=EnhanceSection)
    vlm: VlmSection = field(default_factory=VlmSection)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    def snapshot(self) -> dict[str, dict[str, Any]]:
        """Everything that affects results; output locations are left out."""
        d = self.to_dict()
        d["run"].pop("out")
        d["enhance"].pop("cache_dir")
        return d

    def enhancement(self, backend: str | None = None) -> EnhancementConfig:
        e = self.enhance
        backend = backend or e.backend
        try:
            return EnhancementConfig(
                backend=backend,
                scale=e.scale,
                service_url=e.service_url if backend == "service" else None,
                timeout_s=e.timeout_s,
                window=e.window,
                max_in_flight=e.max_in_flight,
                retries=e.retries,
                backoff_s=e.backoff_s,
                cache_dir=e.cache_dir or str(Path(self.run.out) / "cache"),
            )
        except ValueError as exc:
            raise ConfigError(f"[enhance] {exc}") from exc

    def vlm_config(self) -> VlmConfig:
        v = self.vlm
        if not v.endpoint:
            raise ConfigError(f"[vlm] endpoint is not set (config file, --vlm-url or {ENV_VLM_URL})")
        try:
            return VlmConfig(
                endpoint_url=v.endpoint,
                model_name=v.model,
                temperature=v.temperature,
                max_output_tokens=v.max_output_tokens,
                timeout_s=v.timeout_s,
                max_image_edge=v.max_image_edge,
                concurrency=v.concurrency,
                retries=v.retries,
                backoff_s=v.backoff_s,
                adapter=v.adapter,
            )
        except ValueError as exc:
            raise ConfigError(f"[vlm] {exc}") from exc

    def resolved_created_at(self) -> str:
        if self.run.created_at:
            return self.run.created_at
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
        return when.replace(microsecond=0).isoformat().replace("+00:00", "Z")


SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(section: str, key: str, value, target):
    kind = type(target)
    try:
        if kind is bool:
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {value!r}") from None


def apply(cfg: RunConfig, values: Mapping[str, Mapping[str, Any]]) -> RunConfig:
    for section, items in values.items():
        if not hasattr(cfg, section) or section not in ("ingest", "enhance", "vlm", "run"):
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(items, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        obj = getattr(cfg, section)
        for key, value in items.items():
            if value is None:
                continue
            if not hasattr(obj, key):
                raise ConfigError(f"unknown config key [{section}] {key}")
            setattr(obj, key, _coerce(section, key, value, getattr(obj, key)))
    return cfg


def load_config(path: str | Path | None = None, overrides: Mapping[str, Mapping[str, Any]] | None = None,
                env: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults < config file < environment < explicit overrides (flags)."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, "rb") as fh:
                apply(cfg, tomli.load(fh))
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    env = os.environ if env is None else env
    env_values = {"vlm": {"endpoint": env.get(ENV_VLM_URL)}, "enhance": {"service_url": env.get(ENV_SR_URL)}}
    apply(cfg, env_values)
    if overrides:
        apply(cfg, overrides)
    if cfg.ingest.stride < 1 or cfg.ingest.pseudo_count < 1 or not 0 <= cfg.ingest.pad <= 1:
        raise ConfigError("[ingest] stride and pseudo_count must be >= 1 and pad within [0, 1]")
    if cfg.vlm.repetitions < 1:
        raise ConfigError("[vlm] repetitions must be >= 1")
    if not cfg.run.created_at:
        cfg.run.created_at = cfg.resolved_created_at()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def run_id(command: str, snapshot: Mapping, extra: Any = None) -> str:
    payload = json.dumps({"command": command, "config": snapshot, "extra": extra}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
