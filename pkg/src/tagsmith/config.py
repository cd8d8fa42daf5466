"""Pipeline configuration: file format, env overrides, backend builders.

The config file is plain ``key = value`` lines with ``#`` comments.
Dotted keys group settings; unknown keys are rejected so typos fail fast.

::

    state_dir = ./state
    parallelism = 1
    icl_n = 3
    rag_n = 3

    graph.delta_ct = 0.5
    graph.delta_cc = 0.8
    graph.cap_c2t = 15
    graph.cap_c2c2t = 5

    calibration.threshold = 0.5

    encoder.kind = hashing          # hashing | remote
    encoder.dim = 256
    encoder.url =                   # remote only
    encoder.token =
    encoder.max_inflight = 8

    completion.kind = mock          # mock | remote
    completion.script = ./mock_script.jsonl
    completion.url =
    completion.token =
    completion.max_inflight = 4
    completion.max_tokens = 256

    knowledge.samples =             # optional sample KB, JSONL
    knowledge.corpus =              # optional corpus KB, JSONL
    knowledge.max_segment_chars = 512

Environment variables override backend endpoints and credentials:
``TAGSMITH_ENCODER_URL``, ``TAGSMITH_ENCODER_TOKEN``,
``TAGSMITH_COMPLETION_URL``, ``TAGSMITH_COMPLETION_TOKEN``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .calibrate import CalibrationConfig
from .encoder import EncoderBackend, HashingEncoder, RemoteEncoder
from .errors import InvalidInput
from .genkit import CompletionClient, HttpCompletionClient, MockCompletionClient
from .taggraph import GraphConfig

ENV_ENCODER_URL = "TAGSMITH_ENCODER_URL"
ENV_ENCODER_TOKEN = "TAGSMITH_ENCODER_TOKEN"
ENV_COMPLETION_URL = "TAGSMITH_COMPLETION_URL"
ENV_COMPLETION_TOKEN = "TAGSMITH_COMPLETION_TOKEN"


@dataclass
class EncoderSettings:
    kind: str = "hashing"  # hashing | remote
    dim: int = 256
    url: str = ""
    token: str = ""
    max_inflight: int = 8


@dataclass
class CompletionSettings:
    kind: str = "mock"  # mock | remote
    script: str = ""
    url: str = ""
    token: str = ""
    max_inflight: int = 4
    max_tokens: int = 256


@dataclass
class KnowledgeSettings:
    samples: str = ""
    corpus: str = ""
    max_segment_chars: int = 512


@dataclass
class PipelineConfig:
    """Everything the pipeline needs to come up, validated at startup."""

    graph: GraphConfig = field(default_factory=GraphConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    icl_n: int = 3
    rag_n: int = 3
    parallelism: int = 1
    state_dir: str = "./state"
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    completion: CompletionSettings = field(default_factory=CompletionSettings)
    knowledge: KnowledgeSettings = field(default_factory=KnowledgeSettings)

    def __post_init__(self) -> None:
        if self.icl_n < 0 or self.rag_n < 0:
            raise InvalidInput("icl_n and rag_n must be >= 0")
        if self.parallelism < 1:
            raise InvalidInput("parallelism must be >= 1")


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Parse a config file; a missing path yields all defaults."""
    values: dict[str, str] = {}
    if path is not None:
        for lineno, raw in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInput(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise InvalidInput(f"config line {lineno}: duplicate key {key!r}")
            values[key] = value
    return _build(values)


def _build(values: dict[str, str]) -> PipelineConfig:
    def pop(key: str, default: str) -> str:
        return values.pop(key, default)

    def pop_int(key: str, default: int) -> int:
        raw = values.pop(key, "")
        try:
            return int(raw) if raw else default
        except ValueError:
            raise InvalidInput(f"config key {key!r}: expected an integer, got {raw!r}") from None

    def pop_float(key: str, default: float) -> float:
        raw = values.pop(key, "")
        try:
            return float(raw) if raw else default
        except ValueError:
            raise InvalidInput(f"config key {key!r}: expected a number, got {raw!r}") from None

    config = PipelineConfig(
        graph=GraphConfig(
            delta_ct=pop_float("graph.delta_ct", 0.5),
            delta_cc=pop_float("graph.delta_cc", 0.8),
            cap_c2t=pop_int("graph.cap_c2t", 15),
            cap_c2c2t=pop_int("graph.cap_c2c2t", 5),
        ),
        calibration=CalibrationConfig(threshold=pop_float("calibration.threshold", 0.5)),
        icl_n=pop_int("icl_n", 3),
        rag_n=pop_int("rag_n", 3),
        parallelism=pop_int("parallelism", 1),
        state_dir=pop("state_dir", "./state"),
        encoder=EncoderSettings(
            kind=pop("encoder.kind", "hashing"),
            dim=pop_int("encoder.dim", 256),
            url=pop("encoder.url", ""),
            token=pop("encoder.token", ""),
            max_inflight=pop_int("encoder.max_inflight", 8),
        ),
        completion=CompletionSettings(
            kind=pop("completion.kind", "mock"),
            script=pop("completion.script", ""),
            url=pop("completion.url", ""),
            token=pop("completion.token", ""),
            max_inflight=pop_int("completion.max_inflight", 4),
            max_tokens=pop_int("completion.max_tokens", 256),
        ),
        knowledge=KnowledgeSettings(
            samples=pop("knowledge.samples", ""),
            corpus=pop("knowledge.corpus", ""),
            max_segment_chars=pop_int("knowledge.max_segment_chars", 512),
        ),
    )
    if values:
        raise InvalidInput(f"unknown config key(s): {sorted(values)}")
    return config


def build_encoder(config: PipelineConfig) -> EncoderBackend:
    """Instantiate the configured encoder, applying env overrides."""
    settings = config.encoder
    if settings.kind == "hashing":
        return HashingEncoder(dim=settings.dim)
    if settings.kind == "remote":
        url = os.environ.get(ENV_ENCODER_URL, settings.url)
        token = os.environ.get(ENV_ENCODER_TOKEN, settings.token)
        if not url:
            raise InvalidInput("encoder.kind = remote requires encoder.url (or env override)")
        return RemoteEncoder(
            url, settings.dim, token=token or None, max_inflight=settings.max_inflight
        )
    raise InvalidInput(f"unknown encoder.kind {settings.kind!r}")


def build_completion_client(config: PipelineConfig) -> CompletionClient:
    """Instantiate the configured completion backend, applying env overrides."""
    settings = config.completion
    if settings.kind == "mock":
        if not settings.script:
            raise InvalidInput("completion.kind = mock requires completion.script")
        return MockCompletionClient.from_script(settings.script)
    if settings.kind == "remote":
        url = os.environ.get(ENV_COMPLETION_URL, settings.url)
        token = os.environ.get(ENV_COMPLETION_TOKEN, settings.token)
        if not url:
            raise InvalidInput("completion.kind = remote requires completion.url (or env override)")
        return HttpCompletionClient(url, token=token or None, max_inflight=settings.max_inflight)
    raise InvalidInput(f"unknown completion.kind {settings.kind!r}")
