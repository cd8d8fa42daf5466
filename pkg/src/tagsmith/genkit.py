"""Tag generation through a pluggable completion backend.

The generator works closed-world: prompts enumerate the recalled candidate
tags, the model answers one ``TAG: <name>`` line per selected tag, and any
name that does not resolve against the candidate list is dropped. Two kinds
of retrieved knowledge can be spliced into the prompt: worked examples from
a sample knowledge base (few-shot, with explicit incorrect tags as negative
examples) and descriptive corpus segments.

Also here: the training-data exporter that freezes (prompt, target) pairs
for supervised fine-tuning of a downstream model, and the deterministic
mock completion client used by tests and offline replays.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Protocol, Sequence, runtime_checkable

import httpx

from .core import Content, TagId, TagRepository, canonical_text
from .encoder import Embedding, EncoderBackend, cosine
from .errors import (
    BackendUnavailable,
    GenerationFailed,
    InvalidInput,
    InvalidRecord,
    ScriptMiss,
)
from .taggraph import CandidateSet

TAG_LINE = re.compile(r"^\s*TAG:\s*(.*\S)\s*$")


# ---------------------------------------------------------------------------
# Completion backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenScore:
    """Log-probability report for one generated token position."""

    token: str
    logprob: float
    top_alternatives: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class CompletionResult:
    text: str
    token_scores: tuple[TokenScore, ...] | None = None


@runtime_checkable
class CompletionClient(Protocol):
    """Structural contract for completion backends."""

    @property
    def identity(self) -> str: ...

    @property
    def supports_token_scores(self) -> bool: ...

    def complete(
        self, prompt: str, *, max_tokens: int = 256, want_token_scores: bool = False
    ) -> CompletionResult: ...


class HttpCompletionClient:
    """HTTP completion backend with a bounded number of in-flight requests.

    Wire format: ``POST {"prompt", "max_tokens", "want_token_scores"}`` →
    ``{"text", "token_scores"?}`` where each token score is
    ``{"token", "logprob", "top_alternatives": [{"token", "logprob"}...]}``.
    """

    def __init__(
        self,
        url: str,
        *,
        token: str | None = None,
        supports_token_scores: bool = True,
        timeout: float = 60.0,
        max_inflight: int = 4,
        client: httpx.Client | None = None,
    ) -> None:
        if max_inflight < 1:
            raise InvalidInput("max_inflight must be >= 1")
        self._url = url
        self._token = token
        self._supports = supports_token_scores
        self._client = client or httpx.Client(timeout=timeout)
        self._sem = threading.BoundedSemaphore(max_inflight)

    @property
    def identity(self) -> str:
        return f"remote:{self._url}"

    @property
    def supports_token_scores(self) -> bool:
        return self._supports

    def complete(
        self, prompt: str, *, max_tokens: int = 256, want_token_scores: bool = False
    ) -> CompletionResult:
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        body = {
            "prompt": prompt,
            "max_tokens": max_tokens,
            "want_token_scores": bool(want_token_scores and self._supports),
        }
        with self._sem:
            try:
                resp = self._client.post(self._url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                raise BackendUnavailable(f"completion backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(f"completion backend returned status {resp.status_code}")
        try:
            payload = resp.json()
            text = payload["text"]
            raw_scores = payload.get("token_scores")
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendUnavailable(f"malformed completion response: {exc}") from exc
        return CompletionResult(text=text, token_scores=_parse_token_scores(raw_scores))


def _parse_token_scores(raw) -> tuple[TokenScore, ...] | None:
    if raw is None:
        return None
    scores = []
    for row in raw:
        alts = tuple(
            (alt["token"], float(alt["logprob"])) for alt in row.get("top_alternatives", ())
        )
        scores.append(TokenScore(row["token"], float(row["logprob"]), alts))
    return tuple(scores)


def prompt_fingerprint(prompt: str) -> str:
    """Stable hash of a prompt, the primary key of mock script rules."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MockRule:
    """One canned response: matched by exact fingerprint or substring."""

    response: str
    fingerprint: str | None = None
    contains: str | None = None
    token_scores: tuple[TokenScore, ...] | None = None

    def __post_init__(self) -> None:
        if (self.fingerprint is None) == (self.contains is None):
            raise InvalidRecord(
                "mock rule needs exactly one of 'fingerprint' or 'contains'"
            )


class MockCompletionClient:
    """Deterministic completion backend driven by a rule script.

    Exact fingerprint rules win over substring rules; substring rules match
    in script order. A miss raises :class:`ScriptMiss` unless a default
    response was configured — silent fallthrough has no place in a
    deterministic harness.
    """

    def __init__(
        self,
        rules: Iterable[MockRule] = (),
        *,
        default_response: str | None = None,
        supports_token_scores: bool = True,
    ) -> None:
        self._by_fingerprint: dict[str, MockRule] = {}
        self._contains_rules: list[MockRule] = []
        for rule in rules:
            self.add_rule(rule)
        self._default = default_response
        self._supports = supports_token_scores
        self._lock = threading.Lock()
        self._calls: list[str] = []

    @classmethod
    def from_script(cls, source: str | Path | IO[str], **kwargs) -> "MockCompletionClient":
        """Load rules from line-delimited JSON.

        Each line maps a matcher to a response:
        ``{"fingerprint": <sha256 hex>, "response": <text>, "token_scores": [...]?}``
        or ``{"contains": <substring>, ...}``.
        """
        if isinstance(source, (str, Path)):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source.read()
        rules = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidRecord(f"mock script line {lineno}: invalid JSON ({exc.msg})") from None
            if "response" not in obj:
                raise InvalidRecord(f"mock script line {lineno}: missing 'response'")
            rules.append(
                MockRule(
                    response=obj["response"],
                    fingerprint=obj.get("fingerprint"),
                    contains=obj.get("contains"),
                    token_scores=_parse_token_scores(obj.get("token_scores")),
                )
            )
        return cls(rules, **kwargs)

    @property
    def identity(self) -> str:
        return "mock/1"

    @property
    def supports_token_scores(self) -> bool:
        return self._supports

    @property
    def call_count(self) -> int:
        return len(self._calls)

    @property
    def prompts_seen(self) -> list[str]:
        return list(self._calls)

    def add_rule(self, rule: MockRule) -> None:
        if rule.fingerprint is not None:
            self._by_fingerprint[rule.fingerprint] = rule
        else:
            self._contains_rules.append(rule)

    def script(self, prompt: str, response: str, token_scores=None) -> None:
        """Convenience: register an exact-match rule for a known prompt."""
        if token_scores is not None and any(isinstance(t, TokenScore) for t in token_scores):
            scores: tuple[TokenScore, ...] | None = tuple(token_scores)
        else:
            scores = _parse_token_scores(token_scores)
        self.add_rule(
            MockRule(
                response=response,
                fingerprint=prompt_fingerprint(prompt),
                token_scores=scores,
            )
        )

    def complete(
        self, prompt: str, *, max_tokens: int = 256, want_token_scores: bool = False
    ) -> CompletionResult:
        with self._lock:
            self._calls.append(prompt)
        rule = self._by_fingerprint.get(prompt_fingerprint(prompt))
        if rule is None:
            for candidate in self._contains_rules:
                if candidate.contains in prompt:
                    rule = candidate
                    break
        if rule is None:
            if self._default is None:
                raise ScriptMiss(
                    f"no scripted response for prompt fingerprint {prompt_fingerprint(prompt)}"
                )
            return CompletionResult(text=self._default)
        scores = rule.token_scores if want_token_scores and self._supports else None
        return CompletionResult(text=rule.response, token_scores=scores)


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

TEMPLATE_VERSION = "v1"

DEFAULT_SCENARIO = (
    "You are a precise content tagging assistant for an information "
    "retrieval platform."
)

_OUTPUT_INSTRUCTION = (
    "Select every candidate tag that accurately describes the content.\n"
    "Answer with one tag per line, exactly in the form:\n"
    "TAG: <tag name>\n"
    "If none of the candidates apply, answer with the single line:\n"
    "TAG: none"
)

_CONFIDENCE_INSTRUCTION = (
    "Is the tag relevant to the content? Answer with a single token: Yes or No."
)


@dataclass(frozen=True)
class PromptTemplate:
    """A fixed prompt layout with a configurable scenario preamble."""

    name: str
    scenario: str = DEFAULT_SCENARIO
    version: str = TEMPLATE_VERSION

    def __post_init__(self) -> None:
        if self.name not in ("basic", "retrieval", "confidence"):
            raise InvalidInput(f"unknown template name {self.name!r}")
        if not self.scenario.strip():
            raise InvalidInput("template scenario must be non-empty")


BASIC_TEMPLATE = PromptTemplate("basic")
RETRIEVAL_TEMPLATE = PromptTemplate("retrieval")
CONFIDENCE_TEMPLATE = PromptTemplate("confidence")


def _content_section(content: Content) -> str:
    return f"## Content\n{canonical_text(content)}"


def _candidate_section(candidates: CandidateSet, repo: TagRepository) -> str:
    lines = [
        f"{i}. {repo.name_of(entry.tag)}" for i, entry in enumerate(candidates.entries, start=1)
    ]
    return "## Candidate tags\n" + "\n".join(lines)


def render_basic(template: PromptTemplate, content: Content, candidates: CandidateSet,
                 repo: TagRepository) -> str:
    """Prompt for plain candidate selection: preamble, content, candidates, rules."""
    if not candidates.entries:
        raise InvalidInput(f"content {content.id!r}: candidate set is empty")
    return "\n\n".join(
        [
            template.scenario,
            _content_section(content),
            _candidate_section(candidates, repo),
            "## Instructions\n" + _OUTPUT_INSTRUCTION,
        ]
    )


def _knowledge_section(
    samples: Sequence["KnowledgeSample"],
    segments: Sequence["CorpusSegment"],
    repo: TagRepository,
) -> str:
    blocks = []
    for i, sample in enumerate(samples, start=1):
        correct = ", ".join(repo.name_of(t) for t in sample.correct_tags) or "(none)"
        incorrect = ", ".join(repo.name_of(t) for t in sample.incorrect_tags) or "(none)"
        blocks.append(
            f"### Example {i}\n"
            f"Content: {canonical_text(sample.content)}\n"
            f"Correct tags: {correct}\n"
            f"Incorrect tags: {incorrect}"
        )
    for i, segment in enumerate(segments, start=1):
        blocks.append(f"### Reference {i} ({segment.source.value})\n{segment.text}")
    body = "\n\n".join(blocks) if blocks else "(none)"
    return "## Retrieved knowledge\n" + body


def render_retrieval(
    template: PromptTemplate,
    content: Content,
    candidates: CandidateSet,
    icl_samples: Sequence["KnowledgeSample"],
    rag_segments: Sequence["CorpusSegment"],
    repo: TagRepository,
) -> str:
    """Basic prompt plus a retrieved-knowledge section, samples first."""
    if not candidates.entries:
        raise InvalidInput(f"content {content.id!r}: candidate set is empty")
    return "\n\n".join(
        [
            template.scenario,
            _content_section(content),
            _candidate_section(candidates, repo),
            _knowledge_section(icl_samples, rag_segments, repo),
            "## Instructions\n" + _OUTPUT_INSTRUCTION,
        ]
    )


def render_confidence(template: PromptTemplate, content: Content, tag) -> str:
    """Yes/No relevance-judgment prompt for one (content, tag) pair."""
    tag_line = f"{tag.name}: {tag.description}" if tag.description.strip() else tag.name
    return "\n\n".join(
        [
            template.scenario,
            _content_section(content),
            "## Tag\n" + tag_line,
            "## Instructions\n" + _CONFIDENCE_INSTRUCTION,
        ]
    )


# ---------------------------------------------------------------------------
# Knowledge bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnowledgeSample:
    """A past content with expert-confirmed correct and incorrect tags."""

    content: Content
    correct_tags: tuple[TagId, ...]
    incorrect_tags: tuple[TagId, ...]
    embedding: Embedding

    def __post_init__(self) -> None:
        overlap = set(self.correct_tags) & set(self.incorrect_tags)
        if overlap:
            raise InvalidInput(
                f"sample {self.content.id!r}: tags {sorted(overlap)} are both correct and incorrect"
            )


class SampleKnowledgeBase:
    """Append-only store of worked examples for few-shot injection."""

    def __init__(self, encoder: EncoderBackend) -> None:
        self._encoder = encoder
        self._entries: list[KnowledgeSample] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def add(
        self,
        content: Content,
        correct_tags: Sequence[TagId],
        incorrect_tags: Sequence[TagId] = (),
    ) -> KnowledgeSample:
        sample = KnowledgeSample(
            content=content,
            correct_tags=tuple(correct_tags),
            incorrect_tags=tuple(incorrect_tags),
            embedding=self._encoder.embed(canonical_text(content)),
        )
        with self._lock:
            self._entries.append(sample)
        return sample

    def retrieve(self, embedding: Embedding, n: int) -> list[KnowledgeSample]:
        """Top-n samples by cosine to the query embedding, best first."""
        if n < 0:
            raise InvalidInput("n must be >= 0")
        scored = [
            (-cosine(embedding, s.embedding), i, s) for i, s in enumerate(self._entries)
        ]
        scored.sort(key=lambda row: (row[0], row[1]))
        return [s for _, _, s in scored[:n]]


class CorpusSource(str, enum.Enum):
    WEB = "WEB"
    DOMAIN = "DOMAIN"


@dataclass(frozen=True)
class CorpusSegment:
    text: str
    source: CorpusSource
    embedding: Embedding


class CorpusKnowledgeBase:
    """Descriptive corpus segments (web snapshots, domain notes) for RAG."""

    def __init__(self, encoder: EncoderBackend, max_segment_chars: int = 512) -> None:
        if max_segment_chars < 1:
            raise InvalidInput("max_segment_chars must be >= 1")
        self._encoder = encoder
        self._max_chars = max_segment_chars
        self._segments: list[CorpusSegment] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._segments)

    def add(self, text: str, source: CorpusSource | str = CorpusSource.DOMAIN) -> CorpusSegment:
        if not text.strip():
            raise InvalidInput("corpus segment must be non-empty")
        if len(text) > self._max_chars:
            raise InvalidInput(
                f"corpus segment of {len(text)} chars exceeds the {self._max_chars}-char bound"
            )
        segment = CorpusSegment(
            text=text,
            source=CorpusSource(source),
            embedding=self._encoder.embed(text),
        )
        with self._lock:
            self._segments.append(segment)
        return segment

    def retrieve(
        self,
        content_embedding: Embedding,
        tag_embeddings: Sequence[Embedding],
        n: int,
    ) -> list[CorpusSegment]:
        """Top-n segments by max similarity to the content or any candidate tag."""
        if n < 0:
            raise InvalidInput("n must be >= 0")
        scored = []
        for i, segment in enumerate(self._segments):
            best = cosine(content_embedding, segment.embedding)
            for temb in tag_embeddings:
                best = max(best, cosine(temb, segment.embedding))
            scored.append((-best, i, segment))
        scored.sort(key=lambda row: (row[0], row[1]))
        return [s for _, _, s in scored[:n]]


@dataclass(frozen=True)
class RetrievedKnowledge:
    """The SRKI bundle handed to the retrieval prompt."""

    samples: tuple[KnowledgeSample, ...] = ()
    segments: tuple[CorpusSegment, ...] = ()


def retrieve_icl(skb: SampleKnowledgeBase, content_embedding: Embedding, n: int = 3):
    return skb.retrieve(content_embedding, n)


def retrieve_rag(
    ckb: CorpusKnowledgeBase,
    content_embedding: Embedding,
    tag_embeddings: Sequence[Embedding],
    n: int = 3,
):
    return ckb.retrieve(content_embedding, tag_embeddings, n)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def parse_tag_lines(text: str) -> list[str]:
    """Extract tag names from ``TAG: <name>`` lines; other lines are ignored."""
    return [m.group(1) for line in text.splitlines() if (m := TAG_LINE.match(line))]


def generate_tags(
    client: CompletionClient,
    content: Content,
    candidates: CandidateSet,
    repo: TagRepository,
    knowledge: RetrievedKnowledge = RetrievedKnowledge(),
    *,
    template: PromptTemplate = RETRIEVAL_TEMPLATE,
    max_tokens: int = 256,
) -> list[TagId]:
    """Ask the completion backend to pick tags from the candidate set.

    Output is parsed closed-world: names that do not resolve against the
    candidates are dropped, the model's order is preserved, and repeats
    collapse to the first occurrence. A response without a single ``TAG:``
    line gets one retry, then raises :class:`GenerationFailed`.
    """
    if not candidates.entries:
        raise InvalidInput(f"content {content.id!r}: candidate set is empty")
    prompt = render_retrieval(
        template, content, candidates, knowledge.samples, knowledge.segments, repo
    )
    candidate_ids = set(candidates.tag_ids())
    for attempt in (1, 2):
        result = client.complete(prompt, max_tokens=max_tokens, want_token_scores=False)
        names = parse_tag_lines(result.text)
        if names:
            selected: list[TagId] = []
            for name in names:
                tag_id = repo.resolve_name(name)
                if tag_id is not None and tag_id in candidate_ids and tag_id not in selected:
                    selected.append(tag_id)
            return selected
    raise GenerationFailed(
        f"content {content.id!r}: no TAG lines in completion output after retry"
    )


# ---------------------------------------------------------------------------
# Training-data export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SftRecord:
    """One (prompt, target) fine-tuning pair."""

    input: str
    target: str


def serialize_target(tag_ids: Sequence[TagId], repo: TagRepository) -> str:
    return "\n".join(f"TAG: {repo.name_of(t)}" for t in tag_ids)


def export_sft(
    examples: Iterable[tuple[Content, CandidateSet, Sequence[TagId]]],
    repo: TagRepository,
    *,
    template: PromptTemplate = BASIC_TEMPLATE,
) -> Iterator[SftRecord]:
    """Build fine-tuning records; every gold tag must sit in its candidate set."""
    for content, candidates, gold in examples:
        candidate_ids = set(candidates.tag_ids())
        for tag_id in gold:
            if tag_id not in candidate_ids:
                raise InvalidRecord(
                    f"example {content.id!r}: gold tag {tag_id!r} not in its candidate set"
                )
        yield SftRecord(
            input=render_basic(template, content, candidates, repo),
            target=serialize_target(gold, repo),
        )


def write_sft_records(records: Iterable[SftRecord], dest: str | Path | IO[str]) -> int:
    """Write records as line-delimited JSON ``{"input", "target"}``; returns the count."""
    lines = [
        json.dumps({"input": r.input, "target": r.target}, ensure_ascii=False)
        for r in records
    ]
    text = "".join(line + "\n" for line in lines)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)
    return len(lines)


def read_sft_records(source: str | Path | IO[str]) -> list[SftRecord]:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(SftRecord(input=obj["input"], target=obj["target"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InvalidRecord(f"sft line {lineno}: {exc}") from None
    return records
