"""Confidence scoring and pruning for generated tags.

Each (content, tag) pair is judged by the completion backend with a
single-token Yes/No prompt. The confidence is the two-way softmax over the
log-probabilities of the "Yes" and "No" tokens at the first answer
position, so it depends only on their difference and always lies strictly
inside (0, 1). Tags scoring below the threshold are pruned; survivors are
ranked by confidence.

The exporter at the bottom freezes expert-labeled (prompt, Yes/No) pairs
into the training file a confidence fine-tune consumes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .core import Content, Tag, TagId, TagRepository
from .errors import (
    InvalidInput,
    InvalidRecord,
    ScoreUnavailable,
    TagsmithError,
    UnsupportedBackend,
)
from .genkit import (
    CONFIDENCE_TEMPLATE,
    CompletionClient,
    CompletionResult,
    PromptTemplate,
    render_confidence,
)

logger = logging.getLogger(__name__)

# A single short answer token is all the judgment needs; a few extra cover
# backends that emit whitespace first.
CONFIDENCE_MAX_TOKENS = 4

# Smallest/largest floats strictly inside (0, 1); extreme score gaps clamp
# here so the confidence interval stays open.
_OPEN_LO = math.ulp(0.0)
_OPEN_HI = 1.0 - math.ulp(1.0) / 2


@dataclass(frozen=True)
class TokenScorePair:
    """Yes/No log-probabilities from the same (first) answer position."""

    yes_logprob: float
    no_logprob: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.yes_logprob) and math.isfinite(self.no_logprob)):
            raise InvalidInput("token log-probabilities must be finite")


@dataclass(frozen=True)
class CalibrationConfig:
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.threshold <= 1.0):
            raise InvalidInput(f"threshold must lie in [0,1], got {self.threshold}")


def extract_yes_no(result: CompletionResult) -> TokenScorePair:
    """Pull Yes/No log-probabilities from the first answer position.

    The sampled token and its reported alternatives are matched
    case-insensitively after stripping whitespace. Both tokens must be
    present; remote backends expose the vocabulary score vector only as
    top-k alternatives, so a missing token means the score is unavailable,
    not zero.
    """
    if not result.token_scores:
        raise ScoreUnavailable("completion carried no token scores")
    first = result.token_scores[0]
    candidates = [(first.token, first.logprob), *first.top_alternatives]
    yes: float | None = None
    no: float | None = None
    for token, logprob in candidates:
        label = token.strip().lower()
        if label == "yes" and yes is None:
            yes = logprob
        elif label == "no" and no is None:
            no = logprob
    if yes is None or no is None:
        missing = " and ".join(
            name for name, val in (("'Yes'", yes), ("'No'", no)) if val is None
        )
        raise ScoreUnavailable(f"{missing} not present at the first answer position")
    return TokenScorePair(yes_logprob=yes, no_logprob=no)


def confidence_from_pair(pair: TokenScorePair) -> float:
    """Two-way softmax of the Yes/No scores, numerically stable.

    Computed with the max subtracted before exponentiation; equal scores
    give exactly 0.5. The result is clamped to the open interval (0, 1).
    """
    m = max(pair.yes_logprob, pair.no_logprob)
    ey = math.exp(pair.yes_logprob - m)
    en = math.exp(pair.no_logprob - m)
    conf = ey / (ey + en)
    return min(max(conf, _OPEN_LO), _OPEN_HI)


def confidence(
    client: CompletionClient,
    content: Content,
    tag: Tag,
    *,
    template: PromptTemplate = CONFIDENCE_TEMPLATE,
) -> float:
    """Judge one (content, tag) pair and return its confidence in (0, 1)."""
    if not client.supports_token_scores:
        raise UnsupportedBackend(
            f"backend {client.identity!r} does not report token scores"
        )
    prompt = render_confidence(template, content, tag)
    result = client.complete(
        prompt, max_tokens=CONFIDENCE_MAX_TOKENS, want_token_scores=True
    )
    return confidence_from_pair(extract_yes_no(result))


@dataclass(frozen=True)
class CalibrationResult:
    """Surviving (tag, confidence) pairs plus the tags that failed to score."""

    survivors: tuple[tuple[TagId, float], ...]
    failures: tuple[tuple[TagId, str], ...] = ()

    def tag_ids(self) -> list[TagId]:
        return [t for t, _ in self.survivors]


def calibrate(
    client: CompletionClient,
    content: Content,
    tags: Sequence[TagId],
    repo: TagRepository,
    config: CalibrationConfig = CalibrationConfig(),
    *,
    template: PromptTemplate = CONFIDENCE_TEMPLATE,
) -> CalibrationResult:
    """Score every tag, prune below the threshold, rank the rest.

    Survivors are ordered by confidence descending, ties broken by tag id.
    A tag whose scoring fails is dropped and reported in ``failures`` —
    never silently kept; keeping an unscored tag would defeat the module's
    anti-hallucination purpose.
    """
    if not client.supports_token_scores:
        raise UnsupportedBackend(
            f"backend {client.identity!r} does not report token scores"
        )
    scored: list[tuple[TagId, float]] = []
    failures: list[tuple[TagId, str]] = []
    for tag_id in tags:
        tag = repo.get(tag_id)
        try:
            scored.append((tag_id, confidence(client, content, tag, template=template)))
        except TagsmithError as exc:
            logger.warning("content %r: tag %r failed to score: %s", content.id, tag_id, exc)
            failures.append((tag_id, str(exc)))
    kept = [(t, c) for t, c in scored if c >= config.threshold]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return CalibrationResult(survivors=tuple(kept), failures=tuple(failures))


# ---------------------------------------------------------------------------
# Confidence training-data export
# ---------------------------------------------------------------------------

_LABELS = ("Yes", "No")


@dataclass(frozen=True)
class ConfidenceRecord:
    """One (judgment prompt, Yes/No label) training pair."""

    input: str
    label: str

    def __post_init__(self) -> None:
        if self.label not in _LABELS:
            raise InvalidRecord(f"label must be 'Yes' or 'No', got {self.label!r}")


def export_confidence_dataset(
    examples: Iterable[tuple[Content, Tag, str]],
    *,
    template: PromptTemplate = CONFIDENCE_TEMPLATE,
) -> Iterator[ConfidenceRecord]:
    """Build confidence training records from expert-labeled pairs."""
    for content, tag, label in examples:
        if label not in _LABELS:
            raise InvalidRecord(
                f"example ({content.id!r}, {tag.id!r}): label must be 'Yes' or 'No', got {label!r}"
            )
        yield ConfidenceRecord(input=render_confidence(template, content, tag), label=label)


def write_confidence_records(
    records: Iterable[ConfidenceRecord], dest: str | Path | IO[str]
) -> int:
    """Write records as line-delimited JSON ``{"input", "label"}``; returns the count."""
    lines = [
        json.dumps({"input": r.input, "label": r.label}, ensure_ascii=False) for r in records
    ]
    text = "".join(line + "\n" for line in lines)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)
    return len(lines)


def read_confidence_records(source: str | Path | IO[str]) -> list[ConfidenceRecord]:
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
            records.append(ConfidenceRecord(input=obj["input"], label=obj["label"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InvalidRecord(f"confidence line {lineno}: {exc}") from None
    return records
