"""Evaluation metrics for tagging runs.

Multi-tag tasks are scored against per-tag human judgments (is each
produced tag right?) because annotating every correct tag in a huge
vocabulary is not feasible; single-tag tasks are scored against a gold
tag. Candidate-recall quality gets its own pair of metrics over
(candidate set, correct set) judgments.

All metrics are pure functions over immutable inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .core import ContentId, TagId
from .errors import InvalidInput, InvalidRecord


@dataclass(frozen=True)
class JudgedResult:
    """One content's scored output.

    Multi-tag mode: ``result_tags`` plus a same-length ``judgments`` vector.
    Single-tag mode: ``gold_tag`` plus at most one entry in ``result_tags``
    (the prediction; empty means the model abstained).
    """

    content: ContentId
    result_tags: tuple[TagId, ...] = ()
    judgments: tuple[bool, ...] | None = None
    gold_tag: TagId | None = None

    def __post_init__(self) -> None:
        if (self.judgments is None) == (self.gold_tag is None):
            raise InvalidInput(
                f"result {self.content!r}: exactly one of judgments/gold_tag must be present"
            )
        if self.judgments is not None and len(self.judgments) != len(self.result_tags):
            raise InvalidInput(
                f"result {self.content!r}: {len(self.judgments)} judgments for "
                f"{len(self.result_tags)} tags"
            )
        if self.gold_tag is not None and len(self.result_tags) > 1:
            raise InvalidInput(
                f"result {self.content!r}: single-tag mode allows at most one prediction"
            )

    @property
    def is_multi(self) -> bool:
        return self.judgments is not None

    @property
    def predicted(self) -> TagId | None:
        return self.result_tags[0] if self.result_tags else None


@dataclass(frozen=True)
class RecallJudgment:
    """A candidate set paired with the known-correct tags for one content."""

    content: ContentId
    candidate_tags: tuple[TagId, ...]
    correct_set: frozenset[TagId]

    def __post_init__(self) -> None:
        if len(set(self.candidate_tags)) != len(self.candidate_tags):
            raise InvalidInput(f"judgment {self.content!r}: candidate_tags contains duplicates")

    def hit_count(self) -> int:
        return len(set(self.candidate_tags) & self.correct_set)


def _require_results(results: Sequence[JudgedResult], multi: bool, op: str) -> None:
    if not results:
        raise InvalidInput(f"{op}: empty result list")
    for r in results:
        if r.is_multi != multi:
            mode = "multi-tag" if multi else "single-tag"
            raise InvalidInput(f"{op}: result {r.content!r} is not in {mode} mode")


def acc_at_k(results: Sequence[JudgedResult], k: int) -> float:
    """Mean per-content fraction of correct tags among the first min(k, |T|).

    Contents that produced nothing contribute 0 — producing nothing earns
    nothing; callers can count them via :func:`count_empty_results`.
    """
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    _require_results(results, multi=True, op="acc_at_k")
    total = 0.0
    for r in results:
        k_eff = min(k, len(r.result_tags))
        if k_eff == 0:
            continue
        total += sum(1 for j in r.judgments[:k_eff] if j) / k_eff
    return total / len(results)


def coverage_at_k(results: Sequence[JudgedResult], k: int) -> float:
    """Fraction of contents that kept at least k tags."""
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    if not results:
        raise InvalidInput("coverage_at_k: empty result list")
    return sum(1 for r in results if len(r.result_tags) >= k) / len(results)


def count_empty_results(results: Sequence[JudgedResult]) -> int:
    return sum(1 for r in results if not r.result_tags)


@dataclass(frozen=True)
class PrecisionRecallF1:
    precision: float
    recall: float
    f1: float
    flagged: bool = False  # a zero denominator was coerced to 0


def precision_recall_f1(results: Sequence[JudgedResult]) -> PrecisionRecallF1:
    """Single-tag precision/recall/F1; abstentions count against recall only."""
    _require_results(results, multi=False, op="precision_recall_f1")
    predicted = sum(1 for r in results if r.predicted is not None)
    correct = sum(1 for r in results if r.predicted is not None and r.predicted == r.gold_tag)
    flagged = False
    if predicted == 0:
        precision, flagged = 0.0, True
    else:
        precision = correct / predicted
    recall = correct / len(results)
    if precision + recall == 0.0:
        f1, flagged = 0.0, True
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PrecisionRecallF1(precision=precision, recall=recall, f1=f1, flagged=flagged)


@dataclass(frozen=True)
class RecallQuality:
    """Mean correct-candidate count and hit rates at the requested depths."""

    num_right: float
    hit_rate: Mapping[int, float]


def recall_quality(
    judgments: Sequence[RecallJudgment], ks: Sequence[int] = (1, 2, 3)
) -> RecallQuality:
    """#Right (mean |candidates ∩ correct|) and HR#k (fraction with ≥ k hits)."""
    if not judgments:
        raise InvalidInput("recall_quality: empty judgment list")
    for k in ks:
        if k < 1:
            raise InvalidInput(f"k must be >= 1, got {k}")
    hits = [j.hit_count() for j in judgments]
    n = len(judgments)
    return RecallQuality(
        num_right=sum(hits) / n,
        hit_rate={k: sum(1 for h in hits if h >= k) / n for k in ks},
    )


def relative_improvement(ours: Sequence[float], baseline: Sequence[float]) -> float:
    """Mean over paired metrics of (ours - baseline) / baseline."""
    if len(ours) != len(baseline):
        raise InvalidInput(
            f"metric vectors differ in length: {len(ours)} vs {len(baseline)}"
        )
    if not ours:
        raise InvalidInput("metric vectors must be non-empty")
    for b in baseline:
        if b <= 0:
            raise InvalidInput(f"baseline entries must be positive, got {b}")
    return sum((o - b) / b for o, b in zip(ours, baseline)) / len(ours)


# ---------------------------------------------------------------------------
# File formats and the report builder
# ---------------------------------------------------------------------------


def load_judged_results(source: str | Path | IO[str]) -> list[JudgedResult]:
    """Read judged results from line-delimited JSON.

    Multi-tag rows: ``{"content", "tags": [...], "judgments": [...]}``;
    single-tag rows: ``{"content", "predicted", "gold"}`` (predicted may be
    null for abstentions).
    """
    results = []
    for lineno, obj in _iter_jsonl(source, "judged-results"):
        content = obj.get("content")
        if not isinstance(content, str) or not content:
            raise InvalidRecord(f"judged-results line {lineno}: missing content id")
        try:
            if "judgments" in obj or "tags" in obj:
                results.append(
                    JudgedResult(
                        content=content,
                        result_tags=tuple(obj.get("tags", ())),
                        judgments=tuple(bool(x) for x in obj.get("judgments", ())),
                    )
                )
            elif "gold" in obj:
                predicted = obj.get("predicted")
                results.append(
                    JudgedResult(
                        content=content,
                        result_tags=(predicted,) if predicted is not None else (),
                        gold_tag=obj["gold"],
                    )
                )
            else:
                raise InvalidRecord(
                    f"judged-results line {lineno}: need tags/judgments or predicted/gold"
                )
        except InvalidInput as exc:
            raise InvalidRecord(f"judged-results line {lineno}: {exc}") from None
    return results


def load_recall_judgments(source: str | Path | IO[str]) -> list[RecallJudgment]:
    """Read recall judgments: ``{"content", "candidates": [...], "correct": [...]}``."""
    judgments = []
    for lineno, obj in _iter_jsonl(source, "recall-judgments"):
        try:
            judgments.append(
                RecallJudgment(
                    content=obj["content"],
                    candidate_tags=tuple(obj["candidates"]),
                    correct_set=frozenset(obj["correct"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise InvalidRecord(f"recall-judgments line {lineno}: {exc}") from None
        except InvalidInput as exc:
            raise InvalidRecord(f"recall-judgments line {lineno}: {exc}") from None
    return judgments


def _iter_jsonl(source: str | Path | IO[str], label: str):
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"{label} line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise InvalidRecord(f"{label} line {lineno}: expected a JSON object")
        yield lineno, obj


def evaluate(
    results: Sequence[JudgedResult] | None,
    metrics: Iterable[str],
    recall_judgments: Sequence[RecallJudgment] | None = None,
) -> dict:
    """Compute named metrics into a ``{"metrics": ..., "flags": ...}`` report.

    Metric names: ``acc@K``, ``coverage@K``, ``prf1``, ``num_right``,
    ``hr@K`` (the last two read recall judgments).
    """
    out: dict[str, float] = {}
    flags: dict[str, object] = {}
    for name in metrics:
        token = name.strip().lower()
        if token.startswith("acc@"):
            out[token] = acc_at_k(_need(results, token), int(token[4:]))
        elif token.startswith("coverage@"):
            out[token] = coverage_at_k(_need(results, token), int(token[9:]))
        elif token == "prf1":
            prf = precision_recall_f1(_need(results, token))
            out["precision"], out["recall"], out["f1"] = prf.precision, prf.recall, prf.f1
            if prf.flagged:
                flags["zero_denominator"] = True
        elif token == "num_right":
            rq = recall_quality(_need(recall_judgments, token), ks=())
            out["num_right"] = rq.num_right
        elif token.startswith("hr@"):
            k = int(token[3:])
            rq = recall_quality(_need(recall_judgments, token), ks=(k,))
            out[token] = rq.hit_rate[k]
        else:
            raise InvalidInput(f"unknown metric {name!r}")
    if results:
        empty = count_empty_results(results)
        if empty:
            flags["empty_result_contents"] = empty
    return {"metrics": out, "flags": flags}


def _need(data, token):
    if data is None:
        raise InvalidInput(f"metric {token!r}: no matching input records")
    return data
