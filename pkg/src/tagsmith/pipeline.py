"""End-to-end orchestration: ingest, recall, generate, calibrate, commit.

Per content the flow is: insert the content vertex, recall candidates,
retrieve knowledge, generate tags, calibrate, then write the calibrated
survivors back into the graph as deterministic feedback edges. A content
that recalls nothing is flagged and skipped before any completion call; a
content that fails is rolled out of the graph entirely, so one bad item
never contaminates the batch.

Batches fan out across a thread pool, but all graph mutation funnels
through a single writer lock, and report entries keep input order, so a
run with fixed backends is deterministic regardless of parallelism.
"""

from __future__ import annotations

import contextlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from .calibrate import calibrate as run_calibration
from .config import PipelineConfig, build_completion_client, build_encoder
from .core import (
    Content,
    ContentId,
    Provenance,
    TagAssignment,
    TagId,
    TagRepository,
    content_from_dict,
    read_tags,
    write_tags,
)
from .encoder import EncoderBackend
from .errors import GenerationFailed, InvalidInput, InvalidRecord, TagsmithError
from .genkit import (
    CompletionClient,
    CorpusKnowledgeBase,
    RetrievedKnowledge,
    SampleKnowledgeBase,
    generate_tags,
)
from .taggraph import CandidateSet, TagGraph

logger = logging.getLogger(__name__)

FLAG_NO_CANDIDATES = "NO_CANDIDATES"
FLAG_GENERATION_FAILED = "GENERATION_FAILED"
FLAG_ERROR = "ERROR"

REPO_FILENAME = "tags.jsonl"
SNAPSHOT_FILENAME = "graph.jsonl"


class _RWLock:
    """Reader-shared, writer-exclusive lock for the graph.

    Readers (recall, snapshots) run concurrently; a writer waits until the
    graph is quiet and then holds it alone. No writer priority: at desk
    scale read bursts are short enough that starvation is not a concern.
    """

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextlib.contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextlib.contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


@dataclass(frozen=True)
class ContentReport:
    """Outcome of one content's trip through the pipeline.

    ``duration_ms`` is kept for operators but excluded from the canonical
    serialization: report files must be byte-identical across runs.
    """

    content: ContentId
    candidates: tuple[tuple[TagId, float, str], ...] = ()
    generated: tuple[TagId, ...] = ()
    assignments: tuple[tuple[TagId, float], ...] = ()
    calibration_failures: tuple[tuple[TagId, str], ...] = ()
    flags: tuple[str, ...] = ()
    error: str | None = None
    duration_ms: float = 0.0

    def to_dict(self, include_timings: bool = False) -> dict:
        out = {
            "content": self.content,
            "candidates": [
                {"tag": t, "score": s, "provenance": p} for t, s, p in self.candidates
            ],
            "generated": list(self.generated),
            "assignments": [{"tag": t, "confidence": c} for t, c in self.assignments],
            "calibration_failures": [
                {"tag": t, "reason": r} for t, r in self.calibration_failures
            ],
            "flags": list(self.flags),
            "error": self.error,
        }
        if include_timings:
            out["duration_ms"] = self.duration_ms
        return out

    def to_assignments(self) -> list[TagAssignment]:
        """Typed final assignments, provenance joined from the candidates."""
        provenance = {t: p for t, _, p in self.candidates}
        return [
            TagAssignment(
                content=self.content,
                tag=t,
                confidence=c,
                provenance=Provenance(provenance[t]),
            )
            for t, c in self.assignments
        ]


@dataclass
class TaggingReport:
    """Per-content entries (in input order) plus aggregate counters."""

    entries: list[ContentReport] = field(default_factory=list)

    def counters(self) -> dict[str, int]:
        return {
            "contents": len(self.entries),
            "tagged": sum(1 for e in self.entries if e.assignments),
            "no_candidates": sum(1 for e in self.entries if FLAG_NO_CANDIDATES in e.flags),
            "failed": sum(1 for e in self.entries if e.error is not None),
            "committed_edges": sum(len(e.assignments) for e in self.entries),
        }

    def to_json(self, include_timings: bool = False) -> str:
        doc = {
            "counters": self.counters(),
            "entries": [e.to_dict(include_timings) for e in self.entries],
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    def save(self, dest: str | Path | IO[str], include_timings: bool = False) -> None:
        text = self.to_json(include_timings)
        if isinstance(dest, (str, Path)):
            Path(dest).write_text(text, encoding="utf-8")
        else:
            dest.write(text)


def read_content_records(source: str | Path | IO[str]) -> list[Content]:
    """Contents from line-delimited JSON, errors citing line numbers."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    contents = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"content line {lineno}: invalid JSON ({exc.msg})") from None
        contents.append(content_from_dict(obj, lineno=lineno))
    return contents


class Pipeline:
    """Owns the repository, graph, knowledge bases, and both backends."""

    def __init__(
        self,
        config: PipelineConfig | None = None,
        *,
        encoder: EncoderBackend | None = None,
        client: CompletionClient | None = None,
    ) -> None:
        self.config = config or PipelineConfig()
        self.encoder = encoder or build_encoder(self.config)
        self.client = client or build_completion_client(self.config)
        self.repo = TagRepository()
        self.graph = TagGraph(self.encoder, self.config.graph)
        self.samples = SampleKnowledgeBase(self.encoder)
        self.corpus = CorpusKnowledgeBase(
            self.encoder, self.config.knowledge.max_segment_chars
        )
        self._graph_lock = _RWLock()

    # ------------------------------------------------------------------
    # Ingest
    # ------------------------------------------------------------------

    def ingest_repository(self, source: str | Path | IO[str]) -> int:
        """Load the tag vocabulary and create one TAG vertex per tag."""
        tags = read_tags(source)
        with self._graph_lock.write():
            for tag in tags:
                self.repo.add(tag)
                self.graph.add_tag(tag)
        return len(tags)

    def ingest_contents(self, source: str | Path | IO[str]) -> int:
        """Insert contents as graph context without tagging them."""
        contents = read_content_records(source)
        with self._graph_lock.write():
            for content in contents:
                self.graph.add_content(content)
        return len(contents)

    def load_sample_knowledge(self, source: str | Path | IO[str]) -> int:
        """Load the sample KB: ``{"content": {...}, "correct": [...], "incorrect": [...]}``."""
        count = 0
        for lineno, obj in _iter_jsonl(source, "sample-kb"):
            content = content_from_dict(obj.get("content", {}), label="sample-kb", lineno=lineno)
            correct = tuple(obj.get("correct", ()))
            incorrect = tuple(obj.get("incorrect", ()))
            for tag_id in (*correct, *incorrect):
                self.repo.get(tag_id)  # unknown ids are errors, not silent misses
            self.samples.add(content, correct, incorrect)
            count += 1
        return count

    def load_corpus_knowledge(self, source: str | Path | IO[str]) -> int:
        """Load the corpus KB: ``{"text": ..., "source": "WEB"|"DOMAIN"}``."""
        count = 0
        for lineno, obj in _iter_jsonl(source, "corpus-kb"):
            try:
                self.corpus.add(obj["text"], obj.get("source", "DOMAIN"))
            except (KeyError, ValueError) as exc:
                raise InvalidRecord(f"corpus-kb line {lineno}: {exc}") from None
            count += 1
        return count

    # ------------------------------------------------------------------
    # Tagging
    # ------------------------------------------------------------------

    def tag_content(self, content: Content, *, raise_errors: bool = False) -> ContentReport:
        """Run one content end to end; failures roll the graph back.

        In batch mode failures become flagged report entries; with
        ``raise_errors`` they propagate (after rollback) so callers like
        the HTTP service can map them to statuses.
        """
        started = time.perf_counter()
        inserted = False
        try:
            with self._graph_lock.write():
                self.graph.add_content(content)
                inserted = True
                candidates = self.graph.recall(content.id)
            if not candidates.entries:
                return self._entry(
                    content, started, candidates=candidates, flags=(FLAG_NO_CANDIDATES,)
                )
            knowledge = self._retrieve_knowledge(content, candidates)
            generated = generate_tags(
                self.client,
                content,
                candidates,
                self.repo,
                knowledge,
                max_tokens=self.config.completion.max_tokens,
            )
            if not generated:
                return self._entry(content, started, candidates=candidates)
            outcome = run_calibration(
                self.client, content, generated, self.repo, self.config.calibration
            )
            survivors = outcome.tag_ids()
            if survivors:
                with self._graph_lock.write():
                    self.graph.commit_tags(content.id, survivors)
            return self._entry(
                content,
                started,
                candidates=candidates,
                generated=tuple(generated),
                assignments=outcome.survivors,
                calibration_failures=outcome.failures,
            )
        except TagsmithError as exc:
            if inserted:
                with self._graph_lock.write():
                    self.graph.remove_content(content.id)
            if raise_errors:
                raise
            logger.warning("content %r failed: %s", content.id, exc)
            flag = FLAG_GENERATION_FAILED if isinstance(exc, GenerationFailed) else FLAG_ERROR
            return self._entry(content, started, flags=(flag,), error=str(exc))

    def recall(self, content_id: str) -> CandidateSet:
        """Candidate recall for an already-inserted content (shared read)."""
        with self._graph_lock.read():
            return self.graph.recall(content_id)

    def _retrieve_knowledge(
        self, content: Content, candidates: CandidateSet
    ) -> RetrievedKnowledge:
        with self._graph_lock.read():
            emb = self.graph.content_embedding(content.id)
            tag_embs = [self.graph.tag_embedding(t) for t in candidates.tag_ids()]
        samples = self.samples.retrieve(emb, self.config.icl_n)
        segments = self.corpus.retrieve(emb, tag_embs, self.config.rag_n)
        return RetrievedKnowledge(samples=tuple(samples), segments=tuple(segments))

    def _entry(
        self,
        content: Content,
        started: float,
        candidates: CandidateSet | None = None,
        generated: tuple[TagId, ...] = (),
        assignments: tuple[tuple[TagId, float], ...] = (),
        calibration_failures: tuple[tuple[TagId, str], ...] = (),
        flags: tuple[str, ...] = (),
        error: str | None = None,
    ) -> ContentReport:
        summary = ()
        if candidates is not None:
            summary = tuple(
                (e.tag, e.score, e.provenance.value) for e in candidates.entries
            )
        return ContentReport(
            content=content.id,
            candidates=summary,
            generated=generated,
            assignments=assignments,
            calibration_failures=calibration_failures,
            flags=flags,
            error=error,
            duration_ms=(time.perf_counter() - started) * 1000.0,
        )

    def run_batch(
        self,
        contents: Iterable[Content],
        *,
        report_path: str | Path | None = None,
        snapshot_path: str | Path | None = None,
        include_timings: bool = False,
    ) -> TaggingReport:
        """Tag a stream of contents with bounded parallelism.

        Report entries keep input order. If persisting fails midway, the
        report collected so far is flushed before the error propagates.
        """
        items = list(contents)
        report = TaggingReport()
        try:
            if self.config.parallelism == 1 or len(items) <= 1:
                report.entries = [self.tag_content(c) for c in items]
            else:
                with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
                    futures = [pool.submit(self.tag_content, c) for c in items]
                    report.entries = [f.result() for f in futures]
            if snapshot_path is not None:
                with self._graph_lock.read():
                    self.graph.save_snapshot(snapshot_path)
        except BaseException:
            if report_path is not None:
                try:
                    report.save(report_path, include_timings)
                except OSError:
                    logger.exception("partial-report flush failed")
            raise
        if report_path is not None:
            report.save(report_path, include_timings)
        return report

    # ------------------------------------------------------------------
    # State persistence
    # ------------------------------------------------------------------

    def save_state(self, state_dir: str | Path | None = None) -> Path:
        """Write the repository and graph snapshot into the state directory."""
        directory = Path(state_dir or self.config.state_dir)
        directory.mkdir(parents=True, exist_ok=True)
        write_tags(iter(self.repo), directory / REPO_FILENAME)
        with self._graph_lock.read():
            self.graph.save_snapshot(directory / SNAPSHOT_FILENAME)
        return directory

    @classmethod
    def from_state(
        cls,
        config: PipelineConfig,
        *,
        encoder: EncoderBackend | None = None,
        client: CompletionClient | None = None,
    ) -> "Pipeline":
        """Build a pipeline, restoring any repository/snapshot in state_dir.

        The graph snapshot wins when present (it carries the embeddings and
        the feedback edges); otherwise tag vertices are rebuilt from the
        repository file. Knowledge bases load from the configured paths.
        """
        pipeline = cls(config, encoder=encoder, client=client)
        directory = Path(config.state_dir)
        repo_file = directory / REPO_FILENAME
        snapshot_file = directory / SNAPSHOT_FILENAME
        if repo_file.exists():
            for tag in read_tags(repo_file):
                pipeline.repo.add(tag)
            if snapshot_file.exists():
                pipeline.graph = TagGraph.load_snapshot(
                    snapshot_file, pipeline.encoder, config.graph
                )
            else:
                for tag in pipeline.repo:
                    pipeline.graph.add_tag(tag)
        elif snapshot_file.exists():
            raise InvalidInput(
                f"state dir {directory} has a graph snapshot but no {REPO_FILENAME}"
            )
        if config.knowledge.samples:
            pipeline.load_sample_knowledge(config.knowledge.samples)
        if config.knowledge.corpus:
            pipeline.load_corpus_knowledge(config.knowledge.corpus)
        return pipeline


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
