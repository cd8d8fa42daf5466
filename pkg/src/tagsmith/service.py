"""HTTP service wrapping the pipeline.

Endpoints::

    POST /v1/contents:tag              tag a content end to end
    GET  /v1/contents/{id}/candidates  recall candidates for a known content
    GET  /v1/tags/{id}                 look up a repository tag
    POST /v1/confidence                score one (content, tag) pair
    GET  /v1/healthz                   liveness and state counters

Error mapping: invalid input → 400, unknown id → 404, backend trouble →
503, unparseable model output → 502. Read endpoints run concurrently;
tagging serializes with graph writes inside the pipeline.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .calibrate import confidence as judge_confidence
from .core import Content
from .errors import (
    BackendUnavailable,
    DuplicateVertex,
    GenerationFailed,
    InvalidEdge,
    InvalidInput,
    InvalidRecord,
    ScoreUnavailable,
    ScriptMiss,
    TagsmithError,
    UnknownVertex,
    UnsupportedBackend,
)
from .pipeline import Pipeline

_STATUS_BY_ERROR: tuple[tuple[type[TagsmithError], int], ...] = (
    (UnknownVertex, 404),
    (DuplicateVertex, 409),
    (GenerationFailed, 502),
    (BackendUnavailable, 503),
    (UnsupportedBackend, 503),
    (ScoreUnavailable, 503),
    (ScriptMiss, 503),
    (InvalidEdge, 400),
    (InvalidRecord, 400),
    (InvalidInput, 400),
)


class ContentIn(BaseModel):
    id: str
    title: str = ""
    category: str = ""
    body: str = ""
    extra: dict[str, str] = Field(default_factory=dict)

    def to_domain(self) -> Content:
        return Content(
            id=self.id,
            title=self.title,
            category=self.category,
            body=self.body,
            extra=self.extra,
        )


class CandidateOut(BaseModel):
    tag: str
    score: float
    provenance: str


class CandidatesResponse(BaseModel):
    content: str
    candidates: list[CandidateOut]


class AssignmentOut(BaseModel):
    tag: str
    name: str
    confidence: float
    provenance: str


class TagContentResponse(BaseModel):
    content: str
    candidates: list[CandidateOut]
    generated: list[str]
    assignments: list[AssignmentOut]
    flags: list[str]
    error: str | None = None


class TagOut(BaseModel):
    id: str
    name: str
    description: str = ""


class ConfidenceRequest(BaseModel):
    content: ContentIn
    tag: str


class ConfidenceResponse(BaseModel):
    content: str
    tag: str
    confidence: float


class HealthResponse(BaseModel):
    status: str
    version: str
    tags: int
    contents: int
    edges: int


def create_app(pipeline: Pipeline) -> FastAPI:
    """Build the FastAPI app around an already-ingested pipeline."""
    app = FastAPI(title="tagsmith", version=__version__)

    @app.exception_handler(TagsmithError)
    async def _domain_error(request: Request, exc: TagsmithError) -> JSONResponse:
        for cls, status in _STATUS_BY_ERROR:
            if isinstance(exc, cls):
                return JSONResponse(status_code=status, content={"detail": str(exc)})
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/v1/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(
            status="ok",
            version=__version__,
            tags=len(pipeline.graph.tag_ids()),
            contents=len(pipeline.graph.content_ids()),
            edges=pipeline.graph.edge_count(),
        )

    @app.get("/v1/tags/{tag_id}", response_model=TagOut)
    def get_tag(tag_id: str) -> TagOut:
        tag = pipeline.repo.get(tag_id)
        return TagOut(id=tag.id, name=tag.name, description=tag.description)

    @app.get("/v1/contents/{content_id}/candidates", response_model=CandidatesResponse)
    def get_candidates(content_id: str) -> CandidatesResponse:
        candidates = pipeline.recall(content_id)
        return CandidatesResponse(
            content=content_id,
            candidates=[
                CandidateOut(tag=e.tag, score=e.score, provenance=e.provenance.value)
                for e in candidates.entries
            ],
        )

    @app.post("/v1/contents:tag", response_model=TagContentResponse)
    def tag_content(body: ContentIn) -> TagContentResponse:
        entry = pipeline.tag_content(body.to_domain(), raise_errors=True)
        return TagContentResponse(
            content=entry.content,
            candidates=[
                CandidateOut(tag=t, score=s, provenance=p) for t, s, p in entry.candidates
            ],
            generated=list(entry.generated),
            assignments=[
                AssignmentOut(
                    tag=a.tag,
                    name=pipeline.repo.name_of(a.tag),
                    confidence=a.confidence,
                    provenance=a.provenance.value,
                )
                for a in entry.to_assignments()
            ],
            flags=list(entry.flags),
            error=None,
        )

    @app.post("/v1/confidence", response_model=ConfidenceResponse)
    def confidence(body: ConfidenceRequest) -> ConfidenceResponse:
        tag = pipeline.repo.get(body.tag)
        score = judge_confidence(pipeline.client, body.content.to_domain(), tag)
        return ConfidenceResponse(content=body.content.id, tag=body.tag, confidence=score)

    return app
