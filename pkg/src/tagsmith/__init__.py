"""tagsmith: graph-assisted content tagging with LLM selection and calibration."""

__version__ = "0.1.0"

from .core import (
    Content,
    ContentId,
    Provenance,
    Tag,
    TagAssignment,
    TagId,
    TagRepository,
    canonical_text,
    normalize_name,
)
from .encoder import (
    Embedding,
    EncoderBackend,
    HashingEncoder,
    RemoteEncoder,
    ScriptedEncoder,
    cosine,
)
from .errors import (
    BackendUnavailable,
    DuplicateVertex,
    GenerationFailed,
    InvalidEdge,
    InvalidInput,
    InvalidRecord,
    ScoreUnavailable,
    ScriptMiss,
    SnapshotError,
    TagsmithError,
    UnknownVertex,
    UnsupportedBackend,
)
from .taggraph import CandidateEntry, CandidateSet, GraphConfig, TagGraph, Vertex, VertexKind
from .genkit import (
    BASIC_TEMPLATE,
    CONFIDENCE_TEMPLATE,
    RETRIEVAL_TEMPLATE,
    CompletionClient,
    CompletionResult,
    CorpusKnowledgeBase,
    CorpusSegment,
    CorpusSource,
    HttpCompletionClient,
    KnowledgeSample,
    MockCompletionClient,
    MockRule,
    PromptTemplate,
    RetrievedKnowledge,
    SampleKnowledgeBase,
    SftRecord,
    TokenScore,
    export_sft,
    generate_tags,
    parse_tag_lines,
    prompt_fingerprint,
    render_basic,
    render_confidence,
    render_retrieval,
    retrieve_icl,
    retrieve_rag,
)
from .calibrate import (
    CalibrationConfig,
    CalibrationResult,
    ConfidenceRecord,
    TokenScorePair,
    calibrate,
    confidence,
    confidence_from_pair,
    export_confidence_dataset,
    extract_yes_no,
)
from .evalkit import (
    JudgedResult,
    PrecisionRecallF1,
    RecallJudgment,
    RecallQuality,
    acc_at_k,
    coverage_at_k,
    precision_recall_f1,
    recall_quality,
    relative_improvement,
)
from .config import PipelineConfig, load_config
from .pipeline import ContentReport, Pipeline, TaggingReport
