"""The content-tag semantic graph and its meta-path recall routes.

Vertices are contents and tags; edges come in two kinds. Deterministic
edges record confirmed annotations (history or pipeline feedback) and only
ever connect a content to a tag. Similarity edges are created whenever the
cosine of two embeddings meets a threshold: content-tag at ``delta_ct``,
content-content at ``delta_cc``. Tag-tag edges never exist.

Recall runs two routes and unions them:

* C2T — one similarity hop from the content to tags, ranked by edge weight;
* C2C2T — a similarity hop to neighbor contents, then their deterministic
  tags, each tag scored by the best first-hop weight across paths.

Edge discovery is an exact exhaustive scan over the opposite vertex class
(vectorized, then confirmed pairwise), so the final edge set is independent
of insertion order. Snapshots serialize vertices then edges in canonical
sorted order, which makes save/load/save byte-identical.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .core import Content, ContentId, Provenance, Tag, TagId, canonical_text
from .encoder import Embedding, EncoderBackend, cosine
from .errors import (
    DuplicateVertex,
    InvalidEdge,
    InvalidInput,
    SnapshotError,
    UnknownVertex,
)

# Margin for the vectorized prefilter; candidate pairs are confirmed with
# the exact scalar cosine before an edge is created.
_SCAN_SLACK = 1e-9


class VertexKind(str, enum.Enum):
    CONTENT = "CONTENT"
    TAG = "TAG"


@dataclass(frozen=True)
class Vertex:
    kind: VertexKind
    id: str
    embedding: Embedding


@dataclass(frozen=True)
class GraphConfig:
    """Thresholds and per-route recall caps."""

    delta_ct: float = 0.5
    delta_cc: float = 0.8
    cap_c2t: int = 15
    cap_c2c2t: int = 5

    def __post_init__(self) -> None:
        for name, delta in (("delta_ct", self.delta_ct), ("delta_cc", self.delta_cc)):
            if not (-1.0 < delta <= 1.0):
                raise InvalidInput(f"{name} must lie in (-1, 1], got {delta}")
        for name, cap in (("cap_c2t", self.cap_c2t), ("cap_c2c2t", self.cap_c2c2t)):
            if cap < 1:
                raise InvalidInput(f"{name} must be >= 1, got {cap}")


@dataclass(frozen=True)
class CandidateEntry:
    tag: TagId
    score: float
    provenance: Provenance


@dataclass(frozen=True)
class CandidateSet:
    """Ranked candidate tags for one content."""

    content: ContentId
    entries: tuple[CandidateEntry, ...]

    def __post_init__(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.tag in seen:
                raise InvalidInput(f"duplicate candidate tag {entry.tag!r}")
            seen.add(entry.tag)

    def tag_ids(self) -> list[TagId]:
        return [e.tag for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


# Union ordering: higher score first; on ties BOTH, then C2T, then C2C2T,
# then lexicographic tag id.
_PROV_RANK = {Provenance.BOTH: 0, Provenance.C2T: 1, Provenance.C2C2T: 2}


def _entry_sort_key(entry: CandidateEntry):
    return (-entry.score, _PROV_RANK[entry.provenance], entry.tag)


class _VertexBlock:
    """Growable matrix of embeddings with per-row norms and a live mask."""

    def __init__(self, dim: int) -> None:
        self._dim = dim
        self._matrix = np.empty((8, dim), dtype=np.float64)
        self._norms = np.empty(8, dtype=np.float64)
        self._alive = np.zeros(8, dtype=bool)
        self._size = 0

    def append(self, values: np.ndarray) -> int:
        if self._size == self._matrix.shape[0]:
            grown = self._matrix.shape[0] * 2
            self._matrix = np.resize(self._matrix, (grown, self._dim))
            self._norms = np.resize(self._norms, grown)
            alive = np.zeros(grown, dtype=bool)
            alive[: self._size] = self._alive[: self._size]
            self._alive = alive
        row = self._size
        self._matrix[row] = values
        self._norms[row] = np.linalg.norm(values)
        self._alive[row] = True
        self._size += 1
        return row

    def kill(self, row: int) -> None:
        self._alive[row] = False

    def similarity_hits(self, emb: Embedding, threshold: float) -> np.ndarray:
        """Rows whose cosine to `emb` may meet the threshold (prefilter)."""
        if self._size == 0:
            return np.empty(0, dtype=np.intp)
        matrix = self._matrix[: self._size]
        norms = self._norms[: self._size]
        sims = matrix @ emb.values / (norms * np.linalg.norm(emb.values))
        hits = (sims >= threshold - _SCAN_SLACK) & self._alive[: self._size]
        return np.nonzero(hits)[0]


class TagGraph:
    """Undirected content-tag graph with threshold similarity edges.

    Writers must not run concurrently with readers; callers (the pipeline)
    serialize mutation.
    """

    def __init__(self, encoder: EncoderBackend, config: GraphConfig | None = None) -> None:
        self._encoder = encoder
        self._config = config or GraphConfig()
        self._content_emb: dict[ContentId, Embedding] = {}
        self._tag_emb: dict[TagId, Embedding] = {}
        self._content_row: dict[ContentId, int] = {}
        self._tag_row: dict[TagId, int] = {}
        self._row_content: dict[int, ContentId] = {}
        self._row_tag: dict[int, TagId] = {}
        self._content_block = _VertexBlock(encoder.dim)
        self._tag_block = _VertexBlock(encoder.dim)
        # similarity adjacency, both directions kept in sync
        self._sim_ct: dict[ContentId, dict[TagId, float]] = {}
        self._sim_tc: dict[TagId, dict[ContentId, float]] = {}
        self._sim_cc: dict[ContentId, dict[ContentId, float]] = {}
        # deterministic adjacency
        self._det_ct: dict[ContentId, set[TagId]] = {}
        self._det_tc: dict[TagId, set[ContentId]] = {}

    @property
    def config(self) -> GraphConfig:
        return self._config

    @property
    def encoder(self) -> EncoderBackend:
        return self._encoder

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def content_ids(self) -> list[ContentId]:
        return list(self._content_emb)

    def tag_ids(self) -> list[TagId]:
        return list(self._tag_emb)

    def has_content(self, content_id: ContentId) -> bool:
        return content_id in self._content_emb

    def has_tag(self, tag_id: TagId) -> bool:
        return tag_id in self._tag_emb

    def content_embedding(self, content_id: ContentId) -> Embedding:
        self._require_content(content_id)
        return self._content_emb[content_id]

    def tag_embedding(self, tag_id: TagId) -> Embedding:
        self._require_tag(tag_id)
        return self._tag_emb[tag_id]

    def similarity_edges(self) -> list[tuple[str, str, str, float]]:
        """All similarity edges as (kind, a, b, weight), unordered."""
        edges = [
            ("CT", c, t, w)
            for c, nbrs in self._sim_ct.items()
            for t, w in nbrs.items()
        ]
        edges.extend(
            ("CC", a, b, w)
            for a, nbrs in self._sim_cc.items()
            for b, w in nbrs.items()
            if a < b
        )
        return edges

    def deterministic_edges(self) -> list[tuple[ContentId, TagId]]:
        return [(c, t) for c, tags in self._det_ct.items() for t in tags]

    def edge_count(self) -> int:
        sim_ct = sum(len(n) for n in self._sim_ct.values())
        sim_cc = sum(len(n) for n in self._sim_cc.values()) // 2
        det = sum(len(n) for n in self._det_ct.values())
        return sim_ct + sim_cc + det

    # ------------------------------------------------------------------
    # Mutation
    # ------------------------------------------------------------------

    def add_tag(self, tag: Tag) -> Vertex:
        """Add a TAG vertex and its similarity edges to existing contents."""
        if tag.id in self._tag_emb:
            raise DuplicateVertex(f"tag vertex {tag.id!r} already exists")
        emb = self._encoder.embed(canonical_text(tag))
        self._install_tag(tag.id, emb)
        return Vertex(VertexKind.TAG, tag.id, emb)

    def add_content(self, content: Content) -> Vertex:
        """Add a CONTENT vertex and its similarity edges to tags and contents."""
        if content.id in self._content_emb:
            raise DuplicateVertex(f"content vertex {content.id!r} already exists")
        emb = self._encoder.embed(canonical_text(content))
        self._install_content(content.id, emb)
        return Vertex(VertexKind.CONTENT, content.id, emb)

    def _install_tag(self, tag_id: TagId, emb: Embedding) -> None:
        if emb.dim != self._encoder.dim:
            raise InvalidInput(f"embedding dim {emb.dim} != graph dim {self._encoder.dim}")
        delta_ct = self._config.delta_ct
        for row in self._content_block.similarity_hits(emb, delta_ct):
            cid = self._row_content[int(row)]
            weight = cosine(self._content_emb[cid], emb)
            if weight >= delta_ct:
                self._sim_ct.setdefault(cid, {})[tag_id] = weight
                self._sim_tc.setdefault(tag_id, {})[cid] = weight
        row = self._tag_block.append(emb.values)
        self._tag_row[tag_id] = row
        self._row_tag[row] = tag_id
        self._tag_emb[tag_id] = emb

    def _install_content(self, content_id: ContentId, emb: Embedding) -> None:
        if emb.dim != self._encoder.dim:
            raise InvalidInput(f"embedding dim {emb.dim} != graph dim {self._encoder.dim}")
        delta_ct, delta_cc = self._config.delta_ct, self._config.delta_cc
        for row in self._tag_block.similarity_hits(emb, delta_ct):
            tid = self._row_tag[int(row)]
            weight = cosine(emb, self._tag_emb[tid])
            if weight >= delta_ct:
                self._sim_ct.setdefault(content_id, {})[tid] = weight
                self._sim_tc.setdefault(tid, {})[content_id] = weight
        for row in self._content_block.similarity_hits(emb, delta_cc):
            other = self._row_content[int(row)]
            weight = cosine(emb, self._content_emb[other])
            if weight >= delta_cc:
                self._sim_cc.setdefault(content_id, {})[other] = weight
                self._sim_cc.setdefault(other, {})[content_id] = weight
        row = self._content_block.append(emb.values)
        self._content_row[content_id] = row
        self._row_content[row] = content_id
        self._content_emb[content_id] = emb

    def add_deterministic(self, content_id: ContentId, tag_id: TagId) -> None:
        """Record a confirmed content-tag annotation. Idempotent."""
        self._require_det_endpoints(content_id, tag_id)
        self._det_ct.setdefault(content_id, set()).add(tag_id)
        self._det_tc.setdefault(tag_id, set()).add(content_id)

    def commit_tags(self, content_id: ContentId, tags: Sequence[TagId]) -> None:
        """Write final tags back as deterministic edges, all or nothing."""
        for tag_id in tags:
            self._require_det_endpoints(content_id, tag_id)
        for tag_id in tags:
            self._det_ct.setdefault(content_id, set()).add(tag_id)
            self._det_tc.setdefault(tag_id, set()).add(content_id)

    def remove_content(self, content_id: ContentId) -> None:
        """Drop a content vertex and every edge touching it.

        Exists so the pipeline can roll back a failed content; the graph
        never ages out edges on its own.
        """
        self._require_content(content_id)
        for tid in self._sim_ct.pop(content_id, {}):
            nbrs = self._sim_tc.get(tid)
            if nbrs is not None:
                nbrs.pop(content_id, None)
                if not nbrs:
                    del self._sim_tc[tid]
        for other in self._sim_cc.pop(content_id, {}):
            nbrs = self._sim_cc.get(other)
            if nbrs is not None:
                nbrs.pop(content_id, None)
                if not nbrs:
                    del self._sim_cc[other]
        for tid in self._det_ct.pop(content_id, set()):
            nbrs2 = self._det_tc.get(tid)
            if nbrs2 is not None:
                nbrs2.discard(content_id)
                if not nbrs2:
                    del self._det_tc[tid]
        row = self._content_row.pop(content_id)
        del self._row_content[row]
        del self._content_emb[content_id]
        self._content_block.kill(row)

    # ------------------------------------------------------------------
    # Recall
    # ------------------------------------------------------------------

    def recall_c2t(self, content_id: ContentId) -> list[tuple[TagId, float]]:
        """Tags one similarity hop away, best first, capped at cap_c2t."""
        self._require_content(content_id)
        edges = self._sim_ct.get(content_id, {})
        ranked = sorted(edges.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[: self._config.cap_c2t]

    def recall_c2c2t(self, content_id: ContentId) -> list[tuple[TagId, float]]:
        """Deterministic tags of similar contents, scored by the best first hop."""
        self._require_content(content_id)
        scores: dict[TagId, float] = {}
        for neighbor, weight in self._sim_cc.get(content_id, {}).items():
            for tag_id in self._det_ct.get(neighbor, ()):
                if weight > scores.get(tag_id, -math.inf):
                    scores[tag_id] = weight
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[: self._config.cap_c2c2t]

    def recall(self, content_id: ContentId) -> CandidateSet:
        """Union of both routes after their individual caps."""
        c2t = self.recall_c2t(content_id)
        c2c2t = self.recall_c2c2t(content_id)
        merged: dict[TagId, CandidateEntry] = {
            tag: CandidateEntry(tag, score, Provenance.C2T) for tag, score in c2t
        }
        for tag, score in c2c2t:
            prior = merged.get(tag)
            if prior is None:
                merged[tag] = CandidateEntry(tag, score, Provenance.C2C2T)
            else:
                merged[tag] = CandidateEntry(tag, max(prior.score, score), Provenance.BOTH)
        entries = tuple(sorted(merged.values(), key=_entry_sort_key))
        return CandidateSet(content=content_id, entries=entries)

    def match_recall(self, content_id: ContentId, n: int) -> list[tuple[TagId, float]]:
        """Baseline: rank every tag by direct cosine to the content, top-n."""
        self._require_content(content_id)
        if n < 0:
            raise InvalidInput("n must be >= 0")
        emb = self._content_emb[content_id]
        scored = [
            (tid, cosine(emb, temb)) for tid, temb in self._tag_emb.items()
        ]
        scored.sort(key=lambda kv: (-kv[1], kv[0]))
        return scored[:n]

    # ------------------------------------------------------------------
    # Snapshot persistence
    # ------------------------------------------------------------------

    def snapshot_text(self) -> str:
        """Canonical snapshot: sorted vertices then sorted edges, JSONL."""
        lines = []
        for cid in sorted(self._content_emb):
            lines.append(
                _dump({"kind": "CONTENT", "id": cid, "embedding": self._content_emb[cid].tolist()})
            )
        for tid in sorted(self._tag_emb):
            lines.append(
                _dump({"kind": "TAG", "id": tid, "embedding": self._tag_emb[tid].tolist()})
            )
        det = sorted((c, t) for c, tags in self._det_ct.items() for t in tags)
        for c, t in det:
            lines.append(_dump({"kind": "DETERMINISTIC", "a": c, "b": t}))
        sim_ct = sorted(
            (c, t, w) for c, nbrs in self._sim_ct.items() for t, w in nbrs.items()
        )
        for c, t, w in sim_ct:
            lines.append(_dump({"kind": "SIMILARITY_CT", "a": c, "b": t, "weight": w}))
        sim_cc = sorted(
            (a, b, w)
            for a, nbrs in self._sim_cc.items()
            for b, w in nbrs.items()
            if a < b
        )
        for a, b, w in sim_cc:
            lines.append(_dump({"kind": "SIMILARITY_CC", "a": a, "b": b, "weight": w}))
        return "".join(line + "\n" for line in lines)

    def save_snapshot(self, dest: str | Path | IO[str]) -> None:
        text = self.snapshot_text()
        if isinstance(dest, (str, Path)):
            Path(dest).write_text(text, encoding="utf-8")
        else:
            dest.write(text)

    @classmethod
    def load_snapshot(
        cls,
        source: str | Path | IO[str],
        encoder: EncoderBackend,
        config: GraphConfig | None = None,
    ) -> "TagGraph":
        """Rebuild a graph from a snapshot, validating every invariant.

        Rejections carry the offending line number. Vertex records must
        precede the edges that reference them.
        """
        if isinstance(source, (str, Path)):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source.read()
        graph = cls(encoder, config)
        dim: int | None = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SnapshotError(f"snapshot line {lineno}: invalid JSON ({exc.msg})") from None
            kind = obj.get("kind")
            if kind in ("CONTENT", "TAG"):
                dim = graph._load_vertex(obj, lineno, dim)
            elif kind in ("DETERMINISTIC", "SIMILARITY_CT", "SIMILARITY_CC"):
                graph._load_edge(obj, lineno)
            else:
                raise SnapshotError(f"snapshot line {lineno}: unknown record kind {kind!r}")
        return graph

    def _load_vertex(self, obj: dict, lineno: int, dim: int | None) -> int:
        vid = obj.get("id")
        if not isinstance(vid, str) or not vid:
            raise SnapshotError(f"snapshot line {lineno}: vertex id must be a non-empty string")
        try:
            emb = Embedding(obj.get("embedding", ()))
        except (InvalidInput, TypeError) as exc:
            raise SnapshotError(f"snapshot line {lineno}: bad embedding ({exc})") from None
        if dim is None:
            dim = emb.dim
        elif emb.dim != dim:
            raise SnapshotError(
                f"snapshot line {lineno}: embedding dim {emb.dim} != snapshot dim {dim}"
            )
        if emb.dim != self._encoder.dim:
            raise SnapshotError(
                f"snapshot line {lineno}: embedding dim {emb.dim} != encoder dim {self._encoder.dim}"
            )
        if obj["kind"] == "CONTENT":
            if vid in self._content_emb:
                raise SnapshotError(f"snapshot line {lineno}: duplicate content vertex {vid!r}")
            row = self._content_block.append(emb.values)
            self._content_row[vid] = row
            self._row_content[row] = vid
            self._content_emb[vid] = emb
        else:
            if vid in self._tag_emb:
                raise SnapshotError(f"snapshot line {lineno}: duplicate tag vertex {vid!r}")
            row = self._tag_block.append(emb.values)
            self._tag_row[vid] = row
            self._row_tag[row] = vid
            self._tag_emb[vid] = emb
        return dim

    def _load_edge(self, obj: dict, lineno: int) -> None:
        kind, a, b = obj.get("kind"), obj.get("a"), obj.get("b")
        if not isinstance(a, str) or not isinstance(b, str):
            raise SnapshotError(f"snapshot line {lineno}: edge endpoints must be strings")
        if a == b and kind == "SIMILARITY_CC":
            raise SnapshotError(f"snapshot line {lineno}: self-loop on {a!r}")
        if kind == "DETERMINISTIC":
            if "weight" in obj:
                raise SnapshotError(f"snapshot line {lineno}: deterministic edges carry no weight")
            self._check_endpoint(a, self._content_emb, "content", lineno)
            self._check_endpoint(b, self._tag_emb, "tag", lineno)
            if b in self._det_ct.get(a, ()):
                raise SnapshotError(f"snapshot line {lineno}: duplicate edge {a!r}-{b!r}")
            self._det_ct.setdefault(a, set()).add(b)
            self._det_tc.setdefault(b, set()).add(a)
            return
        weight = obj.get("weight")
        if not isinstance(weight, (int, float)) or not math.isfinite(weight):
            raise SnapshotError(f"snapshot line {lineno}: similarity edge needs a finite weight")
        if kind == "SIMILARITY_CT":
            self._check_endpoint(a, self._content_emb, "content", lineno)
            self._check_endpoint(b, self._tag_emb, "tag", lineno)
            actual = cosine(self._content_emb[a], self._tag_emb[b])
            threshold = self._config.delta_ct
            target_a, target_b = self._sim_ct.setdefault(a, {}), self._sim_tc.setdefault(b, {})
            if b in target_a:
                raise SnapshotError(f"snapshot line {lineno}: duplicate edge {a!r}-{b!r}")
            self._validate_weight(weight, actual, threshold, lineno)
            target_a[b] = float(weight)
            target_b[a] = float(weight)
        else:
            self._check_endpoint(a, self._content_emb, "content", lineno)
            self._check_endpoint(b, self._content_emb, "content", lineno)
            actual = cosine(self._content_emb[a], self._content_emb[b])
            threshold = self._config.delta_cc
            nbrs = self._sim_cc.setdefault(a, {})
            if b in nbrs:
                raise SnapshotError(f"snapshot line {lineno}: duplicate edge {a!r}-{b!r}")
            self._validate_weight(weight, actual, threshold, lineno)
            nbrs[b] = float(weight)
            self._sim_cc.setdefault(b, {})[a] = float(weight)

    @staticmethod
    def _check_endpoint(vid: str, table: dict, kind: str, lineno: int) -> None:
        if vid not in table:
            raise SnapshotError(f"snapshot line {lineno}: edge references unknown {kind} {vid!r}")

    @staticmethod
    def _validate_weight(weight: float, actual: float, threshold: float, lineno: int) -> None:
        if abs(weight - actual) > 1e-9:
            raise SnapshotError(
                f"snapshot line {lineno}: stored weight {weight} differs from "
                f"endpoint cosine {actual} by more than 1e-9"
            )
        if weight < threshold:
            raise SnapshotError(
                f"snapshot line {lineno}: weight {weight} below threshold {threshold}"
            )

    # ------------------------------------------------------------------
    # Guards
    # ------------------------------------------------------------------

    def _require_content(self, content_id: ContentId) -> None:
        if content_id not in self._content_emb:
            raise UnknownVertex(f"unknown content vertex {content_id!r}")

    def _require_tag(self, tag_id: TagId) -> None:
        if tag_id not in self._tag_emb:
            raise UnknownVertex(f"unknown tag vertex {tag_id!r}")

    def _require_det_endpoints(self, content_id: ContentId, tag_id: TagId) -> None:
        if content_id not in self._content_emb:
            if content_id in self._tag_emb:
                raise InvalidEdge(
                    f"deterministic edges connect content to tag; {content_id!r} is a tag"
                )
            raise UnknownVertex(f"unknown content vertex {content_id!r}")
        if tag_id not in self._tag_emb:
            if tag_id in self._content_emb:
                raise InvalidEdge(
                    f"deterministic edges connect content to tag; {tag_id!r} is a content"
                )
            raise UnknownVertex(f"unknown tag vertex {tag_id!r}")


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))
