"""Domain types shared by every other module.

Contents and tags are immutable value objects with a canonical text
serialization that feeds both the embedding backends and the prompt
renderers. The exchange format for both is line-delimited JSON (UTF-8),
one object per line.
"""

from __future__ import annotations

import enum
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

from .errors import DuplicateVertex, InvalidInput, InvalidRecord, UnknownVertex

ContentId = str
TagId = str

_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Lowercase and collapse internal whitespace, for duplicate detection."""
    return _WS.sub(" ", name.strip()).lower()


class Provenance(str, enum.Enum):
    """Which recall route produced a tag for a content."""

    C2T = "C2T"
    C2C2T = "C2C2T"
    BOTH = "BOTH"
    FEEDBACK = "FEEDBACK"


@dataclass(frozen=True)
class Content:
    """A piece of content to be tagged. Text fields only.

    `extra` holds scenario-specific fields; its insertion order is part of
    the value (it feeds canonical_text), so callers should build it
    deterministically.
    """

    id: ContentId
    title: str = ""
    category: str = ""
    body: str = ""
    extra: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInput("content id must be non-empty")
        if not self.title.strip() and not self.body.strip():
            raise InvalidInput(f"content {self.id!r}: title and body are both empty")
        object.__setattr__(self, "extra", dict(self.extra))


@dataclass(frozen=True)
class Tag:
    """A tag from the controlled repository."""

    id: TagId
    name: str
    description: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInput("tag id must be non-empty")
        if not self.name.strip():
            raise InvalidInput(f"tag {self.id!r}: name must be non-empty")


def canonical_text(item: Content | Tag) -> str:
    """Deterministic one-line text form of a content or tag.

    Non-empty fields are stripped and joined with single spaces, in fixed
    order: title, category, body, then extra values in map order for
    contents; name then description for tags. Equal values always yield
    byte-identical output.
    """
    if isinstance(item, Content):
        parts = [item.title, item.category, item.body, *item.extra.values()]
    elif isinstance(item, Tag):
        parts = [item.name, item.description]
    else:
        raise InvalidInput(f"cannot serialize {type(item).__name__}")
    return " ".join(p.strip() for p in parts if p.strip())


@dataclass(frozen=True)
class TagAssignment:
    """A final (content, tag) pairing, optionally confidence-scored."""

    content: ContentId
    tag: TagId
    confidence: float | None = None
    provenance: Provenance = Provenance.C2T

    def __post_init__(self) -> None:
        if self.confidence is not None and not (0.0 < self.confidence < 1.0):
            raise InvalidInput(
                f"confidence must lie strictly in (0,1), got {self.confidence}"
            )


class TagRepository:
    """The tag vocabulary, keyed by id, with normalized-name uniqueness.

    Duplicate names (after lowercasing and whitespace collapsing) are
    rejected because the generator resolves model output against names.
    """

    def __init__(self, tags: Iterable[Tag] = ()) -> None:
        self._by_id: dict[TagId, Tag] = {}
        self._by_name: dict[str, TagId] = {}
        for tag in tags:
            self.add(tag)

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Tag]:
        return iter(self._by_id.values())

    def __contains__(self, tag_id: TagId) -> bool:
        return tag_id in self._by_id

    def add(self, tag: Tag) -> None:
        """Insert a tag; rejects duplicate ids and names, leaving the repository unchanged."""
        key = normalize_name(tag.name)
        if tag.id in self._by_id:
            raise DuplicateVertex(f"duplicate tag id {tag.id!r}")
        if key in self._by_name:
            raise DuplicateVertex(
                f"tag {tag.id!r}: name {tag.name!r} collides with tag {self._by_name[key]!r}"
            )
        self._by_id[tag.id] = tag
        self._by_name[key] = tag.id

    def get(self, tag_id: TagId) -> Tag:
        try:
            return self._by_id[tag_id]
        except KeyError:
            raise UnknownVertex(f"unknown tag id {tag_id!r}") from None

    def name_of(self, tag_id: TagId) -> str:
        return self.get(tag_id).name

    def resolve_name(self, name: str) -> TagId | None:
        """Map a (possibly sloppily cased/spaced) tag name to its id."""
        return self._by_name.get(normalize_name(name))

    def ids(self) -> list[TagId]:
        return list(self._by_id)


# ---------------------------------------------------------------------------
# Line-delimited JSON exchange format
# ---------------------------------------------------------------------------

_CONTENT_FIELDS = ("id", "title", "category", "body", "extra")
_TAG_FIELDS = ("id", "name", "description")


def _parse_lines(fp: IO[str], label: str) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"{label} line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise InvalidRecord(f"{label} line {lineno}: expected a JSON object")
        yield lineno, obj


def _check_fields(obj: dict, allowed: tuple[str, ...], label: str, lineno: int) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise InvalidRecord(
            f"{label} line {lineno}: unknown field(s) {sorted(unknown)}"
        )


def content_from_dict(obj: dict, *, label: str = "content", lineno: int = 0) -> Content:
    _check_fields(obj, _CONTENT_FIELDS, label, lineno)
    try:
        return Content(
            id=obj.get("id", ""),
            title=obj.get("title", ""),
            category=obj.get("category", ""),
            body=obj.get("body", ""),
            extra=obj.get("extra", {}),
        )
    except InvalidInput as exc:
        raise InvalidRecord(f"{label} line {lineno}: {exc}") from None


def tag_from_dict(obj: dict, *, label: str = "tag", lineno: int = 0) -> Tag:
    _check_fields(obj, _TAG_FIELDS, label, lineno)
    try:
        return Tag(
            id=obj.get("id", ""),
            name=obj.get("name", ""),
            description=obj.get("description", ""),
        )
    except InvalidInput as exc:
        raise InvalidRecord(f"{label} line {lineno}: {exc}") from None


def content_to_dict(content: Content) -> dict:
    return {
        "id": content.id,
        "title": content.title,
        "category": content.category,
        "body": content.body,
        "extra": dict(content.extra),
    }


def tag_to_dict(tag: Tag) -> dict:
    return {"id": tag.id, "name": tag.name, "description": tag.description}


def read_contents(source: str | Path | IO[str]) -> list[Content]:
    """Read contents from line-delimited JSON; errors cite the line number."""
    with _open(source) as fp:
        return [
            content_from_dict(obj, lineno=lineno) for lineno, obj in _parse_lines(fp, "content")
        ]


def read_tags(source: str | Path | IO[str]) -> list[Tag]:
    """Read tags from line-delimited JSON; errors cite the line number."""
    with _open(source) as fp:
        return [tag_from_dict(obj, lineno=lineno) for lineno, obj in _parse_lines(fp, "tag")]


def write_contents(contents: Iterable[Content], dest: str | Path | IO[str]) -> None:
    _write_jsonl((content_to_dict(c) for c in contents), dest)


def write_tags(tags: Iterable[Tag], dest: str | Path | IO[str]) -> None:
    _write_jsonl((tag_to_dict(t) for t in tags), dest)


def _open(source: str | Path | IO[str]) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8")
    return _NonClosing(source)


def _write_jsonl(objs: Iterable[dict], dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as fp:
            for obj in objs:
                fp.write(json.dumps(obj, ensure_ascii=False) + "\n")
    else:
        for obj in objs:
            dest.write(json.dumps(obj, ensure_ascii=False) + "\n")


class _NonClosing(io.TextIOBase):
    """Context-manager wrapper that leaves a caller-owned stream open."""

    def __init__(self, fp: IO[str]) -> None:
        self._fp = fp

    def __enter__(self) -> IO[str]:
        return self._fp

    def __exit__(self, *exc) -> None:
        pass
