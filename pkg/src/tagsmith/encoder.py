"""Text embedding backends and cosine similarity.

Three backends ship with the package:

* :class:`HashingEncoder` — the dependency-free reference encoder used for
  tests and offline runs. Character trigrams are feature-hashed into ``dim``
  signed buckets with blake2b (personalization ``b"tagsmith"``), then the
  vector is L2-normalized. The scheme below is a frozen contract:

  1. casefold the text, collapse whitespace runs to single spaces, strip;
  2. wrap with the sentinels ``\\x02`` / ``\\x03``;
  3. for every character trigram ``g``: take the 8-byte big-endian blake2b
     digest value ``v``; add ``+1`` to bucket ``v % dim`` when the top digest
     bit is 0, else ``-1``;
  4. if everything cancelled, set bucket ``v_text % dim`` to 1.0 where
     ``v_text`` hashes the whole wrapped text;
  5. L2-normalize.

* :class:`RemoteEncoder` — HTTP client for an embedding service speaking
  ``POST {"input": [text, ...]}`` / ``{"data": [{"embedding": [...]}]}``.

* :class:`ScriptedEncoder` — exact text → vector table for deterministic
  test harnesses; misses raise instead of guessing.
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

from .errors import BackendUnavailable, InvalidInput, ScriptMiss

_WS = re.compile(r"\s+")
_HASH_PERSON = b"tagsmith"
_SENTINEL_L = "\x02"
_SENTINEL_R = "\x03"


class Embedding:
    """A fixed-length, finite, nonzero vector of reals.

    Zero vectors are rejected at construction because cosine similarity is
    undefined for them. The underlying array is read-only.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Sequence[float] | np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInput("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("embedding entries must all be finite")
        if not np.any(arr):
            raise InvalidInput("zero embeddings are not allowed")
        arr = arr.copy()
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return int(self._values.size)

    def tolist(self) -> list[float]:
        return self._values.tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return bool(np.array_equal(self._values, other._values))

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"Embedding(dim={self.dim})"


def cosine(u: Embedding, v: Embedding) -> float:
    """Cosine similarity in [-1, 1], clamped to absorb rounding.

    Exactly symmetric (both orders run identical float operations) and
    exactly 1.0 for u == v: in round-to-nearest, sqrt(s*s) == s, so the
    denominator sqrt((u.u)(v.v)) reproduces u.u for equal inputs.
    """
    if u.dim != v.dim:
        raise InvalidInput(f"dimension mismatch: {u.dim} vs {v.dim}")
    num = float(np.dot(u.values, v.values))
    denom = math.sqrt(float(np.dot(u.values, u.values)) * float(np.dot(v.values, v.values)))
    if denom == 0.0 or not math.isfinite(denom):
        # extreme magnitudes under/overflowed the squared form
        denom = float(np.linalg.norm(u.values)) * float(np.linalg.norm(v.values))
    return max(-1.0, min(1.0, num / denom))


@runtime_checkable
class EncoderBackend(Protocol):
    """Structural contract every embedding backend satisfies.

    ``embed`` must be deterministic for a fixed ``identity``: equal input
    text yields an equal output vector.
    """

    @property
    def dim(self) -> int: ...

    @property
    def identity(self) -> str: ...

    def embed(self, text: str) -> Embedding: ...


def _require_text(text: str) -> str:
    if not text or not text.strip():
        raise InvalidInput("cannot embed empty text")
    return text


class HashingEncoder:
    """Character-trigram feature hashing, signed, L2-normalized.

    Deterministic and dependency-free; see the module docstring for the
    exact frozen scheme.
    """

    def __init__(self, dim: int = 256) -> None:
        if dim < 1:
            raise InvalidInput("dim must be >= 1")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def identity(self) -> str:
        return f"hash-trigram/1:dim={self._dim}"

    @staticmethod
    def _digest(data: str) -> int:
        h = hashlib.blake2b(data.encode("utf-8"), digest_size=8, person=_HASH_PERSON)
        return int.from_bytes(h.digest(), "big")

    def embed(self, text: str) -> Embedding:
        _require_text(text)
        normalized = _WS.sub(" ", text).strip().casefold()
        wrapped = _SENTINEL_L + normalized + _SENTINEL_R
        vec = np.zeros(self._dim, dtype=np.float64)
        for i in range(len(wrapped) - 2):
            v = self._digest(wrapped[i : i + 3])
            sign = 1.0 if (v >> 63) & 1 == 0 else -1.0
            vec[v % self._dim] += sign
        if not np.any(vec):
            vec[self._digest(wrapped) % self._dim] = 1.0
        vec /= np.linalg.norm(vec)
        return Embedding(vec)

    def embed_batch(self, texts: Iterable[str]) -> list[Embedding]:
        return [self.embed(t) for t in texts]


class RemoteEncoder:
    """HTTP embedding backend with a bounded number of in-flight requests.

    Transport failures, non-2xx statuses, and malformed responses all raise
    :class:`BackendUnavailable` (retryable).
    """

    def __init__(
        self,
        url: str,
        dim: int,
        *,
        token: str | None = None,
        timeout: float = 30.0,
        max_inflight: int = 8,
        client: httpx.Client | None = None,
    ) -> None:
        if dim < 1:
            raise InvalidInput("dim must be >= 1")
        if max_inflight < 1:
            raise InvalidInput("max_inflight must be >= 1")
        self._url = url
        self._dim = dim
        self._token = token
        self._client = client or httpx.Client(timeout=timeout)
        self._sem = threading.BoundedSemaphore(max_inflight)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def identity(self) -> str:
        return f"remote:{self._url}:dim={self._dim}"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        return headers

    def embed(self, text: str) -> Embedding:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[Embedding]:
        for t in texts:
            _require_text(t)
        with self._sem:
            try:
                resp = self._client.post(
                    self._url, json={"input": list(texts)}, headers=self._headers()
                )
            except httpx.HTTPError as exc:
                raise BackendUnavailable(f"embedding backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(
                f"embedding backend returned status {resp.status_code}"
            )
        try:
            data = resp.json()["data"]
            vectors = [row["embedding"] for row in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendUnavailable(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendUnavailable(
                f"embedding backend returned {len(vectors)} vectors for {len(texts)} inputs"
            )
        out = []
        for vec in vectors:
            if len(vec) != self._dim:
                raise BackendUnavailable(
                    f"embedding backend returned dim {len(vec)}, expected {self._dim}"
                )
            out.append(Embedding(vec))
        return out


class ScriptedEncoder:
    """Maps exact input texts to preassigned vectors. Misses are loud."""

    def __init__(self, table: Mapping[str, Sequence[float] | Embedding], dim: int | None = None) -> None:
        self._table: dict[str, Embedding] = {}
        for text, values in table.items():
            emb = values if isinstance(values, Embedding) else Embedding(values)
            if dim is None:
                dim = emb.dim
            elif emb.dim != dim:
                raise InvalidInput(
                    f"scripted vector for {text!r} has dim {emb.dim}, expected {dim}"
                )
            self._table[text] = emb
        if dim is None:
            raise InvalidInput("scripted encoder needs at least one entry or an explicit dim")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def identity(self) -> str:
        return f"scripted/1:dim={self._dim}:n={len(self._table)}"

    def add(self, text: str, values: Sequence[float] | Embedding) -> None:
        emb = values if isinstance(values, Embedding) else Embedding(values)
        if emb.dim != self._dim:
            raise InvalidInput(f"vector dim {emb.dim} != encoder dim {self._dim}")
        self._table[text] = emb

    def embed(self, text: str) -> Embedding:
        _require_text(text)
        try:
            return self._table[text]
        except KeyError:
            raise ScriptMiss(f"no scripted vector for text {text!r}") from None
