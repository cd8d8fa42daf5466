"""Exception types shared across the package."""


class TagsmithError(Exception):
    """Base class for all tagsmith errors."""


class InvalidInput(TagsmithError, ValueError):
    """An argument violates an operation precondition or a type invariant."""


class InvalidRecord(TagsmithError, ValueError):
    """A dataset record fails validation; the message names the offender."""


class DuplicateVertex(TagsmithError):
    """A vertex (or repository entry) with this identity already exists."""


class UnknownVertex(TagsmithError):
    """Lookup by an id that does not exist. Never a silent miss."""


class InvalidEdge(TagsmithError):
    """The requested edge violates the graph's edge-kind constraints."""


class SnapshotError(TagsmithError):
    """A persisted graph snapshot is malformed or violates an invariant."""


class BackendUnavailable(TagsmithError):
    """A remote backend could not be reached or answered garbage. Retryable."""


class GenerationFailed(TagsmithError):
    """The completion backend produced unparseable output, retry included.

    Content hit by this should be routed to manual handling.
    """


class UnsupportedBackend(TagsmithError):
    """The completion backend cannot do what the operation requires."""


class ScoreUnavailable(TagsmithError):
    """Token probability scores needed for confidence are missing."""


class ScriptMiss(TagsmithError):
    """A scripted (mock) backend has no entry for the given input."""
