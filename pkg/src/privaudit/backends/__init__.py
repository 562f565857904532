from .base import (
    MAX_BATCH,
    Backend,
    BackendError,
    BackendParseError,
    BackendRequest,
    BackendResponse,
    PracticeTuple,
    Task,
    check_batch,
)
from .remote import FallbackBackend, RemoteBackend, RemoteConfig
from .rule import RuleBackend, RuleLexicon, default_lexicon, load_lexicon

__all__ = [
    "MAX_BATCH",
    "Backend",
    "BackendError",
    "BackendParseError",
    "BackendRequest",
    "BackendResponse",
    "FallbackBackend",
    "PracticeTuple",
    "RemoteBackend",
    "RemoteConfig",
    "RuleBackend",
    "RuleLexicon",
    "Task",
    "check_batch",
    "default_lexicon",
    "load_lexicon",
]
