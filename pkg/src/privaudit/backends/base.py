from __future__ import annotations

import abc
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Sequence

from ..taxonomy import Vocabulary

MAX_BATCH = 20


class Task(str, Enum):
    HEADINGS = "headings"
    CLASSIFY = "classify"
    DECODE = "decode"
    MAP_ITEMS = "map_items"
    MAP_PURPOSES = "map_purposes"
    VERIFY_ITEM = "verify_item"
    VERIFY_PURPOSE = "verify_purpose"


class BackendError(RuntimeError):
    """Transport or service failure after retries."""


class BackendParseError(BackendError):
    """The backend answered, but not in the task's output grammar."""

    def __init__(self, task: Task, raw_text: str, reason: str):
        super().__init__(f"{task.value}: {reason}")
        self.task = task
        self.raw_text = raw_text
        self.reason = reason


@dataclass(frozen=True)
class PracticeTuple:
    data: str
    purpose: str = ""
    processing: str = ""
    retention: str = ""
    recipients: str = ""

    def to_dict(self) -> dict[str, str]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PracticeTuple":
        return cls(**{k: str(d.get(k) or "") for k in ("data", "purpose", "processing", "retention", "recipients")})


@dataclass(frozen=True)
class BackendRequest:
    task: Task
    payload: dict[str, Any]
    max_output_tokens: int = 512
    deterministic: bool = True
    correlation_id: str = ""


@dataclass
class BackendResponse:
    task: Task
    raw_text: str
    parsed: Any = None
    parse_error: str | None = None
    latency: float = 0.0
    backend_id: str = ""
    correlation_id: str = ""
    meta: dict[str, Any] = field(default_factory=dict)


class Backend(abc.ABC):
    """Text-model contract used by segmentation, extraction and mapping."""

    backend_id: str = "abstract"

    @abc.abstractmethod
    def extract_headings(self, text: str, trial: int = 0) -> list[str]:
        """Propose primary section headings; unverified."""

    @abc.abstractmethod
    def classify_paragraph(self, text: str) -> tuple[int, str]:
        """Return (practice class index, verbatim rationale excerpt)."""

    @abc.abstractmethod
    def decode_elements(self, text: str) -> list[PracticeTuple]:
        ...

    @abc.abstractmethod
    def map_keywords_batch(self, items: Sequence[str], vocabulary: Vocabulary) -> list[str]:
        """Positional mapping; the output is *not* validated here."""

    @abc.abstractmethod
    def verify_keyword(self, item: str, vocabulary: Vocabulary) -> str:
        """Total mapping: always returns an in-vocabulary keyword."""


def check_batch(items: Sequence[str]) -> None:
    if not 1 <= len(items) <= MAX_BATCH:
        raise ValueError(f"batch size must be within 1..{MAX_BATCH}, got {len(items)}")
