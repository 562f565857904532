from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any


@dataclass(frozen=True, order=True)
class Note:
    """A stage-attributed annotation carried into reports."""

    stage: str
    code: str
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Note":
        return cls(data["stage"], data["code"], data.get("message", ""))


class StageError(Exception):
    """Unrecoverable failure attributed to one pipeline stage."""

    def __init__(self, stage: str, message: str, *, kind: str = "input"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.kind = kind
        self.message = message
