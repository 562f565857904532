"""Run configuration and backend construction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .backends import Backend, FallbackBackend, RemoteBackend, RemoteConfig, RuleBackend
from .backends.rule import default_lexicon, load_lexicon
from .taxonomy import Taxonomy, load_taxonomy

# settings that change scheduling only; left out of the digest so that
# reports do not depend on how many threads produced them
_SCHEDULING = ("max_workers", "app_workers")


@dataclass
class RunConfig:
    backend: str = "rule"  # rule | remote
    rule_fallback: bool = True
    remote: RemoteConfig = field(default_factory=RemoteConfig)
    min_unit_chars: int = 512
    batch_size: int = 20
    heading_trials: int = 3
    language_confidence: float = 0.3
    max_text_bytes: int = 50 * 1024
    placeholder_chars: int = 400
    include_generic: bool = False
    taxonomy_path: str | None = None
    lexicon_path: str | None = None
    max_workers: int = 1
    app_workers: int = 1

    def __post_init__(self) -> None:
        if self.backend not in ("rule", "remote"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not 1 <= self.batch_size <= 20:
            raise ValueError("batch_size must be within 1..20")
        if self.heading_trials < 1:
            raise ValueError("heading_trials must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("remote"), dict):
            d["remote"] = RemoteConfig(**d["remote"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        d = self.to_dict()
        for key in _SCHEDULING:
            d.pop(key)
        canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def taxonomy(self) -> Taxonomy:
        return load_taxonomy(self.taxonomy_path)

    def make_backend(self, *, client=None) -> Backend:
        taxonomy = self.taxonomy()
        lexicon = load_lexicon(self.lexicon_path, taxonomy) if self.lexicon_path else default_lexicon()
        rule = RuleBackend(lexicon, taxonomy)
        if self.backend == "rule":
            return rule
        remote = RemoteBackend(self.remote, client=client, taxonomy=taxonomy)
        return FallbackBackend(remote, rule) if self.rule_fallback else remote
