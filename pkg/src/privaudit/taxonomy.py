"""Fixed vocabularies shared by every stage of the pipeline.

Data items, purposes and practice classes are identified by their index in
the bundled taxonomy file; ``DataItem``/``Purpose`` values are plain ints.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

N_ITEMS = 23
N_PURPOSES = 8
N_CLASSES = 12

GENERIC = 21
NEGATIVE = 22
OTHER_PURPOSE = 7

# paragraph classes that feed the collect / share matrices
FIRST_PARTY = 0
THIRD_PARTY = 1
CONTACT = 10

# prompt-facing label for the negative item
NA_LABEL = "N/A"

_PERMISSION_RE = re.compile(r"^[a-z][a-z0-9_]*(\.[a-z0-9_]+)+\.[A-Z][A-Z0-9_]*$")
_WS = re.compile(r"\s+")


class TaxonomyError(ValueError):
    pass


class Vocabulary(str, Enum):
    ITEMS = "items"
    PURPOSES = "purposes"


def normalize_keyword(text: str) -> str:
    """Case-fold, trim and collapse internal whitespace. No stemming."""
    text = unicodedata.normalize("NFKC", text)
    return _WS.sub(" ", text.casefold()).strip()


@dataclass(frozen=True)
class Taxonomy:
    version: str
    data_items: tuple[str, ...]
    purposes: tuple[str, ...]
    practice_classes: tuple[str, ...]
    ds_category_map: Mapping[str, int]
    permission_item_map: Mapping[str, int]
    api_permission_map: Mapping[str, str]
    _item_index: dict[str, int] = field(init=False, repr=False, compare=False)
    _purpose_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._validate()
        item_index = {normalize_keyword(k): i for i, k in enumerate(self.data_items)}
        item_index[normalize_keyword(NA_LABEL)] = NEGATIVE
        purpose_index = {normalize_keyword(k): i for i, k in enumerate(self.purposes)}
        object.__setattr__(self, "_item_index", item_index)
        object.__setattr__(self, "_purpose_index", purpose_index)

    def _validate(self) -> None:
        if len(self.data_items) != N_ITEMS:
            raise TaxonomyError(f"expected {N_ITEMS} data items, got {len(self.data_items)}")
        if len(self.purposes) != N_PURPOSES:
            raise TaxonomyError(f"expected {N_PURPOSES} purposes, got {len(self.purposes)}")
        if len(self.practice_classes) != N_CLASSES:
            raise TaxonomyError(
                f"expected {N_CLASSES} practice classes, got {len(self.practice_classes)}"
            )
        for name, values in (("data_items", self.data_items), ("purposes", self.purposes)):
            normed = [normalize_keyword(v) for v in values]
            if len(set(normed)) != len(normed):
                raise TaxonomyError(f"duplicate keywords in {name}")
        for label, idx in self.ds_category_map.items():
            if not 0 <= idx <= GENERIC:
                raise TaxonomyError(f"ds_category_map[{label!r}] = {idx} outside 0..21")
            if label != normalize_keyword(label):
                raise TaxonomyError(f"ds_category_map key {label!r} is not case-folded")
        for perm, idx in self.permission_item_map.items():
            if not _PERMISSION_RE.match(perm):
                raise TaxonomyError(f"malformed permission string {perm!r}")
            if not 0 <= idx < GENERIC:
                raise TaxonomyError(f"permission {perm} maps to {idx}; only 0..20 allowed")
        for method, perm in self.api_permission_map.items():
            if not _PERMISSION_RE.match(perm):
                raise TaxonomyError(f"api_permission_map[{method!r}] has malformed permission")

    # -- lookups -----------------------------------------------------------

    def data_item_from_keyword(self, text: str) -> int | None:
        return self._item_index.get(normalize_keyword(text))

    def purpose_from_keyword(self, text: str) -> int | None:
        return self._purpose_index.get(normalize_keyword(text))

    def lookup(self, text: str, vocabulary: Vocabulary) -> int | None:
        if vocabulary is Vocabulary.ITEMS:
            return self.data_item_from_keyword(text)
        return self.purpose_from_keyword(text)

    def ds_category(self, label: str) -> int | None:
        return self.ds_category_map.get(normalize_keyword(label))

    def item_keyword(self, index: int) -> str:
        return self.data_items[index]

    def purpose_keyword(self, index: int) -> str:
        return self.purposes[index]

    def vocabulary_keywords(self, vocabulary: Vocabulary) -> list[str]:
        """Keywords a mapping backend may emit, in prompt order."""
        if vocabulary is Vocabulary.ITEMS:
            return list(self.data_items[:NEGATIVE]) + [NA_LABEL]
        return list(self.purposes)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "data_items": list(self.data_items),
            "purposes": list(self.purposes),
            "practice_classes": list(self.practice_classes),
            "ds_category_map": dict(self.ds_category_map),
            "permission_item_map": dict(self.permission_item_map),
            "api_permission_map": dict(self.api_permission_map),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Taxonomy":
        try:
            return cls(
                version=str(data.get("version", "unversioned")),
                data_items=tuple(data["data_items"]),
                purposes=tuple(data["purposes"]),
                practice_classes=tuple(data["practice_classes"]),
                ds_category_map=dict(data["ds_category_map"]),
                permission_item_map=dict(data["permission_item_map"]),
                api_permission_map=dict(data["api_permission_map"]),
            )
        except KeyError as exc:
            raise TaxonomyError(f"taxonomy file missing key {exc}") from None


def is_compliance_relevant(item: int, include_generic: bool = False) -> bool:
    """Concrete items 0..20 count towards compliance; sentinels do not."""
    if include_generic and item == GENERIC:
        return True
    return 0 <= item < GENERIC


def load_taxonomy(path: str | Path | None = None) -> Taxonomy:
    if path is None:
        return default_taxonomy()
    with open(path, encoding="utf-8") as fh:
        return Taxonomy.from_dict(json.load(fh))


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    text = resources.files("privaudit").joinpath("data/taxonomy.json").read_text("utf-8")
    return Taxonomy.from_dict(json.loads(text))
