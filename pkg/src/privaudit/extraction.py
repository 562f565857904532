"""Per-policy orchestration: classify, decode, map, validate, build matrices."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .backends.base import MAX_BATCH, Backend, BackendError, PracticeTuple
from .backends.rule import default_lexicon
from .notes import Note
from .segmenter import ParagraphUnit
from .taxonomy import (
    FIRST_PARTY,
    GENERIC,
    N_CLASSES,
    N_ITEMS,
    N_PURPOSES,
    NEGATIVE,
    OTHER_PURPOSE,
    THIRD_PARTY,
    Taxonomy,
    Vocabulary,
    default_taxonomy,
)

log = logging.getLogger(__name__)

UNCLASSIFIED = -1
INTRODUCTORY = 4
COLLECT = "collect"
SHARE = "share"
KIND_BY_CLASS = {FIRST_PARTY: COLLECT, THIRD_PARTY: SHARE}
MAX_PRACTICES = 2000
DECODER = "decoder"
VERIFIER = "verifier"

T = TypeVar("T")
R = TypeVar("R")


def _pmap(fn: Callable[[T], R], items: Sequence[T], max_workers: int) -> list[R]:
    if max_workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ClassifiedParagraph:
    unit_ref: str
    practice_class: int
    rationale: str
    start: int = 0
    end: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DecodedTuple:
    unit_ref: str
    kind: str
    tuple: PracticeTuple


@dataclass(frozen=True)
class MappedPractice:
    unit_ref: str
    practice_kind: str
    data_item: int
    purpose: int
    item_text: str
    source_tuple: PracticeTuple
    mapping_origin: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_tuple"] = self.source_tuple.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MappedPractice":
        return cls(
            unit_ref=d["unit_ref"],
            practice_kind=d["practice_kind"],
            data_item=int(d["data_item"]),
            purpose=int(d["purpose"]),
            item_text=d["item_text"],
            source_tuple=PracticeTuple.from_dict(d["source_tuple"]),
            mapping_origin=d["mapping_origin"],
        )


@dataclass(frozen=True)
class MappingValidation:
    batch_id: str
    verdict: str  # ok | count_mismatch | hallucination
    offending_indices: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"batch_id": self.batch_id, "verdict": self.verdict,
                "offending_indices": list(self.offending_indices)}


@dataclass(frozen=True)
class MappingRecord:
    """One keyword assignment, kept for provenance and verifier training."""

    text: str
    keyword: str
    task: str  # "item" | "purpose"
    origin: str


@dataclass
class PracticeMatrix:
    kind: str
    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_ITEMS, N_PURPOSES), dtype=np.int64))

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_ITEMS, N_PURPOSES):
            raise ValueError(f"matrix must be {N_ITEMS}x{N_PURPOSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PracticeMatrix)
            and self.kind == other.kind
            and np.array_equal(self.counts, other.counts)
        )


@dataclass
class MappingCounters:
    decoded_items: int = 0
    decoder_mapped: int = 0
    verifier_mapped: int = 0
    negatives: int = 0
    truncated: int = 0

    def balanced(self) -> bool:
        return self.decoded_items == self.decoder_mapped + self.verifier_mapped + self.negatives


@dataclass
class MappingResult:
    practices: list[MappedPractice]
    validations: list[MappingValidation]
    records: list[MappingRecord]
    counters: MappingCounters
    notes: list[Note] = field(default_factory=list)


# -- classification ---------------------------------------------------------


def classify_policy(
    units: Sequence[ParagraphUnit],
    backend: Backend,
    *,
    attempts: int = 2,
    max_workers: int = 1,
    notes: list[Note] | None = None,
) -> list[ClassifiedParagraph]:
    if not units:
        raise ValueError("classify_policy needs at least one unit")
    notes = notes if notes is not None else []

    def one(unit: ParagraphUnit) -> tuple[ClassifiedParagraph, Note | None]:
        if not unit.text.strip():
            return ClassifiedParagraph(unit.unit_id, INTRODUCTORY, "", unit.start, unit.end), None
        error = ""
        for _ in range(attempts):
            try:
                cls, rationale = backend.classify_paragraph(unit.text)
            except BackendError as exc:
                error = str(exc)
                continue
            note = None
            if rationale not in unit.text:
                note = Note("classify", "rationale_dropped", unit.unit_id)
                rationale = ""
            if not 0 <= cls < N_CLASSES:
                error = f"class index {cls} out of range"
                continue
            return ClassifiedParagraph(unit.unit_id, cls, rationale, unit.start, unit.end), note
        return (
            ClassifiedParagraph(unit.unit_id, UNCLASSIFIED, "", unit.start, unit.end),
            Note("classify", "unclassified", f"{unit.unit_id}: {error}"),
        )

    results = _pmap(one, list(units), max_workers)
    notes.extend(n for _, n in results if n is not None)
    return [c for c, _ in results]


# -- decoding ---------------------------------------------------------------


def decode_policy(
    classified: Sequence[ClassifiedParagraph],
    units: Sequence[ParagraphUnit],
    backend: Backend,
    *,
    max_workers: int = 1,
    notes: list[Note] | None = None,
) -> list[DecodedTuple]:
    """Decode first-party and third-party units only; order follows the units."""
    notes = notes if notes is not None else []
    by_ref = {u.unit_id: u for u in units}
    targets = [c for c in classified if c.practice_class in KIND_BY_CLASS]

    def one(c: ClassifiedParagraph) -> tuple[list[DecodedTuple], Note | None]:
        text = by_ref[c.unit_ref].text
        kind = KIND_BY_CLASS[c.practice_class]
        error = ""
        for _ in range(2):
            try:
                tuples = backend.decode_elements(text)
            except BackendError as exc:
                error = str(exc)
                continue
            return [DecodedTuple(c.unit_ref, kind, t) for t in tuples if t.data.strip()], None
        return [], Note("decode", "decode_skipped", f"{c.unit_ref}: {error}")

    results = _pmap(one, targets, max_workers)
    notes.extend(n for _, n in results if n is not None)
    return [d for ds, _ in results for d in ds]


# -- mapping ----------------------------------------------------------------

_BULLET = re.compile(r"^[\s\-*•·–]+")
_LEAD_CONJ = re.compile(r"^(?:and|or)\s+", re.I)
_SPLIT = re.compile(r"[,;]|\s+and\s+", re.I)


def _protected_phrases() -> list[str]:
    lx = default_lexicon()
    return sorted((p for p in lx.item_synonyms if " and " in p), key=len, reverse=True)


def split_items(data: str, protected: Iterable[str] | None = None) -> list[str]:
    """Split a decoded data field into individual item strings.

    Lexicon phrases that contain " and " are kept whole.
    """
    protected = list(_protected_phrases() if protected is None else protected)
    guarded = data
    slots: list[str] = []
    for phrase in protected:
        pattern = re.compile(re.escape(phrase).replace(r"\ ", r"\s+"), re.I)

        def stash(m: re.Match) -> str:
            slots.append(m.group(0))
            return f"\x00{len(slots) - 1}\x00"

        guarded = pattern.sub(stash, guarded)
    out = []
    for part in _SPLIT.split(guarded):
        part = re.sub(r"\x00(\d+)\x00", lambda m: slots[int(m.group(1))], part)
        part = _LEAD_CONJ.sub("", _BULLET.sub("", part)).strip()
        if part:
            out.append(part)
    return out


def validate_batch(
    items: Sequence[str],
    outputs: Sequence[str] | None,
    vocabulary: Vocabulary,
    batch_id: str,
    taxonomy: Taxonomy | None = None,
) -> MappingValidation:
    taxonomy = taxonomy or default_taxonomy()
    if outputs is None or len(outputs) != len(items):
        return MappingValidation(batch_id, "count_mismatch", tuple(range(len(items))))
    bad = tuple(i for i, o in enumerate(outputs) if taxonomy.lookup(o, vocabulary) is None)
    if bad:
        return MappingValidation(batch_id, "hallucination", bad)
    return MappingValidation(batch_id, "ok")


def map_strings(
    strings: Sequence[str],
    vocabulary: Vocabulary,
    backend: Backend,
    *,
    batch_size: int = MAX_BATCH,
    label: str = "",
    taxonomy: Taxonomy | None = None,
) -> tuple[list[int], list[str], list[MappingValidation]]:
    """Batched mapping with validation; failed indices go through the verifier.

    Returns taxonomy indices, origins and per-batch validations.
    """
    taxonomy = taxonomy or default_taxonomy()
    if not 1 <= batch_size <= MAX_BATCH:
        raise ValueError(f"batch_size must be within 1..{MAX_BATCH}")
    indices: list[int] = []
    origins: list[str] = []
    validations: list[MappingValidation] = []
    for b, start in enumerate(range(0, len(strings), batch_size)):
        batch = list(strings[start:start + batch_size])
        try:
            outputs: list[str] | None = list(backend.map_keywords_batch(batch, vocabulary))
        except BackendError as exc:
            log.info("mapping batch %s failed: %s", b, exc)
            outputs = None
        v = validate_batch(batch, outputs, vocabulary, f"{label}{b}", taxonomy)
        validations.append(v)
        bad = set(v.offending_indices)
        for i, text in enumerate(batch):
            if i in bad:
                idx = taxonomy.lookup(backend.verify_keyword(text, vocabulary), vocabulary)
                if idx is None:  # a verifier must be total; fall back to the sentinel
                    idx = GENERIC if vocabulary is Vocabulary.ITEMS else OTHER_PURPOSE
                indices.append(idx)
                origins.append(VERIFIER)
            else:
                indices.append(taxonomy.lookup(outputs[i], vocabulary))  # type: ignore[index,arg-type]
                origins.append(DECODER)
    return indices, origins, validations


def map_and_validate(
    decoded: Sequence[DecodedTuple],
    backend: Backend,
    batch_size: int = MAX_BATCH,
    *,
    taxonomy: Taxonomy | None = None,
    max_practices: int = MAX_PRACTICES,
) -> MappingResult:
    taxonomy = taxonomy or default_taxonomy()
    notes: list[Note] = []
    counters = MappingCounters()

    item_rows: list[tuple[int, str]] = []  # (decoded index, item text)
    for n, d in enumerate(decoded):
        for item in split_items(d.tuple.data):
            item_rows.append((n, item))
    counters.decoded_items = len(item_rows)

    purpose_rows = [(n, d.tuple.purpose.strip()) for n, d in enumerate(decoded) if d.tuple.purpose.strip()]

    item_idx, item_origin, item_val = map_strings(
        [t for _, t in item_rows], Vocabulary.ITEMS, backend,
        batch_size=batch_size, label="items.", taxonomy=taxonomy,
    )
    purpose_idx, purpose_origin, purpose_val = map_strings(
        [t for _, t in purpose_rows], Vocabulary.PURPOSES, backend,
        batch_size=batch_size, label="purposes.", taxonomy=taxonomy,
    )

    records: list[MappingRecord] = []
    purpose_of: dict[int, int] = {}
    for (n, text), idx, origin in zip(purpose_rows, purpose_idx, purpose_origin):
        purpose_of[n] = idx
        records.append(MappingRecord(text, taxonomy.purpose_keyword(idx), "purpose", origin))

    practices: list[MappedPractice] = []
    for (n, text), idx, origin in zip(item_rows, item_idx, item_origin):
        keyword = taxonomy.vocabulary_keywords(Vocabulary.ITEMS)[idx]
        records.append(MappingRecord(text, keyword, "item", origin))
        if idx == NEGATIVE:
            counters.negatives += 1
            continue
        if origin == DECODER:
            counters.decoder_mapped += 1
        else:
            counters.verifier_mapped += 1
        d = decoded[n]
        practices.append(
            MappedPractice(
                unit_ref=d.unit_ref,
                practice_kind=d.kind,
                data_item=idx,
                purpose=purpose_of.get(n, OTHER_PURPOSE),
                item_text=text,
                source_tuple=d.tuple,
                mapping_origin=origin,
            )
        )

    if len(practices) > max_practices:
        counters.truncated = len(practices) - max_practices
        notes.append(Note("extract", "practices_truncated",
                          f"kept {max_practices} of {len(practices)} mapped practices"))
        log.warning("truncating %d mapped practices to %d", len(practices), max_practices)
        practices = practices[:max_practices]

    for v in item_val + purpose_val:
        if v.verdict != "ok":
            notes.append(Note("map", v.verdict, f"batch {v.batch_id}: {len(v.offending_indices)} re-routed"))
    return MappingResult(practices, item_val + purpose_val, records, counters, notes)


def build_matrices(mapped: Iterable[MappedPractice]) -> tuple[PracticeMatrix, PracticeMatrix]:
    collect = np.zeros((N_ITEMS, N_PURPOSES), dtype=np.int64)
    share = np.zeros((N_ITEMS, N_PURPOSES), dtype=np.int64)
    for m in mapped:
        if m.data_item == NEGATIVE:
            continue
        grid = collect if m.practice_kind == COLLECT else share
        grid[m.data_item, m.purpose] += 1
    return PracticeMatrix(COLLECT, collect), PracticeMatrix(SHARE, share)


# -- verifier corpus and structure -----------------------------------------


def export_verifier_corpus(
    records: Iterable[MappingRecord], out: str | Path, policy_id: str = "", *, append: bool = False
) -> int:
    """Write decoder-origin mappings as JSON Lines; returns the record count."""
    n = 0
    with open(out, "a" if append else "w", encoding="utf-8") as fh:
        for r in records:
            if r.origin != DECODER:
                continue
            row = {"text": r.text, "keyword": r.keyword, "task": r.task, "policy_id": policy_id}
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_verifier_corpus(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def completeness_profile(
    classified: Sequence[ClassifiedParagraph], doc_length: int, bins: int = 100
) -> np.ndarray:
    """bins x classes counts of unit midpoints over the normalized document."""
    if bins < 1:
        raise ValueError("bins must be positive")
    profile = np.zeros((bins, N_CLASSES), dtype=np.int64)
    for c in classified:
        if c.practice_class == UNCLASSIFIED:
            continue
        mid = (c.start + c.end) / 2
        x = mid / doc_length if doc_length > 0 else 0.0
        profile[min(max(int(x * bins), 0), bins - 1), c.practice_class] += 1
    return profile


@dataclass
class ExtractionResult:
    classified: list[ClassifiedParagraph]
    decoded: list[DecodedTuple]
    mapping: MappingResult
    collect: PracticeMatrix
    share: PracticeMatrix
    notes: list[Note]


def extract_policy(
    units: Sequence[ParagraphUnit],
    backend: Backend,
    *,
    batch_size: int = MAX_BATCH,
    max_workers: int = 1,
    taxonomy: Taxonomy | None = None,
) -> ExtractionResult:
    notes: list[Note] = []
    classified = classify_policy(units, backend, max_workers=max_workers, notes=notes)
    decoded = decode_policy(classified, units, backend, max_workers=max_workers, notes=notes)
    mapping = map_and_validate(decoded, backend, batch_size, taxonomy=taxonomy)
    notes.extend(mapping.notes)
    collect, share = build_matrices(mapping.practices)
    return ExtractionResult(classified, decoded, mapping, collect, share, notes)
