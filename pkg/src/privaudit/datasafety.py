"""Play Store Data Safety pages: structural records and binary grids."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from bs4 import BeautifulSoup, NavigableString, Tag
from bs4.element import Comment, Declaration, Doctype, ProcessingInstruction

from .notes import Note
from .taxonomy import N_ITEMS, N_PURPOSES, OTHER_PURPOSE, Taxonomy, default_taxonomy, normalize_keyword

log = logging.getLogger(__name__)

DATA_SHARED = "Data Shared"
DATA_COLLECTED = "Data Collected"
SECURITY = "Security Practices"
_PRACTICES = {"data shared": DATA_SHARED, "data collected": DATA_COLLECTED, "security practices": SECURITY}
_KIND = {DATA_COLLECTED: "collect", DATA_SHARED: "share"}

_DETAIL = re.compile(r"^data (?:shared|collected)\b.*\bpurposes?\b", re.I)
_SKIP_STRINGS = {"optional"}
_NEGATED = re.compile(r"\b(?:isn't|is not|not|no|can't|cannot|doesn't)\b", re.I)

# Google's purpose labels, matched as whole labels before comma splitting
PURPOSE_ALIASES = {
    "app functionality": 6,
    "analytics": 0,
    "developer communications": 1,
    "developer communication": 1,
    "advertising or marketing": 3,
    "advertising": 3,
    "fraud prevention, security, and compliance": 2,
    "fraud prevention, security and compliance": 2,
    "fraud prevention/security": 2,
    "personalization": 4,
    "personalisation": 4,
    "account management": 5,
    "other": 7,
}
_ALIAS_RE = re.compile(
    "|".join(
        r"(?<!\w)" + re.escape(a).replace(r"\ ", r"\s+") + r"(?!\w)"
        for a in sorted(PURPOSE_ALIASES, key=len, reverse=True)
    ),
    re.I,
)


@dataclass(frozen=True)
class DsRecord:
    d_prac: str
    d_cata: str
    d_detl: str
    d_valu: str
    group: str = ""  # enclosing category heading, provenance only

    def __post_init__(self) -> None:
        for name in ("d_prac", "d_cata", "d_detl", "d_valu"):
            if not getattr(self, name).strip():
                raise ValueError(f"DsRecord.{name} must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DsRecord":
        return cls(d["d_prac"], d["d_cata"], d["d_detl"], d["d_valu"], d.get("group", ""))

    def tagged(self) -> str:
        return "\n".join(
            f"<{k}> {getattr(self, k)}" for k in ("d_prac", "d_cata", "d_detl", "d_valu")
        )


def _zeros() -> np.ndarray:
    return np.zeros((N_ITEMS, N_PURPOSES), dtype=np.uint8)


@dataclass
class DsDeclaration:
    collect: np.ndarray = field(default_factory=_zeros)
    share: np.ndarray = field(default_factory=_zeros)
    security: dict[str, bool | None] = field(
        default_factory=lambda: {"deletion_requestable": None, "encrypted_in_transit": None}
    )
    unmapped_labels: list[str] = field(default_factory=list)
    records: list[DsRecord] = field(default_factory=list)
    # (kind, item, purpose, record index); index -1 marks grids given directly
    provenance: list[tuple[str, int, int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.collect = np.asarray(self.collect, dtype=np.uint8)
        self.share = np.asarray(self.share, dtype=np.uint8)
        for g in (self.collect, self.share):
            if g.shape != (N_ITEMS, N_PURPOSES):
                raise ValueError(f"DS grid must be {N_ITEMS}x{N_PURPOSES}")
            if (g > 1).any():
                raise ValueError("DS grids are binary")

    def grid(self, kind: str) -> np.ndarray:
        return self.collect if kind == "collect" else self.share

    def sources(self, kind: str, item: int, purpose: int) -> list[int]:
        return [r for k, j, p, r in self.provenance if (k, j, p) == (kind, item, purpose)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "collect": self.collect.tolist(),
            "share": self.share.tolist(),
            "security": dict(self.security),
            "unmapped_labels": list(self.unmapped_labels),
            "records": [r.to_dict() for r in self.records],
            "provenance": [list(p) for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DsDeclaration":
        decl = cls(
            collect=np.array(d["collect"]),
            share=np.array(d["share"]),
            security=dict(d.get("security") or {"deletion_requestable": None, "encrypted_in_transit": None}),
            unmapped_labels=list(d.get("unmapped_labels", [])),
            records=[DsRecord.from_dict(r) for r in d.get("records", [])],
            provenance=[tuple(p) for p in d.get("provenance", [])],  # type: ignore[misc]
        )
        if not decl.provenance:
            for kind in ("collect", "share"):
                for j, p in np.argwhere(decl.grid(kind)):
                    decl.provenance.append((kind, int(j), int(p), -1))
        return decl

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, DsDeclaration)
            and np.array_equal(self.collect, other.collect)
            and np.array_equal(self.share, other.share)
            and self.security == other.security
            and self.unmapped_labels == other.unmapped_labels
        )


# -- HTML -------------------------------------------------------------------

_IGNORED_STRINGS = (Comment, Declaration, Doctype, ProcessingInstruction)


def _text(tag: Tag) -> str:
    return " ".join(tag.get_text(" ", strip=True).split())


def _flush(practice: str, group: str, buf: list[str], out: list[DsRecord]) -> None:
    if practice == SECURITY:
        if group and buf:
            value = "false" if _NEGATED.search(group) else "true"
            out.append(DsRecord(SECURITY, group, " ".join(buf), value, group))
        return
    used = -1
    for i, s in enumerate(buf):
        if not _DETAIL.match(s) or i + 1 >= len(buf):
            continue
        dtype = ""
        for k in range(i - 1, used, -1):
            if buf[k].casefold() not in _SKIP_STRINGS and not _DETAIL.match(buf[k]):
                dtype = buf[k]
                break
        dtype = dtype or group
        if dtype:
            out.append(DsRecord(practice, dtype, s, buf[i + 1], group))
        used = i + 1


def sanitize_ds_html(html: str | bytes, notes: list[Note] | None = None) -> list[DsRecord]:
    """Records in document order, one per (practice, type, detail, value) path."""
    soup = BeautifulSoup(html, "html.parser")
    records: list[DsRecord] = []
    practice: str | None = None
    group = ""
    buf: list[str] = []
    seen_section = False
    for node in soup.descendants:
        if isinstance(node, Tag):
            if node.name == "h2":
                if practice:
                    _flush(practice, group, buf, records)
                practice = _PRACTICES.get(normalize_keyword(_text(node)))
                seen_section = seen_section or practice is not None
                group, buf = "", []
            elif node.name == "h3" and practice:
                _flush(practice, group, buf, records)
                group, buf = _text(node), []
        elif isinstance(node, NavigableString) and not isinstance(node, _IGNORED_STRINGS):
            if practice is None or node.find_parent(["h2", "h3", "script", "style"]):
                continue
            s = " ".join(node.split())
            if s:
                buf.append(s)
    if practice:
        _flush(practice, group, buf, records)
    if not seen_section:
        log.warning("no Data Safety sections recognized")
        if notes is not None:
            notes.append(Note("ds", "unrecognized_layout", "no Data shared/collected/Security headings"))
    return records


def tagged_dump(records: Iterable[DsRecord]) -> str:
    return "\n\n".join(r.tagged() for r in records) + "\n"


# -- normalization ----------------------------------------------------------


def parse_purposes(value: str) -> tuple[list[int], list[str]]:
    """Purpose ids found in a DS value string, plus leftover labels."""
    found = [PURPOSE_ALIASES[normalize_keyword(m.group(0))] for m in _ALIAS_RE.finditer(value)]
    rest = _ALIAS_RE.sub(",", value)
    leftovers = [p.strip() for p in re.split(r",|\band\b", rest) if p.strip(" .")]
    return sorted(set(found)), leftovers


def normalize_ds(records: Iterable[DsRecord], taxonomy: Taxonomy | None = None) -> DsDeclaration:
    taxonomy = taxonomy or default_taxonomy()
    decl = DsDeclaration()
    records = list(records)
    decl.records = records
    unmapped: list[str] = []
    bits: set[tuple[str, int, int, int]] = set()
    for n, r in enumerate(records):
        prac = _PRACTICES.get(normalize_keyword(r.d_prac))
        if prac == SECURITY:
            key = normalize_keyword(r.d_cata)
            flag = r.d_valu.strip().lower() == "true"
            if "encrypt" in key:
                decl.security["encrypted_in_transit"] = flag
            elif "delet" in key:
                decl.security["deletion_requestable"] = flag
            continue
        if prac is None:
            unmapped.append(r.d_prac)
            continue
        kind = _KIND[prac]
        item = taxonomy.ds_category(r.d_cata)
        if item is None and r.group:
            item = taxonomy.ds_category(r.group)
        if item is None:
            unmapped.append(r.d_cata)
            continue
        purposes, leftovers = parse_purposes(r.d_valu)
        unmapped.extend(leftovers)
        if not purposes:
            purposes = [OTHER_PURPOSE]
        for p in purposes:
            decl.grid(kind)[item, p] = 1
            bits.add((kind, item, p, n))
    decl.provenance = sorted(bits)
    decl.unmapped_labels = list(dict.fromkeys(unmapped))
    return decl


def load_ds(path: str | Path, notes: list[Note] | None = None, taxonomy: Taxonomy | None = None) -> DsDeclaration:
    """HTML page, full-grid JSON, or JSON records list."""
    raw = Path(path).read_bytes()
    stripped = raw.lstrip()
    if stripped[:1] in (b"{", b"["):
        data = json.loads(raw)
        if isinstance(data, list):
            return normalize_ds([DsRecord.from_dict(r) for r in data], taxonomy)
        if "collect" in data:
            return DsDeclaration.from_dict(data)
        return normalize_ds([DsRecord.from_dict(r) for r in data["records"]], taxonomy)
    return normalize_ds(sanitize_ds_html(raw, notes), taxonomy)
