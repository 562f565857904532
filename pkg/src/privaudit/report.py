"""End-to-end app audit, the report schema, and HTML rendering."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx
import jinja2
import numpy as np

from . import __version__
from .backends import Backend
from .config import RunConfig
from .corpus import AuditFlags, audit_flags
from .datasafety import DsDeclaration, load_ds
from .evidence import EvidenceSet, build_evidence, load_api_refs, load_manifest
from .extraction import (
    UNCLASSIFIED,
    ExtractionResult,
    PracticeMatrix,
    extract_policy,
)
from .ingest import (
    FetchRecord,
    PolicyDocument,
    admit_policy,
    document_from_fetch,
    document_from_file,
    fetch_policy,
)
from .metrics import ComplianceScores, item_set, purpose_agreement, score_sets
from .notes import Note, StageError
from .segmenter import HeadingSet, ParagraphUnit, merge_paragraphs, segment_text, split_sections
from .taxonomy import N_ITEMS, N_PURPOSES, Taxonomy

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
KINDS = ("collect", "share")


class SchemaVersionError(ValueError):
    def __init__(self, found: str):
        super().__init__(f"report schema version {found!r} is not supported (expected {SCHEMA_VERSION!r})")
        self.found = found


@dataclass
class ComplianceReport:
    app_id: str
    policy_id: str
    source_url: str
    config_digest: str
    admission: dict[str, Any]
    pp_available: bool
    ds_available: bool
    matrices: dict[str, list[list[int]] | None]
    item_sets: dict[str, list[int] | None]
    scores: ComplianceScores
    purpose_agreement: dict[str, dict[str, list[list[bool]]]]
    flags: AuditFlags
    headings: dict[str, Any] = field(default_factory=dict)
    units: list[dict[str, Any]] = field(default_factory=list)
    practices: list[dict[str, Any]] = field(default_factory=list)
    mappings: list[dict[str, str]] = field(default_factory=list)
    validations: list[dict[str, Any]] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    ds: dict[str, Any] | None = None
    evidence: dict[str, Any] | None = None
    notes: list[Note] = field(default_factory=list)
    tool_version: str = __version__
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["scores"] = self.scores.to_dict()
        d["flags"] = self.flags.to_dict()
        d["notes"] = [n.to_dict() for n in self.notes]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ComplianceReport":
        found = str(d.get("schema_version"))
        if found != SCHEMA_VERSION:
            raise SchemaVersionError(found)
        d = dict(d)
        d["scores"] = ComplianceScores.from_dict(d["scores"])
        d["flags"] = AuditFlags.from_dict(d["flags"])
        d["notes"] = [Note.from_dict(n) for n in d.get("notes", [])]
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ComplianceReport":
        return cls.from_dict(json.loads(text))

    def matrix(self, name: str) -> np.ndarray | None:
        grid = self.matrices.get(name)
        return None if grid is None else np.array(grid, dtype=np.int64)


def recompute_scores(report: ComplianceReport, include_generic: bool = False) -> ComplianceScores:
    """Scores derived from the embedded matrices and evidence only."""

    def items(name: str):
        grid = report.matrix(name)
        return None if grid is None else item_set(grid, include_generic)

    evidence = None if report.evidence is None else set(report.evidence["items"])
    return score_sets(items("pp_collect"), items("pp_share"), items("ds_collect"), items("ds_share"), evidence)


# -- pipeline ----------------------------------------------------------------


def _is_url(source: str) -> bool:
    return bool(re.match(r"^https?://", source, re.I))


def load_policy(
    source: str | PolicyDocument, *, client: httpx.Client | None = None
) -> tuple[PolicyDocument, FetchRecord | None]:
    if isinstance(source, PolicyDocument):
        return source, None
    if _is_url(source):
        record = fetch_policy(source, client=client)
        return document_from_fetch(record), record
    try:
        return document_from_file(source), None
    except OSError as exc:
        raise StageError("ingest", f"cannot read policy {source}: {exc}") from None


def _segment(
    doc: PolicyDocument, backend: Backend, config: RunConfig, notes: list[Note]
) -> tuple[HeadingSet | None, list[ParagraphUnit]]:
    text = doc.plain_text
    try:
        headings, _, units = segment_text(
            text, backend, trials=config.heading_trials,
            min_len=config.min_unit_chars, max_workers=config.max_workers,
        )
        return headings, units
    except StageError as exc:
        notes.append(Note("segment", "headings_failed", exc.message))
        sections = split_sections(text, [])
        return None, [u for s in sections for u in merge_paragraphs(s, config.min_unit_chars)]


def _agreement(pp: np.ndarray | None, ds: np.ndarray | None, include_generic: bool) -> dict[str, list[list[bool]]]:
    if pp is None or ds is None:
        return {}
    both = item_set(pp, include_generic) & item_set(ds, include_generic)
    return {str(j): [list(p) for p in purpose_agreement(pp, ds, j)] for j in sorted(both)}


def run_app_audit(
    policy: str | PolicyDocument,
    ds: str | Path | DsDeclaration | None = None,
    *,
    manifest: str | Path | None = None,
    api_refs: str | Path | Sequence[str] | None = None,
    config: RunConfig | None = None,
    app_id: str | None = None,
    developer: str = "",
    redirect_chain: Sequence[str] | None = None,
    backend: Backend | None = None,
    client: httpx.Client | None = None,
) -> ComplianceReport:
    config = config or RunConfig()
    taxonomy: Taxonomy = config.taxonomy()
    backend = backend or config.make_backend()
    notes: list[Note] = []

    # ingest
    doc, record = load_policy(policy, client=client)
    chain = list(redirect_chain if redirect_chain is not None else (record.redirect_chain if record else []))
    admission = admit_policy(
        doc, max_text_bytes=config.max_text_bytes, min_language_confidence=config.language_confidence
    )
    for reason in admission.reasons:
        notes.append(Note("ingest", reason, "analysis continued on the available text"))

    # segment + extract
    headings: HeadingSet | None = None
    extraction: ExtractionResult | None = None
    units: list[ParagraphUnit] = []
    if doc.plain_text.strip():
        headings, units = _segment(doc, backend, config, notes)
        units_nonblank = [u for u in units if u.text.strip()]
        if units_nonblank:
            extraction = extract_policy(
                units_nonblank, backend, batch_size=config.batch_size,
                max_workers=config.max_workers, taxonomy=taxonomy,
            )
            notes.extend(extraction.notes)
            units = units_nonblank
    # text with no classifiable units is an empty but readable policy
    pp_available = bool(doc.plain_text.strip()) and (
        extraction is None or any(c.practice_class != UNCLASSIFIED for c in extraction.classified)
    )
    if not pp_available:
        notes.append(Note("extract", "pp_unavailable", "no paragraph could be classified; PP scores are n/a"))

    # data safety
    decl: DsDeclaration | None = None
    if isinstance(ds, DsDeclaration):
        decl = ds
    elif ds is not None:
        try:
            decl = load_ds(ds, notes, taxonomy)
        except OSError as exc:
            raise StageError("ds", f"cannot read Data Safety input {ds}: {exc}") from None
        except (ValueError, KeyError) as exc:
            raise StageError("ds", f"malformed Data Safety input {ds}: {exc}") from None
    if decl is None:
        notes.append(Note("ds", "ds_missing", "no Data Safety input; DS-dependent scores are n/a"))
    elif decl.unmapped_labels:
        notes.append(Note("ds", "unmapped_labels", ", ".join(decl.unmapped_labels)))

    # evidence
    evidence: EvidenceSet | None = None
    if manifest is not None or api_refs is not None:
        info = load_manifest(manifest) if manifest is not None else None
        refs = load_api_refs(api_refs) if isinstance(api_refs, (str, Path)) else list(api_refs or [])
        evidence = build_evidence(info, refs, taxonomy)
        notes.append(Note("evidence", "curated_api_map", "API evidence relies on a curated method-permission map"))

    # scores
    empty = PracticeMatrix("collect").counts
    pp_grids = {
        k: (getattr(extraction, k).counts if extraction else empty) if pp_available else None
        for k in KINDS
    }
    ds_grids = {k: (decl.grid(k) if decl is not None else None) for k in KINDS}

    def iset(grid):
        return None if grid is None else item_set(grid, config.include_generic)

    scores = score_sets(
        iset(pp_grids["collect"]), iset(pp_grids["share"]),
        iset(ds_grids["collect"]), iset(ds_grids["share"]),
        None if evidence is None else evidence.items,
    )

    unit_classes = []
    unit_rows = []
    if extraction is not None:
        by_ref = {u.unit_id: u for u in units}
        for c in extraction.classified:
            u = by_ref[c.unit_ref]
            unit_classes.append((c.practice_class, u.text))
            unit_rows.append({
                "unit_id": c.unit_ref, "section": u.section_ref, "start": u.start, "end": u.end,
                "practice_class": c.practice_class, "rationale": c.rationale,
            })
    flags = audit_flags(
        plain_text=doc.plain_text, unit_classes=unit_classes,
        admission_reasons=admission.reasons, redirect_chain=chain,
        developer=developer, placeholder_chars=config.placeholder_chars,
    )

    def as_list(grid):
        return None if grid is None else np.asarray(grid).astype(int).tolist()

    return ComplianceReport(
        app_id=app_id or doc.policy_id[:16],
        policy_id=doc.policy_id,
        source_url=doc.source_url if _is_url(doc.source_url) else Path(doc.source_url).name,
        config_digest=config.digest(),
        admission={"admitted": admission.admitted, "reasons": list(admission.reasons),
                   "language": list(doc.language_guess), "text_bytes": doc.text_bytes},
        pp_available=pp_available,
        ds_available=decl is not None,
        matrices={
            "pp_collect": as_list(pp_grids["collect"]), "pp_share": as_list(pp_grids["share"]),
            "ds_collect": as_list(ds_grids["collect"]), "ds_share": as_list(ds_grids["share"]),
        },
        item_sets={
            f"{side}_{k}": (None if g is None else sorted(item_set(g, config.include_generic)))
            for side, grids in (("pp", pp_grids), ("ds", ds_grids)) for k, g in grids.items()
        },
        scores=scores,
        purpose_agreement={k: _agreement(pp_grids[k], ds_grids[k], config.include_generic) for k in KINDS},
        flags=flags,
        headings={} if headings is None else {
            "trial_id": headings.trial_id,
            "headings": [list(h) for h in headings.headings],
            "section_length_mean": headings.section_length_mean,
            "section_length_std": headings.section_length_std,
        },
        units=unit_rows,
        practices=[p.to_dict() for p in extraction.mapping.practices] if extraction else [],
        mappings=[asdict(r) for r in extraction.mapping.records] if extraction else [],
        validations=[v.to_dict() for v in extraction.mapping.validations] if extraction else [],
        counters=asdict(extraction.mapping.counters) if extraction else {},
        ds=None if decl is None else {
            "records": [r.to_dict() for r in decl.records],
            "unmapped_labels": list(decl.unmapped_labels),
            "security": dict(decl.security),
            "provenance": [list(p) for p in decl.provenance],
        },
        evidence=None if evidence is None else evidence.to_dict(),
        notes=notes,
    )


# -- HTML --------------------------------------------------------------------


def _heat(value: int, peak: int) -> str:
    if value <= 0 or peak <= 0:
        return "#ffffff"
    shade = int(235 - 175 * value / peak)
    return f"rgb({shade},{shade},255)"


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value * 100:.1f}%"


def render_html(report: ComplianceReport | Mapping[str, Any], taxonomy: Taxonomy | None = None) -> str:
    if not isinstance(report, ComplianceReport):
        report = ComplianceReport.from_dict(report)
    from .taxonomy import default_taxonomy

    taxonomy = taxonomy or default_taxonomy()
    env = jinja2.Environment(
        loader=jinja2.FunctionLoader(
            lambda name: resources.files("privaudit").joinpath(f"data/{name}").read_text("utf-8")
        ),
        autoescape=True,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    env.filters["pct"] = _fmt

    tables = []
    for name in ("pp_collect", "ds_collect", "pp_share", "ds_share"):
        grid = report.matrix(name)
        if grid is None:
            tables.append({"name": name, "missing": True})
            continue
        peak = int(grid.max()) if grid.size else 0
        rows = [
            {"label": taxonomy.item_keyword(j),
             "cells": [{"value": int(grid[j, k]), "color": _heat(int(grid[j, k]), peak)} for k in range(N_PURPOSES)]}
            for j in range(N_ITEMS)
        ]
        tables.append({"name": name, "missing": False, "rows": rows})

    return env.get_template("report.html.j2").render(
        report=report,
        scores=report.scores.to_dict(),
        tables=tables,
        purposes=list(taxonomy.purposes),
        classes=list(taxonomy.practice_classes),
        item_names=list(taxonomy.data_items),
        flags=report.flags.to_dict(),
    )
