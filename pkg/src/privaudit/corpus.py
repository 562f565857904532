"""Cross-app analyses: policy reuse, super-DS, purpose IoU, trends, audit flags."""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .datasafety import DsDeclaration
from .metrics import Ratio, item_set, purpose_agreement
from .taxonomy import CONTACT, FIRST_PARTY, N_ITEMS, N_PURPOSES, THIRD_PARTY

PLACEHOLDER_CHARS = 400
TREND_WINDOW = 50

_PROPER = re.compile(r"\b[A-Z][A-Za-z0-9&'-]*")
_NAME_TOKEN = re.compile(r"[a-z0-9]+")
# capitalized words that say nothing about who wrote the policy
_COMMON_CAPS = frozenset(
    "about address apps contact data email games have information please policy privacy "
    "questions regarding support team terms this that these those what when where which with "
    "your company limited corp corporation".split()
)


@dataclass(frozen=True)
class AppMeta:
    app_id: str
    downloads: int = 0
    developer: str = ""
    policy_url: str = ""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AppMeta":
        return cls(str(d["app_id"]), int(d.get("downloads", 0)), d.get("developer", ""), d.get("policy_url", ""))


@dataclass(frozen=True)
class ReuseGroup:
    key: str  # policy_id or URL
    member_app_ids: tuple[str, ...]
    representative_app: str

    def to_dict(self) -> dict[str, Any]:
        return {"key": self.key, "member_app_ids": list(self.member_app_ids),
                "representative_app": self.representative_app}


def _representative(members: Iterable[str], downloads: Mapping[str, int]) -> str:
    return min(members, key=lambda a: (-downloads.get(a, 0), a))


def _group(keys: Mapping[str, str], downloads: Mapping[str, int]) -> list[ReuseGroup]:
    buckets: dict[str, list[str]] = defaultdict(list)
    for app, key in keys.items():
        buckets[key].append(app)
    groups = [
        ReuseGroup(key, tuple(sorted(apps)), _representative(apps, downloads))
        for key, apps in buckets.items()
    ]
    return sorted(groups, key=lambda g: (-len(g.member_app_ids), g.key))


def detect_reuse(
    policies: Mapping[str, str], app_index: Mapping[str, AppMeta]
) -> tuple[list[ReuseGroup], list[ReuseGroup]]:
    """Content groups keyed by policy_id, plus URL groups for comparison.

    ``policies`` maps app id to policy id.
    """
    downloads = {a: m.downloads for a, m in app_index.items()}
    by_content = _group(policies, downloads)
    urls = {a: app_index[a].policy_url for a in policies if a in app_index and app_index[a].policy_url}
    return by_content, _group(urls, downloads)


def super_data_safety(declarations: Sequence[DsDeclaration]) -> DsDeclaration:
    if not declarations:
        raise ValueError("super_data_safety needs at least one declaration")
    out = DsDeclaration(
        collect=np.bitwise_or.reduce([d.collect for d in declarations]),
        share=np.bitwise_or.reduce([d.share for d in declarations]),
    )
    for key in out.security:
        values = [d.security.get(key) for d in declarations]
        out.security[key] = True if True in values else (False if False in values else None)
    offset = 0
    for d in declarations:
        out.unmapped_labels.extend(d.unmapped_labels)
        out.records.extend(d.records)
        out.provenance.extend((k, j, p, r + offset if r >= 0 else r) for k, j, p, r in d.provenance)
        offset += len(d.records)
    return out


def corpus_purpose_iou(pairs: Iterable[tuple[Any, Any]]) -> np.ndarray:
    """23x8 IoU of purpose indicators; NaN where no pair contributes.

    Each pair is (PP counts, DS binary grid) for one practice kind. A pair
    counts for item j only when j is present on both sides.
    """
    inter = np.zeros((N_ITEMS, N_PURPOSES), dtype=np.int64)
    union = np.zeros((N_ITEMS, N_PURPOSES), dtype=np.int64)
    for pp, ds in pairs:
        for j in sorted(item_set(pp) & item_set(ds)):
            for k, (a, b) in enumerate(purpose_agreement(pp, ds, j)):
                inter[j, k] += a and b
                union[j, k] += a or b
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), np.nan)


def iou_to_list(grid: np.ndarray) -> list[list[Ratio]]:
    return [[None if math.isnan(v) else float(v) for v in row] for row in grid]


@dataclass
class TrendSeries:
    window: int
    ranks: list[int]
    mean: list[Ratio]
    std: list[Ratio]
    band: float = 0.5

    @property
    def lower(self) -> list[Ratio]:
        return [None if m is None else m - self.band * s for m, s in zip(self.mean, self.std)]

    @property
    def upper(self) -> list[Ratio]:
        return [None if m is None else m + self.band * s for m, s in zip(self.mean, self.std)]

    def to_dict(self) -> dict[str, Any]:
        return {"window": self.window, "band": self.band, "ranks": self.ranks,
                "mean": self.mean, "std": self.std, "lower": self.lower, "upper": self.upper}


def moving_average_trend(scores: Sequence[Ratio], window: int = TREND_WINDOW) -> TrendSeries:
    """Centered sliding mean/std over scores ordered by downloads (rank 0 first).

    The window [i - w//2, i - w//2 + w) is clipped to the data and NA values
    are skipped, so it shrinks at the edges.
    """
    if not scores:
        raise ValueError("moving_average_trend needs at least one score")
    if window < 1:
        raise ValueError("window must be positive")
    n = len(scores)
    means: list[Ratio] = []
    stds: list[Ratio] = []
    for i in range(n):
        lo = max(0, i - window // 2)
        hi = min(n, i - window // 2 + window)
        xs = [float(x) for x in scores[lo:hi] if x is not None]
        if not xs:
            means.append(None)
            stds.append(None)
            continue
        c = xs[0]
        m = c + math.fsum(x - c for x in xs) / len(xs)
        means.append(m)
        stds.append(math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs)))
    return TrendSeries(window, list(range(n)), means, stds)


@dataclass
class AuditFlags:
    redirected: bool = False
    placeholder_content: bool = False
    name_mismatch: bool = False
    empty_policy: bool = False
    non_english: bool = False
    evidence: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AuditFlags":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @property
    def raised(self) -> list[str]:
        return [k for k, v in asdict(self).items() if v is True]


def _name_tokens(text: str) -> set[str]:
    return {t for t in _NAME_TOKEN.findall(text.casefold()) if len(t) >= 4}


def contact_names(contact_texts: Iterable[str]) -> set[str]:
    toks: set[str] = set()
    for text in contact_texts:
        for m in _PROPER.finditer(text):
            toks |= {t for t in _name_tokens(m.group(0)) if t not in _COMMON_CAPS}
    return toks


def audit_flags(
    *,
    plain_text: str,
    unit_classes: Sequence[tuple[int, str]],
    admission_reasons: Sequence[str] = (),
    redirect_chain: Sequence[str] = (),
    developer: str = "",
    placeholder_chars: int = PLACEHOLDER_CHARS,
) -> AuditFlags:
    """``unit_classes`` pairs each unit's practice class with its text."""
    flags = AuditFlags()
    if len(redirect_chain) > 1:
        flags.redirected = True
        flags.evidence["redirected"] = " -> ".join(redirect_chain)

    practice_units = sum(1 for c, _ in unit_classes if c in (FIRST_PARTY, THIRD_PARTY))
    n_chars = len(plain_text.strip())
    if n_chars < placeholder_chars or practice_units == 0:
        flags.placeholder_content = True
        flags.evidence["placeholder_content"] = (
            f"{n_chars} characters of text, {practice_units} collection/sharing paragraphs"
        )

    dev_tokens = _name_tokens(developer)
    names = contact_names(t for c, t in unit_classes if c == CONTACT)
    if dev_tokens and names and not dev_tokens & names:
        flags.name_mismatch = True
        flags.evidence["name_mismatch"] = (
            f"developer tokens {sorted(dev_tokens)} vs contact names {sorted(names)}"
        )

    if "empty" in admission_reasons:
        flags.empty_policy = True
        flags.evidence["empty_policy"] = "no text after HTML conversion"
    if "non_english" in admission_reasons:
        flags.non_english = True
        flags.evidence["non_english"] = "language check did not accept the text as English"
    return flags


SCORE_NAMES = ("pp_collect", "pp_share", "ds_collect", "ds_share", "evidence_vs_pp", "evidence_vs_ds")


def _grid(report: Mapping[str, Any], name: str) -> np.ndarray | None:
    g = report["matrices"].get(name)
    return None if g is None else np.array(g, dtype=np.int64)


def _mean(values: Iterable[Ratio]) -> Ratio:
    xs = [v for v in values if v is not None]
    return math.fsum(xs) / len(xs) if xs else None


def corpus_summary(
    reports: Sequence[Mapping[str, Any]],
    metadata: Mapping[str, AppMeta],
    *,
    window: int = TREND_WINDOW,
) -> dict[str, Any]:
    """Aggregate per-app report dicts. Output ordering is deterministic."""
    from .metrics import score_sets

    by_app = {r["app_id"]: r for r in sorted(reports, key=lambda r: r["app_id"])}
    downloads = {a: metadata[a].downloads if a in metadata else 0 for a in by_app}
    content_groups, url_groups = detect_reuse({a: r["policy_id"] for a, r in by_app.items()},
                                              {a: metadata.get(a, AppMeta(a)) for a in by_app})

    reps = [g.representative_app for g in content_groups]
    means_all = {s: _mean(by_app[a]["scores"][s] for a in by_app) for s in SCORE_NAMES}
    means_rep = {s: _mean(by_app[a]["scores"][s] for a in reps) for s in SCORE_NAMES}

    super_rows = []
    for g in content_groups:
        members = [by_app[a] for a in g.member_app_ids if by_app[a]["ds_available"]]
        rep = by_app[g.representative_app]
        if len(g.member_app_ids) < 2 or not members or not rep["pp_available"]:
            continue
        decl = super_data_safety([
            DsDeclaration(collect=_grid(m, "ds_collect"), share=_grid(m, "ds_share")) for m in members
        ])
        sc = score_sets(
            item_set(_grid(rep, "pp_collect")), item_set(_grid(rep, "pp_share")),
            item_set(decl.collect), item_set(decl.share),
        )
        super_rows.append({"policy_id": g.key, "representative_app": g.representative_app,
                           "members": list(g.member_app_ids), "scores": sc.to_dict(),
                           "representative_scores": {s: rep["scores"][s] for s in SCORE_NAMES}})

    iou = {}
    for kind in ("collect", "share"):
        pairs = [
            (_grid(r, f"pp_{kind}"), _grid(r, f"ds_{kind}"))
            for r in by_app.values() if r["pp_available"] and r["ds_available"]
        ]
        iou[kind] = iou_to_list(corpus_purpose_iou(pairs))

    ranked = sorted(by_app, key=lambda a: (-downloads[a], a))
    trends = {s: moving_average_trend([by_app[a]["scores"][s] for a in ranked], window).to_dict()
              for s in SCORE_NAMES} if ranked else {}

    flags = {a: [k for k in ("redirected", "placeholder_content", "name_mismatch", "empty_policy", "non_english")
                 if by_app[a]["flags"].get(k)] for a in by_app}
    return {
        "apps": len(by_app),
        "ranked_apps": ranked,
        "scores": {a: by_app[a]["scores"] for a in by_app},
        "mean_scores": means_all,
        "mean_scores_representatives": means_rep,
        "reuse_groups": [g.to_dict() for g in content_groups],
        "url_groups": [g.to_dict() for g in url_groups],
        "super_data_safety": super_rows,
        "purpose_iou": iou,
        "trends": trends,
        "flags": flags,
    }
