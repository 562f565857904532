"""Deterministic lexicon-driven backend.

Stands in for the hosted models in tests and offline runs. Every method is
a pure function of its input and the loaded lexicon.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from ..taxonomy import (
    GENERIC,
    NA_LABEL,
    OTHER_PURPOSE,
    Taxonomy,
    Vocabulary,
    default_taxonomy,
    normalize_keyword,
)
from .base import Backend, PracticeTuple, check_batch

INTRODUCTORY = 4

_TOKEN = re.compile(r"[a-z0-9]+")
_OVERLAP_STOP = frozenset(
    "a an and or of the to your our their with for in on any other information data details "
    "about from by".split()
)
_PURPOSE_MARKER = re.compile(
    r"\s+(?:in\s+order\s+to|so\s+that|for\s+the\s+purposes?\s+of|because|for(?!\s+\d)|to)\s+"
    r"(?!(?:third|our|us|other|partners|advertisers|service|affiliates|the|any|them|you|your)\b)",
    re.I,
)
_REGION_STOP = re.compile(
    r"\s+(?:with|when|if|while|via|through|by|unless|in\s+order\s+to)\s+", re.I
)
_PURPOSE_END = re.compile(r"\s+(?:and|or|with|if|when|unless)\s+|[,;]", re.I)
_LIST_GAP = re.compile(
    r"^(?:[\s,;/&]+|\b(?:and|or|your|the|our|their|its|as\s+well\s+as|also)\b)*$", re.I
)
_ETC = re.compile(r"^,?\s*etc\.?", re.I)
_NEGATION = re.compile(r"\b(?:not|never|no\s+longer)\s+(?:\w+\s+){0,1}$", re.I)
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)|\n")

_NUMBERED = re.compile(r"^(?:\d+(?:\.\d+)*[.)]?|[IVXLC]+[.)]|[A-Z][.)])\s+\S")


class LexiconError(ValueError):
    pass


def _phrase_pattern(phrase: str) -> str:
    body = r"\s+".join(re.escape(part) for part in phrase.split())
    head = r"(?<!\w)" if phrase[0].isalnum() else ""
    tail = r"(?!\w)" if phrase[-1].isalnum() else ""
    return head + body + tail


class PhraseMatcher:
    """Case-insensitive, word-bounded, longest-first phrase matcher."""

    def __init__(self, phrases: Iterable[str]):
        self.phrases = sorted({p for p in phrases if p}, key=lambda p: (-len(p), p))
        if self.phrases:
            self._re = re.compile("|".join(_phrase_pattern(p) for p in self.phrases), re.I)
        else:
            self._re = re.compile(r"(?!x)x")

    def finditer(self, text: str, pos: int = 0, endpos: int | None = None):
        if endpos is None:
            endpos = len(text)
        return self._re.finditer(text, pos, endpos)


@dataclass(frozen=True)
class RuleLexicon:
    class_triggers: dict[int, tuple[str, ...]]
    item_synonyms: dict[str, str]  # normalized phrase -> keyword
    purpose_synonyms: dict[str, str]
    processing_verbs: dict[str, str]  # verb form -> lemma
    recipients: tuple[str, ...]
    retention_patterns: tuple[str, ...]

    @classmethod
    def from_dict(cls, data: dict, taxonomy: Taxonomy | None = None) -> "RuleLexicon":
        taxonomy = taxonomy or default_taxonomy()
        triggers: dict[int, tuple[str, ...]] = {}
        seen: dict[str, int] = {}
        for key, phrases in data["class_triggers"].items():
            idx = int(key)
            if not 0 <= idx < len(taxonomy.practice_classes):
                raise LexiconError(f"unknown practice class {key}")
            for p in phrases:
                norm = normalize_keyword(p)
                if norm in seen and seen[norm] != idx:
                    raise LexiconError(f"trigger {p!r} maps to classes {seen[norm]} and {idx}")
                seen[norm] = idx
            triggers[idx] = tuple(normalize_keyword(p) for p in phrases)

        def synonym_table(section: str, vocab: Vocabulary) -> dict[str, str]:
            valid = set(taxonomy.vocabulary_keywords(vocab))
            table: dict[str, str] = {}
            for keyword, phrases in data[section].items():
                if keyword not in valid:
                    raise LexiconError(f"{section}: {keyword!r} is not a vocabulary keyword")
                for p in [keyword, *phrases]:
                    norm = normalize_keyword(p)
                    if table.get(norm, keyword) != keyword:
                        raise LexiconError(f"{section}: {p!r} maps to {table[norm]!r} and {keyword!r}")
                    table[norm] = keyword
            return table

        verbs: dict[str, str] = {}
        for lemma, forms in data["processing_verbs"].items():
            for f in [lemma, *forms]:
                if verbs.get(f, lemma) != lemma:
                    raise LexiconError(f"verb {f!r} has two lemmas")
                verbs[f] = lemma
        return cls(
            class_triggers=triggers,
            item_synonyms=synonym_table("item_synonyms", Vocabulary.ITEMS),
            purpose_synonyms=synonym_table("purpose_synonyms", Vocabulary.PURPOSES),
            processing_verbs=verbs,
            recipients=tuple(normalize_keyword(r) for r in data["recipients"]),
            retention_patterns=tuple(data.get("retention_patterns", ())),
        )


@lru_cache(maxsize=1)
def default_lexicon() -> RuleLexicon:
    text = resources.files("privaudit").joinpath("data/rule_lexicon.json").read_text("utf-8")
    return RuleLexicon.from_dict(json.loads(text))


def load_lexicon(path: str | Path, taxonomy: Taxonomy | None = None) -> RuleLexicon:
    with open(path, encoding="utf-8") as fh:
        return RuleLexicon.from_dict(json.load(fh), taxonomy)


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) spans of sentences, whitespace-trimmed, end exclusive."""
    spans = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        spans.append((start, m.end()))
        start = m.end()
    spans.append((start, len(text)))
    out = []
    for s, e in spans:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            out.append((s, e))
    return out


def _tokens(text: str) -> set[str]:
    return {t for t in _TOKEN.findall(text.casefold()) if t not in _OVERLAP_STOP}


class RuleBackend(Backend):
    backend_id = "rule"

    def __init__(self, lexicon: RuleLexicon | None = None, taxonomy: Taxonomy | None = None):
        self.taxonomy = taxonomy or default_taxonomy()
        self.lexicon = lexicon or default_lexicon()
        lx = self.lexicon
        self._class_matchers = {c: PhraseMatcher(p) for c, p in sorted(lx.class_triggers.items())}
        self._all_triggers = PhraseMatcher(p for ps in lx.class_triggers.values() for p in ps)
        self._items = PhraseMatcher(lx.item_synonyms)
        self._purposes = PhraseMatcher(lx.purpose_synonyms)
        self._verbs = PhraseMatcher(lx.processing_verbs)
        self._recipients = PhraseMatcher(lx.recipients)
        self._retention = [re.compile(p, re.I) for p in lx.retention_patterns]
        self._overlap_index = {
            vocab: self._build_overlap_index(vocab) for vocab in Vocabulary
        }

    def _synonyms(self, vocabulary: Vocabulary) -> dict[str, str]:
        if vocabulary is Vocabulary.ITEMS:
            return self.lexicon.item_synonyms
        return self.lexicon.purpose_synonyms

    def _build_overlap_index(self, vocabulary: Vocabulary) -> list[tuple[str, set[str]]]:
        table = self._synonyms(vocabulary)
        index = []
        for keyword in self.taxonomy.vocabulary_keywords(vocabulary):
            toks = _tokens(keyword)
            for phrase, kw in table.items():
                if kw == keyword:
                    toks |= _tokens(phrase)
            index.append((keyword, toks))
        return index

    # -- headings ----------------------------------------------------------

    def extract_headings(self, text: str, trial: int = 0) -> list[str]:
        """Layout heuristics; each trial admits a wider family of heading shapes."""
        out = []
        for raw in text.split("\n"):
            line = raw.strip()
            if not 2 <= len(line) <= 100 or len(line.split()) > 12:
                continue
            if not any(ch.isalpha() for ch in line) or line[-1] in ".,;":
                continue
            letters = [ch for ch in line if ch.isalpha()]
            numbered = bool(_NUMBERED.match(line))
            upper = len(letters) >= 3 and all(ch.isupper() for ch in letters)
            words = [w for w in re.findall(r"[A-Za-z][A-Za-z'-]*", line) if len(w) >= 4]
            titled = (
                line[0].isupper()
                and bool(words)
                and sum(w[0].isupper() for w in words) / len(words) >= 0.6
            )
            if numbered:
                out.append(line)
            elif trial >= 1 and upper:
                out.append(line)
            elif trial >= 2 and (titled or line.endswith(("?", ":"))):
                out.append(line)
        return out

    # -- classification ----------------------------------------------------

    def classify_paragraph(self, text: str) -> tuple[int, str]:
        best, best_hits = INTRODUCTORY, []
        for cls, matcher in self._class_matchers.items():
            hits = list(matcher.finditer(text))
            if len(hits) > len(best_hits):
                best, best_hits = cls, hits
        if not best_hits:
            return INTRODUCTORY, ""
        return best, self._rationale(text, best_hits[0])

    def _rationale(self, text: str, hit: re.Match) -> str:
        for s, e in sentence_spans(text):
            if s <= hit.start() < e:
                marker = _PURPOSE_MARKER.search(text, hit.end(), e)
                end = marker.start() if marker else e
                excerpt = text[s:end].rstrip(" \t,;:.!?")
                return excerpt or text[s:e]
        return ""

    def trigger_sentence(self, text: str) -> str:
        """First sentence containing any class trigger, or ""."""
        hit = next(iter(self._all_triggers.finditer(text)), None)
        if hit is None:
            return ""
        for s, e in sentence_spans(text):
            if s <= hit.start() < e:
                return text[s:e]
        return ""

    # -- decoding ----------------------------------------------------------

    def decode_elements(self, text: str) -> list[PracticeTuple]:
        tuples = []
        for s, e in sentence_spans(text):
            t = self._decode_sentence(text[s:e])
            if t is not None:
                tuples.append(t)
        return tuples

    def _decode_sentence(self, sent: str) -> PracticeTuple | None:
        verbs = [v for v in self._verbs.finditer(sent) if not _NEGATION.search(sent[: v.start()])]
        if not verbs:
            return None
        starts = [v.start() for v in verbs] + [len(sent)]
        mentions: list[re.Match] = []
        for n, v in enumerate(verbs):
            end = starts[n + 1]
            for stop in (_PURPOSE_MARKER.search(sent, v.end(), end), _REGION_STOP.search(sent, v.end(), end)):
                if stop:
                    end = min(end, stop.start())
            mentions.extend(self._items.finditer(sent, v.end(), end))
        if not mentions:
            return None

        spans: list[list[int]] = []
        for m in mentions:
            if spans and _LIST_GAP.match(sent[spans[-1][1]:m.start()]):
                spans[-1][1] = m.end()
            else:
                spans.append([m.start(), m.end()])
        for span in spans:
            etc = _ETC.match(sent[span[1]:])
            if etc:
                span[1] += etc.end()
        data = ", ".join(sent[a:b] for a, b in spans)

        purpose = ""
        marker = _PURPOSE_MARKER.search(sent, verbs[0].end())
        if marker:
            stop = _PURPOSE_END.search(sent, marker.end())
            purpose = sent[marker.end(): stop.start() if stop else len(sent)].rstrip(" .!?")

        processing = self.lexicon.processing_verbs[normalize_keyword(verbs[-1].group(0))]

        retention = ""
        for pattern in self._retention:
            m = pattern.search(sent)
            if m:
                retention = m.group(0)
                break

        recipients = ""
        share_at = [v.end() for v in verbs if self.lexicon.processing_verbs[normalize_keyword(v.group(0))] == "share"]
        if share_at:
            found = [r.group(0) for r in self._recipients.finditer(sent, share_at[0])]
            recipients = ", ".join(dict.fromkeys(found))
        return PracticeTuple(data, purpose, processing, retention, recipients)

    # -- keyword mapping ---------------------------------------------------

    def map_keywords_batch(self, items: Sequence[str], vocabulary: Vocabulary) -> list[str]:
        check_batch(items)
        return [self.verify_keyword(item, vocabulary) for item in items]

    def verify_keyword(self, item: str, vocabulary: Vocabulary) -> str:
        table = self._synonyms(vocabulary)
        norm = normalize_keyword(item).strip(" \t-*•·")
        if norm in table:
            return table[norm]
        matcher = self._items if vocabulary is Vocabulary.ITEMS else self._purposes
        contained = max(matcher.finditer(norm), key=lambda m: (len(m.group(0)), -m.start()), default=None)
        if contained is not None:
            return table[normalize_keyword(contained.group(0))]
        toks = _tokens(norm)
        best, best_score = None, 0
        for keyword, kw_toks in self._overlap_index[vocabulary]:
            score = len(toks & kw_toks)
            if score > best_score:
                best, best_score = keyword, score
        if best is not None:
            return best
        if vocabulary is Vocabulary.ITEMS:
            return self.taxonomy.item_keyword(GENERIC)
        return self.taxonomy.purpose_keyword(OTHER_PURPOSE)


__all__ = ["RuleBackend", "RuleLexicon", "PhraseMatcher", "default_lexicon", "load_lexicon", "NA_LABEL"]
