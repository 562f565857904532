"""Heading-bounded sectioning and short-paragraph merging."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .notes import StageError

if TYPE_CHECKING:
    from .backends.base import Backend

log = logging.getLogger(__name__)

MIN_UNIT_CHARS = 512


@dataclass(frozen=True)
class HeadingSet:
    headings: tuple[tuple[int, str], ...]
    trial_id: int
    section_length_mean: float
    section_length_std: float

    @property
    def score(self) -> float:
        return self.section_length_mean - self.section_length_std


@dataclass(frozen=True)
class Section:
    index: int
    heading_text: str | None
    start_line: int
    end_line: int
    char_start: int
    text: str  # heading line (if any) plus body, with original line endings

    @property
    def body(self) -> str:
        if self.heading_text is None:
            return self.text
        nl = self.text.find("\n")
        return "" if nl < 0 else self.text[nl + 1:]

    @property
    def body_offset(self) -> int:
        return self.char_start + len(self.text) - len(self.body)


@dataclass(frozen=True)
class ParagraphUnit:
    unit_id: str
    section_ref: int
    text: str
    start: int  # character offsets into the whole document
    end: int

    @property
    def char_len(self) -> int:
        return len(self.text)


def _lines_with_ends(text: str) -> list[str]:
    parts = text.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def locate_headings(text: str, proposed: list[str]) -> list[tuple[int, str]]:
    """Keep proposed headings that occur verbatim (trimmed) as a line, in order.

    Each heading is matched to the first qualifying line after the previous
    match, so line indices are strictly increasing.
    """
    stripped = [line.strip() for line in _lines_with_ends(text)]
    found: list[tuple[int, str]] = []
    cursor = 0
    for heading in proposed:
        target = heading.strip()
        if not target:
            continue
        for i in range(cursor, len(stripped)):
            if stripped[i] == target:
                found.append((i, stripped[i]))
                cursor = i + 1
                break
    return found


def split_sections(text: str, headings: list[tuple[int, str]] | tuple[tuple[int, str], ...]) -> list[Section]:
    lines = _lines_with_ends(text)
    starts = [idx for idx, _ in headings]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ValueError("heading line indices must be strictly increasing")
    if starts and (starts[0] < 0 or starts[-1] >= len(lines)):
        raise ValueError("heading line index out of range")

    offsets = [0]
    for line in lines:
        offsets.append(offsets[-1] + len(line))

    bounds: list[tuple[int, int, str | None]] = []
    first = starts[0] if starts else len(lines)
    if first > 0 or not starts:
        bounds.append((0, first - 1, None))
    for n, (idx, heading) in enumerate(headings):
        end = starts[n + 1] - 1 if n + 1 < len(starts) else len(lines) - 1
        bounds.append((idx, end, heading))

    sections = []
    for i, (start, end, heading) in enumerate(bounds):
        body = "".join(lines[start:end + 1])
        sections.append(
            Section(
                index=i,
                heading_text=heading,
                start_line=start,
                end_line=end,
                char_start=offsets[start],
                text=body,
            )
        )
    return sections


def section_length_stats(text: str, headings: list[tuple[int, str]]) -> tuple[float, float]:
    """Mean and population std of headed-section lengths; (0, 0) if none."""
    if not headings:
        return 0.0, 0.0
    lengths = [len(s.text) for s in split_sections(text, headings) if s.heading_text is not None]
    mean = sum(lengths) / len(lengths)
    var = sum((x - mean) ** 2 for x in lengths) / len(lengths)
    return mean, math.sqrt(var)


def select_trial(candidates: list[HeadingSet]) -> HeadingSet:
    """Highest mean - std of section lengths; ties go to the lower trial id."""
    if not candidates:
        raise ValueError("no heading trials to select from")
    return min(candidates, key=lambda h: (-h.score, h.trial_id))


def extract_headings(
    text: str, backend: "Backend", trials: int = 3, max_workers: int = 1
) -> HeadingSet:
    def run(trial: int) -> HeadingSet | Exception:
        try:
            proposed = backend.extract_headings(text, trial=trial)
        except Exception as exc:  # backend failures are per trial
            log.warning("heading trial %d failed: %s", trial, exc)
            return exc
        found = locate_headings(text, proposed)
        mean, std = section_length_stats(text, found)
        return HeadingSet(tuple(found), trial, mean, std)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(t) for t in range(trials)]
    ok = [r for r in results if isinstance(r, HeadingSet)]
    if not ok:
        errors = "; ".join(str(r) for r in results)
        raise StageError("segment", f"all {trials} heading trials failed: {errors}", kind="backend")
    return select_trial(ok)


def merge_paragraphs(section: Section, min_len: int = MIN_UNIT_CHARS) -> list[ParagraphUnit]:
    """Greedy forward merge of newline-separated paragraphs.

    Joining the units' text with "\\n" reproduces the section body exactly.
    """
    body = section.body
    base = section.body_offset
    paragraphs = body.split("\n")
    units: list[ParagraphUnit] = []
    pos = 0
    acc_start: int | None = None
    for n, para in enumerate(paragraphs):
        if acc_start is None:
            acc_start = pos
        pos += len(para)
        last = n == len(paragraphs) - 1
        if pos - acc_start >= min_len or last:
            units.append(
                ParagraphUnit(
                    unit_id=f"{section.index}.{len(units)}",
                    section_ref=section.index,
                    text=body[acc_start:pos],
                    start=base + acc_start,
                    end=base + pos,
                )
            )
            acc_start = None
        pos += 1  # separator
    return units


def segment_text(
    text: str,
    backend: "Backend",
    *,
    trials: int = 3,
    min_len: int = MIN_UNIT_CHARS,
    max_workers: int = 1,
) -> tuple[HeadingSet, list[Section], list[ParagraphUnit]]:
    headings = extract_headings(text, backend, trials=trials, max_workers=max_workers)
    sections = split_sections(text, headings.headings)
    units = [u for s in sections for u in merge_paragraphs(s, min_len)]
    return headings, sections, units
