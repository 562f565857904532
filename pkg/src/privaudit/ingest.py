"""Policy acquisition: fetching with redirect tracking, HTML-to-text, admission."""

from __future__ import annotations

import hashlib
import json
import logging
import mimetypes
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable
from urllib.parse import urljoin

import httpx
from bs4 import BeautifulSoup, NavigableString, Tag
from bs4.element import Comment, Declaration, Doctype, ProcessingInstruction

log = logging.getLogger(__name__)

MAX_TEXT_BYTES = 50 * 1024
LANGUAGE_THRESHOLD = 0.3
MIN_LANGUAGE_CHARS = 40

HTML_CONTENT_TYPES = ("text/html", "application/xhtml+xml")

# reason codes, kept in sorted order when reported
EMPTY = "empty"
FETCH_FAILED = "fetch_failed"
NON_ENGLISH = "non_english"
NON_HTML = "non_html"
OVERSIZE = "oversize"


# -- fetching ---------------------------------------------------------------


@dataclass
class FetchRecord:
    requested_url: str
    redirect_chain: list[str]
    final_status: int
    content_type: str = ""
    body: bytes = b""
    fetched_at: str = ""
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and 200 <= self.final_status < 300

    @property
    def redirected(self) -> bool:
        return len(self.redirect_chain) > 1

    def text(self) -> str:
        charset = "utf-8"
        m = re.search(r"charset=([\w-]+)", self.content_type, re.I)
        if m:
            charset = m.group(1)
        try:
            return self.body.decode(charset, errors="replace")
        except LookupError:
            return self.body.decode("utf-8", errors="replace")

    def sidecar(self) -> dict:
        data = asdict(self)
        data.pop("body")
        data["body_bytes"] = len(self.body)
        return data


def fetch_policy(
    url: str,
    *,
    max_redirects: int = 10,
    max_bytes: int = 5 * 1024 * 1024,
    timeout: float = 30.0,
    client: httpx.Client | None = None,
) -> FetchRecord:
    """Fetch ``url`` hop by hop so every redirect is recorded.

    Failures (network, timeout, redirect limit, oversize body, non-2xx) are
    reported on the returned record; this never raises for transport issues.
    """
    if not re.match(r"^https?://", url, re.I):
        raise ValueError(f"not an absolute http(s) URL: {url!r}")

    own_client = client is None
    if client is None:
        client = httpx.Client(timeout=timeout, follow_redirects=False)
    record = FetchRecord(
        requested_url=url,
        redirect_chain=[url],
        final_status=0,
        fetched_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    current = url
    try:
        while True:
            try:
                req = client.build_request("GET", current, timeout=timeout)
                resp = client.send(req, stream=True, follow_redirects=False)
            except httpx.TimeoutException as exc:
                record.error = f"timeout: {exc}"
                return record
            except httpx.HTTPError as exc:
                record.error = f"network: {exc}"
                return record
            try:
                record.final_status = resp.status_code
                record.content_type = resp.headers.get("content-type", "")
                if resp.is_redirect:
                    target = resp.headers.get("location")
                    if not target:
                        record.error = "redirect without location"
                        return record
                    if len(record.redirect_chain) > max_redirects:
                        record.error = f"redirect limit exceeded ({max_redirects})"
                        return record
                    current = urljoin(current, target)
                    record.redirect_chain.append(current)
                    continue
                if not 200 <= resp.status_code < 300:
                    record.error = f"http status {resp.status_code}"
                    return record
                chunks: list[bytes] = []
                size = 0
                try:
                    for chunk in resp.iter_bytes():
                        size += len(chunk)
                        if size > max_bytes:
                            record.error = f"oversize body (> {max_bytes} bytes)"
                            return record
                        chunks.append(chunk)
                except httpx.TimeoutException as exc:
                    record.error = f"timeout: {exc}"
                    return record
                except httpx.HTTPError as exc:
                    record.error = f"network: {exc}"
                    return record
                record.body = b"".join(chunks)
                return record
            finally:
                resp.close()
    finally:
        if own_client:
            client.close()


def save_fetch(record: FetchRecord, out_dir: str | Path) -> Path:
    """Write the body and a JSON sidecar; returns the body path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = hashlib.sha256(record.requested_url.encode()).hexdigest()[:16]
    body_path = out / f"{stem}.body"
    body_path.write_bytes(record.body)
    (out / f"{stem}.json").write_text(
        json.dumps(record.sidecar(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return body_path


# -- HTML to text -----------------------------------------------------------

_DROP = frozenset(
    {"script", "style", "noscript", "template", "nav", "head", "svg", "iframe", "object"}
)
_BLOCK = frozenset(
    {
        "p", "div", "li", "h1", "h2", "h3", "h4", "h5", "h6", "tr", "ul", "ol",
        "table", "section", "article", "header", "footer", "main", "aside",
        "blockquote", "pre", "dl", "dt", "dd", "address", "figure", "figcaption",
        "hr", "body", "html", "form", "fieldset", "details", "summary",
    }
)
_CELL = frozenset({"td", "th"})
_SKIP_STRINGS = (Comment, Declaration, Doctype, ProcessingInstruction)

_SOFT = object()  # block boundary, never produces an empty line
_HARD = object()  # <br>
_END = object()
_WS = re.compile(r"\s+")


def _normalize_lines(lines: Iterable[str]) -> str:
    out: list[str] = []
    for line in lines:
        line = _WS.sub(" ", line).strip()
        if not line and (not out or not out[-1]):
            continue
        out.append(line)
    while out and not out[-1]:
        out.pop()
    return "\n".join(out)


def html_to_text(html: str | bytes) -> str:
    """Flatten an HTML page to one line per block element.

    Plain text input (no tags) is only re-normalized, so the function is
    idempotent on its own output.
    """
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    soup = BeautifulSoup(html, "html.parser")
    if soup.find() is None:
        return _normalize_lines(html.replace("\r\n", "\n").replace("\r", "\n").split("\n"))

    tokens: list[object] = []
    stack: list[object] = list(reversed(list(soup.children)))
    while stack:
        node = stack.pop()
        if node is _END:
            tokens.append(_SOFT)
            continue
        if isinstance(node, tuple):  # deferred cell separator
            tokens.append(" ")
            continue
        if isinstance(node, _SKIP_STRINGS):
            continue
        if isinstance(node, NavigableString):
            tokens.append(str(node))
            continue
        if not isinstance(node, Tag) or node.name in _DROP:
            continue
        if node.name == "br":
            tokens.append(_HARD)
            continue
        if node.name in _BLOCK:
            tokens.append(_SOFT)
            stack.append(_END)
        elif node.name in _CELL:
            stack.append(("cell",))
        stack.extend(reversed(list(node.children)))

    lines: list[str] = []
    current: list[str] = []
    for tok in tokens:
        if tok is _SOFT:
            if "".join(current).strip():
                lines.append("".join(current))
            current = []
        elif tok is _HARD:
            lines.append("".join(current))
            current = []
        else:
            current.append(tok)  # type: ignore[arg-type]
    if "".join(current).strip():
        lines.append("".join(current))
    return _normalize_lines(lines)


# -- language guess ---------------------------------------------------------

_CJK_CHAR = "぀-ヿ㐀-鿿가-힯"
_TOKEN = re.compile(rf"[{_CJK_CHAR}]|[^\W\d_{_CJK_CHAR}]+")

STOPWORDS: dict[str, frozenset[str]] = {
    "en": frozenset(
        "the and of to you your we our is are that this with for or be by not it will "
        "may have on as from any us which when if can these those such".split()
    ),
    "pt": frozenset(
        "de que e o a os as do da dos das em para com não uma um seus seu sua suas "
        "você nós ao pelo pela por mais se é são nossos nosso".split()
    ),
    "es": frozenset(
        "de que el la los las y en para con no una un su sus usted nosotros por del "
        "al es son se lo como más nuestro nuestros".split()
    ),
    "de": frozenset(
        "der die das und ist sie wir ihre ihr nicht mit für von zu den dem des ein "
        "eine auf werden oder auch sich uns bei wenn".split()
    ),
    "fr": frozenset(
        "le la les et de des du un une vous nous vos votre est sont pour avec pas "
        "dans sur que qui ce cette par ne au aux".split()
    ),
    "ja": frozenset("の は を に が で て し た ま す る い と も な".split()),
    "ko": frozenset("을 를 은 는 이 가 의 에 서 로 하 다 습 니 및 한 수 있".split()),
    "zh": frozenset("的 了 是 在 和 我 们 您 将 或 与 不 这 个 为 于 对 以".split()),
}


def guess_language(text: str) -> tuple[str, float]:
    """Stopword-profile language guess over a small fixed language set.

    Confidence is the gap between the best and second-best profile scores,
    relative to the best score.
    """
    if len(text.strip()) < MIN_LANGUAGE_CHARS:
        return "und", 0.0
    tokens = _TOKEN.findall(text.casefold())
    if not tokens:
        return "und", 0.0
    counts = Counter(tokens)
    total = len(tokens)
    scores = sorted(
        (
            (sum(n for tok, n in counts.items() if tok in words) / total, code)
            for code, words in STOPWORDS.items()
        ),
        key=lambda pair: (-pair[0], pair[1]),
    )
    (top, code), (second, _) = scores[0], scores[1]
    if top == 0:
        return "und", 0.0
    return code, (top - second) / top


# -- documents and admission ------------------------------------------------


def policy_hash(plain_text: str) -> str:
    normalized = _WS.sub(" ", plain_text.lower()).strip()
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass
class PolicyDocument:
    policy_id: str
    source_url: str
    raw_html: str
    plain_text: str
    text_bytes: int
    language_guess: tuple[str, float]
    content_type: str = "text/html"
    fetch_error: str | None = None


def build_policy_document(
    raw_html: str,
    source_url: str = "",
    content_type: str = "text/html",
    fetch_error: str | None = None,
) -> PolicyDocument:
    plain = html_to_text(raw_html) if raw_html else ""
    return PolicyDocument(
        policy_id=policy_hash(plain),
        source_url=source_url,
        raw_html=raw_html,
        plain_text=plain,
        text_bytes=len(plain.encode("utf-8")),
        language_guess=guess_language(plain) if plain.strip() else ("und", 0.0),
        content_type=content_type,
        fetch_error=fetch_error,
    )


def document_from_fetch(record: FetchRecord) -> PolicyDocument:
    final_url = record.redirect_chain[-1]
    if not record.ok:
        return build_policy_document("", final_url, record.content_type, record.error or "failed")
    return build_policy_document(record.text(), final_url, record.content_type)


def sniff_content_type(path: str | Path, raw: str) -> str:
    guessed, _ = mimetypes.guess_type(str(path))
    if guessed:
        return guessed
    return "text/html" if raw.lstrip().startswith("<") else "text/plain"


def document_from_file(path: str | Path) -> PolicyDocument:
    raw = Path(path).read_bytes().decode("utf-8", errors="replace")
    return build_policy_document(raw, str(path), sniff_content_type(path, raw))


@dataclass(frozen=True)
class AdmissionDecision:
    admitted: bool
    reasons: tuple[str, ...] = field(default_factory=tuple)


def admit_policy(
    doc: PolicyDocument,
    *,
    max_text_bytes: int = MAX_TEXT_BYTES,
    min_language_confidence: float = LANGUAGE_THRESHOLD,
) -> AdmissionDecision:
    reasons: set[str] = set()
    if doc.fetch_error:
        reasons.add(FETCH_FAILED)
    media_type = doc.content_type.split(";")[0].strip().lower()
    if media_type not in HTML_CONTENT_TYPES:
        reasons.add(NON_HTML)
    if not doc.plain_text.strip():
        reasons.add(EMPTY)
    else:
        code, confidence = doc.language_guess
        too_short = len(doc.plain_text.strip()) < MIN_LANGUAGE_CHARS
        if not too_short and (code != "en" or confidence < min_language_confidence):
            reasons.add(NON_ENGLISH)
    if doc.text_bytes > max_text_bytes:
        reasons.add(OVERSIZE)
    ordered = tuple(sorted(reasons))
    return AdmissionDecision(admitted=not ordered, reasons=ordered)
