"""Chat-completion HTTP client backend."""

from __future__ import annotations

import ast
import json
import logging
import os
import re
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import httpx

from ..taxonomy import Taxonomy, Vocabulary, default_taxonomy, normalize_keyword
from . import prompts
from .base import (
    Backend,
    BackendError,
    BackendParseError,
    BackendRequest,
    BackendResponse,
    PracticeTuple,
    Task,
    check_batch,
)
from .rule import RuleBackend

log = logging.getLogger(__name__)

_CATEGORY = re.compile(r"matching\s+category\s*[=:]\s*['\"]?([^'\"\n]+)", re.I)
_REASON = re.compile(r"reasoning\s*[=:]\s*(['\"])(.*)\1\s*$", re.I | re.S)
_REASON_LOOSE = re.compile(r"reasoning\s*[=:]\s*(.*)$", re.I | re.S)
_PAIR = re.compile(r"""(['"])((?:\\.|(?!\1).)*)\1\s*:\s*(['"])((?:\\.|(?!\3).)*)\3""")
_RETRY_STATUS = {429, 500, 502, 503, 504}


@dataclass
class RemoteConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "default"
    api_key_env: str = "PRIVAUDIT_API_KEY"
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 0.5
    max_in_flight: int = 4
    token_budgets: dict[str, int] = field(
        default_factory=lambda: {
            "headings": 512,
            "classify": 256,
            "decode": 1024,
            "map_items": 512,
            "map_purposes": 512,
            "verify_item": 32,
            "verify_purpose": 32,
        }
    )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s)


def parse_headings(raw: str) -> list[str]:
    out = []
    for line in raw.splitlines():
        line = line.strip().strip("`").strip()
        line = re.sub(r"^[-*•]\s+", "", line)
        if line:
            out.append(line)
    return out


def parse_classification(raw: str, taxonomy: Taxonomy) -> tuple[int, str]:
    m = _CATEGORY.search(raw)
    if not m:
        raise BackendParseError(Task.CLASSIFY, raw, "no 'Matching category' line")
    label = m.group(1).strip()
    names = [normalize_keyword(c) for c in taxonomy.practice_classes]
    num = re.match(r"^(\d+)\.?\s*(.*)$", label)
    if num and num.group(2):
        label = num.group(2)
    norm = normalize_keyword(label)
    if norm in names:
        cls = names.index(norm)
    elif num and not num.group(2) and 1 <= int(num.group(1)) <= len(names):
        cls = int(num.group(1)) - 1
    else:
        prefix = [i for i, n in enumerate(names) if n.startswith(norm) or norm.startswith(n)]
        if len(prefix) != 1:
            raise BackendParseError(Task.CLASSIFY, raw, f"unknown category {label!r}")
        cls = prefix[0]
    tail = raw[m.end():]
    r = _REASON.search(tail) or _REASON_LOOSE.search(tail)
    if r is None:
        rationale = ""
    else:
        rationale = (r.group(2) if r.re is _REASON else r.group(1)).strip()
    return cls, rationale


def _literal(raw: str) -> Any:
    start = raw.find("[")
    end = raw.rfind("]")
    if start < 0 or end <= start:
        raise ValueError("no list found")
    chunk = raw[start:end + 1]
    try:
        return json.loads(chunk)
    except json.JSONDecodeError:
        return ast.literal_eval(chunk)


def parse_decode(raw: str) -> list[PracticeTuple]:
    try:
        value = _literal(raw)
    except (ValueError, SyntaxError) as exc:
        raise BackendParseError(Task.DECODE, raw, f"not a list: {exc}") from None
    if not isinstance(value, list):
        raise BackendParseError(Task.DECODE, raw, "not a list")
    out = []
    for obj in value:
        if not isinstance(obj, dict):
            raise BackendParseError(Task.DECODE, raw, "list entry is not an object")
        d = {k.lower(): v for k, v in obj.items()}
        if "retention" not in d and "storage" in d:
            d["retention"] = d["storage"]
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = ", ".join(str(x) for x in v)
        t = PracticeTuple.from_dict(d)
        if t.data.strip():
            out.append(t)
    return out


def parse_mapping(raw: str) -> list[str]:
    """Values of the returned mapping in order; arity is not checked here."""
    pairs = _PAIR.findall(raw)
    if pairs:
        return [_unescape(p[3]).strip() for p in pairs]
    try:
        value = _literal(raw)
    except (ValueError, SyntaxError):
        raise BackendParseError(Task.MAP_ITEMS, raw, "no mapping pairs found") from None
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return [v.strip() for v in value]
    raise BackendParseError(Task.MAP_ITEMS, raw, "unexpected mapping shape")


class RemoteBackend(Backend):
    backend_id = "remote"

    def __init__(
        self,
        config: RemoteConfig | None = None,
        *,
        client: httpx.Client | None = None,
        taxonomy: Taxonomy | None = None,
        sleep=time.sleep,
    ):
        self.config = config or RemoteConfig()
        self.taxonomy = taxonomy or default_taxonomy()
        self._client = client or httpx.Client(timeout=self.config.timeout)
        self._slots = threading.BoundedSemaphore(max(1, self.config.max_in_flight))
        self._sleep = sleep
        self._rule = RuleBackend(taxonomy=self.taxonomy)

    def close(self) -> None:
        self._client.close()

    # -- transport ---------------------------------------------------------

    def _headers(self, correlation_id: str) -> dict[str, str]:
        headers = {"Content-Type": "application/json", "X-Request-ID": correlation_id}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def request_body(self, request: BackendRequest) -> dict[str, Any]:
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.payload["prompt"]}],
            "temperature": 0 if request.deterministic else 0.7,
            "max_tokens": request.max_output_tokens,
        }

    def complete(self, request: BackendRequest) -> BackendResponse:
        cid = request.correlation_id or uuid.uuid4().hex
        body = self.request_body(request)
        last: Exception | None = None
        started = time.perf_counter()
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(
                        self.config.endpoint,
                        json=body,
                        headers=self._headers(cid),
                        timeout=self.config.timeout,
                    )
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code in _RETRY_STATUS:
                last = BackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"{request.task.value}: HTTP {resp.status_code}")
            echoed = resp.headers.get("X-Request-ID")
            if echoed and echoed != cid:
                raise BackendError(f"correlation id mismatch: sent {cid}, got {echoed}")
            try:
                raw = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"{request.task.value}: malformed completion body ({exc})") from None
            return BackendResponse(
                task=request.task,
                raw_text=raw or "",
                latency=time.perf_counter() - started,
                backend_id=self.backend_id,
                correlation_id=cid,
            )
        raise BackendError(
            f"{request.task.value}: gave up after {self.config.max_retries + 1} attempts: {last}"
        )

    def _ask(self, task: Task, prompt: str) -> str:
        budget = self.config.token_budgets.get(task.value, 512)
        return self.complete(BackendRequest(task, {"prompt": prompt}, max_output_tokens=budget)).raw_text

    # -- tasks -------------------------------------------------------------

    def extract_headings(self, text: str, trial: int = 0) -> list[str]:
        return parse_headings(self._ask(Task.HEADINGS, prompts.HEADINGS.format(text=text)))

    def classify_paragraph(self, text: str) -> tuple[int, str]:
        prompt = prompts.CLASSIFY.format(categories=prompts.category_lines(self.taxonomy), text=text)
        cls, rationale = parse_classification(self._ask(Task.CLASSIFY, prompt), self.taxonomy)
        if rationale in text:
            return cls, rationale
        log.info("rationale not verbatim, retrying once")
        retry_cls, retry_rationale = parse_classification(self._ask(Task.CLASSIFY, prompt), self.taxonomy)
        if retry_rationale in text:
            return retry_cls, retry_rationale
        return cls, self._rule.trigger_sentence(text)

    def decode_elements(self, text: str) -> list[PracticeTuple]:
        return parse_decode(self._ask(Task.DECODE, prompts.DECODE.format(text=text)))

    def map_keywords_batch(self, items: Sequence[str], vocabulary: Vocabulary) -> list[str]:
        check_batch(items)
        task = Task.MAP_ITEMS if vocabulary is Vocabulary.ITEMS else Task.MAP_PURPOSES
        return parse_mapping(self._ask(task, prompts.mapping_prompt(list(items), vocabulary, self.taxonomy)))

    def verify_keyword(self, item: str, vocabulary: Vocabulary) -> str:
        task = Task.VERIFY_ITEM if vocabulary is Vocabulary.ITEMS else Task.VERIFY_PURPOSE
        valid = {normalize_keyword(k): k for k in self.taxonomy.vocabulary_keywords(vocabulary)}
        try:
            out = parse_mapping(self._ask(task, prompts.mapping_prompt([item], vocabulary, self.taxonomy)))
        except BackendError:
            out = []
        if len(out) == 1 and normalize_keyword(out[0]) in valid:
            return valid[normalize_keyword(out[0])]
        return self._rule.verify_keyword(item, vocabulary)


class FallbackBackend(Backend):
    """Routes to ``fallback`` whenever ``primary`` raises a BackendError."""

    def __init__(self, primary: Backend, fallback: Backend):
        self.primary = primary
        self.fallback = fallback
        self.backend_id = f"{primary.backend_id}+{fallback.backend_id}"
        self.fallbacks = 0
        self._lock = threading.Lock()

    def _call(self, name: str, *args, **kwargs):
        try:
            return getattr(self.primary, name)(*args, **kwargs)
        except BackendError as exc:
            log.warning("%s failed on %s, using %s: %s", name, self.primary.backend_id,
                        self.fallback.backend_id, exc)
            with self._lock:
                self.fallbacks += 1
            return getattr(self.fallback, name)(*args, **kwargs)

    def extract_headings(self, text: str, trial: int = 0) -> list[str]:
        return self._call("extract_headings", text, trial=trial)

    def classify_paragraph(self, text: str) -> tuple[int, str]:
        return self._call("classify_paragraph", text)

    def decode_elements(self, text: str) -> list[PracticeTuple]:
        return self._call("decode_elements", text)

    def map_keywords_batch(self, items: Sequence[str], vocabulary: Vocabulary) -> list[str]:
        return self._call("map_keywords_batch", items, vocabulary)

    def verify_keyword(self, item: str, vocabulary: Vocabulary) -> str:
        return self._call("verify_keyword", item, vocabulary)
