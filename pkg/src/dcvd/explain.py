"""LLM code explanations: prompt template, providers and a content-addressed cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Protocol

import httpx

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "code-explanation/v1"

PROMPT_TEMPLATE = """You are an expert software security and program analysis assistant.

Given the following source code, generate a concise natural-language explanation of its functionality and potential security-relevant behaviors. The explanation will be used as semantic input for a vulnerability detection and localization model, so it should focus on observable program behavior rather than unsupported speculation.

Please analyze the code from the following aspects:

1. Functionality:
Describe the main purpose of the function and what task it performs.

2. Inputs and Outputs:
Identify important parameters, external inputs, return values, and output behaviors.

3. Control Logic:
Describe key branches, loops, conditions, and execution paths that affect the behavior of the function.

4. Data Flow:
Describe how important data values propagate through the function, especially from inputs to memory operations, pointer operations, array accesses, file operations, system calls, or other sensitive operations.

5. Security-Relevant Behaviors:
Identify potential security-relevant operations, such as boundary checks, null checks, memory allocation or release, pointer dereference, buffer access, arithmetic computation, authentication checks, and error handling.

6. Potential Risk Indicators:
Mention suspicious or risky behaviors only if they are directly observable from the code. Do not overclaim vulnerability existence.

Source Code:
<Code>

Output format:
Functionality: <brief description>
Inputs and Outputs: <brief description>
Control Logic: <brief description>
Data Flow: <brief description>
Security-Relevant Behaviors: <brief description>
Potential Risk Indicators: <brief description or N/A>"""

SECTION_HEADINGS = (
    "Functionality",
    "Inputs and Outputs",
    "Control Logic",
    "Data Flow",
    "Security-Relevant Behaviors",
    "Potential Risk Indicators",
)

API_KEY_ENV = "DCVD_API_KEY"


class ExplanationError(RuntimeError):
    def __init__(self, message: str, function_ids: Iterable[str] = ()):
        super().__init__(message)
        self.function_ids = list(function_ids)


def build_prompt(source: str) -> str:
    return PROMPT_TEMPLATE.replace("<Code>", source)


def prompt_hash(source: str, template_version: str = TEMPLATE_VERSION) -> str:
    h = hashlib.sha256()
    h.update(template_version.encode())
    h.update(b"\x00")
    h.update(source.encode("utf-8"))
    return h.hexdigest()


def is_well_formed(text: str) -> bool:
    return all(re.search(rf"^\s*{re.escape(h)}\s*:", text, re.MULTILINE) for h in SECTION_HEADINGS)


@dataclass(frozen=True)
class ExplanationRecord:
    function_id: str
    prompt_hash: str
    text: str
    provider: str
    timestamp: str = ""

    @property
    def well_formed(self) -> bool:
        return is_well_formed(self.text)


class Provider(Protocol):
    kind: str

    def generate(self, prompt: str, source: str) -> str: ...


_MEM_CALLS = ("malloc", "calloc", "realloc", "free", "memcpy", "memmove", "memset",
              "strcpy", "strncpy", "strcat", "strncat", "sprintf", "snprintf", "gets", "read", "recv")
_UNBOUNDED = ("strcpy", "strcat", "sprintf", "gets")
_KEYWORDS = {"if", "for", "while", "switch", "return", "sizeof", "do", "else", "case"}


class FixtureProvider:
    """Deterministic offline stand-in for the chat model.

    Builds the six sections from shallow source statistics. ``calls`` counts
    invocations so tests can observe cache behaviour.
    """

    kind = "fixture"

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, prompt: str, source: str) -> str:
        with self._lock:
            self.calls += 1
        name_match = re.search(r"([A-Za-z_]\w*)\s*\(([^)]*)\)\s*\{", source)
        name = name_match.group(1) if name_match else "the function"
        params = [p.strip().split()[-1].lstrip("*") for p in name_match.group(2).split(",")
                  if p.strip() and p.strip() != "void"] if name_match else []
        calls = sorted({c for c in re.findall(r"\b([A-Za-z_]\w*)\s*\(", source) if c not in _KEYWORDS and c != name})
        n_if = len(re.findall(r"\bif\s*\(", source))
        n_loop = len(re.findall(r"\b(?:for|while)\s*\(", source))
        returns = len(re.findall(r"\breturn\b", source))
        mem = [c for c in calls if c in _MEM_CALLS]
        risky = [c for c in calls if c in _UNBOUNDED]
        derefs = source.count("->") + len(re.findall(r"\*\s*[A-Za-z_]", source))
        arrays = len(re.findall(r"\w\s*\[", source))
        null_checks = len(re.findall(r"==\s*NULL|!\s*[A-Za-z_]\w*\s*\)|NULL\s*==", source))

        lines = [
            f"Functionality: {name} performs its task by calling {', '.join(calls) or 'no other functions'}.",
            f"Inputs and Outputs: parameters {', '.join(params) or 'none'}; {returns} return statement(s).",
            f"Control Logic: {n_if} conditional branch(es) and {n_loop} loop(s).",
            f"Data Flow: {arrays} array access(es) and {derefs} pointer dereference(s); "
            f"memory operations {', '.join(mem) or 'none'}.",
            f"Security-Relevant Behaviors: {null_checks} null check(s); "
            f"{'bounds checks present' if n_if else 'no explicit bounds checks'}.",
            "Potential Risk Indicators: "
            + (f"unbounded copy via {', '.join(risky)}." if risky else "N/A"),
        ]
        return "\n".join(lines)


class RateLimiter:
    """Minimum spacing between request starts, shared by all threads."""

    def __init__(self, per_second: float | None):
        self.interval = 1.0 / per_second if per_second else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            time.sleep(start - now)


class ChatCompletionProvider:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint."""

    kind = "live"

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        model: str = "gpt-4o-mini-2024-07-18",
        api_key_env: str = API_KEY_ENV,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 2.0,
        requests_per_second: float | None = 2.0,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self.limiter = RateLimiter(requests_per_second)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.client = httpx.Client(timeout=timeout, transport=transport)
        self.calls = 0

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def generate(self, prompt: str, source: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.limiter.wait()
            with self._slots:
                self.calls += 1
                try:
                    resp = self.client.post(f"{self.base_url}/chat/completions", json=body, headers=self._headers())
                except httpx.HTTPError as exc:
                    last_exc = exc
                    logger.warning("provider request failed (attempt %d): %s", attempt + 1, exc)
                    continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = RuntimeError(f"HTTP {resp.status_code}")
                logger.warning("provider returned HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ExplanationError(f"provider rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ExplanationError(f"unexpected provider payload: {resp.text[:200]}") from exc
        raise ExplanationError(f"provider failed after {self.max_retries + 1} attempts: {last_exc}")


class ExplanationCache:
    """One JSON file per prompt hash; writes go through a temp file and ``os.replace``."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, key: str) -> Path:
        return self.dir / f"{key}.json"

    def get(self, key: str) -> dict | None:
        p = self.path(key)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, key: str, entry: dict) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{key}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, indent=1)
            os.replace(tmp, self.path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class Explainer:
    def __init__(self, provider: Provider | None, cache_dir: str | Path | None = None,
                 cache_only: bool = False, max_workers: int = 4):
        self.provider = provider
        self.cache = ExplanationCache(cache_dir) if cache_dir is not None else None
        self._memory: dict[str, dict] = {}
        self.cache_only = cache_only
        self.max_workers = max_workers
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def _lookup(self, key: str) -> dict | None:
        if key in self._memory:
            return self._memory[key]
        if self.cache is not None:
            entry = self.cache.get(key)
            if entry is not None:
                self._memory[key] = entry
            return entry
        return None

    def explain(self, source: str, function_id: str = "") -> ExplanationRecord:
        if not source or not source.strip():
            raise ExplanationError("cannot explain empty source", [function_id])
        key = prompt_hash(source)
        with self._lock_for(key):
            entry = self._lookup(key)
            if entry is None:
                if self.cache_only or self.provider is None:
                    raise ExplanationError(f"no cached explanation for {function_id!r}", [function_id])
                try:
                    text = self.provider.generate(build_prompt(source), source)
                except ExplanationError as exc:
                    raise ExplanationError(f"{function_id}: {exc}", [function_id]) from exc
                if not text or not text.strip():
                    raise ExplanationError(f"{function_id}: provider returned empty text", [function_id])
                entry = {
                    "prompt_hash": key,
                    "text": text,
                    "provider": self.provider.kind,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                }
                if self.cache is not None:
                    self.cache.put(key, entry)
                self._memory[key] = entry
        record = ExplanationRecord(function_id, key, entry["text"], entry["provider"], entry.get("timestamp", ""))
        if not record.well_formed:
            logger.warning("explanation for %s lacks the expected section headings", function_id or key[:12])
        return record

    def explain_many(self, items: Iterable[tuple[str, str]]) -> dict[str, ExplanationRecord]:
        """Explain ``(function_id, source)`` pairs with bounded parallelism.

        In cache-only mode every miss is collected before raising.
        """
        items = list(items)
        if self.cache_only:
            missing = [fid for fid, src in items if self._lookup(prompt_hash(src)) is None]
            if missing:
                raise ExplanationError(f"{len(missing)} explanation(s) missing from cache: {missing[:10]}", missing)
        with ThreadPoolExecutor(max_workers=max(1, self.max_workers)) as pool:
            futures = {fid: pool.submit(self.explain, src, fid) for fid, src in items}
            return {fid: fut.result() for fid, fut in futures.items()}
