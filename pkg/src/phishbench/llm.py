"""Provider-agnostic chat-completion gateway.

Used for zero-shot detection and for corpus generation. A scriptable mock
provider makes every pipeline that goes through the gateway fully
deterministic and offline; HTTP adapters cover OpenAI-, Gemini-, and
Anthropic-style wire schemas.

Credentials come from ``<PROVIDER_ID>_API_KEY`` (uppercased, dashes and
dots mapped to underscores) and are never written to logs or reports.

Mock script format (line-delimited JSON, one entry per line):
  {"index": 0, "response": "benign"}          matched by attempt counter
  {"request_sha256": "<hex>", "response": ".."}  matched by user-prompt hash
  {"contains": "fictional companies", "response": "[...]", "times": 2}
  {"response": "fallback"}                     catch-all (unlimited times)
  {"index": 1, "fail": {"status": 500}}        scripted failure
Entries with "contains"/"request_sha256" default to times=1; "times" may
be an integer or "inf".
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import threading
import time
from collections import deque
from dataclasses import dataclass

import httpx

from .corpus import EmailRecord
from .errors import ConfigurationError, GatewayError, TransportError

DETECTION_SYSTEM_PROMPT = "You are an email security analyst."
DETECTION_USER_PROMPT = (
    "Classify the following email as exactly one word, 'phishing' or 'benign'. "
    "Subject: {subject} Body: {body}"
)
DETECTION_REASK_SUFFIX = (
    " Respond with exactly one word and nothing else: phishing or benign."
)
DETECTION_PROMPT_VERSION = hashlib.sha256(
    (DETECTION_SYSTEM_PROMPT + "\n" + DETECTION_USER_PROMPT).encode()
).hexdigest()[:12]

_PHISHING_RE = re.compile(r"\bphishing\b", re.IGNORECASE)
_BENIGN_RE = re.compile(r"\b(benign|legitimate)\b", re.IGNORECASE)


def credential_env_name(provider_id: str) -> str:
    return re.sub(r"[-.]", "_", provider_id).upper() + "_API_KEY"


def _guess_api(provider_id: str) -> str:
    if provider_id.startswith("gemini"):
        return "gemini"
    if provider_id.startswith("claude"):
        return "anthropic"
    if provider_id == "mock" or provider_id.startswith("mock-"):
        return "mock"
    return "openai"


@dataclass
class ProviderConfig:
    provider_id: str
    api: str = ""                    # openai | gemini | anthropic | mock
    endpoint: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    max_retries: int = 3
    requests_per_minute: float = 60.0
    timeout_s: float = 60.0
    script_path: str = ""            # mock provider only

    def __post_init__(self):
        if not self.provider_id:
            raise ConfigurationError("provider_id must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigurationError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if not self.api:
            self.api = _guess_api(self.provider_id)


@dataclass
class ChatExchange:
    id: str
    provider_id: str
    request: dict
    response: str
    latency_ms: float
    attempt_count: int


@dataclass
class DetectionVerdict:
    label: str                       # phishing | benign | invalid
    raw_response_ref: str
    cause: str = ""


class _RequestFailure(Exception):
    """One failed attempt; status None means a transport-level failure."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status

    @property
    def retryable(self) -> bool:
        return self.status is None or self.status == 429 or 500 <= self.status < 600


class RateLimiter:
    """Sliding 60-second window; never grants more than the budget."""

    def __init__(self, per_minute: float, clock, sleep):
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._grants: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if math.isinf(self.per_minute):
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._grants and self._grants[0] <= now - 60.0:
                    self._grants.popleft()
                if len(self._grants) < self.per_minute:
                    self._grants.append(now)
                    return
                wait = self._grants[0] + 60.0 - now
            self._sleep(max(wait, 1e-6))


class MockProvider:
    """Replays responses from a script file; see the module docstring."""

    def __init__(self, script_path: str):
        if not script_path:
            raise ConfigurationError("mock provider needs a script_path")
        self._entries = []
        with open(script_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    if "times" not in entry:
                        entry["times"] = (
                            math.inf
                            if "index" not in entry and "contains" not in entry
                            and "request_sha256" not in entry
                            else 1
                        )
                    elif entry["times"] == "inf":
                        entry["times"] = math.inf
                    self._entries.append(entry)
        self._attempt = 0
        self._lock = threading.Lock()

    def _match(self, rendered: dict, attempt: int):
        digest = hashlib.sha256(rendered["user"].encode()).hexdigest()
        for entry in self._entries:
            if entry["times"] <= 0:
                continue
            if "index" in entry:
                if entry["index"] == attempt:
                    return entry
            elif "request_sha256" in entry:
                if entry["request_sha256"] == digest:
                    return entry
            elif "contains" in entry:
                if entry["contains"] in rendered["user"]:
                    return entry
            else:
                return entry
        return None

    def send(self, rendered: dict) -> str:
        with self._lock:
            attempt = self._attempt
            self._attempt += 1
            entry = self._match(rendered, attempt)
            if entry is None:
                raise ConfigurationError(
                    f"mock script has no entry for attempt {attempt}: "
                    f"{rendered['user'][:80]!r}"
                )
            entry["times"] -= 1
        if "fail" in entry:
            fail = entry["fail"]
            raise _RequestFailure(
                fail.get("error", f"scripted failure {fail.get('status')}"),
                status=fail.get("status"),
            )
        return entry["response"]


class HttpProvider:
    """Renders provider-specific request bodies and extracts the text."""

    def __init__(self, config: ProviderConfig, client: httpx.Client | None = None,
                 credential: str | None = None):
        import os

        self.config = config
        if credential is None:
            env = credential_env_name(config.provider_id)
            credential = os.environ.get(env, "")
            if not credential:
                raise ConfigurationError(
                    f"no credential: set {env} for provider {config.provider_id!r}"
                )
        self._credential = credential
        self._client = client or httpx.Client(timeout=config.timeout_s)

    def build_request(self, rendered: dict) -> dict:
        cfg = self.config
        if cfg.api == "openai":
            return {
                "url": cfg.endpoint or "https://api.openai.com/v1/chat/completions",
                "headers": {"Authorization": f"Bearer {self._credential}"},
                "json": {
                    "model": cfg.provider_id,
                    "messages": [
                        {"role": "system", "content": rendered["system"]},
                        {"role": "user", "content": rendered["user"]},
                    ],
                    "temperature": rendered["temperature"],
                    "max_tokens": rendered["max_tokens"],
                },
            }
        if cfg.api == "gemini":
            url = cfg.endpoint or (
                "https://generativelanguage.googleapis.com/v1beta/models/"
                f"{cfg.provider_id}:generateContent"
            )
            return {
                "url": url,
                "headers": {"x-goog-api-key": self._credential},
                "json": {
                    "systemInstruction": {"parts": [{"text": rendered["system"]}]},
                    "contents": [{"role": "user", "parts": [{"text": rendered["user"]}]}],
                    "generationConfig": {
                        "temperature": rendered["temperature"],
                        "maxOutputTokens": rendered["max_tokens"],
                    },
                },
            }
        if cfg.api == "anthropic":
            return {
                "url": cfg.endpoint or "https://api.anthropic.com/v1/messages",
                "headers": {
                    "x-api-key": self._credential,
                    "anthropic-version": "2023-06-01",
                },
                "json": {
                    "model": cfg.provider_id,
                    "system": rendered["system"],
                    "messages": [{"role": "user", "content": rendered["user"]}],
                    "temperature": rendered["temperature"],
                    "max_tokens": rendered["max_tokens"],
                },
            }
        raise ConfigurationError(f"unknown api {cfg.api!r}")

    def extract_text(self, payload: dict) -> str:
        api = self.config.api
        try:
            if api == "openai":
                return payload["choices"][0]["message"]["content"]
            if api == "gemini":
                parts = payload["candidates"][0]["content"]["parts"]
                return "".join(p.get("text", "") for p in parts)
            return payload["content"][0]["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise _RequestFailure(f"malformed {api} response: {exc}") from exc

    def send(self, rendered: dict) -> str:
        request = self.build_request(rendered)
        try:
            response = self._client.post(
                request["url"], headers=request["headers"], json=request["json"]
            )
        except httpx.TransportError as exc:
            raise _RequestFailure(f"transport failure: {exc}") from exc
        if response.status_code != 200:
            raise _RequestFailure(
                f"HTTP {response.status_code}", status=response.status_code
            )
        return self.extract_text(response.json())


class Gateway:
    """Retry, rate-limit, and audit-log chat completions for one provider."""

    def __init__(self, config: ProviderConfig, *, provider=None, client=None,
                 clock=None, sleep=None, log_path=None, backoff_rng=None):
        self.config = config
        if provider is not None:
            self.provider = provider
        elif config.api == "mock":
            self.provider = MockProvider(config.script_path)
        else:
            self.provider = HttpProvider(config, client=client)
        is_mock = isinstance(self.provider, MockProvider)
        rpm = config.requests_per_minute
        if is_mock and rpm == 60.0:
            rpm = math.inf  # scripted runs are offline; the default budget must not throttle them
        # the mock path defaults to a frozen clock so logs are byte-stable
        self._clock = clock if clock is not None else ((lambda: 0.0) if is_mock else time.monotonic)
        self._sleep = sleep if sleep is not None else ((lambda _s: None) if is_mock else time.sleep)
        self._limiter = RateLimiter(rpm, self._clock, self._sleep)
        self._rng = backoff_rng or random.Random()
        self._log_path = log_path
        self._log_lock = threading.Lock()
        self._counter = 0
        self._counter_lock = threading.Lock()

    def _next_id(self) -> str:
        with self._counter_lock:
            self._counter += 1
            return f"{self.config.provider_id}-{self._counter:06d}"

    def _log(self, exchange: ChatExchange, error: str = "") -> None:
        if not self._log_path:
            return
        row = {
            "id": exchange.id,
            "provider_id": exchange.provider_id,
            "request": exchange.request,
            "response": exchange.response,
            "latency_ms": exchange.latency_ms,
            "attempts": exchange.attempt_count,
        }
        if error:
            row["error"] = error
        with self._log_lock:
            with open(self._log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    def complete(self, prompt: str, system: str = "") -> ChatExchange:
        """One logical completion; retries transport/429/5xx with
        exponential backoff (base 1s, factor 2, full jitter)."""
        if not prompt:
            raise GatewayError("prompt must be non-empty")
        rendered = {
            "system": system,
            "user": prompt,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        exchange_id = self._next_id()
        started = self._clock()
        last: _RequestFailure | None = None
        for attempt in range(1, self.config.max_retries + 2):
            self._limiter.acquire()
            try:
                text = self.provider.send(rendered)
            except _RequestFailure as failure:
                last = failure
                if attempt <= self.config.max_retries and failure.retryable:
                    delay = 1.0 * (2.0 ** (attempt - 1))
                    self._sleep(self._rng.uniform(0, delay))
                    continue
                exchange = ChatExchange(exchange_id, self.config.provider_id,
                                        rendered, "", 0.0, attempt)
                self._log(exchange, error=str(failure))
                raise TransportError(
                    f"{self.config.provider_id}: giving up after {attempt} attempts: {failure}",
                    status=failure.status,
                    attempts=attempt,
                ) from failure
            exchange = ChatExchange(
                exchange_id, self.config.provider_id, rendered, text,
                (self._clock() - started) * 1000.0, attempt,
            )
            self._log(exchange)
            return exchange
        raise TransportError("unreachable", status=last.status if last else None)

    def classify_email(self, record: EmailRecord) -> DetectionVerdict:
        """Zero-shot phishing/benign verdict for one email."""
        prompt = DETECTION_USER_PROMPT.format(subject=record.subject, body=record.body)
        try:
            exchange = self.complete(prompt, system=DETECTION_SYSTEM_PROMPT)
        except TransportError as exc:
            return DetectionVerdict("invalid", "", cause=f"transport: {exc}")
        label = _parse_verdict(exchange.response)
        if label is not None:
            return DetectionVerdict(label, exchange.id)
        try:
            exchange = self.complete(prompt + DETECTION_REASK_SUFFIX,
                                     system=DETECTION_SYSTEM_PROMPT)
        except TransportError as exc:
            return DetectionVerdict("invalid", "", cause=f"transport on re-ask: {exc}")
        label = _parse_verdict(exchange.response)
        if label is not None:
            return DetectionVerdict(label, exchange.id)
        return DetectionVerdict("invalid", exchange.id, cause="unparseable response")


def _parse_verdict(response: str) -> str | None:
    """'phishing' or 'benign'/'legitimate'; ambiguous or absent -> None."""
    has_phishing = bool(_PHISHING_RE.search(response))
    has_benign = bool(_BENIGN_RE.search(response))
    if has_phishing == has_benign:
        return None
    return "phishing" if has_phishing else "benign"
