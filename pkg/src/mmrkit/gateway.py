"""Client for an OpenAI-compatible vision-chat endpoint.

Supports three backends: ``live`` (real HTTP), ``record`` (live, then save a
fixture) and ``replay`` (serve saved fixtures, no network at all). Fixtures
are keyed by a stable hash of the prompt text, the image digest and the
sampling configuration, so one recorded run can drive every later offline
run byte for byte.

The API key is read from an environment variable, never passed as an
argument. Requests retry transient failures with exponential backoff, at
most ``max_in_flight`` run concurrently, and token usage is appended to a
cost log.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .annotations import AnnotationIndex
from .errors import AuthenticationError, FixtureMissError, NetworkError
from .prompts import PromptBundle, TemplateSet, build_caption_prompt, build_prompt, build_single_step_prompt

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass
class GenConfig:
    model_name: str = "gpt-4-vision-preview"
    temperature: float = 0.7
    max_tokens: int = 850
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    max_retries: int = 3
    max_in_flight: int = 4
    cost_log_path: str | Path | None = None
    backend: str = "live"  # live | record | replay
    fixture_dir: str | Path | None = None
    image_mode: str = "base64"  # base64 | url
    image_root: str | Path | None = None
    two_step: bool = True
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.backend not in ("live", "record", "replay"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class RawResponse:
    request_hash: str
    response_text: str
    usage: dict
    latency_ms: float
    backend: str


def _image_digest(image_ref: str, image_root: str | Path | None) -> str:
    """Digest of the image bytes when resolvable, else of the reference."""
    if image_root is not None:
        path = Path(image_root) / image_ref
        if path.exists():
            return hashlib.sha256(path.read_bytes()).hexdigest()
    return hashlib.sha256(image_ref.encode("utf-8")).hexdigest()


def request_hash(bundle: PromptBundle, config: GenConfig) -> str:
    """Stable digest of everything that determines the model's reply."""
    payload = json.dumps(
        {
            "system": bundle.system_text,
            "user": bundle.user_text,
            "image": _image_digest(bundle.image_ref, config.image_root),
            "model": config.model_name,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_request_body(bundle: PromptBundle, config: GenConfig) -> dict:
    """OpenAI-compatible chat-completions request body."""
    content: list[dict] = [{"type": "text", "text": bundle.user_text}]
    if config.image_mode == "url":
        content.append({"type": "image_url", "image_url": {"url": bundle.image_ref}})
    else:
        data = _inline_image(bundle.image_ref, config.image_root)
        if data is not None:
            content.append({"type": "image_url", "image_url": {"url": data}})
    return {
        "model": config.model_name,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "messages": [
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": content},
        ],
    }


def _inline_image(image_ref: str, image_root: str | Path | None) -> str | None:
    if image_root is None:
        return None
    path = Path(image_root) / image_ref
    if not path.exists():
        return None
    suffix = path.suffix.lstrip(".").lower() or "jpeg"
    if suffix == "jpg":
        suffix = "jpeg"
    encoded = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:image/{suffix};base64,{encoded}"


class _HttpError(Exception):
    def __init__(self, status: int, detail: str):
        super().__init__(detail)
        self.status = status


def _default_post(url: str, body: dict, api_key: str, timeout: float = 120.0):
    import requests

    try:
        resp = requests.post(
            url,
            json=body,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
        )
    except requests.RequestException as exc:
        raise _HttpError(0, f"request failed: {exc}") from exc
    if resp.status_code != 200:
        raise _HttpError(resp.status_code, f"HTTP {resp.status_code}: {resp.text[:300]}")
    return resp.json()


class LlmGateway:
    """Shareable gateway; safe to call from multiple threads.

    ``post_fn(url, body, api_key)`` can be injected for tests; it must return
    the decoded response JSON or raise an exception with a ``status``
    attribute for HTTP failures.
    """

    def __init__(self, config: GenConfig, *, post_fn=None, sleep=time.sleep):
        self.config = config
        self._post = post_fn or _default_post
        self._sleep = sleep
        self._gate = threading.Semaphore(config.max_in_flight)
        self._log_lock = threading.Lock()
        if config.backend in ("record", "replay") and config.fixture_dir is None:
            raise ValueError(f"backend {config.backend!r} requires fixture_dir")

    # -- fixtures ----------------------------------------------------------

    def _fixture_path(self, digest: str) -> Path:
        return Path(self.config.fixture_dir) / f"{digest}.json"

    def _load_fixture(self, digest: str) -> dict:
        path = self._fixture_path(digest)
        if not path.exists():
            raise FixtureMissError(f"no fixture recorded for request {digest[:16]}… at {path}")
        return json.loads(path.read_text(encoding="utf-8"))

    def _save_fixture(self, digest: str, bundle: PromptBundle, response: dict) -> None:
        path = self._fixture_path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "request_hash": digest,
            "request": {
                "model": self.config.model_name,
                "temperature": self.config.temperature,
                "max_tokens": self.config.max_tokens,
                "system": bundle.system_text,
                "user": bundle.user_text,
                "image_ref": bundle.image_ref,
                "image_id": bundle.image_id,
                "variant": bundle.variant,
            },
            "response": response,
        }
        path.write_text(json.dumps(doc, indent=2, ensure_ascii=False), encoding="utf-8")

    # -- core --------------------------------------------------------------

    def _live_call(self, bundle: PromptBundle, digest: str) -> dict:
        api_key = os.environ.get(self.config.api_key_env, "")
        if not api_key:
            raise AuthenticationError(
                f"environment variable {self.config.api_key_env} is not set"
            )
        body = build_request_body(bundle, self.config)
        attempt = 0
        while True:
            try:
                raw = self._post(self.config.endpoint_url, body, api_key)
                break
            except Exception as exc:
                status = getattr(exc, "status", None)
                if status in (401, 403):
                    raise AuthenticationError(str(exc)) from exc
                retryable = status in RETRYABLE_STATUS or status == 0 or status is None
                if not retryable or attempt >= self.config.max_retries:
                    raise NetworkError(
                        f"request {digest[:16]}… failed after {attempt} retries: {exc}"
                    ) from exc
                delay = self.config.backoff_base * (2**attempt)
                logger.warning(
                    "transient failure (%s), retry %d/%d in %.1fs",
                    exc,
                    attempt + 1,
                    self.config.max_retries,
                    delay,
                )
                self._sleep(delay)
                attempt += 1
        try:
            text = raw["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise NetworkError(f"malformed completion response: {exc}") from exc
        return {"text": text, "usage": raw.get("usage", {}), "retries": attempt}

    def complete(self, bundle: PromptBundle) -> RawResponse:
        digest = request_hash(bundle, self.config)
        start = time.monotonic()
        with self._gate:
            if self.config.backend == "replay":
                fixture = self._load_fixture(digest)
                response = fixture["response"]
            else:
                response = self._live_call(bundle, digest)
                if self.config.backend == "record":
                    self._save_fixture(digest, bundle, response)
        latency_ms = (time.monotonic() - start) * 1000.0
        result = RawResponse(
            request_hash=digest,
            response_text=response["text"],
            usage=dict(response.get("usage", {})),
            latency_ms=latency_ms,
            backend=self.config.backend,
        )
        self._log_usage(result)
        return result

    def complete_batch(self, bundles: list[PromptBundle]) -> list[RawResponse]:
        """Complete many prompts, at most max_in_flight concurrently."""
        workers = max(1, self.config.max_in_flight)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.complete, bundles))

    def _log_usage(self, result: RawResponse) -> None:
        if self.config.cost_log_path is None:
            return
        line = json.dumps(
            {
                "request_hash": result.request_hash,
                "model": self.config.model_name,
                "backend": result.backend,
                "usage": result.usage,
                "latency_ms": round(result.latency_ms, 3),
            },
            sort_keys=True,
        )
        with self._log_lock:
            with open(self.config.cost_log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def complete(bundle: PromptBundle, config: GenConfig, **gateway_kwargs) -> RawResponse:
    return LlmGateway(config, **gateway_kwargs).complete(bundle)


def generate_two_step(
    index: AnnotationIndex,
    image_id: int,
    variant: str,
    config: GenConfig,
    templates: TemplateSet | None = None,
    *,
    gateway: LlmGateway | None = None,
) -> tuple[str, RawResponse]:
    """Caption step, then QA step with the caption embedded verbatim.

    With ``config.two_step`` off, a single combined request asks for both;
    the returned caption is then empty and lives inside the response text.
    """
    gw = gateway or LlmGateway(config)
    templates = templates or TemplateSet.default()
    if not config.two_step:
        bundle = build_single_step_prompt(index, image_id, variant, templates)
        return "", gw.complete(bundle)
    caption_bundle = build_caption_prompt(index, image_id, templates)
    caption_resp = gw.complete(caption_bundle)
    caption = extract_caption(caption_resp.response_text)
    qa_bundle = build_prompt(index, image_id, variant, templates, caption=caption)
    return caption, gw.complete(qa_bundle)


def extract_caption(text: str) -> str:
    """Caption text from a step-1 reply; tolerant of a missing prefix."""
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        lowered = line.lower()
        if lowered.startswith("caption:"):
            return line[len("caption:") :].strip()
        if lowered.startswith("global caption:"):
            return line[len("global caption:") :].strip()
        return line
    return ""
