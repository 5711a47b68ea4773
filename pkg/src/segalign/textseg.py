"""Text segment extraction.

Raw motion descriptions are decomposed into temporally ordered text segments,
one per atomic action, joined by the '#' delimiter.  Decomposition can go
through an external LLM endpoint (with an on-disk cache so the step is
offline-repeatable) or through a deterministic rule-based fallback that keeps
the test suite hermetic.  The fallback rules are intentionally crude.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from enum import Enum

import requests

A_MAX = 5

LLM_URL_ENV_VAR = "SEGALIGN_LLM_URL"

DECOMPOSE_PROMPT = """\
You are a helpful assistant. Your task is to extract and temporally order human actions from a sentence describing a person performing one or more actions.

Guidelines:
- If the sentence describes **only one action**, return it as a full sentence without using the "#" symbol.
- If the sentence describes **multiple actions**, return each as a full sentence, in the correct temporal order, separated by the "#" symbol.
- Preserve descriptive modifiers such as "quickly", "slowly", "two times", "as if", "like", etc.
- Normalize expressions such as "appears to" or "seems to" into direct action statements.
- Do **not** include any extra text (e.g., "Output:", quotes, or explanations). Return only the result string in the specified format.

Examples:
(1) Input: a person runs quickly after walking in a circle.
    Output: a person walks in a circle#a person runs quickly.

(2) Input: a person jumps two times, then walks while waving the hands.
    Output: a person jumps two times#a person walks while waving the hands.

(3) Input: a person takes a box off the table and puts it on the floor.
    Output: a person takes a box off the table#a person puts a box on the floor.

(4) Input: a person is standing and waving the hands.
    Output: a person is standing and waving the hands.

(5) Input: a person is bowing left and right.
    Output: a person is bowing left and right.

(6) Input: a person is jumping around like he is in an accident.
    Output: a person is jumping around like he is in an accident.

(7) Input: a person appears to wave the hands.
    Output: a person waves the hands.

Now process the following input:
"""


class SegmentSource(str, Enum):
    LLM = "llm"
    FALLBACK = "fallback"
    DATASET = "dataset"


class SegmentValidationError(ValueError):
    pass


class TransportError(RuntimeError):
    """Endpoint unreachable after the configured number of retries."""


class MalformedResponseError(ValueError):
    """The endpoint answered, but the answer violates the prompt contract."""

    def __init__(self, message: str, response_text: str):
        super().__init__(f"{message}: {response_text!r}")
        self.response_text = response_text


@dataclass(frozen=True)
class TextSegmentSet:
    raw_text: str
    segments: tuple[str, ...]
    source: SegmentSource

    def __post_init__(self):
        if not (1 <= len(self.segments) <= A_MAX):
            raise SegmentValidationError(
                f"segment count {len(self.segments)} outside [1, {A_MAX}]"
            )
        for s in self.segments:
            if not s:
                raise SegmentValidationError("empty text segment")
            if "#" in s:
                raise SegmentValidationError(f"segment contains '#': {s!r}")


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model_name: str
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def parse_segment_string(s: str, source: SegmentSource = SegmentSource.LLM) -> TextSegmentSet:
    """Split a '#'-joined segment string into a validated segment set.

    Each piece is whitespace-trimmed and loses a single trailing period; the
    text is otherwise preserved verbatim.
    """
    if not s:
        raise SegmentValidationError("empty segment string")
    pieces = []
    for part in s.split("#"):
        part = part.strip()
        if part.endswith("."):
            part = part[:-1].rstrip()
        if not part:
            raise SegmentValidationError(f"empty segment in {s!r}")
        pieces.append(part)
    if len(pieces) > A_MAX:
        raise SegmentValidationError(f"{len(pieces)} segments exceed the maximum of {A_MAX}")
    return TextSegmentSet(raw_text=s, segments=tuple(pieces), source=source)


_SUBJECT_PREFIXES = ("a person", "the person", "a man", "a woman", "someone", "he ", "she ")


def _with_subject(phrase: str) -> str:
    phrase = phrase.strip()
    if phrase.endswith("."):
        phrase = phrase[:-1]
    if phrase.lower().startswith(_SUBJECT_PREFIXES):
        return phrase
    return "a person " + phrase


def fallback_decompose(raw: str) -> TextSegmentSet:
    """Rule-based decomposition: no network, deterministic, deliberately crude.

    Splits on ", and then " / ", then " / " then " connectives; "X after Y"
    swaps to [Y, X]; anything else stays a single segment.
    """
    if not raw:
        raise SegmentValidationError("empty input text")
    text = raw.strip()
    if text.endswith("."):
        text = text[:-1]

    if " after " in text:
        first, _, second = text.partition(" after ")
        parts = [second, first]
    else:
        parts = [text]
        for connective in (", and then ", ", then ", " then "):
            parts = [p for chunk in parts for p in chunk.split(connective)]

    segments = tuple(_with_subject(p) for p in parts if p.strip())
    return TextSegmentSet(raw_text=raw, segments=segments, source=SegmentSource.FALLBACK)


# --- LLM endpoint with on-disk cache ---------------------------------------

def _cache_lookup(cache_path, model: str, raw: str) -> str | None:
    if cache_path is None or not os.path.exists(cache_path):
        return None
    with open(cache_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("model") == model and obj.get("input") == raw:
                return obj["output"]
    return None


def _cache_append(cache_path, model: str, raw: str, output: str) -> None:
    if cache_path is None:
        return
    with open(cache_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"model": model, "input": raw, "output": output}, sort_keys=True) + "\n")


def _default_transport(url: str, payload: dict, timeout: float) -> str:
    resp = requests.post(url, json=payload, timeout=timeout)
    resp.raise_for_status()
    body = resp.json()
    return body["choices"][0]["message"]["content"]


def llm_decompose(
    raw: str,
    cfg: LlmEndpointConfig,
    cache_path=None,
    transport=None,
) -> TextSegmentSet:
    """Decompose via an OpenAI-style chat-completions endpoint.

    Results are cached on disk keyed by (model, input), so a warm cache makes
    the call deterministic and network-free.  ``transport`` may be injected
    for testing; it receives (url, payload, timeout) and returns the text of
    the first choice.
    """
    if not raw:
        raise SegmentValidationError("empty input text")

    cached = _cache_lookup(cache_path, cfg.model_name, raw)
    if cached is not None:
        return parse_segment_string(cached, source=SegmentSource.LLM)

    url = os.environ.get(LLM_URL_ENV_VAR, cfg.base_url)
    payload = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": DECOMPOSE_PROMPT + raw}],
    }
    send = transport if transport is not None else _default_transport

    last_exc = None
    text = None
    for attempt in range(cfg.max_retries + 1):
        try:
            text = send(url, payload, cfg.timeout)
            break
        except (requests.RequestException, ConnectionError, TimeoutError) as exc:
            last_exc = exc
            if attempt < cfg.max_retries:
                time.sleep(min(0.2 * (attempt + 1), 1.0))
    if text is None:
        raise TransportError(f"endpoint {url} unreachable after {cfg.max_retries + 1} attempts: {last_exc}")

    stripped = text.strip()
    if stripped.lower().startswith("output:") or stripped.startswith(('"', "'", "`")):
        raise MalformedResponseError("response carries extra text forbidden by the prompt", text)
    try:
        result = parse_segment_string(stripped, source=SegmentSource.LLM)
    except SegmentValidationError as exc:
        raise MalformedResponseError(f"response failed segment parsing ({exc})", text) from exc

    _cache_append(cache_path, cfg.model_name, raw, stripped)
    return result
