"""Prompt rendering and response parsing.

Rendering is byte-deterministic: the instruction blocks come verbatim from
the template files shipped with the package, and example blocks are always
laid out the same way. Parsing is deliberately conservative; the only
repairs attempted are code-fence stripping and trailing-comma removal, and
both are counted so drift in model output stays visible.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .core import (
    CategoryPath,
    ErrorSpan,
    PromptBundle,
    RatedTranslation,
    Severity,
    normalize_category,
)
from .errors import (
    FencingError,
    InvalidCategory,
    MissingScoreError,
    RangeError,
    ResponseParseError,
)

TEMPLATE_VERSIONS = {"automqm": "automqm-v1", "da": "da-v1"}

LANGUAGE_NAMES = {
    "ar": "Arabic",
    "cs": "Czech",
    "de": "German",
    "en": "English",
    "es": "Spanish",
    "fr": "French",
    "he": "Hebrew",
    "hi": "Hindi",
    "is": "Icelandic",
    "it": "Italian",
    "ja": "Japanese",
    "ko": "Korean",
    "nl": "Dutch",
    "pl": "Polish",
    "pt": "Portuguese",
    "ru": "Russian",
    "sv": "Swedish",
    "tr": "Turkish",
    "uk": "Ukrainian",
    "zh": "Chinese",
}

_FENCE = "```"
_SCORE_RE = re.compile(r"\[\[\s*(-?\d+(?:\.\d+)?)\s*\]\]")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")
_CODE_BLOCK_RE = re.compile(r"\A```[\w-]*[ \t]*\n(.*?)\n?```\Z", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[\]}])")

_NO_ERROR_SEVERITIES = {"neutral", "no-error", "no error", ""}
_SEVERITIES = {
    "minor": Severity.MINOR,
    "major": Severity.MAJOR,
    "critical": Severity.CRITICAL,
}


@dataclass(frozen=True)
class RenderedPrompt:
    system_message: str
    user_message: str
    digest: str


@dataclass
class ParseStats:
    parsed_errors: int = 0
    dropped_unalignable: int = 0
    repaired: int = 0


@lru_cache(maxsize=None)
def instruction_block(task: str) -> str:
    """The fixed system message for a task, verbatim from the template file."""
    name = {"automqm": "automqm_system.txt", "da": "da_system.txt"}[task]
    text = resources.files("specialist_eval").joinpath("templates", name).read_text(
        encoding="utf-8"
    )
    return text.rstrip("\n")


def language_names(lp: str) -> tuple[str, str]:
    """Human-readable names for an lp tag like ``en-de``; unknown codes pass
    through unchanged."""
    src, _, tgt = lp.partition("-")
    return (LANGUAGE_NAMES.get(src, src), LANGUAGE_NAMES.get(tgt, tgt))


def _fenced(text: str) -> str:
    if _FENCE in text:
        raise FencingError(f"text contains triple backticks: {text!r}")
    return f"{_FENCE}{text}{_FENCE}"


def _example_lines(entry: RatedTranslation) -> list[str]:
    src_lang, tgt_lang = language_names(entry.lp)
    return [
        f"{src_lang} source:",
        _fenced(entry.source),
        f"{tgt_lang} translation:",
        _fenced(entry.target),
    ]


def errors_json(entry: RatedTranslation) -> str:
    return json.dumps(
        [
            {
                "span": e.span_text,
                "severity": e.severity.value,
                "category": e.category.render(),
            }
            for e in entry.errors
        ],
        ensure_ascii=False,
    )


def _digest(task: str, system_message: str, user_message: str) -> str:
    h = hashlib.sha256()
    for part in (TEMPLATE_VERSIONS[task], system_message, user_message):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def render_automqm(bundle: PromptBundle) -> RenderedPrompt:
    """Error-annotation prompt: ICL blocks each end with their error array;
    the test block carries no errors."""
    blocks = []
    for entry in bundle.icl:
        blocks.append("\n".join(_example_lines(entry) + [errors_json(entry)]))
    blocks.append("\n".join(_example_lines(bundle.test)))
    system_message = instruction_block("automqm")
    user_message = "\n\n".join(blocks)
    return RenderedPrompt(
        system_message=system_message,
        user_message=user_message,
        digest=_digest("automqm", system_message, user_message),
    )


def _format_score(score: float) -> str:
    return str(float(score))


def render_da(bundle: PromptBundle) -> RenderedPrompt:
    """Scalar-score prompt: ICL blocks each end with ``Score: [[x]]``."""
    blocks = []
    for entry in bundle.icl:
        if entry.score is None:
            raise MissingScoreError(f"ICL entry {entry.cell_key} has no score")
        line = f"Score: [[{_format_score(entry.score)}]]"
        blocks.append("\n".join(_example_lines(entry) + [line]))
    blocks.append("\n".join(_example_lines(bundle.test)))
    system_message = instruction_block("da")
    user_message = "\n\n".join(blocks)
    return RenderedPrompt(
        system_message=system_message,
        user_message=user_message,
        digest=_digest("da", system_message, user_message),
    )


def align_span(
    hypothesis: str, span_text: str, consumed: set[tuple[int, int]]
) -> tuple[int, int] | None:
    """Leftmost occurrence of the span that does not overlap an already
    consumed range; the chosen range is added to ``consumed``."""
    if not span_text:
        return None
    at = hypothesis.find(span_text)
    while at != -1:
        candidate = (at, at + len(span_text))
        if all(not (candidate[0] < e and s < candidate[1]) for s, e in consumed):
            consumed.add(candidate)
            return candidate
        at = hypothesis.find(span_text, at + 1)
    return None


def _strip_code_fence(text: str, stats: ParseStats) -> str:
    match = _CODE_BLOCK_RE.match(text.strip())
    if match:
        stats.repaired += 1
        return match.group(1)
    return text.strip()


def _loads_with_repair(text: str, stats: ParseStats):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        repaired = _TRAILING_COMMA_RE.sub(r"\1", text)
        if repaired != text:
            try:
                value = json.loads(repaired)
            except json.JSONDecodeError:
                raise ResponseParseError(f"unparseable response: {text[:200]!r}")
            stats.repaired += 1
            return value
        raise ResponseParseError(f"unparseable response: {text[:200]!r}")


def parse_automqm_response(
    text: str, hypothesis: str
) -> tuple[list[ErrorSpan], ParseStats]:
    """Parse a model response into error spans aligned against the
    hypothesis. Spans are placed greedily left-to-right in the model's
    output order; spans that cannot be placed are dropped and counted."""
    stats = ParseStats()
    payload = _loads_with_repair(_strip_code_fence(text, stats), stats)
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise ResponseParseError(f"expected a JSON array, got {type(payload).__name__}")

    spans: list[ErrorSpan] = []
    consumed: set[tuple[int, int]] = set()
    for item in payload:
        if not isinstance(item, dict):
            raise ResponseParseError(f"error entry is not an object: {item!r}")
        severity_raw = str(item.get("severity", "") or "").strip().casefold()
        category_raw = str(item.get("category", "") or "").strip()
        category: CategoryPath | None = None
        if category_raw:
            try:
                category = normalize_category(category_raw)
            except InvalidCategory:
                category = None
        if severity_raw in _NO_ERROR_SEVERITIES or (
            category is not None and category.main == "no-error"
        ):
            continue
        if severity_raw not in _SEVERITIES:
            raise ResponseParseError(f"unknown severity {item.get('severity')!r}")
        if category is None:
            raise ResponseParseError(f"error entry lacks a category: {item!r}")
        span_text = item.get("span")
        if not isinstance(span_text, str) or not span_text:
            stats.dropped_unalignable += 1
            continue
        placed = align_span(hypothesis, span_text, consumed)
        if placed is None:
            stats.dropped_unalignable += 1
            continue
        spans.append(
            ErrorSpan(
                span_text=span_text,
                start=placed[0],
                end=placed[1],
                severity=_SEVERITIES[severity_raw],
                category=category,
            )
        )
        stats.parsed_errors += 1
    return spans, stats


def parse_da_response(text: str) -> float:
    """Extract the first ``[[x]]``-delimited score, falling back to the
    first bare number. Out-of-scale values are rejected, never clamped."""
    match = _SCORE_RE.search(text)
    if match is None:
        match = _NUMBER_RE.search(text)
    if match is None:
        raise ResponseParseError(f"no score found in {text[:200]!r}")
    value = float(match.group(1) if match.re is _SCORE_RE else match.group(0))
    if not (0.0 <= value <= 100.0):
        raise RangeError(f"score {value} outside [0, 100]")
    return value
